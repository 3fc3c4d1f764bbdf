import warnings
from types import SimpleNamespace

import numpy as np
import pytest

from datagen import graph_variants
from errors import ConfigError, InvalidInputError, UndefinedMetricError
from evaluation import (ConstantModel, EvalConfig, MetricReport, OracleModel, adequacy_study, correlate,
                        evaluate_model, f1_score, match_latents, neg_metric, pearson, pos_metric, spearman)
from graph_core import BinaryGraph
from model import TrainConfig


@pytest.fixture(scope="module")
def oracle_report(noiseless_pendulum):
    return evaluate_model(OracleModel(noiseless_pendulum), noiseless_pendulum)


@pytest.fixture(scope="module")
def constant_report(noiseless_pendulum):
    model = ConstantModel(noiseless_pendulum.k, noiseless_pendulum.factor_names)
    return evaluate_model(model, noiseless_pendulum)


class TestF1:
    def test_reported_pendulum_value(self):
        assert f1_score(0.541, 0.402) == pytest.approx(0.568, abs=5e-4)

    def test_reported_flow_value(self):
        assert f1_score(0.507, 0.368) == pytest.approx(0.563, abs=5e-4)

    def test_extremes(self):
        assert f1_score(1.0, 0.0) == 1.0
        assert f1_score(0.0, 0.3) == 0.0
        assert f1_score(0.7, 1.0) == 0.0

    def test_symmetric_under_exchange(self):
        assert f1_score(0.3, 0.2) == pytest.approx(f1_score(0.8, 0.7), rel=1e-12)

    def test_monotone(self):
        assert f1_score(0.6, 0.3) > f1_score(0.5, 0.3)
        assert f1_score(0.6, 0.3) > f1_score(0.6, 0.4)

    def test_rejects_out_of_range(self):
        with pytest.raises(InvalidInputError):
            f1_score(1.2, 0.0)
        with pytest.raises(InvalidInputError):
            f1_score(0.5, -0.1)


class TestMatching:
    def test_identity(self, noiseless_pendulum):
        factors = noiseless_pendulum.factors[:300]
        assert match_latents(factors, factors) == {0: 0, 1: 1, 2: 2, 3: 3}

    def test_recovers_permutation_through_monotone_transforms(self, noiseless_pendulum):
        factors = noiseless_pendulum.factors[:300]
        perm = [2, 0, 3, 1]
        transforms = [lambda v: 3.0 * v + 1.0, lambda v: np.exp(v / 20.0), lambda v: v ** 3, lambda v: v]
        latents = np.column_stack([transforms[l](factors[:, perm[l]]) for l in range(4)])
        matching = match_latents(latents, factors)
        assert {f: perm[l] for f, l in matching.items()} == {0: 0, 1: 1, 2: 2, 3: 3}

    def test_extra_latents_allowed(self, noiseless_pendulum):
        factors = noiseless_pendulum.factors[:200]
        latents = np.column_stack([np.zeros(200), factors])
        assert match_latents(latents, factors) == {0: 1, 1: 2, 2: 3, 3: 4}

    def test_rejects_bad_shapes(self, noiseless_pendulum):
        factors = noiseless_pendulum.factors[:50]
        with pytest.raises(InvalidInputError):
            match_latents(factors[:, :3], factors)
        with pytest.raises(InvalidInputError):
            match_latents(factors[:40], factors)


class TestPosNeg:
    def test_oracle_rebuilds_effects(self, noiseless_pendulum):
        truth = noiseless_pendulum.truth
        model = OracleModel(noiseless_pendulum)
        assert pos_metric(model, noiseless_pendulum, truth, "mic") >= 0.95
        assert neg_metric(model, noiseless_pendulum, truth, "mic") <= 0.05

    def test_tic_kind(self, noiseless_pendulum):
        model = OracleModel(noiseless_pendulum)
        assert pos_metric(model, noiseless_pendulum, noiseless_pendulum.truth, "TIC") > 0.5
        with pytest.raises(InvalidInputError):
            pos_metric(model, noiseless_pendulum, noiseless_pendulum.truth, "mse")

    def test_zeroed_causes_propagate_cleanly(self, noiseless_pendulum):
        model = OracleModel(noiseless_pendulum)
        z = model.infer_latents(noiseless_pendulum.observations[:50])
        z[:, :2] = 0.0
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            z_hat = model.propagate(z)
        assert np.all(np.isfinite(z_hat))
        assert np.array_equal(z_hat[:, :2], z[:, :2])

    def test_graph_without_effects(self, noiseless_pendulum):
        empty = BinaryGraph(np.zeros((4, 4), dtype=bool), noiseless_pendulum.factor_names)
        model = OracleModel(noiseless_pendulum)
        with pytest.raises(UndefinedMetricError):
            pos_metric(model, noiseless_pendulum, empty)
        with pytest.raises(UndefinedMetricError):
            neg_metric(model, noiseless_pendulum, empty)


class TestReport:
    def test_oracle(self, oracle_report):
        assert oracle_report.mic >= 0.95
        assert oracle_report.pos_mic >= 0.95
        assert oracle_report.neg_mic <= 0.05
        r = oracle_report.rubrics
        assert (r.tpr, r.fdr, r.shd) == (1.0, 0.0, 0)

    def test_constant(self, constant_report):
        for name in ("mic", "tic", "pos_mic", "pos_tic", "neg_mic", "neg_tic", "f1_mic", "f1_tic"):
            assert getattr(constant_report, name) == 0.0
        assert constant_report.rubrics.shd == 4

    def test_f1_recomputes(self, oracle_report):
        assert abs(oracle_report.f1_mic - f1_score(oracle_report.pos_mic, oracle_report.neg_mic)) <= 1e-10
        assert abs(oracle_report.f1_tic - f1_score(oracle_report.pos_tic, oracle_report.neg_tic)) <= 1e-10

    def test_oracle_dominates_constant(self, oracle_report, constant_report):
        for name in ("mic", "tic", "pos_mic", "pos_tic", "f1_mic", "f1_tic"):
            assert getattr(oracle_report, name) >= getattr(constant_report, name)
        for name in ("neg_mic", "neg_tic"):
            assert getattr(oracle_report, name) <= getattr(constant_report, name)
        assert oracle_report.rubrics.tpr >= constant_report.rubrics.tpr
        assert oracle_report.rubrics.fdr <= constant_report.rubrics.fdr
        assert oracle_report.rubrics.shd <= constant_report.rubrics.shd

    def test_json_round_trip(self, oracle_report):
        back = MetricReport.from_json(oracle_report.to_json())
        assert back.row() == oracle_report.row()
        assert back.matching == oracle_report.matching

    def test_rejects_invalid_config(self, noiseless_pendulum):
        with pytest.raises(ConfigError):
            evaluate_model(OracleModel(noiseless_pendulum), noiseless_pendulum, config=EvalConfig(samples=2))
        with pytest.raises(ConfigError):
            EvalConfig(correlation="kendall").validate()


class TestCorrelation:
    def test_pearson(self):
        assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
        assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
        assert np.isnan(pearson([1, 1, 1], [1, 2, 3]))

    def test_spearman_is_rank_based(self):
        assert spearman([1, 2, 3, 4], [1, 10, 100, 1000]) == pytest.approx(1.0)

    def test_too_few_values(self):
        with pytest.raises(InvalidInputError):
            pearson([1, 2], [1, 2])
        with pytest.raises(InvalidInputError):
            pearson([1, 2, 3], [1, 2])

    def test_correlate_needs_three_rows(self):
        import pandas as pd
        with pytest.raises(InvalidInputError):
            correlate(pd.DataFrame({"mic": [0.1, 0.2]}))


class TestAdequacy:
    @staticmethod
    def _stub_train(data, config, init_adjacency=None, trainable=None):
        # empty variants get a model that knows nothing
        if not np.any(init_adjacency):
            return SimpleNamespace(model=ConstantModel(data.k, data.factor_names))
        return SimpleNamespace(model=OracleModel(data))

    def test_study_with_stub_training(self, noiseless_pendulum):
        variants = graph_variants(noiseless_pendulum.truth, 6, seed=0)
        result = adequacy_study(noiseless_pendulum, variants, [0, 1], TrainConfig(),
                                EvalConfig(samples=200), train_fn=self._stub_train)
        assert len(result.rows) == 12
        assert {"variant", "seed", "edges", "variant_shd", "learned_shd", "pos_mic"} <= set(result.rows.columns)
        assert list(result.correlations.columns) == ["tpr", "fdr", "shd"]
        assert len(result.correlations) == 6
        assert result.r("pos_mic", "shd") < 0
        assert result.r("pos_mic", "tpr") > 0
        # every neg entry is zero, so its correlations are undefined
        assert np.isnan(result.r("neg_mic", "tpr"))
        assert result.degenerate

    def test_progress_callback(self, noiseless_pendulum):
        seen = []
        variants = graph_variants(noiseless_pendulum.truth, 6, seed=0)
        adequacy_study(noiseless_pendulum, variants, [0, 1], TrainConfig(), EvalConfig(samples=100),
                       progress=lambda done, total: seen.append((done, total)), train_fn=self._stub_train)
        assert seen[-1] == (12, 12)

    def test_minimum_grid(self, noiseless_pendulum):
        variants = graph_variants(noiseless_pendulum.truth, 3, seed=0)
        with pytest.raises(InvalidInputError):
            adequacy_study(noiseless_pendulum, variants, [0, 1], TrainConfig(), train_fn=self._stub_train)


@pytest.mark.slow
class TestTrainedModels:
    def test_small_study_runs(self):
        from datagen import generate_bundle
        bundle = generate_bundle("pendulum", n=400, seed=0)
        variants = graph_variants(bundle.truth, 6, seed=0)
        result = adequacy_study(bundle, variants, [0, 1], TrainConfig(steps=100, batch_size=32),
                                EvalConfig(samples=200))
        assert len(result.rows) == 12
        frozen = result.rows[result.rows["variant"] == 1]
        # the empty variant keeps an empty graph
        assert (frozen["learned_tpr"] == 0.0).all()

    def test_structure_recovery_and_do_cause_ablation(self):
        from datagen import generate_bundle
        from model import train
        bundle = generate_bundle("pendulum", n=4000, seed=0, m_u=2)
        config = EvalConfig(samples=1000)
        full, ablated = [], []
        for seed in range(10):
            result = train(bundle, TrainConfig(seed=seed, steps=5000))
            full.append(evaluate_model(result.model, bundle, config=config))
            result = train(bundle, TrainConfig(seed=seed, steps=5000, enable_do_cause=False))
            ablated.append(evaluate_model(result.model, bundle, config=config))
        assert np.median([r.rubrics.tpr for r in full]) >= 0.75
        assert np.median([r.rubrics.fdr for r in full]) <= 0.25
        assert np.median([r.pos_mic for r in full]) - np.median([r.pos_mic for r in ablated]) >= 0.10

    def test_full_study_correlations(self):
        from datagen import generate_bundle, split_seed
        bundle = generate_bundle("pendulum", n=1000, seed=0)
        variants = graph_variants(bundle.truth, 14, split_seed(0)["eval"])
        result = adequacy_study(bundle, variants, [0, 1, 2], TrainConfig(steps=2000), EvalConfig(samples=1000))
        assert result.r("pos_mic", "tpr") > 0.5
        assert result.r("neg_mic", "fdr") > 0.3
        assert abs(result.r("mic", "tpr")) < result.r("pos_mic", "tpr")

    def test_labels_do_not_hurt(self):
        from datagen import generate_bundle
        from model import train
        bundle = generate_bundle("pendulum", n=2000, seed=1)
        plain, labeled = [], []
        for seed in range(5):
            plain.append(evaluate_model(train(bundle, TrainConfig(seed=seed, steps=3000)).model, bundle).pos_mic)
            semi = train(bundle, TrainConfig(seed=seed, steps=3000, label_fraction=0.1)).model
            labeled.append(evaluate_model(semi, bundle).pos_mic)
        assert np.median(labeled) >= np.median(plain)
