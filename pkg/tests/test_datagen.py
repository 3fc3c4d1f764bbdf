import warnings

import numpy as np
import pytest

from datagen import (BASE_VOLUME, CONTAINER_AREA, PIVOT_HEIGHT, ROD_LENGTH, CounterexampleParams, flow_scm,
                     gaussian_counterexample, generate_bundle, get_scm, graph_variants, ks_critical_value,
                     make_pairs, marginal_ks, observe, pendulum_scm, sample_factors, shadow_x, split_seed,
                     standardize, unmix)
from errors import InvalidInputError
from graph_core import graph_rubrics, is_dag, topological_order
from mic_metrics import mic


class TestPendulum:
    def test_graph_edges(self):
        scm = pendulum_scm()
        assert scm.factor_names == ["pendulum_angle", "light_angle", "shadow_position", "shadow_length"]
        assert sorted(scm.graph.edge_list()) == [(0, 2), (0, 3), (1, 2), (1, 3)]

    def test_overhead_light_vertical_rod(self):
        scm = pendulum_scm()
        values = np.array([[0.0, 90.0, 0.0, 0.0]])
        assert scm.evaluate(2, values)[0] == pytest.approx(0.0, abs=1e-12)
        assert scm.evaluate(3, values)[0] == pytest.approx(0.0, abs=1e-12)

    def test_light_at_45_degrees(self):
        # the pivot's shadow lands one pivot height away
        assert shadow_x(0.0, PIVOT_HEIGHT, 45.0) == pytest.approx(PIVOT_HEIGHT, rel=1e-12)
        scm = pendulum_scm()
        values = np.array([[0.0, 45.0, 0.0, 0.0]])
        tip_height = PIVOT_HEIGHT - ROD_LENGTH
        assert scm.evaluate(2, values)[0] == pytest.approx(0.5 * (PIVOT_HEIGHT + tip_height), rel=1e-12)
        assert scm.evaluate(3, values)[0] == pytest.approx(ROD_LENGTH, rel=1e-12)

    def test_light_on_the_horizon_stays_finite(self):
        scm = pendulum_scm()
        values = np.array([[10.0, 0.0, 0.0, 0.0], [-10.0, 180.0, 0.0, 0.0], [0.0, -5.0, 0.0, 0.0]])
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            position = scm.evaluate(2, values)
            length = scm.evaluate(3, values)
            ground = shadow_x(0.0, PIVOT_HEIGHT, 0.0)
        assert np.all(np.isfinite(position)) and np.all(np.isfinite(length))
        assert np.isfinite(ground) and ground > 0


class TestFlow:
    def test_graph_has_two_hop_path(self):
        scm = flow_scm()
        assert sorted(scm.graph.edge_list()) == [(0, 2), (1, 3), (2, 3)]
        order = topological_order(scm.graph)
        assert order.index(0) < order.index(2) < order.index(3)

    def test_zero_ball_gives_base_level(self):
        scm = flow_scm()
        values = np.zeros((1, 4))
        assert scm.evaluate(2, values)[0] == pytest.approx(BASE_VOLUME / CONTAINER_AREA)

    def test_outlet_above_waterline_gives_no_flow(self):
        scm = flow_scm()
        values = np.array([[0.0, 6.0, 5.5, 0.0], [0.0, 6.0, 6.0, 0.0]])
        np.testing.assert_array_equal(scm.evaluate(3, values), [0.0, 0.0])

    def test_unknown_dataset(self):
        with pytest.raises(InvalidInputError):
            get_scm("celeba")


class TestSampling:
    def test_deterministic(self):
        scm = pendulum_scm()
        np.testing.assert_array_equal(sample_factors(scm, 50, 11), sample_factors(scm, 50, 11))

    @pytest.mark.parametrize("name", ["pendulum", "flow"])
    def test_noiseless_effects_are_exact(self, name):
        scm = get_scm(name, noise_fraction=0.0)
        u = sample_factors(scm, 500, 2)
        for i in topological_order(scm.graph):
            if i not in scm.graph.roots():
                lo, hi = scm.factor_ranges[i]
                np.testing.assert_array_equal(u[:, i], np.clip(scm.evaluate(i, u), lo, hi))
                assert np.abs(u[:, i] - scm.evaluate(i, u)).max() == 0.0

    def test_fixed_roots(self):
        scm = pendulum_scm(noise_fraction=0.0)
        u = sample_factors(scm, 3, 0, root_values={0: 10.0, 1: 70.0})
        np.testing.assert_array_equal(u[:, 0], 10.0)
        np.testing.assert_array_equal(u[:, 1], 70.0)

    def test_roots_uncorrelated(self):
        u = sample_factors(pendulum_scm(), 10_000, 5)
        assert abs(np.corrcoef(u[:, 0], u[:, 1])[0, 1]) < 0.05

    @pytest.mark.parametrize("name", ["pendulum", "flow"])
    def test_factors_in_range(self, name):
        bundle = generate_bundle(name, n=2000, seed=4)
        for i, (lo, hi) in enumerate(bundle.factor_ranges):
            assert lo <= bundle.factors[:, i].min() and bundle.factors[:, i].max() <= hi

    def test_rejects_empty(self):
        with pytest.raises(InvalidInputError):
            sample_factors(pendulum_scm(), 0, 0)


class TestObservation:
    def test_mixing_is_invertible_without_nuisance(self):
        u = sample_factors(pendulum_scm(), 200, 1)
        obs = observe(u, m_u=0, noise_sd=0.0, seed=3)
        z, _, _ = standardize(u)
        np.testing.assert_allclose(obs.observations @ obs.mixing.T, z, atol=1e-12)
        np.testing.assert_allclose(obs.mixing.T @ obs.mixing, np.eye(4), atol=1e-12)

    def test_isometry_with_nuisance(self):
        u = sample_factors(flow_scm(), 200, 1)
        obs = observe(u, m_u=2, noise_sd=0.0, seed=3)
        z, _, _ = standardize(u)
        latent = np.hstack([z, obs.nuisance])
        np.testing.assert_allclose(np.linalg.norm(obs.observations, axis=1), np.linalg.norm(latent, axis=1),
                                   rtol=1e-10)

    def test_unmix_recovers_raw_factors(self, noiseless_pendulum):
        b = noiseless_pendulum
        np.testing.assert_allclose(unmix(b.observations, b.mixing, b.factor_mean, b.factor_std, b.k),
                                   b.factors, rtol=1e-9, atol=1e-9)

    def test_observations_carry_factor_information(self):
        bundle = generate_bundle("pendulum", n=500, seed=8)
        assert mic(bundle.observations[:, 0], bundle.factors[:, 0]) > 0.0

    def test_rejects_negative_arguments(self):
        u = np.zeros((4, 2))
        with pytest.raises(InvalidInputError):
            observe(u, m_u=-1)
        with pytest.raises(InvalidInputError):
            observe(u, noise_sd=-0.1)


class TestPairs:
    def test_two_samples(self):
        assert make_pairs(2, 0).tolist() == [1, 0]

    @pytest.mark.parametrize("seed", range(10))
    def test_fixed_point_free(self, seed):
        p = make_pairs(5, seed)
        assert sorted(p.tolist()) == list(range(5))
        assert not np.any(p == np.arange(5))

    def test_deterministic(self):
        np.testing.assert_array_equal(make_pairs(100, 9), make_pairs(100, 9))

    def test_rejects_single_sample(self):
        with pytest.raises(InvalidInputError):
            make_pairs(1, 0)


class TestSeeds:
    def test_split_is_stable_and_distinct(self):
        a = split_seed(42)
        assert a == split_seed(42)
        assert len(set(a.values())) == len(a)
        assert a != split_seed(43)

    def test_bundle_regeneration_is_bit_identical(self):
        a = generate_bundle("flow", n=300, seed=12)
        b = generate_bundle("flow", n=300, seed=12)
        np.testing.assert_array_equal(a.factors, b.factors)
        np.testing.assert_array_equal(a.observations, b.observations)
        np.testing.assert_array_equal(a.pair_index, b.pair_index)


class TestCounterexample:
    def test_moments_of_constructed(self):
        params = CounterexampleParams(means=(1.0, 2.0, 3.0, 4.0), sds=(1.0, 0.5, 2.0, 1.5), rho=0.9)
        n = 10_000
        bundle = gaussian_counterexample(params, n, seed=0)
        for v in range(4):
            col = bundle.constructed[:, v]
            mu, sd = params.means[v], params.sds[v]
            assert abs(col.mean() - mu) < 4 * sd / np.sqrt(n)
            # standard error of the sample variance is sd^2 * sqrt(2 / (n - 1))
            assert abs(col.var(ddof=1) - sd ** 2) < 4 * sd ** 2 * np.sqrt(2.0 / (n - 1))

    def test_small_rho_decouples(self):
        bundle = gaussian_counterexample(CounterexampleParams(rho=1e-6), 5000, seed=1)
        corr = np.corrcoef(bundle.constructed.T)
        assert np.abs(corr[np.triu_indices(4, 1)]).max() < 0.06

    def test_marginals_agree_across_seeds(self):
        critical = ks_critical_value(2000, 2000)
        passes = []
        for seed in range(20):
            rows = marginal_ks(gaussian_counterexample(CounterexampleParams(), 2000, seed))
            assert all(r["critical_value"] == critical for r in rows)
            passes.extend(r["passes"] for r in rows)
        # each column test has a 5% false-alarm rate
        assert np.mean(passes) >= 0.85

    def test_joint_differs_through_mic(self):
        bundle = gaussian_counterexample(CounterexampleParams(rho=0.9), 2000, seed=0)
        pairs = [(i, j) for i in range(4) for j in range(i + 1, 4)]
        before = np.mean([mic(bundle.original[:, i], bundle.original[:, j]) for i, j in pairs])
        after = np.mean([mic(bundle.constructed[:, i], bundle.constructed[:, j]) for i, j in pairs])
        assert after - before >= 0.3

    def test_literal_construction(self):
        params = CounterexampleParams(means=(1.0, 2.0, 3.0, 4.0), sds=(1.0, 1.0, 1.0, 1.0))
        bundle = gaussian_counterexample(params, 20_000, seed=2, literal=True)
        # mean is preserved, variance is not: Var(B') = k^2 + (1 - k)^2 for k = 2
        assert bundle.constructed[:, 1].mean() == pytest.approx(2.0, abs=0.05)
        assert bundle.constructed[:, 1].var() == pytest.approx(5.0, rel=0.05)

    @pytest.mark.parametrize("kwargs", [{"rho": 1.0}, {"rho": 0.0}, {"sds": (1.0, 0.0, 1.0, 1.0)},
                                        {"means": (1.0, 2.0)}])
    def test_invalid_params(self, kwargs):
        with pytest.raises(InvalidInputError):
            gaussian_counterexample(CounterexampleParams(**kwargs), 100, 0)


class TestGraphVariants:
    def test_pendulum_variants(self):
        truth = pendulum_scm().graph
        variants = graph_variants(truth, 14, seed=0)
        assert len(variants) == 14
        assert len({v.edges.tobytes() for v in variants}) == 14
        assert variants[0] == truth
        assert variants[1].n_edges == 0
        assert all(is_dag(v) for v in variants)
        deletions = [v for v in variants
                     if v.n_edges == 3 and not np.any(v.edges & ~truth.edges)]
        assert len(deletions) == 4

    def test_rubrics_span_several_distances(self):
        truth = pendulum_scm().graph
        shds = {graph_rubrics(v, truth).shd for v in graph_variants(truth, 14, seed=0)}
        assert {0, 1, 4} <= shds

    def test_deterministic(self):
        truth = flow_scm().graph
        a = graph_variants(truth, 10, seed=3)
        b = graph_variants(truth, 10, seed=3)
        assert a == b
