#!/usr/bin/env python3
"""
Evaluation protocol for trained causal models.

Latents are matched to ground-truth factors by maximal MIC, then two
zero-interventions are pushed through the model's causal layer:

* Pos: zero the effect latents; a good layer rebuilds them from the causes,
  so MIC/TIC against the true effect factors should be high.
* Neg: zero the cause latents; nothing should flow back into them, so
  MIC/TIC against the true cause factors should be low.

Cause/effect designation always comes from the ground-truth graph. The
adequacy study trains one model per (graph variant, seed) and correlates the
metrics with structural rubrics of the variant.
"""

import logging
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
from scipy import stats

from datagen import DatasetBundle, Scm, get_scm, unmix
from errors import ConfigError, InvalidInputError, UndefinedMetricError
from graph_core import (BinaryGraph, GraphRubrics, WeightedDigraph, binarize, graph_rubrics,
                        permute)
from mic_metrics import DEFAULT_ALPHA, DEFAULT_CLUMPS, MIN_SAMPLES, mic, mic_tic
from model import DTYPE, MechanismLayer, TrainConfig, train

logger = logging.getLogger(__name__)

EVAL_SAMPLES = int(os.environ.get("CAUSAL_LAB_EVAL_SAMPLES", "1000"))
METRIC_COLUMNS = ("mic", "tic", "pos_mic", "pos_tic", "neg_mic", "neg_tic")
RUBRIC_COLUMNS = ("tpr", "fdr", "shd")
CORRELATIONS = ("pearson", "spearman")
MIN_VARIANTS = 6
MIN_SEEDS = 2
MIN_CORRELATION_ROWS = 3


@dataclass
class EvalConfig:
    samples: int = EVAL_SAMPLES
    mic_alpha: float = DEFAULT_ALPHA
    mic_clumps: int = DEFAULT_CLUMPS
    tau: Optional[float] = None
    correlation: str = "pearson"

    def validate(self):
        if self.samples < MIN_SAMPLES:
            raise ConfigError(f"samples must be >= {MIN_SAMPLES}, got {self.samples}")
        if not 0.0 < self.mic_alpha <= 1.0:
            raise ConfigError(f"mic_alpha must lie in (0, 1], got {self.mic_alpha}")
        if self.mic_clumps < 1:
            raise ConfigError(f"mic_clumps must be >= 1, got {self.mic_clumps}")
        if self.tau is not None and not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.correlation not in CORRELATIONS:
            raise ConfigError(f"correlation must be one of {CORRELATIONS}, got '{self.correlation}'")
        return self


class LatentModel(Protocol):
    """What evaluation needs from a model: codes, propagation, and a graph"""

    def infer_latents(self, x: np.ndarray) -> np.ndarray: ...

    def propagate(self, z: np.ndarray, tau: Optional[float] = None) -> np.ndarray: ...

    def adjacency(self) -> WeightedDigraph: ...


class OracleModel:
    """True factors as latents, the SCM's own mechanisms as causal layer"""

    def __init__(self, bundle: DatasetBundle, scm: Optional[Scm] = None):
        self.bundle = bundle
        self.scm = scm or get_scm(bundle.name, noise_fraction=0.0)
        self.layer = MechanismLayer(self.scm)

    def infer_latents(self, x):
        b = self.bundle
        return unmix(x, b.mixing, b.factor_mean, b.factor_std, b.k)

    def propagate(self, z, tau=None):
        return self.layer(torch.as_tensor(z, dtype=DTYPE)).numpy()

    def adjacency(self):
        return WeightedDigraph(self.scm.graph.edges.astype(float), list(self.scm.factor_names))


class ConstantModel:
    """Emits zeros everywhere; the floor every metric is compared against"""

    def __init__(self, k, node_names=None):
        self.k = k
        self.node_names = list(node_names or [])

    def infer_latents(self, x):
        return np.zeros((np.asarray(x).shape[0], self.k))

    def propagate(self, z, tau=None):
        return np.zeros_like(np.asarray(z, dtype=float))

    def adjacency(self):
        return WeightedDigraph(np.zeros((self.k, self.k)), list(self.node_names))


@dataclass
class MetricReport:
    mic: float
    tic: float
    pos_mic: float
    pos_tic: float
    neg_mic: float
    neg_tic: float
    f1_mic: float
    f1_tic: float
    rubrics: GraphRubrics
    matching: Dict[int, int]
    factor_names: List[str] = field(default_factory=list)

    def to_json(self):
        return {
            "mic": self.mic,
            "tic": self.tic,
            "pos_mic": self.pos_mic,
            "pos_tic": self.pos_tic,
            "neg_mic": self.neg_mic,
            "neg_tic": self.neg_tic,
            "f1_mic": self.f1_mic,
            "f1_tic": self.f1_tic,
            "rubrics": self.rubrics.as_dict(),
            "matching": {str(f): int(l) for f, l in sorted(self.matching.items())},
            "factor_names": list(self.factor_names),
        }

    @classmethod
    def from_json(cls, data):
        return cls(
            **{name: float(data[name]) for name in METRIC_COLUMNS + ("f1_mic", "f1_tic")},
            rubrics=GraphRubrics(float(data["rubrics"]["tpr"]), float(data["rubrics"]["fdr"]),
                                 int(data["rubrics"]["shd"])),
            matching={int(f): int(l) for f, l in data["matching"].items()},
            factor_names=list(data.get("factor_names", [])),
        )

    def row(self):
        out = {name: getattr(self, name) for name in METRIC_COLUMNS + ("f1_mic", "f1_tic")}
        out.update(self.rubrics.as_dict())
        return out


def match_latents(latents, factors, alpha=DEFAULT_ALPHA, c=DEFAULT_CLUMPS) -> Dict[int, int]:
    """factor index -> latent index, greedy on descending best MIC"""
    latents = np.asarray(latents, dtype=float)
    factors = np.asarray(factors, dtype=float)
    if latents.shape[0] != factors.shape[0]:
        raise InvalidInputError(f"Latent and factor tables differ in rows: {latents.shape[0]} vs {factors.shape[0]}")
    if latents.shape[1] < factors.shape[1]:
        raise InvalidInputError(f"Need at least {factors.shape[1]} latents, got {latents.shape[1]}")
    if factors.shape[0] < MIN_SAMPLES:
        raise InvalidInputError(f"Matching needs n >= {MIN_SAMPLES}, got {factors.shape[0]}")

    k_f, k_l = factors.shape[1], latents.shape[1]
    scores = np.array([[mic(latents[:, l], factors[:, f], alpha, c) for l in range(k_l)]
                       for f in range(k_f)])
    assignment: Dict[int, int] = {}
    used = set()
    # stable: ties go to the lower factor index
    for f in sorted(range(k_f), key=lambda f: (-scores[f].max(), f)):
        for l in np.argsort(-scores[f], kind="stable"):
            if int(l) not in used:
                assignment[f] = int(l)
                used.add(int(l))
                break
    return assignment


def _designation(truth: BinaryGraph):
    roots = truth.roots()
    effects = [i for i in range(truth.d) if i not in roots]
    return roots, effects


def _subsample(bundle: DatasetBundle, samples):
    n = min(bundle.n, samples)
    return bundle.observations[:n], bundle.factors[:n]


def intervention_scores(model: LatentModel, latents, factors, matching, zeroed, scored,
                        tau=None, alpha=DEFAULT_ALPHA, c=DEFAULT_CLUMPS) -> List[Tuple[float, float]]:
    """Zero the matched latents of `zeroed` factors, propagate, score `scored` factors"""
    z = np.array(latents, dtype=float, copy=True)
    for f in zeroed:
        z[:, matching[f]] = 0.0
    z_hat = model.propagate(z, tau)
    return [mic_tic(z_hat[:, matching[f]], factors[:, f], alpha, c) for f in scored]


def _mean_pair(scores):
    return float(np.mean([s[0] for s in scores])), float(np.mean([s[1] for s in scores]))


def _kind_index(kind):
    kind = kind.lower()
    if kind not in ("mic", "tic"):
        raise InvalidInputError(f"kind must be 'mic' or 'tic', got '{kind}'")
    return 0 if kind == "mic" else 1


def pos_metric(model: LatentModel, data: DatasetBundle, truth: BinaryGraph, kind="mic",
               matching=None, config: Optional[EvalConfig] = None) -> float:
    """Mean MIC/TIC of rebuilt effect latents against their true factors"""
    config = (config or EvalConfig()).validate()
    roots, effects = _designation(truth)
    if not effects:
        raise UndefinedMetricError("Pos metric needs at least one effect factor; the graph has none")
    x, factors = _subsample(data, config.samples)
    latents = model.infer_latents(x)
    if matching is None:
        matching = match_latents(latents, factors, config.mic_alpha, config.mic_clumps)
    scores = intervention_scores(model, latents, factors, matching, effects, effects,
                                 config.tau, config.mic_alpha, config.mic_clumps)
    return _mean_pair(scores)[_kind_index(kind)]


def neg_metric(model: LatentModel, data: DatasetBundle, truth: BinaryGraph, kind="mic",
               matching=None, config: Optional[EvalConfig] = None) -> float:
    """Mean MIC/TIC of zeroed cause latents after the causal layer; lower is better"""
    config = (config or EvalConfig()).validate()
    roots, effects = _designation(truth)
    if not effects:
        raise UndefinedMetricError("Neg metric needs cause and effect factors; the graph has no effects")
    x, factors = _subsample(data, config.samples)
    latents = model.infer_latents(x)
    if matching is None:
        matching = match_latents(latents, factors, config.mic_alpha, config.mic_clumps)
    scores = intervention_scores(model, latents, factors, matching, roots, roots,
                                 config.tau, config.mic_alpha, config.mic_clumps)
    return _mean_pair(scores)[_kind_index(kind)]


def f1_score(pos: float, neg: float) -> float:
    """Harmonic mean of pos and 1 - neg"""
    for name, value in (("pos", pos), ("neg", neg)):
        if not 0.0 <= value <= 1.0:
            raise InvalidInputError(f"{name} must lie in [0, 1], got {value}")
    if pos == 0.0:
        return 0.0
    keep = 1.0 - neg
    return 2.0 * pos * keep / (pos + keep)


def learned_rubrics(model: LatentModel, truth: BinaryGraph, matching: Dict[int, int], tau) -> GraphRubrics:
    """Rubrics of the binarized learned graph after reordering latents into factor order"""
    A = model.adjacency()
    order = [matching[f] for f in range(truth.d)]
    if A.d != truth.d:
        raise InvalidInputError(f"Learned graph has {A.d} nodes, truth has {truth.d}")
    return graph_rubrics(binarize(permute(A, order, truth.node_names), tau), truth)


def evaluate_model(model: LatentModel, data: DatasetBundle, truth: Optional[BinaryGraph] = None,
                   config: Optional[EvalConfig] = None) -> MetricReport:
    config = (config or EvalConfig()).validate()
    truth = truth or data.truth
    roots, effects = _designation(truth)
    if not effects:
        raise UndefinedMetricError("Evaluation needs at least one effect factor")
    x, factors = _subsample(data, config.samples)
    latents = model.infer_latents(x)
    if latents.shape[1] != truth.d:
        raise InvalidInputError(f"Model has {latents.shape[1]} causal latents, truth has {truth.d} factors")

    matching = match_latents(latents, factors, config.mic_alpha, config.mic_clumps)
    plain = [mic_tic(latents[:, matching[f]], factors[:, f], config.mic_alpha, config.mic_clumps)
             for f in range(truth.d)]
    mic_mean, tic_mean = _mean_pair(plain)
    pos_mic, pos_tic = _mean_pair(intervention_scores(model, latents, factors, matching, effects, effects,
                                                      config.tau, config.mic_alpha, config.mic_clumps))
    neg_mic, neg_tic = _mean_pair(intervention_scores(model, latents, factors, matching, roots, roots,
                                                      config.tau, config.mic_alpha, config.mic_clumps))

    tau = config.tau if config.tau is not None else getattr(getattr(model, "config", None), "tau", 0.3)
    report = MetricReport(
        mic=mic_mean, tic=tic_mean,
        pos_mic=pos_mic, pos_tic=pos_tic,
        neg_mic=neg_mic, neg_tic=neg_tic,
        f1_mic=f1_score(pos_mic, neg_mic), f1_tic=f1_score(pos_tic, neg_tic),
        rubrics=learned_rubrics(model, truth, matching, tau),
        matching=matching,
        factor_names=list(truth.node_names),
    )
    logger.info("Evaluated model: pos_mic=%.3f neg_mic=%.3f f1_mic=%.3f", pos_mic, neg_mic, report.f1_mic)
    return report


def pearson(a, b) -> float:
    """Product-moment correlation; NaN when either side has zero variance"""
    a, b = _correlation_inputs(a, b)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return float("nan")
    return float(np.clip(stats.pearsonr(a, b)[0], -1.0, 1.0))


def spearman(a, b) -> float:
    a, b = _correlation_inputs(a, b)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return float("nan")
    return float(np.clip(stats.spearmanr(a, b)[0], -1.0, 1.0))


def _correlation_inputs(a, b):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != b.size:
        raise InvalidInputError(f"Correlation inputs differ in length: {a.size} vs {b.size}")
    if a.size < MIN_CORRELATION_ROWS:
        raise InvalidInputError(f"Correlation needs at least {MIN_CORRELATION_ROWS} values, got {a.size}")
    return a, b


def correlate(rows: pd.DataFrame, method="pearson") -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Metric x rubric correlation matrix and the long (metric, rubric, r, degenerate) table"""
    if len(rows) < MIN_CORRELATION_ROWS:
        raise InvalidInputError(f"Too few rows for correlation: {len(rows)} < {MIN_CORRELATION_ROWS}")
    fn = pearson if method == "pearson" else spearman
    records = []
    for metric in METRIC_COLUMNS:
        for rubric in RUBRIC_COLUMNS:
            success, r, error = _safe_correlation(fn, rows[metric], rows[f"variant_{rubric}"])
            records.append({"metric": metric, "rubric": rubric, "r": r, "degenerate": not success})
            if error:
                logger.warning("Correlation %s/%s undefined: %s", metric, rubric, error)
    long = pd.DataFrame.from_records(records, columns=["metric", "rubric", "r", "degenerate"])
    matrix = long.pivot(index="metric", columns="rubric", values="r")
    matrix = matrix.reindex(index=list(METRIC_COLUMNS), columns=list(RUBRIC_COLUMNS))
    matrix.index.name = "metric"
    matrix.columns.name = None
    return matrix, long


def _safe_correlation(fn, a, b):
    r = fn(a, b)
    if np.isnan(r):
        return False, r, "zero variance"
    return True, r, None


@dataclass
class AdequacyResult:
    rows: pd.DataFrame
    correlations: pd.DataFrame
    plot_data: pd.DataFrame
    method: str = "pearson"

    @property
    def degenerate(self):
        return bool(self.plot_data["degenerate"].any())

    def r(self, metric, rubric):
        return float(self.correlations.loc[metric, rubric])


def _variant_label(variant: BinaryGraph):
    edges = variant.edge_list()
    if not edges:
        return "empty"
    return ";".join(f"{variant.node_names[j]}->{variant.node_names[i]}" for j, i in edges)


def adequacy_study(data: DatasetBundle, variants: Sequence[BinaryGraph], seeds: Sequence[int],
                   config: TrainConfig, eval_config: Optional[EvalConfig] = None,
                   progress: Optional[Callable[[int, int], None]] = None,
                   train_fn=train, enforce_minimums=True) -> AdequacyResult:
    """Train one model per (variant, seed) with the variant's zeros frozen, then correlate"""
    eval_config = (eval_config or EvalConfig()).validate()
    config.validate()
    variants = list(variants)
    seeds = list(seeds)
    if enforce_minimums and (len(variants) < MIN_VARIANTS or len(seeds) < MIN_SEEDS):
        raise InvalidInputError(f"Adequacy study needs >= {MIN_VARIANTS} variants and >= {MIN_SEEDS} seeds, "
                                f"got {len(variants)} and {len(seeds)}")
    if len(variants) * len(seeds) < MIN_CORRELATION_ROWS:
        raise InvalidInputError(f"Too few rows for correlation: {len(variants) * len(seeds)}")
    truth = data.truth
    tau = eval_config.tau if eval_config.tau is not None else config.tau

    records = []
    total = len(variants) * len(seeds)
    for v_index, variant in enumerate(variants):
        if variant.d != truth.d:
            raise InvalidInputError(f"Variant {v_index} has {variant.d} nodes, truth has {truth.d}")
        fixed = graph_rubrics(variant, truth)
        for seed in seeds:
            cell_config = replace(config, seed=int(seed))
            result = train_fn(data, cell_config, init_adjacency=variant.edges.astype(float),
                              trainable=variant.edges)
            report = evaluate_model(result.model, data, truth, replace(eval_config, tau=tau))
            row = {"variant": v_index, "seed": int(seed), "edges": _variant_label(variant)}
            row.update({name: getattr(report, name) for name in METRIC_COLUMNS + ("f1_mic", "f1_tic")})
            row.update({f"variant_{k}": v for k, v in fixed.as_dict().items()})
            row.update({f"learned_{k}": v for k, v in report.rubrics.as_dict().items()})
            records.append(row)
            if progress is not None:
                progress(len(records), total)

    rows = pd.DataFrame.from_records(records)
    matrix, long = correlate(rows, eval_config.correlation)
    return AdequacyResult(rows, matrix, long, eval_config.correlation)
