#!/usr/bin/env python3
"""
Ground-truth data for the lab.

Two built-in structural causal models (Pendulum and Flow), seeded factor
sampling, the vector observation model that stands in for rendered images,
sample pairing, the Gaussian counterexample for marginal-only metrics, and the
graph variants used by the metric adequacy study.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from errors import InvalidInputError
from graph_core import BinaryGraph, is_dag, topological_order

logger = logging.getLogger(__name__)

# Pendulum geometry
PIVOT_HEIGHT = 10.0
ROD_LENGTH = 9.5
PENDULUM_ANGLE_RANGE = (-40.0, 40.0)
LIGHT_ANGLE_RANGE = (50.0, 130.0)
GRAZING_ANGLE = 1e-3

# Flow physics
CONTAINER_AREA = 50.0
BASE_VOLUME = 250.0
DISCHARGE_COEFF = 1.0
GRAVITY = 9.8
BALL_RADIUS_RANGE = (1.0, 3.0)
HOLE_HEIGHT_RANGE = (4.0, 7.0)

DEFAULT_NOISE_FRACTION = 0.02
DEFAULT_NUISANCE_DIMS = 2
DEFAULT_OBSERVATION_NOISE = 0.01
RANGE_GRID = 201
RANGE_PAD = 0.05
PAIRING_ATTEMPTS = 100

SEED_CONSUMERS = ("data", "observe", "pairs", "init", "noise", "batches", "eval")

# Two-sample KS critical coefficient at the 5% level
KS_C_ALPHA_05 = 1.358


def split_seed(seed: int) -> Dict[str, int]:
    """One independent child seed per consumer, stable per consumer name"""
    if seed < 0:
        raise InvalidInputError(f"Seed must be non-negative, got {seed}")
    children = {}
    for index, name in enumerate(SEED_CONSUMERS):
        seq = np.random.SeedSequence(entropy=seed, spawn_key=(index,))
        children[name] = int(seq.generate_state(1, dtype=np.uint64)[0] & np.uint64(2**63 - 1))
    return children


@dataclass
class Scm:
    """Structural causal model over scalar factors"""

    name: str
    factor_names: List[str]
    graph: BinaryGraph
    equations: Dict[int, Callable[..., np.ndarray]]
    noise: np.ndarray
    factor_ranges: List[Tuple[float, float]]

    def __post_init__(self):
        k = len(self.factor_names)
        if self.graph.d != k:
            raise InvalidInputError(f"Graph has {self.graph.d} nodes for {k} factors")
        if not is_dag(self.graph):
            raise InvalidInputError(f"SCM '{self.name}' graph is cyclic")
        roots = set(self.graph.roots())
        for i in range(k):
            if (i in roots) == (i in self.equations):
                raise InvalidInputError(f"Factor '{self.factor_names[i]}' needs an equation iff it has parents")
        self.noise = np.asarray(self.noise, dtype=float)

    @property
    def k(self):
        return len(self.factor_names)

    def evaluate(self, i, values):
        """Noiseless mechanism of node i applied to the columns of `values`"""
        parents = self.graph.parents(i)
        return np.asarray(self.equations[i](*(values[:, j] for j in parents)), dtype=float)


def _finish_scm(name, factor_names, edges, equations, root_ranges, noise_fraction):
    k = len(factor_names)
    graph = BinaryGraph.from_edges(k, edges, factor_names)
    placeholder = [(0.0, 1.0)] * k
    scm = Scm(name, factor_names, graph, equations, np.zeros(k), placeholder)

    roots = graph.roots()
    axes = [np.linspace(*root_ranges[r], RANGE_GRID) for r in roots]
    mesh = np.meshgrid(*axes, indexing="ij")
    grid = np.zeros((mesh[0].size, k))
    for r, m in zip(roots, mesh):
        grid[:, r] = m.ravel()
    for i in topological_order(graph):
        if i not in roots:
            grid[:, i] = scm.evaluate(i, grid)

    ranges = []
    noise = np.zeros(k)
    for i in range(k):
        if i in roots:
            ranges.append(tuple(float(v) for v in root_ranges[i]))
            continue
        lo, hi = float(grid[:, i].min()), float(grid[:, i].max())
        pad = RANGE_PAD * max(hi - lo, 1e-9)
        ranges.append((lo - pad, hi + pad))
        noise[i] = noise_fraction * (hi - lo)
    scm.factor_ranges = ranges
    scm.noise = noise
    return scm


def _cot_deg(theta_deg):
    # light at or below the horizon casts no finite shadow; keep it grazing instead
    theta = np.deg2rad(np.clip(theta_deg, GRAZING_ANGLE, 180.0 - GRAZING_ANGLE))
    return np.cos(theta) / np.sin(theta)


def shadow_x(px, py, light_angle_deg):
    """Ground-plane landing point of point (px, py) under parallel light"""
    return px + py * _cot_deg(light_angle_deg)


def pendulum_endpoint(pendulum_angle_deg, pivot_height=PIVOT_HEIGHT, rod_length=ROD_LENGTH):
    theta = np.deg2rad(pendulum_angle_deg)
    return rod_length * np.sin(theta), pivot_height - rod_length * np.cos(theta)


def pendulum_scm(noise_fraction=DEFAULT_NOISE_FRACTION, pivot_height=PIVOT_HEIGHT,
                 rod_length=ROD_LENGTH) -> Scm:
    """Pendulum angle and light angle cause shadow position and shadow length"""

    def shadows(theta_p, theta_l):
        end_x, end_y = pendulum_endpoint(theta_p, pivot_height, rod_length)
        return shadow_x(0.0, pivot_height, theta_l), shadow_x(end_x, end_y, theta_l)

    def shadow_position(theta_p, theta_l):
        top, tip = shadows(theta_p, theta_l)
        return 0.5 * (top + tip)

    def shadow_length(theta_p, theta_l):
        top, tip = shadows(theta_p, theta_l)
        return np.abs(top - tip)

    names = ["pendulum_angle", "light_angle", "shadow_position", "shadow_length"]
    edges = [(0, 2), (0, 3), (1, 2), (1, 3)]
    equations = {2: shadow_position, 3: shadow_length}
    root_ranges = {0: PENDULUM_ANGLE_RANGE, 1: LIGHT_ANGLE_RANGE}
    return _finish_scm("pendulum", names, edges, equations, root_ranges, noise_fraction)


def flow_scm(noise_fraction=DEFAULT_NOISE_FRACTION) -> Scm:
    """Ball size raises the water level, which with the hole height drives the flow"""

    def water_height(radius):
        return BASE_VOLUME / CONTAINER_AREA + (4.0 / 3.0) * np.pi * radius ** 3 / CONTAINER_AREA

    def flow(hole, height):
        return DISCHARGE_COEFF * np.sqrt(2.0 * GRAVITY * np.maximum(height - hole, 0.0))

    names = ["ball_size", "hole", "water_height", "flow"]
    edges = [(0, 2), (2, 3), (1, 3)]
    equations = {2: water_height, 3: flow}
    root_ranges = {0: BALL_RADIUS_RANGE, 1: HOLE_HEIGHT_RANGE}
    return _finish_scm("flow", names, edges, equations, root_ranges, noise_fraction)


SCM_BUILDERS = {"pendulum": pendulum_scm, "flow": flow_scm}


def get_scm(name, noise_fraction=DEFAULT_NOISE_FRACTION) -> Scm:
    if name not in SCM_BUILDERS:
        raise InvalidInputError(f"Unknown dataset '{name}'. Choose from {sorted(SCM_BUILDERS)}")
    return SCM_BUILDERS[name](noise_fraction)


def sample_factors(scm: Scm, n: int, seed: int,
                   root_values: Optional[Dict[int, np.ndarray]] = None) -> np.ndarray:
    """Roots uniform on their ranges, others from parents plus Gaussian noise"""
    if n < 1:
        raise InvalidInputError(f"Need at least one sample, got n={n}")
    rng = np.random.default_rng(seed)
    roots = set(scm.graph.roots())
    u = np.zeros((n, scm.k))
    for i in topological_order(scm.graph):
        lo, hi = scm.factor_ranges[i]
        if i in roots:
            draw = rng.uniform(lo, hi, size=n)
            if root_values is not None and i in root_values:
                draw = np.broadcast_to(np.asarray(root_values[i], dtype=float), (n,)).copy()
            u[:, i] = draw
        else:
            noise = rng.normal(0.0, 1.0, size=n) * scm.noise[i]
            u[:, i] = np.clip(scm.evaluate(i, u) + noise, lo, hi)
    return u


@dataclass
class Observation:
    observations: np.ndarray
    nuisance: np.ndarray
    mixing: np.ndarray
    factor_mean: np.ndarray
    factor_std: np.ndarray


def standardize(factors, mean=None, std=None):
    factors = np.asarray(factors, dtype=float)
    mean = factors.mean(axis=0) if mean is None else np.asarray(mean, dtype=float)
    if std is None:
        std = factors.std(axis=0)
        std = np.where(std > 0, std, 1.0)
    return (factors - mean) / std, mean, np.asarray(std, dtype=float)


def observe(factors, m_u=DEFAULT_NUISANCE_DIMS, noise_sd=DEFAULT_OBSERVATION_NOISE, seed=0) -> Observation:
    """Mix standardized factors and nuisance draws through one fixed rotation"""
    if m_u < 0:
        raise InvalidInputError(f"Nuisance dimension must be >= 0, got {m_u}")
    if noise_sd < 0:
        raise InvalidInputError(f"Observation noise must be >= 0, got {noise_sd}")
    rng = np.random.default_rng(seed)
    latent_c, mean, std = standardize(factors)
    n, k = latent_c.shape
    nuisance = rng.standard_normal((n, m_u))
    latent = np.hstack([latent_c, nuisance])
    m = k + m_u
    if m == 1:
        Q = np.ones((1, 1))
    else:
        Q = stats.ortho_group.rvs(dim=m, random_state=rng)
    x = latent @ Q
    if noise_sd > 0:
        x = x + noise_sd * rng.standard_normal((n, m))
    return Observation(x, nuisance, Q, mean, std)


def unmix(observations, mixing, factor_mean, factor_std, k):
    """Invert observe() on noiseless data: raw factor values from observations"""
    latent = np.asarray(observations, dtype=float) @ np.asarray(mixing).T
    return latent[:, :k] * factor_std + factor_mean


def make_pairs(n: int, seed: int) -> np.ndarray:
    """Fixed-point-free permutation pairing each sample with a partner"""
    if n < 2:
        raise InvalidInputError(f"Pairing needs n >= 2, got {n}")
    rng = np.random.default_rng(seed)
    idx = np.arange(n)
    for _ in range(PAIRING_ATTEMPTS):
        perm = rng.permutation(n)
        if not np.any(perm == idx):
            return perm
    return (idx + 1) % n


@dataclass
class DatasetBundle:
    name: str
    factor_names: List[str]
    factors: np.ndarray
    observations: np.ndarray
    nuisance: np.ndarray
    truth: BinaryGraph
    pair_index: np.ndarray
    factor_ranges: List[Tuple[float, float]]
    mixing: np.ndarray
    factor_mean: np.ndarray
    factor_std: np.ndarray
    seed: int = 0
    noise_sd: float = 0.0
    noise_fraction: float = DEFAULT_NOISE_FRACTION

    def __post_init__(self):
        self.validate()

    @property
    def n(self):
        return self.factors.shape[0]

    @property
    def k(self):
        return self.factors.shape[1]

    @property
    def m(self):
        return self.observations.shape[1]

    @property
    def m_u(self):
        return self.nuisance.shape[1]

    def validate(self):
        n = self.factors.shape[0]
        if n < 2:
            raise InvalidInputError(f"Bundle needs at least 2 samples, got {n}")
        if self.observations.shape[0] != n or self.nuisance.shape[0] != n:
            raise InvalidInputError("Factor, observation and nuisance tables differ in row count")
        if self.truth.d != self.factors.shape[1]:
            raise InvalidInputError("Truth graph size does not match factor count")
        for i, (lo, hi) in enumerate(self.factor_ranges):
            column = self.factors[:, i]
            if column.min() < lo or column.max() > hi:
                raise InvalidInputError(f"Factor '{self.factor_names[i]}' leaves its range [{lo}, {hi}]")
        pairs = np.asarray(self.pair_index)
        if sorted(pairs.tolist()) != list(range(n)) or np.any(pairs == np.arange(n)):
            raise InvalidInputError("pair_index must be a fixed-point-free permutation")


def generate_bundle(dataset="pendulum", n=1000, seed=0, m_u=DEFAULT_NUISANCE_DIMS,
                    noise_sd=DEFAULT_OBSERVATION_NOISE,
                    noise_fraction=DEFAULT_NOISE_FRACTION) -> DatasetBundle:
    scm = get_scm(dataset, noise_fraction)
    seeds = split_seed(seed)
    factors = sample_factors(scm, n, seeds["data"])
    obs = observe(factors, m_u, noise_sd, seeds["observe"])
    pairs = make_pairs(n, seeds["pairs"])
    logger.info("Generated %s bundle: n=%d k=%d m=%d", dataset, n, scm.k, obs.observations.shape[1])
    return DatasetBundle(
        name=dataset,
        factor_names=list(scm.factor_names),
        factors=factors,
        observations=obs.observations,
        nuisance=obs.nuisance,
        truth=scm.graph,
        pair_index=pairs,
        factor_ranges=list(scm.factor_ranges),
        mixing=obs.mixing,
        factor_mean=obs.factor_mean,
        factor_std=obs.factor_std,
        seed=seed,
        noise_sd=noise_sd,
        noise_fraction=noise_fraction,
    )


@dataclass
class CounterexampleParams:
    means: Sequence[float] = (1.0, 2.0, 3.0, 4.0)
    sds: Sequence[float] = (1.0, 1.0, 1.0, 1.0)
    rho: float = 0.9

    def validate(self):
        if len(self.means) != 4 or len(self.sds) != 4:
            raise InvalidInputError("Counterexample needs exactly four means and four deviations")
        if any(not s > 0 for s in self.sds):
            raise InvalidInputError(f"Deviations must be positive, got {list(self.sds)}")
        if not 0.0 < self.rho < 1.0:
            raise InvalidInputError(f"Coupling rho must lie in (0, 1), got {self.rho}")


@dataclass
class CounterexampleBundle:
    original: np.ndarray
    constructed: np.ndarray
    params: CounterexampleParams
    literal: bool = False
    columns: List[str] = field(default_factory=lambda: ["A", "B", "C", "D"])


def gaussian_counterexample(params: CounterexampleParams, n: int, seed: int,
                            literal: bool = False) -> CounterexampleBundle:
    """Same per-column marginals, different joint distribution"""
    params.validate()
    if n < 2:
        raise InvalidInputError(f"Counterexample needs n >= 2, got {n}")
    mu = np.asarray(params.means, dtype=float)
    sd = np.asarray(params.sds, dtype=float)
    rng = np.random.default_rng(seed)

    original = mu + sd * rng.standard_normal((n, 4))

    a_prime = mu[0] + sd[0] * rng.standard_normal(n)
    constructed = np.empty((n, 4))
    constructed[:, 0] = a_prime
    fresh = rng.standard_normal((n, 3))
    if literal:
        if mu[0] == 0:
            raise InvalidInputError("Literal construction divides by mu_a, which is zero")
        for v in range(1, 4):
            ratio = mu[v] / mu[0]
            constructed[:, v] = ratio * a_prime + (sd[v] - ratio * sd[0]) * fresh[:, v - 1]
    else:
        standardized_a = (a_prime - mu[0]) / sd[0]
        rho = params.rho
        for v in range(1, 4):
            constructed[:, v] = (mu[v] + rho * sd[v] * standardized_a
                                 + math.sqrt(1.0 - rho ** 2) * sd[v] * fresh[:, v - 1])
    return CounterexampleBundle(original, constructed, params, literal)


def ks_critical_value(n: int, m: int) -> float:
    return KS_C_ALPHA_05 * math.sqrt((n + m) / (n * m))


def marginal_ks(bundle: CounterexampleBundle):
    """Per-column two-sample KS of original vs constructed"""
    n = bundle.original.shape[0]
    critical = ks_critical_value(n, n)
    rows = []
    for j, name in enumerate(bundle.columns):
        result = stats.ks_2samp(bundle.original[:, j], bundle.constructed[:, j])
        rows.append({
            "column": name,
            "ks_statistic": float(result.statistic),
            "p_value": float(result.pvalue),
            "critical_value": critical,
            "passes": bool(result.statistic < critical),
        })
    return rows


def graph_variants(truth: BinaryGraph, count: int, seed: int) -> List[BinaryGraph]:
    """Truth, empty, deletions, reversals, then acyclic additions; distinct DAGs"""
    if not is_dag(truth):
        raise InvalidInputError("graph_variants needs an acyclic truth graph")
    if count < 1:
        return []
    rng = np.random.default_rng(seed)
    names = truth.node_names
    d = truth.d
    variants: List[BinaryGraph] = []
    seen = set()

    def offer(edges):
        if len(variants) >= count:
            return
        g = BinaryGraph(edges, list(names))
        key = g.edges.tobytes()
        if key in seen or not is_dag(g):
            return
        seen.add(key)
        variants.append(g)

    offer(truth.edges.copy())
    offer(np.zeros((d, d), dtype=bool))
    for j, i in truth.edge_list():
        edges = truth.edges.copy()
        edges[j, i] = False
        offer(edges)
    for j, i in truth.edge_list():
        edges = truth.edges.copy()
        edges[j, i] = False
        edges[i, j] = True
        offer(edges)

    absent = [(j, i) for j in range(d) for i in range(d)
              if j != i and not truth.edges[j, i]]
    for idx in rng.permutation(len(absent)):
        j, i = absent[idx]
        edges = truth.edges.copy()
        edges[j, i] = True
        offer(edges)

    # multi-edge additions until the budget is met or attempts run out
    attempts = 0
    while len(variants) < count and absent and attempts < 50 * count:
        attempts += 1
        size = int(rng.integers(2, max(3, len(absent) + 1)))
        picks = rng.choice(len(absent), size=min(size, len(absent)), replace=False)
        edges = truth.edges.copy()
        for idx in picks:
            j, i = absent[idx]
            edges[j, i] = True
        offer(edges)
    return variants
