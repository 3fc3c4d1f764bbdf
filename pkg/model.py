#!/usr/bin/env python3
"""
Reduced-supervision causal model trained with do-operation latent swaps.

A variational encoder maps observations to exogenous codes (causal part eps_c
and nuisance part eps_u), an affine map turns eps_c into endogenous codes z,
and the causal discovery layer (CDL) propagates parent values into child
codes. Training pairs every sample with a partner and uses two swaps:

* Do-Cause: exchange cause coordinates before the CDL; the decoded result
  must reproduce the partner observation.
* Do-Effect: exchange effect coordinates after the CDL; the decoded result is
  a counterfactual that a small classifier learns to tell apart from factual
  reconstructions.

torch autograd (float64) is the reverse-mode engine; the acyclicity penalty
enters through a custom Function whose backward is graph_core's analytic
gradient, so the value and gradient used in training are the same numbers the
graph module reports.
"""

import logging
import math
import re
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.func import functional_call

from datagen import DatasetBundle, Scm, split_seed, standardize
from errors import ConfigError, InvalidInputError, NumericError, TrainingDivergedError
from graph_core import WeightedDigraph, acyclicity_gradient, acyclicity_penalty, topological_order

logger = logging.getLogger(__name__)

DTYPE = torch.float64
LOGVAR_MIN = -8.0
LOGVAR_MAX = 8.0
MODEL_FORMAT = "causal-swap-lab/model-v1"
CDL_MODES = ("linear", "gae")

LOSS_TERMS = ("vae", "cause", "effect", "classifier", "align", "acyc", "label_fit", "label_kl")
LOG_COLUMNS = ("step",) + LOSS_TERMS + ("total", "h_weight")


@dataclass
class TrainConfig:
    alpha: float = 0.1
    beta: float = 0.1
    gamma: float = 1.0
    h_start: float = 0.1
    h_factor: float = 2.0
    h_every: int = 500
    h_cap: float = 100.0
    tau: float = 0.3
    lr: float = 5e-3
    steps: int = 5000
    seed: int = 0
    cdl_mode: str = "gae"
    enable_do_cause: bool = True
    enable_do_effect: bool = True
    effect_target_label: int = 0
    label_fraction: float = 0.0
    batch_size: int = 64
    decoder_hidden: int = 0
    gae_hidden: int = 8
    classifier_hidden: int = 16
    clip_norm: float = 10.0
    init_weight: float = 0.25
    init_jitter: float = 0.05

    def validate(self):
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0.0 <= self.label_fraction <= 1.0:
            raise ConfigError(f"label_fraction must lie in [0, 1], got {self.label_fraction}")
        if self.cdl_mode not in CDL_MODES:
            raise ConfigError(f"cdl_mode must be one of {CDL_MODES}, got '{self.cdl_mode}'")
        if self.effect_target_label not in (0, 1):
            raise ConfigError(f"effect_target_label must be 0 or 1, got {self.effect_target_label}")
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.h_start < 0 or self.h_factor < 1 or self.h_every < 1 or self.h_cap < 0:
            raise ConfigError("acyclicity schedule needs h_start >= 0, h_factor >= 1, h_every >= 1, h_cap >= 0")
        if not self.clip_norm > 0:
            raise ConfigError(f"clip_norm must be positive, got {self.clip_norm}")
        if self.decoder_hidden < 0 or self.gae_hidden < 1 or self.classifier_hidden < 1:
            raise ConfigError("hidden widths must be positive (decoder_hidden may be 0 for affine)")
        return self

    def h_weight(self, step):
        """Geometric ramp of the acyclicity weight"""
        return min(self.h_cap, self.h_start * self.h_factor ** (step // self.h_every))

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown training keys: {', '.join(unknown)}")
        try:
            return cls(**data).validate()
        except TypeError as e:
            raise ConfigError(f"Training config has a value of the wrong type: {e}") from e


class AcyclicityPenalty(torch.autograd.Function):
    """h(A) with graph_core's analytic gradient as backward"""

    @staticmethod
    def forward(ctx, A):
        W = A.detach().cpu().numpy()
        ctx.save_for_backward(A)
        with np.errstate(over="ignore", invalid="ignore"):
            if not np.all(np.isfinite(W * W)):
                # overflowed weights; the caller reports divergence
                return torch.tensor(float("inf"), dtype=A.dtype)
            return torch.tensor(acyclicity_penalty(W), dtype=A.dtype)

    @staticmethod
    def backward(ctx, grad_output):
        (A,) = ctx.saved_tensors
        G = acyclicity_gradient(A.detach().cpu().numpy())
        return grad_output * torch.as_tensor(G, dtype=A.dtype)


def cause_mask(A, tau):
    """True where a node's incoming weight norm is below tau (a root, hence a cause)"""
    if isinstance(A, WeightedDigraph):
        A = A.weights
    A = torch.as_tensor(A, dtype=DTYPE)
    return torch.linalg.vector_norm(A.detach(), dim=0) < tau


class CausalDiscoveryLayer(nn.Module):
    """Learnable adjacency A plus optional per-node nonlinear maps (gae mode)

    In gae mode W1 and W2 enter through unit-norm rows, so parent j moves
    node i by at most |A[j, i]| times its own value.
    """

    def __init__(self, k, mode="gae", hidden=8, init_weight=0.25, init_jitter=0.05):
        super().__init__()
        if mode not in CDL_MODES:
            raise ConfigError(f"cdl_mode must be one of {CDL_MODES}, got '{mode}'")
        self.k = k
        self.mode = mode
        off_diagonal = 1.0 - torch.eye(k, dtype=DTYPE)
        jitter = init_jitter * (2.0 * torch.rand(k, k, dtype=DTYPE) - 1.0)
        self.A = nn.Parameter((init_weight + jitter) * off_diagonal)
        self.register_buffer("trainable", off_diagonal.clone())
        if mode == "gae":
            self.W1 = nn.Parameter(torch.randn(k, k, hidden, dtype=DTYPE) / math.sqrt(k))
            self.W2 = nn.Parameter(torch.randn(k, hidden, dtype=DTYPE) / math.sqrt(hidden))

    def hidden(self, z):
        """tanh layer of every node's parent map"""
        W1 = self.W1 / torch.linalg.vector_norm(self.W1, dim=2, keepdim=True)
        masked = z[:, :, None] * self.A[None, :, :]
        return torch.tanh(torch.einsum("bji,ijh->bih", masked, W1))

    def aggregate(self, z):
        """Parent aggregation for every node, ignoring the root mask"""
        if self.mode == "linear":
            return z @ self.A
        W2 = self.W2 / torch.linalg.vector_norm(self.W2, dim=1, keepdim=True)
        return torch.einsum("bih,ih->bi", self.hidden(z), W2)

    def forward(self, z, mask):
        return torch.where(mask, z, self.aggregate(z))

    def set_adjacency(self, weights, trainable=None):
        with torch.no_grad():
            self.A.copy_(torch.as_tensor(weights, dtype=DTYPE))
            self.A.fill_diagonal_(0.0)
            if trainable is not None:
                mask = torch.as_tensor(trainable, dtype=DTYPE)
                self.trainable.copy_(mask * (1.0 - torch.eye(self.k, dtype=DTYPE)))


class MechanismLayer(nn.Module):
    """CDL that evaluates an SCM's noiseless equations in topological order"""

    def __init__(self, scm: Scm):
        super().__init__()
        self.scm = scm
        self.k = scm.k
        self.register_buffer("A", torch.as_tensor(scm.graph.edges.astype(float), dtype=DTYPE))
        self.order = topological_order(scm.graph)
        self.roots = set(scm.graph.roots())

    def aggregate(self, z):
        values = z.detach().cpu().numpy().astype(float).copy()
        for i in self.order:
            if i not in self.roots:
                values[:, i] = self.scm.evaluate(i, values)
        return torch.as_tensor(values, dtype=DTYPE)

    def forward(self, z, mask=None):
        return self.aggregate(z)


def cdl_forward(z, cdl, tau):
    """Roots pass through, other nodes come from their aggregated parents"""
    return cdl(z, cause_mask(cdl.A, tau))


def do_cause(z1, z2, mask):
    """Swap cause coordinates (mask True) between paired codes, before the CDL"""
    return torch.where(mask, z2, z1), torch.where(mask, z1, z2)


def do_effect(z1_hat, z2_hat, mask):
    """Swap effect coordinates (mask False) between paired post-CDL codes"""
    return torch.where(mask, z1_hat, z2_hat), torch.where(mask, z2_hat, z1_hat)


def reparameterize(mean, logvar, noise):
    if mean.shape != logvar.shape or mean.shape != noise.shape:
        raise InvalidInputError(f"Shapes differ: mean {tuple(mean.shape)}, logvar {tuple(logvar.shape)}, "
                                f"noise {tuple(noise.shape)}")
    return mean + torch.exp(0.5 * logvar) * noise


@dataclass
class LatentBatch:
    eps_c: torch.Tensor
    eps_u: torch.Tensor
    z: torch.Tensor
    z_hat: torch.Tensor
    mean: torch.Tensor
    logvar: torch.Tensor


class CausalModel(nn.Module):
    """Encoder, z-map, CDL, decoder and factual/counterfactual classifier"""

    def __init__(self, m, k, m_u, config: TrainConfig, node_names=None):
        super().__init__()
        if m != k + m_u:
            raise InvalidInputError(f"Observation width {m} must equal k + m_u = {k} + {m_u}")
        self.m, self.k, self.m_u = m, k, m_u
        self.config = config
        self.node_names = list(node_names or [f"z{i}" for i in range(k)])
        latent = k + m_u

        self.encoder = nn.Linear(m, 2 * latent, dtype=DTYPE)
        self.z_map = nn.Linear(k, k, dtype=DTYPE)
        with torch.no_grad():
            self.z_map.weight.copy_(torch.eye(k, dtype=DTYPE))
            self.z_map.bias.zero_()
        self.cdl = CausalDiscoveryLayer(k, config.cdl_mode, config.gae_hidden,
                                        config.init_weight, config.init_jitter)
        if config.decoder_hidden > 0:
            self.decoder = nn.Sequential(
                nn.Linear(latent, config.decoder_hidden, dtype=DTYPE),
                nn.Tanh(),
                nn.Linear(config.decoder_hidden, m, dtype=DTYPE),
            )
        else:
            self.decoder = nn.Linear(latent, m, dtype=DTYPE)
        self.classifier = nn.Sequential(
            nn.Linear(m, config.classifier_hidden, dtype=DTYPE),
            nn.Tanh(),
            nn.Linear(config.classifier_hidden, 1, dtype=DTYPE),
        )

    def model_parameters(self):
        return [p for name, p in self.named_parameters() if not name.startswith("classifier.")]

    def classifier_parameters(self):
        return list(self.classifier.parameters())

    def encode(self, x):
        return encode(x, self)

    def decode(self, z_hat, eps_u):
        return self.decoder(torch.cat([z_hat, eps_u], dim=1))

    def latent(self, x, noise, mask) -> LatentBatch:
        mean, logvar = self.encode(x)
        eps = reparameterize(mean, logvar, noise)
        eps_c, eps_u = eps[:, :self.k], eps[:, self.k:]
        z = self.z_map(eps_c)
        z_hat = self.cdl(z, mask)
        return LatentBatch(eps_c, eps_u, z, z_hat, mean, logvar)

    def classify_logits(self, x, frozen=False):
        if not frozen:
            return self.classifier(x).squeeze(-1)
        detached = {name: p.detach() for name, p in self.classifier.named_parameters()}
        return functional_call(self.classifier, detached, (x,)).squeeze(-1)

    # numpy views used by evaluation

    def infer_latents(self, x):
        with torch.no_grad():
            mean, _ = self.encode(torch.as_tensor(x, dtype=DTYPE))
            return self.z_map(mean[:, :self.k]).numpy()

    def propagate(self, z, tau=None):
        tau = self.config.tau if tau is None else tau
        with torch.no_grad():
            return cdl_forward(torch.as_tensor(z, dtype=DTYPE), self.cdl, tau).numpy()

    def adjacency(self) -> WeightedDigraph:
        return WeightedDigraph(self.cdl.A.detach().numpy().copy(), list(self.node_names))


def encode(x, model):
    """Affine encoder heads; logvar clamped to [LOGVAR_MIN, LOGVAR_MAX]"""
    if x.dim() != 2 or x.shape[1] != model.m:
        raise InvalidInputError(f"Expected observations of width {model.m}, got shape {tuple(x.shape)}")
    out = model.encoder(x)
    latent = model.k + model.m_u
    mean, logvar = out[:, :latent], out[:, latent:]
    return mean, torch.clamp(logvar, LOGVAR_MIN, LOGVAR_MAX)


def loss_vae(x, x_hat, mean, logvar):
    """Unit-variance Gaussian reconstruction plus KL to N(0, I), batch mean"""
    recon = 0.5 * ((x - x_hat) ** 2).sum(dim=1)
    kl = 0.5 * (torch.exp(logvar) + mean ** 2 - 1.0 - logvar).sum(dim=1)
    return (recon + kl).mean()


def loss_cause(x1_prime_hat, x2_prime_hat, x1, x2):
    return F.mse_loss(x1_prime_hat, x2) + F.mse_loss(x2_prime_hat, x1)


def _bce(logits, label):
    target = torch.full_like(logits, float(label))
    return F.binary_cross_entropy_with_logits(logits, target)


def loss_classifier(model, x, x_hat, x_prime_hat, x_pp_hat):
    """Factual inputs toward 1, counterfactual reconstructions toward 0"""
    loss = _bce(model.classify_logits(x.detach()), 1)
    loss = loss + _bce(model.classify_logits(x_hat.detach()), 1)
    if x_prime_hat is not None:
        loss = loss + _bce(model.classify_logits(x_prime_hat.detach()), 1)
    return loss + _bce(model.classify_logits(x_pp_hat.detach()), 0)


def loss_effect(model, x1_pp_hat, x2_pp_hat, target_label=0):
    """Counterfactuals scored by the frozen classifier"""
    return (_bce(model.classify_logits(x1_pp_hat, frozen=True), target_label)
            + _bce(model.classify_logits(x2_pp_hat, frozen=True), target_label))


@dataclass
class Batch:
    x: torch.Tensor
    labels: Optional[torch.Tensor] = None
    labeled: Optional[torch.Tensor] = None

    @property
    def size(self):
        return self.x.shape[0]


@dataclass
class PairNoise:
    first: torch.Tensor
    second: torch.Tensor

    @classmethod
    def zeros(cls, b, width):
        return cls(torch.zeros(b, width, dtype=DTYPE), torch.zeros(b, width, dtype=DTYPE))

    @classmethod
    def draw(cls, b, width, generator):
        return cls(torch.randn(b, width, generator=generator, dtype=DTYPE),
                   torch.randn(b, width, generator=generator, dtype=DTYPE))


@dataclass
class SwapPass:
    first: LatentBatch
    second: LatentBatch
    x1_hat: torch.Tensor
    x2_hat: torch.Tensor
    mask: torch.Tensor
    prime: Optional[Tuple[torch.Tensor, torch.Tensor]] = None
    double_prime: Optional[Tuple[torch.Tensor, torch.Tensor]] = None


def swap_pass(model, batch, pair_batch, config, noise, with_cause=True, with_effect=True) -> SwapPass:
    """Factual, do-cause and do-effect reconstructions for a batch of pairs"""
    if batch.size != pair_batch.size:
        raise InvalidInputError(f"Paired batches differ in size: {batch.size} vs {pair_batch.size}")
    if noise is None:
        noise = PairNoise.zeros(batch.size, model.k + model.m_u)
    mask = cause_mask(model.cdl.A, config.tau)
    lat1 = model.latent(batch.x, noise.first, mask)
    lat2 = model.latent(pair_batch.x, noise.second, mask)
    result = SwapPass(lat1, lat2, model.decode(lat1.z_hat, lat1.eps_u),
                      model.decode(lat2.z_hat, lat2.eps_u), mask)

    # a graph with no root has nothing to intervene on
    if with_cause and bool(mask.any()):
        z1_prime, z2_prime = do_cause(lat1.z, lat2.z, mask)
        result.prime = (model.decode(model.cdl(z1_prime, mask), lat2.eps_u),
                        model.decode(model.cdl(z2_prime, mask), lat1.eps_u))
    if with_effect:
        z1_pp, z2_pp = do_effect(lat1.z_hat, lat2.z_hat, mask)
        result.double_prime = (model.decode(z1_pp, lat1.eps_u), model.decode(z2_pp, lat2.eps_u))
    return result


@dataclass
class LossBreakdown:
    vae: torch.Tensor
    cause: torch.Tensor
    effect: torch.Tensor
    classifier: torch.Tensor
    align: torch.Tensor
    acyc: torch.Tensor
    label_fit: torch.Tensor
    label_kl: torch.Tensor
    total: torch.Tensor
    weights: Dict[str, float] = field(default_factory=dict)

    def value(self, name):
        return _scalar(getattr(self, name))

    def recompose(self):
        return sum(self.weights.get(name, 0.0) * self.value(name) for name in LOSS_TERMS)

    def as_row(self, step=None):
        row = {"step": step} if step is not None else {}
        for name in LOSS_TERMS + ("total",):
            row[name] = self.value(name)
        row["h_weight"] = self.weights.get("acyc", 0.0)
        return row

    def first_non_finite(self):
        for name in LOSS_TERMS + ("total",):
            if not math.isfinite(self.value(name)):
                return name
        return None


def _scalar(value):
    if isinstance(value, torch.Tensor):
        return value.detach().item()
    return float(value)


def _zero():
    return torch.zeros((), dtype=DTYPE)


def fit_residual(z, cdl):
    """Least-squares residual of every node against its parent aggregation, batch mean"""
    return ((z - cdl.aggregate(z)) ** 2).sum(dim=1).mean()


def _assemble(terms, weights):
    total = _zero()
    for name in LOSS_TERMS:
        if weights.get(name, 0.0) != 0.0:
            total = total + weights[name] * terms[name]
    return LossBreakdown(total=total, weights=dict(weights), **terms)


def loss_no_label(model, batch, pair_batch, config, noise=None, h_weight=None) -> LossBreakdown:
    """L_VAE + alpha L_cause + beta L_effect + gamma ||z_hat - z||^2 + lambda_h h(A)

    The align term fits every node, roots included, against its aggregated
    parents, so a column below tau still receives gradient and can regrow.
    """
    h_weight = config.h_start if h_weight is None else h_weight
    use_cause = config.enable_do_cause and config.alpha > 0
    use_effect = config.enable_do_effect and config.beta > 0
    sp = swap_pass(model, batch, pair_batch, config, noise, use_cause, use_effect)

    terms = {name: _zero() for name in LOSS_TERMS}
    terms["vae"] = 0.5 * (loss_vae(batch.x, sp.x1_hat, sp.first.mean, sp.first.logvar)
                          + loss_vae(pair_batch.x, sp.x2_hat, sp.second.mean, sp.second.logvar))
    if sp.prime is not None:
        terms["cause"] = loss_cause(sp.prime[0], sp.prime[1], batch.x, pair_batch.x)
    if sp.double_prime is not None:
        terms["effect"] = loss_effect(model, sp.double_prime[0], sp.double_prime[1],
                                      config.effect_target_label)
    terms["align"] = 0.5 * (fit_residual(sp.first.z, model.cdl) + fit_residual(sp.second.z, model.cdl))
    terms["acyc"] = AcyclicityPenalty.apply(model.cdl.A)

    weights = {
        "vae": 1.0,
        "cause": config.alpha if use_cause else 0.0,
        "effect": config.beta if use_effect else 0.0,
        "classifier": 0.0,
        "align": config.gamma,
        "acyc": h_weight,
        "label_fit": 0.0,
        "label_kl": 0.0,
    }
    return _assemble(terms, weights)


def _labeled_rows(batch):
    if batch.labels is None or batch.labeled is None:
        return None, None
    rows = batch.labeled.nonzero(as_tuple=True)[0]
    return batch.x[rows], batch.labels[rows]


def loss_semi(model, batch, pair_batch, config, noise=None, h_weight=None) -> LossBreakdown:
    """No-label loss plus label fixed-point and conditional-prior KL on labeled rows"""
    base = loss_no_label(model, batch, pair_batch, config, noise, h_weight)
    if config.label_fraction == 0:
        return base

    xs, us = [], []
    for b in (batch, pair_batch):
        x, u = _labeled_rows(b)
        if x is not None and x.shape[0] > 0:
            xs.append(x)
            us.append(u)
    if not xs:
        raise ConfigError(f"label_fraction={config.label_fraction} but the batch has no labeled rows")
    x = torch.cat(xs)
    u = torch.cat(us)

    mask = cause_mask(model.cdl.A, config.tau)
    label_fit = ((u - model.cdl(u, mask)) ** 2).sum(dim=1).mean()
    mean, logvar = model.encode(x)
    mean_c, logvar_c = mean[:, :model.k], logvar[:, :model.k]
    label_kl = 0.5 * (torch.exp(logvar_c) + (mean_c - u) ** 2 - 1.0 - logvar_c).sum(dim=1).mean()

    terms = {name: getattr(base, name) for name in LOSS_TERMS}
    terms["label_fit"] = label_fit
    terms["label_kl"] = label_kl
    weights = dict(base.weights, label_fit=1.0, label_kl=1.0)
    return _assemble(terms, weights)


def classifier_loss(model, batch, pair_batch, config, noise=None):
    """L_cla on the current model's factual and counterfactual reconstructions"""
    with torch.no_grad():
        sp = swap_pass(model, batch, pair_batch, config, noise,
                       with_cause=config.enable_do_cause, with_effect=True)
    x = torch.cat([batch.x, pair_batch.x])
    x_hat = torch.cat([sp.x1_hat, sp.x2_hat])
    x_prime = torch.cat(sp.prime) if sp.prime is not None else None
    x_pp = torch.cat(sp.double_prime)
    return loss_classifier(model, x, x_hat, x_prime, x_pp)


_ANOMALY_OP = re.compile(r"Function '(\w+)' returned nan")


def grad(loss_fn: Callable[[], torch.Tensor], params: Dict[str, torch.Tensor]) -> Dict[str, torch.Tensor]:
    """Exact gradients of loss_fn() w.r.t. params; unused blocks get exact zeros"""
    try:
        with torch.autograd.detect_anomaly(check_nan=True):
            loss = loss_fn()
            if isinstance(loss, LossBreakdown):
                bad = loss.first_non_finite()
                if bad:
                    raise NumericError(bad)
                loss = loss.total
            if not torch.isfinite(loss):
                raise NumericError("loss")
            grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
    except RuntimeError as e:
        match = _ANOMALY_OP.search(str(e))
        raise NumericError(match.group(1) if match else "backward", str(e)) from e
    return {name: (g if g is not None else torch.zeros_like(p))
            for (name, p), g in zip(params.items(), grads)}


@dataclass
class TrainResult:
    model: CausalModel
    log: List[dict]
    steps_completed: int


def build_model(bundle: DatasetBundle, config: TrainConfig) -> CausalModel:
    seeds = split_seed(config.seed)
    torch.manual_seed(seeds["init"])
    return CausalModel(bundle.m, bundle.k, bundle.m - bundle.k, config, bundle.factor_names)


def _labeled_set(n, fraction, rng):
    if fraction <= 0:
        return np.zeros(n, dtype=bool)
    labeled = np.zeros(n, dtype=bool)
    labeled[rng.choice(n, size=max(1, int(math.ceil(fraction * n))), replace=False)] = True
    return labeled


def _sample_rows(n, b, labeled, fraction, rng):
    b = min(b, n)
    if fraction <= 0:
        return rng.choice(n, size=b, replace=False)
    pool = np.nonzero(labeled)[0]
    n_lab = min(pool.size, max(1, int(math.ceil(fraction * b))))
    rows_lab = rng.choice(pool, size=n_lab, replace=False)
    rest = rng.choice(n, size=b - n_lab, replace=False)
    return np.concatenate([rows_lab, rest])


def _snapshot(model):
    return {name: t.detach().clone() for name, t in model.state_dict().items()}


def train(bundle: DatasetBundle, config: TrainConfig, init_adjacency=None, trainable=None,
          progress: Optional[Callable[[int, LossBreakdown], None]] = None) -> TrainResult:
    """Alternate one classifier step and one model step per iteration"""
    config.validate()
    model = build_model(bundle, config)
    if init_adjacency is not None:
        model.cdl.set_adjacency(init_adjacency, trainable)

    seeds = split_seed(config.seed)
    rng = np.random.default_rng(seeds["batches"])
    generator = torch.Generator().manual_seed(seeds["noise"])
    X = torch.as_tensor(bundle.observations, dtype=DTYPE)
    U = torch.as_tensor(standardize(bundle.factors)[0], dtype=DTYPE)
    labeled = _labeled_set(bundle.n, config.label_fraction, rng)
    labeled_t = torch.as_tensor(labeled)
    pairs = np.asarray(bundle.pair_index)
    width = model.k + model.m_u

    opt_model = torch.optim.SGD(model.model_parameters(), lr=config.lr)
    opt_cls = torch.optim.SGD(model.classifier_parameters(), lr=config.lr)
    train_classifier = config.enable_do_effect and config.beta > 0

    log: List[dict] = []
    for step in range(config.steps):
        last_state = _snapshot(model)
        rows = _sample_rows(bundle.n, config.batch_size, labeled, config.label_fraction, rng)
        partners = pairs[rows]
        rows_t, partners_t = torch.as_tensor(rows), torch.as_tensor(partners)
        batch = Batch(X[rows_t], U[rows_t], labeled_t[rows_t])
        pair_batch = Batch(X[partners_t], U[partners_t], labeled_t[partners_t])
        noise = PairNoise.draw(len(rows), width, generator)
        h_weight = config.h_weight(step)

        cla_value = _zero()
        if train_classifier:
            opt_cls.zero_grad()
            cla = classifier_loss(model, batch, pair_batch, config, noise)
            if not torch.isfinite(cla):
                raise TrainingDivergedError(step, "classifier", last_state, log)
            cla.backward()
            torch.nn.utils.clip_grad_norm_(model.classifier_parameters(), config.clip_norm)
            opt_cls.step()
            cla_value = cla.detach()

        opt_model.zero_grad()
        breakdown = loss_semi(model, batch, pair_batch, config, noise, h_weight)
        breakdown.classifier = cla_value
        bad = breakdown.first_non_finite()
        if bad:
            raise TrainingDivergedError(step, bad, last_state, log)
        breakdown.total.backward()
        if model.cdl.A.grad is not None:
            model.cdl.A.grad.mul_(model.cdl.trainable)
        grad_norm = torch.nn.utils.clip_grad_norm_(model.model_parameters(), config.clip_norm)
        if not torch.isfinite(grad_norm):
            raise TrainingDivergedError(step, "gradient", last_state, log)
        opt_model.step()
        with torch.no_grad():
            model.cdl.A.fill_diagonal_(0.0)
        if not all(torch.isfinite(p).all() for p in model.parameters()):
            raise TrainingDivergedError(step, "parameter update", last_state, log)

        log.append(breakdown.as_row(step))
        if progress is not None:
            progress(step, breakdown)

    return TrainResult(model, log, len(log))


def model_to_json(model: CausalModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "dims": {"m": model.m, "k": model.k, "m_u": model.m_u},
        "node_names": list(model.node_names),
        "seed": model.config.seed,
        "config": asdict(model.config),
        "params": {name: t.detach().tolist() for name, t in model.state_dict().items()},
    }


def model_from_json(data: dict) -> CausalModel:
    if not isinstance(data, dict) or data.get("format") != MODEL_FORMAT:
        found = data.get("format") if isinstance(data, dict) else type(data).__name__
        raise InvalidInputError(f"Not a model file (format={found!r})")
    try:
        config = TrainConfig.from_dict(data["config"])
        dims = data["dims"]
        model = CausalModel(int(dims["m"]), int(dims["k"]), int(dims["m_u"]), config, data.get("node_names"))
        state = {name: torch.as_tensor(value, dtype=DTYPE) for name, value in data["params"].items()}
    except KeyError as e:
        raise InvalidInputError(f"Model file is missing field {e}") from e
    except (TypeError, ValueError, AttributeError) as e:
        raise InvalidInputError(f"Model file has a malformed field: {e}") from e
    try:
        model.load_state_dict(state)
    except RuntimeError as e:
        raise InvalidInputError(f"Model parameters do not match their dimensions: {e}") from e
    return model
