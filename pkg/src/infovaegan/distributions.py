"""Priors, reparameterised samplers, log-densities and closed-form KL terms.

All per-row quantities come back as tensors of shape ``(batch,)`` so they can
be averaged or differentiated by the caller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ContractError, ShapeError, Tensor

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0
LOG_2PI = math.log(2.0 * math.pi)

LAWS = ("gaussian", "uniform")


@dataclass
class GaussianParams:
    """Diagonal Gaussian; ``log_var`` is clamped to [-10, 10] on construction."""

    mean: Tensor
    log_var: Tensor

    def __post_init__(self):
        self.mean = T.as_tensor(self.mean)
        self.log_var = T.as_tensor(self.log_var)
        if self.mean.shape != self.log_var.shape:
            raise ShapeError(f"mean {self.mean.shape} and log_var {self.log_var.shape} differ")
        lv = self.log_var.value
        if lv.size and (lv.min() < LOG_VAR_MIN or lv.max() > LOG_VAR_MAX):
            self.log_var = T.clip(self.log_var, LOG_VAR_MIN, LOG_VAR_MAX)

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]


@dataclass
class CategoricalParams:
    logits: Tensor

    def __post_init__(self):
        self.logits = T.as_tensor(self.logits)
        if self.logits.ndim < 1 or self.logits.shape[-1] < 1:
            raise ContractError("categorical needs K >= 1 categories")

    @property
    def K(self) -> int:
        return self.logits.shape[-1]

    def probs(self) -> Tensor:
        return T.softmax(self.logits)

    def log_probs(self) -> Tensor:
        return T.log_softmax(self.logits)


@dataclass
class PriorConfig:
    z_dim: int = 8
    c_dim: int = 2
    K: int = 3
    continuous_law: str = "uniform"
    tau: float = 0.67

    def __post_init__(self):
        if self.z_dim < 0 or self.c_dim < 0:
            raise ContractError("latent dimensions must be >= 0")
        if self.K < 1:
            raise ContractError("K must be >= 1")
        if self.tau <= 0:
            raise ContractError("gumbel temperature must be > 0")
        if self.continuous_law not in LAWS:
            raise ContractError(f"continuous_law must be one of {LAWS}")

    @property
    def code_dim(self) -> int:
        return self.z_dim + self.K + self.c_dim

    def entropy(self) -> float:
        """Marginal entropy H(u) of the interpretable code u = (d, c)."""
        per_dim = math.log(2.0) if self.continuous_law == "uniform" else 0.5 * math.log(2 * math.pi * math.e)
        return math.log(self.K) + self.c_dim * per_dim


@dataclass
class LatentCode:
    """Noise ``z``, relaxed one-hot ``d`` and continuous ``c``."""

    z: Tensor
    d: Tensor
    c: Tensor

    def __post_init__(self):
        self.z, self.d, self.c = (T.as_tensor(v) for v in (self.z, self.d, self.c))
        n = {self.z.shape[0], self.d.shape[0], self.c.shape[0]}
        if len(n) != 1:
            raise ShapeError(f"latent code batch extents disagree: {sorted(n)}")

    @property
    def batch(self) -> int:
        return self.z.shape[0]

    def row(self, i: int) -> "LatentCode":
        return LatentCode(self.z.value[i : i + 1], self.d.value[i : i + 1], self.c.value[i : i + 1])

    def detach(self) -> "LatentCode":
        return LatentCode(self.z.value, self.d.value, self.c.value)


def sample_gaussian_reparam(p: GaussianParams, rng: np.random.Generator, noise=None) -> Tensor:
    eps = rng.standard_normal(p.mean.shape) if noise is None else np.asarray(noise, dtype=np.float64)
    return p.mean + T.exp(0.5 * p.log_var) * eps


def sample_gumbel_softmax(logits, tau: float, rng: np.random.Generator, gumbel=None) -> Tensor:
    """Relaxed one-hot sample softmax((logits + g) / tau), g ~ Gumbel(0, 1).

    ``gumbel`` overrides the noise draw (test hook).
    """
    if tau <= 0:
        raise ContractError(f"gumbel temperature must be > 0, got {tau}")
    logits = T.as_tensor(logits)
    g = rng.gumbel(size=logits.shape) if gumbel is None else np.broadcast_to(
        np.asarray(gumbel, dtype=np.float64), logits.shape
    )
    return T.softmax((logits + g) / tau)


def kl_gaussian_standard(p: GaussianParams) -> Tensor:
    """KL(N(mean, exp(log_var)) || N(0, I)) per row."""
    terms = T.square(p.mean) + T.exp(p.log_var) - 1.0 - p.log_var
    return 0.5 * T.sum(terms, axis=-1)


def kl_categorical_uniform(p: CategoricalParams) -> Tensor:
    """KL(Cat(softmax(logits)) || Cat(1/K)) per row; 0 log 0 counts as 0."""
    q = p.probs()
    return T.sum(q * (p.log_probs() + math.log(p.K)), axis=-1)


def gaussian_log_density(x, p: GaussianParams) -> Tensor:
    x = T.as_tensor(x)
    if x.shape != p.mean.shape:
        raise ShapeError(f"gaussian_log_density: x {x.shape} vs mean {p.mean.shape}")
    inv_var = T.exp(-p.log_var)
    terms = p.log_var + T.square(x - p.mean) * inv_var + LOG_2PI
    return -0.5 * T.sum(terms, axis=-1)


def categorical_log_prob(one_hot, p: CategoricalParams) -> Tensor:
    one_hot = T.as_tensor(one_hot)
    if one_hot.shape != p.logits.shape:
        raise ShapeError(f"categorical_log_prob: one-hot {one_hot.shape} vs logits {p.logits.shape}")
    v = one_hot.value
    if not (np.all((v == 0) | (v == 1)) and np.all(v.sum(axis=-1) == 1)):
        raise ContractError("categorical_log_prob: rows must be one-hot")
    return T.sum(one_hot * p.log_probs(), axis=-1)


def one_hot(labels, K: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros(labels.shape + (K,))
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


def hard_one_hot(relaxed) -> np.ndarray:
    v = T.as_tensor(relaxed).value
    return one_hot(v.argmax(axis=-1), v.shape[-1])


def sample_continuous(cfg: PriorConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    if cfg.continuous_law == "uniform":
        return rng.uniform(-1.0, 1.0, size=(n, cfg.c_dim))
    return rng.standard_normal((n, cfg.c_dim))


def sample_prior(cfg: PriorConfig, n: int, rng: np.random.Generator) -> LatentCode:
    """Draw (z, d, c) from the three independent priors."""
    if n < 1:
        raise ContractError(f"sample_prior: batch must be >= 1, got {n}")
    z = rng.standard_normal((n, cfg.z_dim))
    d = sample_gumbel_softmax(np.zeros((n, cfg.K)), cfg.tau, rng)
    c = sample_continuous(cfg, n, rng)
    return LatentCode(z, d, c)
