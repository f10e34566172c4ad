"""Dense layers, multilayer perceptrons and the Adam optimizer."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numba
import numpy as np

from . import tensor as T
from .tensor import ContractError, Graph, ShapeError, Tensor

HEADS = ("none", "sigmoid", "split")


@dataclass
class DenseLayer:
    weights: np.ndarray  # fan_in x fan_out
    bias: np.ndarray  # fan_out

    @property
    def fan_in(self) -> int:
        return self.weights.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[1]


@dataclass
class Mlp:
    """Leaky-relu hidden layers followed by an output head.

    ``head="split"`` returns one tensor per entry of ``splits`` (slices of the
    last layer's output), which is how the encoders expose several posterior
    parameter groups from one trunk.
    """

    layers: list[DenseLayer]
    head: str = "none"
    splits: tuple[int, ...] = ()

    def __post_init__(self):
        if self.head not in HEADS:
            raise ContractError(f"unknown output head {self.head!r}")
        for i in range(1, len(self.layers)):
            if self.layers[i].fan_in != self.layers[i - 1].fan_out:
                raise ShapeError(
                    f"layer {i} fan_in {self.layers[i].fan_in} != layer {i - 1} fan_out "
                    f"{self.layers[i - 1].fan_out}"
                )
        if self.head == "split" and sum(self.splits) != self.out_features:
            raise ShapeError(f"splits {self.splits} do not cover {self.out_features} outputs")

    @property
    def in_features(self) -> int:
        return self.layers[0].fan_in

    @property
    def out_features(self) -> int:
        return self.layers[-1].fan_out

    @property
    def extents(self) -> list[int]:
        return [self.layers[0].fan_in] + [layer.fan_out for layer in self.layers]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weights, layer.bias]
        return out

    def set_parameters(self, params: Sequence[np.ndarray]) -> None:
        params = list(params)
        if len(params) != 2 * len(self.layers):
            raise ContractError(f"expected {2 * len(self.layers)} arrays, got {len(params)}")
        for i, layer in enumerate(self.layers):
            w, b = params[2 * i], params[2 * i + 1]
            if w.shape != layer.weights.shape or b.shape != layer.bias.shape:
                raise ShapeError(f"layer {i}: parameter shapes do not match")
            layer.weights, layer.bias = w, b

    def bind(self, graph: Graph) -> list[Tensor]:
        """Register every parameter as a leaf of ``graph``."""
        return graph.leaves(self.parameters())

    def copy(self) -> "Mlp":
        layers = [DenseLayer(layer.weights.copy(), layer.bias.copy()) for layer in self.layers]
        return Mlp(layers, self.head, tuple(self.splits))

    def __call__(self, x, params: Sequence[Tensor] | None = None):
        return mlp_forward(self, x, params)


def init_mlp(
    extents: Sequence[int],
    head: str = "none",
    rng: np.random.Generator | None = None,
    splits: Sequence[int] = (),
) -> Mlp:
    """Glorot-uniform weights, zero biases."""
    extents = [int(e) for e in extents]
    if len(extents) < 2:
        raise ContractError(f"an MLP needs at least 2 extents, got {extents}")
    if any(e < 1 for e in extents):
        raise ContractError(f"extents must be positive, got {extents}")
    rng = rng if rng is not None else np.random.default_rng(0)
    layers = []
    for fan_in, fan_out in zip(extents[:-1], extents[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        layers.append(DenseLayer(w, np.zeros(fan_out)))
    return Mlp(layers, head, tuple(int(s) for s in splits))


def mlp_forward(net: Mlp, x, params: Sequence[Tensor] | None = None):
    h = T.as_tensor(x)
    if params is None:
        params = [Tensor(p) for p in net.parameters()]
    n = len(net.layers)
    for i in range(n):
        w, b = params[2 * i], params[2 * i + 1]
        if h.ndim != 2 or h.shape[-1] != w.shape[0]:
            raise ShapeError(f"layer {i}: input extent {h.shape} does not match fan_in {w.shape[0]}")
        h = h @ w + b
        if i < n - 1:
            h = T.leaky_relu(h)
    if net.head == "sigmoid":
        return T.sigmoid(h)
    if net.head == "split":
        parts = []
        start = 0
        for width in net.splits:
            parts.append(T.slice_axis(h, start, start + width))
            start += width
        return parts
    return h


@numba.njit(cache=True)
def _adam_kernel(p, g, m, v, beta1, beta2, lr_c1, c2, eps, p_out, m_out, v_out):
    # single fused pass; same arithmetic as the textbook update
    for i in range(p.size):
        mi = beta1 * m[i] + (1.0 - beta1) * g[i]
        vi = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i])
        m_out[i] = mi
        v_out[i] = vi
        p_out[i] = p[i] - lr_c1 * mi / (np.sqrt(vi / c2) + eps)


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **hyper) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            **hyper,
        )


def adam_step(
    params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update.  Returns fresh arrays; inputs are untouched."""
    if len(grads) != len(params) or len(state.m) != len(params):
        raise ContractError(
            f"adam_step: {len(params)} params, {len(grads)} grads, {len(state.m)} moments"
        )
    t = state.t + 1
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    new_params, new_m, new_v = [], [], []
    for p, g, m_prev, v_prev in zip(params, grads, state.m, state.v):
        g = np.ascontiguousarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ContractError(f"adam_step: gradient shape {g.shape} != parameter shape {p.shape}")
        p_new, m, v = np.empty_like(p), np.empty_like(p), np.empty_like(p)
        _adam_kernel(
            np.ascontiguousarray(p).reshape(-1), g.reshape(-1),
            np.ascontiguousarray(m_prev).reshape(-1), np.ascontiguousarray(v_prev).reshape(-1),
            state.beta1, state.beta2, state.lr / c1, c2, state.eps,
            p_new.reshape(-1), m.reshape(-1), v.reshape(-1),
        )
        new_params.append(p_new)
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(state.lr, state.beta1, state.beta2, state.eps, new_m, new_v, t)
    return new_params, new_state
