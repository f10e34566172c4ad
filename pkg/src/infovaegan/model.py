"""Generator, critic and the two inference networks.

Generator input is the concatenation ``(z, d, c)`` in that order
(``GENERATOR_INPUT_ORDER``).  The u-encoder produces the categorical logits
for ``d`` and the Gaussian parameters for ``c`` from one trunk with a split
last layer; the z-encoder is a separate network.
"""

from __future__ import annotations

import hashlib
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .distributions import (
    CategoricalParams,
    GaussianParams,
    LatentCode,
    PriorConfig,
    one_hot,
    sample_gaussian_reparam,
)
from .nn import Mlp, init_mlp
from .tensor import Graph, ShapeError, Tensor

GENERATOR_INPUT_ORDER = ("z", "d", "c")
NETWORKS = ("generator", "critic", "encoder_u", "encoder_z")

Params = Mapping[str, Sequence[Tensor]]


@dataclass
class EncoderOutput:
    z_post: GaussianParams
    c_post: GaussianParams
    d_post: CategoricalParams


@dataclass
class ModelBundle:
    generator: Mlp
    critic: Mlp
    encoder_u: Mlp
    encoder_z: Mlp
    prior: PriorConfig

    def __post_init__(self):
        p = self.prior
        if self.generator.in_features != p.code_dim:
            raise ShapeError(
                f"generator input {self.generator.in_features} != z_dim + K + c_dim = {p.code_dim}"
            )
        pixels = self.generator.out_features
        for name in ("critic", "encoder_u", "encoder_z"):
            if getattr(self, name).in_features != pixels:
                raise ShapeError(f"{name} input {getattr(self, name).in_features} != pixels {pixels}")
        if self.encoder_u.out_features != p.K + 2 * p.c_dim:
            raise ShapeError("encoder_u output must be K + 2*c_dim")
        if self.encoder_z.out_features != 2 * p.z_dim:
            raise ShapeError("encoder_z output must be 2*z_dim")

    @property
    def pixels(self) -> int:
        return self.generator.out_features

    def network(self, name: str) -> Mlp:
        return getattr(self, name)

    def bind(self, graph: Graph, *names: str) -> dict[str, list[Tensor]]:
        return {name: self.network(name).bind(graph) for name in names}

    def copy(self) -> "ModelBundle":
        return ModelBundle(
            self.generator.copy(), self.critic.copy(), self.encoder_u.copy(),
            self.encoder_z.copy(), PriorConfig(**vars(self.prior)),
        )

    def checksum(self, *names: str) -> str:
        h = hashlib.sha256()
        for name in names or NETWORKS:
            for p in self.network(name).parameters():
                h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()


def build_bundle(prior: PriorConfig, pixels: int, rng: np.random.Generator,
                 hidden: Sequence[int] = (256, 256)) -> ModelBundle:
    hidden = list(hidden)
    return ModelBundle(
        generator=init_mlp([prior.code_dim, *hidden, pixels], "sigmoid", rng),
        critic=init_mlp([pixels, *hidden, 1], "none", rng),
        encoder_u=init_mlp(
            [pixels, *hidden, prior.K + 2 * prior.c_dim], "split", rng,
            splits=(prior.K, prior.c_dim, prior.c_dim),
        ),
        encoder_z=init_mlp([pixels, *hidden, 2 * prior.z_dim], "split", rng,
                           splits=(prior.z_dim, prior.z_dim)),
        prior=prior,
    )


def _get(params: Params | None, name: str):
    return None if params is None else params.get(name)


def code_input(code: LatentCode) -> Tensor:
    return T.concat([code.z, code.d, code.c], axis=-1)


def generate(bundle: ModelBundle, code: LatentCode, params: Params | None = None) -> Tensor:
    p = bundle.prior
    dims = (code.z.shape[-1], code.d.shape[-1], code.c.shape[-1])
    if dims != (p.z_dim, p.K, p.c_dim):
        raise ShapeError(f"latent code dims {dims} != prior (z_dim, K, c_dim) {(p.z_dim, p.K, p.c_dim)}")
    return bundle.generator(code_input(code), _get(params, "generator"))


def encode(bundle: ModelBundle, x, params: Params | None = None) -> EncoderOutput:
    x = T.as_tensor(x)
    if x.ndim != 2 or x.shape[-1] != bundle.pixels:
        raise ShapeError(f"encode: input shape {x.shape}, expected (batch, {bundle.pixels})")
    logits, c_mean, c_log_var = bundle.encoder_u(x, _get(params, "encoder_u"))
    z_mean, z_log_var = bundle.encoder_z(x, _get(params, "encoder_z"))
    return EncoderOutput(
        z_post=GaussianParams(z_mean, z_log_var),
        c_post=GaussianParams(c_mean, c_log_var),
        d_post=CategoricalParams(logits),
    )


def encode_u(bundle: ModelBundle, x, params: Params | None = None) -> tuple[CategoricalParams, GaussianParams]:
    """Only the u-trunk: the auxiliary posterior W(d, c | x)."""
    logits, c_mean, c_log_var = bundle.encoder_u(x, _get(params, "encoder_u"))
    return CategoricalParams(logits), GaussianParams(c_mean, c_log_var)


def criticize(bundle: ModelBundle, x, params: Params | None = None) -> Tensor:
    x = T.as_tensor(x)
    if x.ndim != 2 or x.shape[-1] != bundle.pixels:
        raise ShapeError(f"criticize: input shape {x.shape}, expected (batch, {bundle.pixels})")
    return bundle.critic(x, _get(params, "critic"))


def posterior_code(post: EncoderOutput, rng: np.random.Generator | None = None,
                   mode: str = "mean") -> LatentCode:
    if mode == "mean":
        return LatentCode(post.z_post.mean, post.d_post.probs(), post.c_post.mean)
    if mode == "sample":
        return LatentCode(
            sample_gaussian_reparam(post.z_post, rng),
            post.d_post.probs(),
            sample_gaussian_reparam(post.c_post, rng),
        )
    raise ValueError(f"unknown reconstruction mode {mode!r}")


def reconstruct(bundle: ModelBundle, x, rng: np.random.Generator | None = None,
                mode: str = "mean") -> np.ndarray:
    post = encode(bundle, x)
    return generate(bundle, posterior_code(post, rng, mode)).value


def representation(bundle: ModelBundle, x) -> np.ndarray:
    """Posterior means of z and c with the d probabilities, concatenated."""
    post = encode(bundle, x)
    return np.concatenate(
        [post.z_post.mean.value, post.c_post.mean.value, post.d_post.probs().value], axis=1
    )


def predict_cluster(bundle: ModelBundle, x) -> np.ndarray:
    logits, _ = encode_u(bundle, T.as_tensor(x))
    return logits.logits.value.argmax(axis=-1)


def hard_code(code: LatentCode) -> LatentCode:
    """Same code with ``d`` snapped to its argmax one-hot (evaluation-time input)."""
    d = code.d.value
    return LatentCode(code.z.value, one_hot(d.argmax(axis=-1), d.shape[-1]), code.c.value)
