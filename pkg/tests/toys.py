"""Tractable toy configurations shared by unit and acceptance tests."""

import math

import numpy as np

from infovaegan import tensor as T
from infovaegan.distributions import CategoricalParams, GaussianParams, PriorConfig
from infovaegan.model import EncoderOutput, ModelBundle
from infovaegan.nn import DenseLayer, Mlp, init_mlp
from infovaegan.objectives import LossWeights, critic_loss
from infovaegan.tensor import Graph

from conftest import small_bundle
from oracles import gaussian_posterior


def linear_gaussian_bundle(a, b, seed=0) -> ModelBundle:
    """x = a z + b with z ~ N(0, 1); K=1 so d is the constant 1 and carries b."""
    a, b = np.atleast_1d(a).astype(float), np.atleast_1d(b).astype(float)
    pixels = len(a)
    prior = PriorConfig(z_dim=1, c_dim=0, K=1, continuous_law="gaussian")
    rng = np.random.default_rng(seed)
    generator = Mlp([DenseLayer(np.stack([a, b]), np.zeros(pixels))], "none")
    return ModelBundle(
        generator=generator,
        critic=init_mlp([pixels, 1], "none", rng),
        encoder_u=init_mlp([pixels, 1], "split", rng, splits=(1, 0, 0)),
        encoder_z=init_mlp([pixels, 2], "split", rng, splits=(1, 1)),
        prior=prior,
    )


def true_posterior(x, a, b, sigma=1.0) -> EncoderOutput:
    x = np.atleast_2d(x)
    means, variances = zip(*(gaussian_posterior(row, a, b, sigma) for row in x))
    n = len(x)
    return EncoderOutput(
        z_post=GaussianParams(np.array(means)[:, None], np.log(np.array(variances))[:, None]),
        c_post=GaussianParams(np.zeros((n, 0)), np.zeros((n, 0))),
        d_post=CategoricalParams(np.zeros((n, 1))),
    )


def identity_bundle(K=10, hidden=(32,), seed=0) -> ModelBundle:
    """Generator copies the relaxed one-hot d to its K output pixels (z ignored)."""
    prior = PriorConfig(z_dim=1, c_dim=0, K=K)
    rng = np.random.default_rng(seed)
    w = np.vstack([np.zeros((1, K)), np.eye(K)])
    return ModelBundle(
        generator=Mlp([DenseLayer(w, np.zeros(K))], "none"),
        critic=init_mlp([K, *hidden, 1], "none", rng),
        encoder_u=init_mlp([K, *hidden, K], "split", rng, splits=(K, 0, 0)),
        encoder_z=init_mlp([K, *hidden, 2], "split", rng, splits=(1, 1)),
        prior=prior,
    )


def critic_fd_error(pixels, seed, term, hidden=(6,)) -> float:
    """Max relative FD error of a critic loss term w.r.t. every critic parameter (batch 4)."""
    bundle = small_bundle(pixels=pixels, hidden=hidden)
    rng = np.random.default_rng(seed)
    real, fake = rng.uniform(size=(4, pixels)), rng.uniform(size=(4, pixels))
    shapes = [p.shape for p in bundle.critic.parameters()]
    flat0 = np.concatenate([p.ravel() for p in bundle.critic.parameters()])

    def f(v):
        if v.graph is None:
            v = Graph().leaf(v.value)
        parts, i = [], 0
        for s in shapes:
            n = math.prod(s)
            parts.append(T.reshape(T.slice_axis(v, i, i + n), s))
            i += n
        terms = critic_loss(bundle, real, fake, np.random.default_rng(99), LossWeights(), {"critic": parts})
        return getattr(terms, term)

    return T.finite_difference_check(f, flat0)
