"""Metrics: cluster accuracy, factor-vote disentanglement, traversals, MSE."""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import objectives
from .data import FactorSpec, fixed_factor_factors, sample_factors
from .distributions import LatentCode, PriorConfig, one_hot
from .model import ModelBundle, build_bundle, generate, predict_cluster, reconstruct, representation
from .tensor import ContractError, ShapeError

MIN_STD = 1e-6


@dataclass
class ClusterAccuracyResult:
    accuracy: float
    assignment: np.ndarray  # assignment[pred_label] = truth_label
    confusion: np.ndarray  # confusion[pred_label, truth_label]


def cluster_accuracy(pred, truth, K: int | None = None) -> ClusterAccuracyResult:
    """Best accuracy over all bijections between predicted and true labels."""
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ShapeError(f"cluster_accuracy: pred {pred.shape} vs truth {truth.shape}")
    if pred.size == 0:
        raise ContractError("cluster_accuracy: empty label sequences")
    if K is None:
        K = int(max(pred.max(), truth.max())) + 1
    if pred.min() < 0 or truth.min() < 0 or pred.max() >= K or truth.max() >= K:
        raise ContractError(f"cluster_accuracy: labels outside [0, {K})")
    confusion = np.zeros((K, K), dtype=np.int64)
    np.add.at(confusion, (pred, truth), 1)
    rows, cols = linear_sum_assignment(confusion, maximize=True)
    assignment = np.empty(K, dtype=np.int64)
    assignment[rows] = cols
    matched = int(confusion[rows, cols].sum())
    return ClusterAccuracyResult(matched / pred.size, assignment, confusion)


@dataclass
class DisentanglementResult:
    score: float
    votes: np.ndarray  # (n_dims, n_factors), all votes
    dim_to_factor: np.ndarray  # majority-vote classifier fitted on the training half
    factor_majority_dim: np.ndarray  # per factor, the dimension that won it most often
    active_dims: np.ndarray


RepresentationFn = Callable[[np.ndarray], np.ndarray]


def disentanglement_score(bundle: ModelBundle | None, spec: FactorSpec, votes: int = 300,
                          samples_per_vote: int = 32, rng: np.random.Generator | None = None,
                          representation_fn: RepresentationFn | None = None,
                          n_global: int = 5000) -> DisentanglementResult:
    """Majority-vote factor metric.

    Each vote fixes one factor, encodes a batch, rescales every dimension by
    its global standard deviation and votes for the dimension with least
    within-batch variance.  The classifier dimension -> factor is fitted on
    the first half of the votes and scored on the second half.
    """
    sizes = tuple(spec.factor_sizes)
    if len(sizes) < 2:
        raise ContractError("disentanglement_score needs at least two factors")
    if votes < 10 or samples_per_vote < 2:
        raise ContractError("need votes >= 10 and samples_per_vote >= 2")
    rng = rng if rng is not None else np.random.default_rng(0)
    if representation_fn is None:
        if bundle is None:
            raise ContractError("disentanglement_score needs a bundle or a representation_fn")
        representation_fn = lambda x: representation(bundle, x)  # noqa: E731

    def images(factors):
        return spec.corpus[spec.index_of(factors)]

    global_reps = representation_fn(images(sample_factors(spec, n_global, rng)))
    std = global_reps.std(axis=0)
    active = np.flatnonzero(std >= MIN_STD)
    n_dims = global_reps.shape[1]

    vote_dims = np.empty(votes, dtype=np.int64)
    vote_factors = np.empty(votes, dtype=np.int64)
    for i in range(votes):
        k = int(rng.integers(len(sizes)))
        value = int(rng.integers(sizes[k]))
        reps = representation_fn(images(fixed_factor_factors(spec, k, value, samples_per_vote, rng)))
        if active.size == 0:
            vote_dims[i] = 0
        else:
            var = np.var(reps[:, active] / std[active], axis=0)
            vote_dims[i] = active[int(np.argmin(var))]
        vote_factors[i] = k

    half = votes // 2
    train = np.zeros((n_dims, len(sizes)), dtype=np.int64)
    np.add.at(train, (vote_dims[:half], vote_factors[:half]), 1)
    test = np.zeros_like(train)
    np.add.at(test, (vote_dims[half:], vote_factors[half:]), 1)
    classifier = train.argmax(axis=1)
    correct = test[np.arange(n_dims), classifier].sum()
    all_votes = train + test
    return DisentanglementResult(
        score=float(correct / test.sum()),
        votes=all_votes,
        dim_to_factor=classifier,
        factor_majority_dim=all_votes.argmax(axis=0),
        active_dims=active,
    )


@dataclass
class TraversalGrid:
    images: np.ndarray  # (rows, cols, pixels)
    target: tuple
    lo: float
    hi: float
    base: LatentCode
    codes: list[LatentCode]

    @property
    def shape(self) -> tuple[int, int]:
        return self.images.shape[0], self.images.shape[1]


def prior_mean_code(prior: PriorConfig, rows: int = 1) -> LatentCode:
    return LatentCode(np.zeros((rows, prior.z_dim)), np.full((rows, prior.K), 1.0 / prior.K),
                      np.zeros((rows, prior.c_dim)))


def latent_traversal(bundle: ModelBundle, base: LatentCode, target: tuple | str,
                     lo: float = -1.0, hi: float = 1.0, steps: int = 7) -> TraversalGrid:
    """Vary one latent entry across ``steps`` points (or sweep every category of d).

    ``target`` is ``("c", i)``, ``("z", i)`` or ``"d"``.  Each row of ``base``
    is one grid row; every other code entry is copied from it.
    """
    prior = bundle.prior
    z, d, c = (np.array(v.value, dtype=np.float64) for v in (base.z, base.d, base.c))
    codes = []
    if target == "d" or target == ("d",):
        for k in range(prior.K):
            codes.append(LatentCode(z, np.tile(one_hot(k, prior.K), (z.shape[0], 1)), c))
    else:
        kind, index = target
        arr = {"c": c, "z": z}.get(kind)
        if arr is None:
            raise ContractError(f"unknown traversal target {target!r}")
        if not 0 <= index < arr.shape[1]:
            raise ContractError(f"latent index {index} outside {kind} of size {arr.shape[1]}")
        if steps < 2:
            raise ContractError("continuous traversal needs steps >= 2")
        for value in np.linspace(lo, hi, steps):
            zz, cc = z.copy(), c.copy()
            (cc if kind == "c" else zz)[:, index] = value
            codes.append(LatentCode(zz, d, cc))
    cols = [generate(bundle, code).value for code in codes]
    images = np.stack(cols, axis=1)
    return TraversalGrid(images, target if isinstance(target, tuple) else (target,), lo, hi, base, codes)


def reconstruction_error(bundle: ModelBundle, batch, reconstruct_fn: Callable | None = None) -> float:
    batch = np.asarray(batch, dtype=np.float64)
    recon = reconstruct_fn(batch) if reconstruct_fn is not None else reconstruct(bundle, batch)
    return float(np.mean((batch - recon) ** 2))


def random_encoder_bundle(bundle: ModelBundle, seed: int = 12345,
                          hidden: Sequence[int] | None = None) -> ModelBundle:
    """Same generator and critic, freshly initialised encoders (baseline)."""
    rng = np.random.default_rng(seed)
    if hidden is None:
        hidden = bundle.encoder_u.extents[1:-1]
    fresh = build_bundle(bundle.prior, bundle.pixels, rng, hidden)
    return ModelBundle(bundle.generator, bundle.critic, fresh.encoder_u, fresh.encoder_z, bundle.prior)


@dataclass
class EvalConfig:
    seed: int = 1
    votes: int = 300
    samples_per_vote: int = 32
    n_elbo: int = 256
    n_mc: int = 4


def shape_cluster_accuracy(bundle: ModelBundle, spec: FactorSpec) -> ClusterAccuracyResult:
    """Cluster accuracy of argmax q(d|x) against the shape factor over the full corpus."""
    factors = spec.all_factors()
    pred = predict_cluster(bundle, spec.corpus)
    K = max(bundle.prior.K, len(spec.shapes))
    return cluster_accuracy(pred, factors[:, 0], K)


def evaluate(bundle: ModelBundle, spec: FactorSpec, cfg: EvalConfig | None = None,
             weights: objectives.LossWeights | None = None) -> dict[str, float]:
    cfg = cfg or EvalConfig()
    rng = np.random.default_rng(cfg.seed)
    acc = shape_cluster_accuracy(bundle, spec)
    dis = disentanglement_score(bundle, spec, cfg.votes, cfg.samples_per_vote, rng)
    mse = reconstruction_error(bundle, spec.corpus)
    baseline = reconstruction_error(random_encoder_bundle(bundle, cfg.seed), spec.corpus)
    x = spec.corpus[spec.index_of(sample_factors(spec, cfg.n_elbo, rng))]
    elbo = objectives.test_elbo(bundle, x, rng, cfg.n_mc, weights)
    return {
        "cluster_accuracy": acc.accuracy,
        "disentanglement_score": dis.score,
        "reconstruction_mse": mse,
        "baseline_reconstruction_mse": baseline,
        "test_elbo": float(np.mean(elbo.elbo.value)),
    }
