"""Two-stage training.

Stage one alternates ``n_critic`` critic updates with one generator update
(adversarial loss plus the MI bound, which also trains the u-encoder).
Stage two freezes generator and critic and fits both encoders to fresh
generator samples by ascending the data-free ELBO.

All randomness flows through one ``numpy.random.Generator`` held in the
training state, so a run is a pure function of its config and seed and can
be checkpointed and resumed at any generator/encoder step boundary.
"""

from __future__ import annotations

import csv
import io
import math
import time
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .data import FactorSpec, SpriteDataset
from .distributions import PriorConfig, sample_prior
from .model import ModelBundle, build_bundle, generate
from .nn import AdamState, adam_step
from .objectives import LossWeights, critic_loss, datafree_elbo, generator_adv_loss, mi_loss
from .tensor import ContractError, Graph, backward, mean

STAGE_CRITIC = "stage1/critic"
STAGE_GENERATOR = "stage1/generator"
STAGE_ENCODER = "stage2/encoder"


@dataclass
class TrainConfig:
    batch_size: int = 64
    n_critic: int = 5
    stage_one_steps: int = 3000
    stage_two_steps: int = 2000
    weights: LossWeights = field(default_factory=LossWeights)
    prior: PriorConfig = field(default_factory=PriorConfig)
    hidden: tuple[int, ...] = (256, 256)
    lr: float = 1e-4
    encoder_lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0
    mi_enabled: bool = True
    refine_encoder_u: bool = True
    debug_checks: bool = False

    def __post_init__(self):
        for name in ("batch_size", "n_critic"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")
        if self.stage_one_steps < 0 or self.stage_two_steps < 0:
            raise ContractError("stage step counts must be >= 0")
        self.hidden = tuple(int(h) for h in self.hidden)

    def adam(self, lr: float) -> dict:
        return {"lr": lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.adam_eps}


@dataclass
class Record:
    step: int
    stage: str
    terms: dict[str, float]
    wall_time: float = 0.0


@dataclass
class RunLog:
    records: list[Record] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: Record) -> None:
        if self.records and record.step <= self.records[-1].step:
            raise ContractError("run log steps must increase")
        self.records.append(record)

    def extend(self, other: "RunLog") -> None:
        for r in other.records:
            self.append(r)

    def by_stage(self, stage: str) -> list[Record]:
        return [r for r in self.records if r.stage == stage]

    def series(self, stage: str, term: str) -> np.ndarray:
        return np.array([r.terms[term] for r in self.records if r.stage == stage and term in r.terms])

    def to_csv(self) -> str:
        """Long format ``step,stage,term,value``; wall time is not written."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step", "stage", "term", "value"])
        for r in self.records:
            for term, value in r.terms.items():
                writer.writerow([r.step, r.stage, term, repr(float(value))])
        return buf.getvalue()


class TrainingDiverged(RuntimeError):
    def __init__(self, record: Record):
        bad = [k for k, v in record.terms.items() if not math.isfinite(v)]
        super().__init__(f"non-finite loss at step {record.step} ({record.stage}): {bad}")
        self.record = record


@dataclass
class TrainState:
    bundle: ModelBundle
    optimizers: dict[str, AdamState]
    rng: np.random.Generator
    stage_one_done: int = 0
    stage_two_done: int = 0
    records_done: int = 0


def new_state(cfg: TrainConfig, spec: FactorSpec | None = None,
              bundle: ModelBundle | None = None) -> TrainState:
    spec = spec or FactorSpec()
    rng = np.random.default_rng(cfg.seed)
    if bundle is None:
        bundle = build_bundle(cfg.prior, spec.pixels, rng, cfg.hidden)
    return TrainState(bundle, fresh_optimizers(cfg, bundle), rng)


def fresh_optimizers(cfg: TrainConfig, bundle: ModelBundle) -> dict[str, AdamState]:
    lrs = {"generator": cfg.lr, "critic": cfg.lr, "encoder_u": cfg.lr, "encoder_z": cfg.encoder_lr,
           "encoder_u_stage2": cfg.encoder_lr}
    out = {}
    for name, lr in lrs.items():
        net = bundle.network(name.removesuffix("_stage2"))
        out[name] = AdamState.for_params(net.parameters(), **cfg.adam(lr))
    return out


def _apply(state: TrainState, name: str, grads: list[np.ndarray], opt_key: str | None = None) -> None:
    net = state.bundle.network(name)
    key = opt_key or name
    new_params, state.optimizers[key] = adam_step(net.parameters(), grads, state.optimizers[key])
    net.set_parameters(new_params)


def _record(state: TrainState, log: RunLog, stage: str, terms: dict[str, float], t0: float) -> None:
    state.records_done += 1
    rec = Record(state.records_done, stage, terms, time.perf_counter() - t0)
    log.append(rec)
    if not all(math.isfinite(v) for v in terms.values()):
        raise TrainingDiverged(rec)


def critic_step(state: TrainState, cfg: TrainConfig, dataset: SpriteDataset, log: RunLog) -> None:
    t0 = time.perf_counter()
    bundle, rng = state.bundle, state.rng
    before = bundle.checksum("generator", "encoder_u", "encoder_z") if cfg.debug_checks else None
    real, _ = dataset.sample(cfg.batch_size, rng)
    code = sample_prior(bundle.prior, cfg.batch_size, rng)
    fake = generate(bundle, code).value
    graph = Graph()
    params = bundle.bind(graph, "critic")
    terms = critic_loss(bundle, real, fake, rng, cfg.weights, params)
    grads = backward(terms.total, params["critic"]).arrays(params["critic"])
    _apply(state, "critic", grads)
    if before is not None and bundle.checksum("generator", "encoder_u", "encoder_z") != before:
        raise AssertionError("critic step modified generator or encoder parameters")
    _record(state, log, STAGE_CRITIC, {f"critic.{k}": v for k, v in terms.as_dict().items()}, t0)


def generator_step(state: TrainState, cfg: TrainConfig, log: RunLog) -> None:
    t0 = time.perf_counter()
    bundle, rng = state.bundle, state.rng
    code = sample_prior(bundle.prior, cfg.batch_size, rng)
    use_mi = cfg.mi_enabled
    names = ("generator", "encoder_u") if use_mi else ("generator",)
    graph = Graph()
    params = bundle.bind(graph, *names)
    fake = generate(bundle, code, params)
    adv = generator_adv_loss(bundle, fake)
    terms = {"generator.adv": adv.item()}
    loss = adv
    if use_mi:
        mi = mi_loss(bundle, fake, code, cfg.weights, params)
        loss = adv + mi.loss
        terms.update({f"mi.{k}": v for k, v in mi.as_dict().items()})
    terms["generator.total"] = loss.item()
    gm = backward(loss, [p for name in names for p in params[name]])
    for name in names:
        _apply(state, name, gm.arrays(params[name]))
    _record(state, log, STAGE_GENERATOR, terms, t0)


def encoder_step(state: TrainState, cfg: TrainConfig, log: RunLog) -> None:
    t0 = time.perf_counter()
    bundle, rng = state.bundle, state.rng
    code = sample_prior(bundle.prior, cfg.batch_size, rng)
    x_fake = generate(bundle, code).value
    names = ("encoder_z", "encoder_u") if cfg.refine_encoder_u else ("encoder_z",)
    graph = Graph()
    params = bundle.bind(graph, *names)
    terms = datafree_elbo(bundle, x_fake, rng, cfg.weights, params)
    loss = -mean(terms.elbo)
    gm = backward(loss, [p for name in names for p in params[name]])
    _apply(state, "encoder_z", gm.arrays(params["encoder_z"]))
    if cfg.refine_encoder_u:
        _apply(state, "encoder_u", gm.arrays(params["encoder_u"]), "encoder_u_stage2")
    _record(state, log, STAGE_ENCODER, {f"elbo.{k}": v for k, v in terms.as_dict().items()}, t0)


Callback = Callable[[TrainState], None]


def run_stage_one(state: TrainState, cfg: TrainConfig, dataset: SpriteDataset,
                  log: RunLog | None = None, checkpoint: Callback | None = None,
                  stop_at: int | None = None) -> RunLog:
    log = log if log is not None else RunLog()
    end = cfg.stage_one_steps if stop_at is None else min(stop_at, cfg.stage_one_steps)
    while state.stage_one_done < end:
        for _ in range(cfg.n_critic):
            critic_step(state, cfg, dataset, log)
        generator_step(state, cfg, log)
        state.stage_one_done += 1
        if checkpoint and cfg.checkpoint_every and state.stage_one_done % cfg.checkpoint_every == 0:
            checkpoint(state)
    return log


def run_stage_two(state: TrainState, cfg: TrainConfig, log: RunLog | None = None,
                  checkpoint: Callback | None = None, stop_at: int | None = None) -> RunLog:
    log = log if log is not None else RunLog()
    frozen = state.bundle.checksum("generator", "critic")
    end = cfg.stage_two_steps if stop_at is None else min(stop_at, cfg.stage_two_steps)
    while state.stage_two_done < end:
        encoder_step(state, cfg, log)
        state.stage_two_done += 1
        if checkpoint and cfg.checkpoint_every and state.stage_two_done % cfg.checkpoint_every == 0:
            checkpoint(state)
    if state.bundle.checksum("generator", "critic") != frozen:
        raise AssertionError("stage two modified generator or critic parameters")
    return log


def run_training(state: TrainState, cfg: TrainConfig, dataset: SpriteDataset,
                 log: RunLog | None = None, checkpoint: Callback | None = None) -> RunLog:
    log = log if log is not None else RunLog()
    run_stage_one(state, cfg, dataset, log, checkpoint)
    run_stage_two(state, cfg, log, checkpoint)
    return log


def train_stage_one(cfg: TrainConfig, dataset: SpriteDataset,
                    rng: np.random.Generator | None = None) -> tuple[ModelBundle, RunLog]:
    state = new_state(cfg, dataset.spec)
    if rng is not None:
        state.rng = rng
    log = run_stage_one(state, cfg, dataset)
    return state.bundle, log


def train_stage_two(cfg: TrainConfig, bundle: ModelBundle,
                    rng: np.random.Generator | None = None) -> tuple[ModelBundle, RunLog]:
    state = TrainState(bundle, fresh_optimizers(cfg, bundle),
                       rng if rng is not None else np.random.default_rng(cfg.seed))
    log = run_stage_two(state, cfg)
    return state.bundle, log


def train_full(cfg: TrainConfig, dataset: SpriteDataset, eval_cfg=None) -> tuple[ModelBundle, RunLog, dict]:
    from .evaluation import EvalConfig, evaluate

    state = new_state(cfg, dataset.spec)
    log = run_training(state, cfg, dataset)
    metrics = evaluate(state.bundle, dataset.spec, eval_cfg or EvalConfig())
    return state.bundle, log, metrics
