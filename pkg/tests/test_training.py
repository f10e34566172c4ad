import numpy as np
import pytest

from infovaegan.data import FactorSpec, SpriteDataset
from infovaegan.distributions import PriorConfig
from infovaegan.evaluation import EvalConfig
from infovaegan.objectives import LossWeights
from infovaegan.tensor import ContractError
from infovaegan.training import (
    STAGE_CRITIC,
    STAGE_ENCODER,
    STAGE_GENERATOR,
    Record,
    RunLog,
    TrainConfig,
    TrainingDiverged,
    critic_step,
    new_state,
    run_stage_one,
    run_stage_two,
    train_full,
    train_stage_one,
    train_stage_two,
)

TINY = FactorSpec(image_side=8, sprite_size=2, grid=4)


def tiny_cfg(**kw) -> TrainConfig:
    base = dict(batch_size=8, n_critic=2, stage_one_steps=3, stage_two_steps=2, hidden=(16,),
                prior=PriorConfig(z_dim=2, c_dim=2, K=3), seed=5, debug_checks=True)
    return TrainConfig(**{**base, **kw})


@pytest.fixture(scope="module")
def data():
    return SpriteDataset(TINY)


def test_config_contract():
    with pytest.raises(ContractError):
        TrainConfig(batch_size=0)
    with pytest.raises(ContractError):
        TrainConfig(n_critic=0)
    with pytest.raises(ContractError):
        TrainConfig(stage_one_steps=-1)
    TrainConfig(stage_two_steps=0)


def test_stage_one_record_count(data):
    cfg = tiny_cfg()
    _, log = train_stage_one(cfg, data)
    assert len(log) == cfg.stage_one_steps * (cfg.n_critic + 1)
    assert len(log.by_stage(STAGE_GENERATOR)) == cfg.stage_one_steps
    steps = [r.step for r in log.records]
    assert steps == sorted(steps) and len(set(steps)) == len(steps)


def test_stage_one_determinism(data):
    a, la = train_stage_one(tiny_cfg(), data)
    b, lb = train_stage_one(tiny_cfg(), data)
    assert a.checksum() == b.checksum()
    assert la.to_csv() == lb.to_csv()


def test_stage_one_leaves_encoder_z(data):
    cfg = tiny_cfg()
    state = new_state(cfg, TINY)
    before = state.bundle.checksum("encoder_z")
    run_stage_one(state, cfg, data)
    assert state.bundle.checksum("encoder_z") == before
    assert state.stage_one_done == cfg.stage_one_steps


def test_critic_step_touches_only_critic(data):
    cfg = tiny_cfg()
    state = new_state(cfg, TINY)
    others = state.bundle.checksum("generator", "encoder_u", "encoder_z")
    critic = state.bundle.checksum("critic")
    critic_step(state, cfg, data, RunLog())
    assert state.bundle.checksum("generator", "encoder_u", "encoder_z") == others
    assert state.bundle.checksum("critic") != critic


def test_mi_ablation_has_no_mi_terms(data):
    _, log = train_stage_one(tiny_cfg(mi_enabled=False), data)
    for r in log.by_stage(STAGE_GENERATOR):
        assert not any(k.startswith("mi.") for k in r.terms)
    _, log = train_stage_one(tiny_cfg(), data)
    assert all("mi.lower_bound" in r.terms for r in log.by_stage(STAGE_GENERATOR))


def test_mi_ablation_leaves_encoder_u(data):
    cfg = tiny_cfg(mi_enabled=False)
    state = new_state(cfg, TINY)
    before = state.bundle.checksum("encoder_u")
    run_stage_one(state, cfg, data)
    assert state.bundle.checksum("encoder_u") == before


def test_stage_two_freezes_generator_and_critic(data):
    cfg = tiny_cfg(stage_two_steps=4)
    bundle, _ = train_stage_one(cfg, data)
    frozen = bundle.checksum("generator", "critic")
    enc = bundle.checksum("encoder_z")
    bundle, log = train_stage_two(cfg, bundle)
    assert bundle.checksum("generator", "critic") == frozen
    assert bundle.checksum("encoder_z") != enc
    assert len(log) == 4 and {r.stage for r in log.records} == {STAGE_ENCODER}


def test_stage_two_zero_steps(data):
    cfg = tiny_cfg(stage_two_steps=0)
    bundle, _ = train_stage_one(cfg, data)
    before = bundle.checksum()
    after, log = train_stage_two(cfg, bundle)
    assert after.checksum() == before and len(log) == 0


def test_stage_two_without_u_refinement(data):
    cfg = tiny_cfg(refine_encoder_u=False)
    bundle, _ = train_stage_one(cfg, data)
    u = bundle.checksum("encoder_u")
    bundle, _ = train_stage_two(cfg, bundle)
    assert bundle.checksum("encoder_u") == u


def test_chunked_equals_uninterrupted(data):
    cfg = tiny_cfg(stage_one_steps=4, stage_two_steps=3)
    a = new_state(cfg, TINY)
    la = run_stage_one(a, cfg, data)
    run_stage_two(a, cfg, la)
    b = new_state(cfg, TINY)
    lb = RunLog()
    for stop in (1, 3, 4):
        run_stage_one(b, cfg, data, lb, stop_at=stop)
    run_stage_two(b, cfg, lb, stop_at=1)
    run_stage_two(b, cfg, lb)
    assert a.bundle.checksum() == b.bundle.checksum()
    assert la.to_csv() == lb.to_csv()


def test_checkpoint_cadence(data):
    cfg = tiny_cfg(stage_one_steps=4, stage_two_steps=4, checkpoint_every=2)
    seen = []
    state = new_state(cfg, TINY)
    run_stage_one(state, cfg, data, checkpoint=lambda s: seen.append(("s1", s.stage_one_done)))
    run_stage_two(state, cfg, checkpoint=lambda s: seen.append(("s2", s.stage_two_done)))
    assert seen == [("s1", 2), ("s1", 4), ("s2", 2), ("s2", 4)]


def test_divergence_aborts(data):
    cfg = tiny_cfg(weights=LossWeights(gp=float("nan")))
    state = new_state(cfg, TINY)
    log = RunLog()
    with pytest.raises(TrainingDiverged, match="step 1") as exc:
        critic_step(state, cfg, data, log)
    assert exc.value.record.stage == STAGE_CRITIC
    assert len(log) == 1


def test_runlog_csv_and_order():
    log = RunLog()
    log.append(Record(1, STAGE_CRITIC, {"a": 0.5, "b": -1.0}, 0.01))
    log.append(Record(2, STAGE_GENERATOR, {"c": 2.0}))
    assert log.to_csv() == ("step,stage,term,value\n1,stage1/critic,a,0.5\n"
                            "1,stage1/critic,b,-1.0\n2,stage1/generator,c,2.0\n")
    with pytest.raises(ContractError):
        log.append(Record(2, STAGE_GENERATOR, {}))
    np.testing.assert_array_equal(log.series(STAGE_CRITIC, "b"), [-1.0])


def test_train_full_metrics_schema(data):
    cfg = tiny_cfg(stage_one_steps=1, stage_two_steps=1)
    bundle, log, metrics = train_full(cfg, data, EvalConfig(votes=10, samples_per_vote=2, n_elbo=4, n_mc=1))
    assert {"cluster_accuracy", "disentanglement_score"} <= set(metrics)
    assert len(log) == 1 * 3 + 1
