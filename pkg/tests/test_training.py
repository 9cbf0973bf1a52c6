import math

import numpy as np
import pytest

from monotransmotion import models, synthdata as sd, training
from monotransmotion.diffnet import checkpoint


def small_cfg(**kw):
    base = dict(d_model=16, n_heads=2, n_layers_loc=1, n_layers_pred=1, mlp_hidden=16, batch_size=8, lr=2e-3)
    base.update(kw)
    return models.ModelConfig(**base)


@pytest.fixture(scope="module")
def overfit_batch():
    return sd.to_batch(sd.generate_dataset(sd.GenParams(count=16, seed=3, pixel_noise=0.0, dropout=0.0)))


@pytest.fixture(scope="module")
def data():
    recs = sd.generate_dataset(sd.GenParams(count=24, seed=5))
    return sd.to_batch(recs[:16]), sd.to_batch(recs[16:])


def _snapshot(store, prefix):
    return {n: store[n].data.copy() for n in store.names(prefix)}


def test_stage_t_freezes_localizer_bitwise(data):
    train, _ = data
    cfg = small_cfg()
    store = models.init_params(cfg)
    training.train_stage("L", train, cfg, store, 2)
    loc, pred = _snapshot(store, "loc."), _snapshot(store, "pred.")
    training.train_stage("T", train, cfg, store, 3, stage_index=1)
    assert all(np.array_equal(store[n].data, v) for n, v in loc.items())
    assert any(not np.array_equal(store[n].data, v) for n, v in pred.items())


def test_stage_l_leaves_predictor_untouched(data):
    train, _ = data
    cfg = small_cfg()
    store = models.init_params(cfg)
    pred = _snapshot(store, "pred.")
    training.train_stage("L", train, cfg, store, 2)
    assert all(np.array_equal(store[n].data, v) for n, v in pred.items())


def test_joint_stage_updates_both(data):
    train, _ = data
    cfg = small_cfg()
    store = models.init_params(cfg)
    before = _snapshot(store, "")
    training.train_stage("LT", train, cfg, store, 1)
    changed = {n.split(".")[0] for n, v in before.items() if not np.array_equal(store[n].data, v)}
    assert changed == {"loc", "pred"}


def test_runs_are_deterministic(data):
    train, val = data
    cfg = small_cfg()
    plan = training.TrainPlan("L->T", ["L", "T"], [2, 2], seed=4)
    a = training.run_training_order(plan, train, cfg, val)
    b = training.run_training_order(plan, train, cfg, val)
    assert a.log.to_jsonl() == b.log.to_jsonl()
    assert a.stage_checkpoints == b.stage_checkpoints
    assert a.summary == b.summary


def test_prefix_cache_matches_fresh_run(data):
    train, val = data
    cfg = small_cfg()
    cache = {}
    plans = [training.TrainPlan("L->T", ["L", "T"], [2, 2]), training.TrainPlan("L->LT", ["L", "LT"], [2, 2])]
    cached = [training.run_training_order(p, train, cfg, val, cache=cache) for p in plans]
    fresh = [training.run_training_order(p, train, cfg, val) for p in plans]
    for c, f in zip(cached, fresh):
        assert c.log.to_jsonl() == f.log.to_jsonl()
        assert c.stage_checkpoints == f.stage_checkpoints
    # the shared L prefix is identical across the two plans
    assert cached[0].stage_checkpoints[0] == cached[1].stage_checkpoints[0]
    la = [r for r in cached[0].log.records if r.stage_index == 0]
    lb = [r for r in cached[1].log.records if r.stage_index == 0]
    assert la == lb


def test_standard_plans_and_summary_table(data):
    train, val = data
    cfg = small_cfg()
    plans = training.standard_plans(4, seed=1)
    assert [p.name for p in plans] == ["L->T", "L->LT", "LT", "L->T->LT"]
    assert {p.total_epochs for p in plans} == {4}
    cache = {}
    rows = [training.run_training_order(p, train, cfg, val, cache=cache).summary for p in plans]
    table = training.summary_table(rows)
    lines = table.strip().splitlines()
    assert len(lines) == 5
    for row, line in zip(rows, lines[1:]):
        assert line.startswith(row["plan"])
        assert all(math.isfinite(row[k]) for k in ("ade_loc", "ade_pred", "fde_pred"))


def test_plan_validation():
    with pytest.raises(training.PlanError):
        training.TrainPlan("bad", ["T", "L"], [1, 1])
    training.TrainPlan("ok", ["T", "L"], [1, 1], from_scratch=True)
    with pytest.raises(training.PlanError):
        training.TrainPlan("bad", ["L"], [1, 2])
    with pytest.raises(training.PlanError):
        training.TrainPlan("bad", ["X"], [1])
    with pytest.raises(training.PlanError):
        training.TrainPlan("bad", ["L"], [0])


def test_finetune_rate():
    plan = training.TrainPlan("p", ["L", "T", "LT"], [1, 1, 1])
    assert plan.stage_lr(0, 1.0) == 1.0 and plan.stage_lr(1, 1.0) == 1.0
    assert plan.stage_lr(2, 1.0) == training.FINETUNE_LR_FACTOR
    assert training.TrainPlan("p", ["LT"], [1]).stage_lr(0, 1.0) == 1.0


def test_divergence_is_recorded_not_raised(data):
    train, val = data
    plan = training.TrainPlan("LT", ["LT"], [3], divergence_factor=1e-3)
    res = training.run_training_order(plan, train, small_cfg(), val)
    assert res.summary["diverged"]["stage"] == "LT"
    assert "diverged" in training.summary_table([res.summary])
    with pytest.raises(training.DivergenceError):
        training.train_stage("L", train, small_cfg(), models.init_params(small_cfg()), 2, divergence_factor=1e-3)


def test_log_agrees_with_checkpoint(data, tmp_path):
    train, val = data
    cfg = small_cfg()
    plan = training.TrainPlan("L->T", ["L", "T"], [2, 3])
    res = training.run_training_order(plan, train, cfg, val)
    path = tmp_path / "final.ckpt"
    path.write_bytes(res.stage_checkpoints[-1])
    store, manifest = checkpoint.load(path)
    assert models.ModelConfig.from_dict(manifest["config"]) == cfg
    recomputed = training.full_set_loss("T", train, cfg, store)
    logged = res.log.records[-1].eval
    for k in logged:
        assert abs(recomputed[k] - logged[k]) < 1e-9


def test_log_round_trip(data):
    train, _ = data
    log = training.train_stage("L", train, small_cfg(), models.init_params(small_cfg()), 2, val=data[1])
    back = training.TrainLog.from_jsonl(log.to_jsonl(include_timing=True))
    assert back.records == log.records
    assert "wall_time" not in log.to_jsonl()
    with pytest.raises(ValueError):
        log.append(log.records[0])


def _stage_l_curve(batch, seed, lr=1e-3, epochs=200):
    cfg = small_cfg(batch_size=16, lr=lr, seed=seed)
    log = training.train_stage("L", batch, cfg, models.init_params(cfg), epochs)
    return np.array([r.eval["objective"] for r in log.records])


@pytest.mark.parametrize("seed", range(3))
def test_stage_l_loss_trend_non_increasing(overfit_batch, seed):
    # full-batch training; the objective averaged over 20-epoch windows never rises
    curve = _stage_l_curve(overfit_batch, seed)
    means = curve.reshape(-1, 20).mean(axis=1)
    assert np.all(np.diff(means) <= 1e-6)
    assert curve[-1] < 0.6 * curve[0]


@pytest.mark.xfail(strict=True, reason="Adam oscillates around the kink of the L1 angle term; "
                                       "5-epoch window minima rise occasionally (see decisions ledger)")
def test_stage_l_loss_non_increasing_over_5_epoch_windows(overfit_batch):
    curve = _stage_l_curve(overfit_batch, 0)
    mins = curve.reshape(-1, 5).min(axis=1)
    assert np.all(np.diff(mins) <= 1e-6)


def test_stage_t_with_random_localizer_plateaus_high(overfit_batch):
    cfg = small_cfg(batch_size=16, lr=3e-3)
    store = models.init_params(cfg)
    before = training._summary_metrics(overfit_batch, cfg, store)
    log = training.train_stage("T", overfit_batch, cfg, store, 150, stage_index=1)
    after = training._summary_metrics(overfit_batch, cfg, store)
    traj = [r.eval["trajectory"] for r in log.records]
    # the predictor fits the meaningless estimated targets...
    assert traj[-1] < 0.3 * traj[0]
    # ...but its error against the real future stays at the localizer's scale
    assert after["ade_pred"] > 0.5 * before["ade_pred"] and after["ade_pred"] > 5.0
    assert after["ade_loc"] == before["ade_loc"]


def test_evaluate_shares_localization(data):
    train, _ = data
    cfg = small_cfg()
    res = training.evaluate(train, cfg, models.init_params(cfg), predictors=("mt", "kf"))
    assert res["mt"].localization_checksum() == res["kf"].localization_checksum()
    assert res["mt"].est_obs is res["kf"].est_obs
    assert res["kf"].pred.shape == res["mt"].pred.shape == (16, cfg.horizon, 2)
    rep = res["kf"].report("kf")
    assert rep.count == 16


def test_cosine_schedule_endpoints():
    cfg = small_cfg(lr_schedule="cosine", lr_final_factor=0.1)
    assert training.scheduled_lr(cfg, 1.0, 0, 11) == 1.0
    assert training.scheduled_lr(cfg, 1.0, 10, 11) == pytest.approx(0.1)
    assert training.scheduled_lr(small_cfg(), 1.0, 5, 11) == 1.0


@pytest.mark.parametrize("mode", ["observation", "full"])
def test_predictor_input_modes(data, mode):
    train, _ = data
    cfg = small_cfg(predictor_input=mode)
    store = models.init_params(cfg)
    _, parts = training.stage_loss("T", train, cfg, store)
    # recompute the trajectory term by hand
    est = models.localize_trajectory(models.localize(train.keypoints, cfg, store), train.ego).data
    if mode == "observation":
        obs = training.localize_observation(train, cfg, store)
    else:
        obs = est[:, :cfg.t_obs]
    pred = models.traj_predictor_forward(obs, cfg, store).data
    expected = np.mean(np.linalg.norm(pred - est[:, cfg.t_obs:], axis=-1))
    assert abs(parts["trajectory"] - expected) < 1e-12
    training.train_stage("LT", train, cfg, store, 1)
