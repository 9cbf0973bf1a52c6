"""Acceptance criteria 1-10. Each test prints one ``criterion N PASS|FAIL``
line (repeated in the terminal summary) and asserts at the stated tolerance.

Criteria 6-8 share one seeded benchmark run (module fixture ``benchmark``).
"""
import json
import math
import time

import numpy as np
import pytest
from conftest import record_acceptance
from test_diffnet import UNARY, leaf, make_encoder, weighted
from test_losses import angle_oracle, directional_oracle, laplace_oracle, traj_oracle
from test_models import _jitter, _kp, _loc_loss, _sample, tiny

from monotransmotion import cli, geometry, kalman, losses, metrics, models, synthdata as sd, training
from monotransmotion.diffnet import checkpoint, gradcheck, nn
from monotransmotion.diffnet import tensor as T

N_INSTANCES = 20

# overfit recipe (criterion 5)
OVERFIT_CFG = dict(d_model=64, n_heads=4, n_layers_loc=2, n_layers_pred=2, mlp_hidden=128, batch_size=16,
                   lr=5e-3, lr_schedule="cosine")
OVERFIT_EPOCHS = {"L": 8000, "T": 2000}

# synthetic benchmark (criteria 6-8)
BENCH_CFG = dict(d_model=32, n_heads=4, n_layers_loc=2, n_layers_pred=2, mlp_hidden=64, batch_size=32,
                 lr=2e-3, lr_schedule="cosine")
BENCH_EPOCHS = 200
BENCH_SEEDS = (0, 1, 2)
BENCH_TRAIN = sd.GenParams(seed=1000, count=512)
BENCH_EVAL = sd.GenParams(seed=2000, count=128)
TIE_REL_TOL = 0.01  # "tied-best": within 1 % of the best median localization ADE


def verdict(n: int, ok: bool, detail: str) -> None:
    record_acceptance(f"criterion {n} {'PASS' if ok else 'FAIL'}: {detail}")


# -- 1 ----------------------------------------------------------------------
def _primitive_errors(seed):
    rng = np.random.default_rng(seed)
    errs = []
    for fn in UNARY.values():
        x = leaf(rng, 2, 3, 4)
        x.data[np.abs(x.data) < 1e-3] += 0.01
        x.data[np.abs(x.data - 0.1) < 1e-3] += 0.01
        errs.append(gradcheck.check_gradients(lambda: weighted(fn(x), rng), [x]))
    for fn in (T.log, T.sqrt):
        x = leaf(rng, 3, 4, positive=True)
        errs.append(gradcheck.check_gradients(lambda: weighted(fn(x), rng), [x]))
    for op in (T.add, T.sub, T.mul, T.div):
        a, b = leaf(rng, 3, 4), leaf(rng, 4, positive=True)
        errs.append(gradcheck.check_gradients(lambda: weighted(op(a, b), rng), [a, b]))
    a, b, c = leaf(rng, 2, 3, 4), leaf(rng, 4, 5), leaf(rng, 2, 3, 2)
    mask = rng.uniform(size=(2, 3, 6)) > 0.5
    errs.append(gradcheck.check_gradients(
        lambda: weighted(T.where(mask, T.concat([T.matmul(a, b)[..., :4], c], axis=-1), 0.0), rng), [a, b, c]))
    errs.append(gradcheck.check_gradients(lambda: weighted(T.stack([a, T.mul(a, 2.0)], axis=1), rng), [a]))
    return max(errs)


def _composed_errors(seed):
    rng = np.random.default_rng(seed)
    st = nn.ParameterStore()
    nn.init_mlp(st, "m", [3, 6, 2], rng)
    _jitter(st, rng)
    x = rng.normal(size=(4, 3))
    e_mlp = gradcheck.check_gradients(lambda: weighted(nn.mlp_forward(x, st, "m", activation="gelu"), rng),
                                      list(st.params.values()))
    enc = make_encoder(seed, t_max=4)
    tok = T.Value(rng.normal(size=(4, 8)), requires_grad=True)
    e_enc = gradcheck.check_gradients(lambda: weighted(nn.encoder_forward(tok, enc, "e", 1, 2), rng),
                                      [tok, *enc.params.values()])
    return max(e_mlp, e_enc)


def _network_errors(seed):
    rng = np.random.default_rng(seed)
    cfg = tiny(t_obs=2, t_pred=4)
    store = _jitter(models.init_params(cfg, seed=seed), rng)
    kp = _kp(rng, 2, 4)
    gt_s, ego, gt_traj = _sample(rng, 4)
    e_loc = gradcheck.check_gradients(lambda: _loc_loss(cfg, store, kp, ego, gt_s, gt_traj),
                                      [store[n] for n in store.names("loc.")], max_entries=3, rng=rng)
    obs, fut = np.cumsum(rng.normal(size=(2, 2, 2)), 1), rng.normal(size=(2, 2, 2)) * 3
    e_pred = gradcheck.check_gradients(
        lambda: T.mean(losses.trajectory_loss(models.traj_predictor_forward(obs, cfg, store), fut)),
        [store[n] for n in store.names("pred.")], max_entries=3, rng=rng)

    def e2e():
        est = models.localize_trajectory(models.localize(kp[:, :2], cfg, store), ego[:, :2])
        return T.mean(losses.trajectory_loss(models.traj_predictor_forward(est, cfg, store), fut))

    e_e2e = gradcheck.check_gradients(e2e, [store[n] for n in store.names()], max_entries=2, rng=rng)
    return max(e_loc, e_pred), e_e2e


def test_criterion_1_gradient_integrity():
    t0 = time.perf_counter()
    prim = max(_primitive_errors(s) for s in range(N_INSTANCES))
    comp = max(_composed_errors(s) for s in range(N_INSTANCES))
    nets = [_network_errors(s) for s in range(N_INSTANCES)]
    net = max(max(n[0] for n in nets), comp)
    e2e = max(n[1] for n in nets)
    elapsed = time.perf_counter() - t0
    ok = prim < 1e-6 and net < 1e-5 and e2e < 1e-4 and elapsed < 120
    verdict(1, ok, f"{N_INSTANCES} instances each; max rel err primitives {prim:.2e} (<1e-6), composed/networks "
                   f"{net:.2e} (<1e-5), end-to-end {e2e:.2e} (<1e-4); {elapsed:.0f} s (<120 s)")
    assert ok


# -- 2 ----------------------------------------------------------------------
def test_criterion_2_loss_oracles():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(3, 12))
        r, rs, b = rng.uniform(0.5, 40, n), rng.uniform(0.5, 40, n), rng.uniform(1e-3, 2, n)
        ref = laplace_oracle(r, b, rs)
        worst = max(worst, abs(losses.laplace_loss(r, b, rs).item() - ref) / max(1.0, abs(ref)))
        th, ths = rng.uniform(-np.pi, np.pi, (2, n))
        ph, phs = rng.uniform(-1.5, 1.5, (2, n))
        worst = max(worst, abs(losses.angle_l1_loss(th, ph, ths, phs).item() - angle_oracle(th, ph, ths, phs)))
        est, gt = rng.normal(size=(2, n, 2)) * 5
        worst = max(worst, abs(losses.directional_loss(est, gt).item() - directional_oracle(est, gt)))
        worst = max(worst, abs(losses.trajectory_loss(est, gt).item() - traj_oracle(est, gt)))
    line = [(0, 0), (1, 0), (2, 0)]
    closed = [
        losses.directional_loss(line, line).item() == -1.0,
        losses.directional_loss([(0, 0), (0, 1), (0, 2)], line).item() == 0.0,
        losses.directional_loss([(2, 0), (1, 0), (0, 0)], line).item() == 1.0,
        losses.laplace_loss([5.0], [1.0], [4.0]).item() == 0.25 + math.log(2),
        losses.laplace_loss([4.0], [0.5], [4.0]).item() == 0.0,
        losses.trajectory_loss([(0, 0), (0, 0)], [(3, 0), (0, 4)]).item() == 3.5,
        losses.angle_l1_loss([0.3], [0.1], [0.3], [0.1]).item() == 0.0,
    ]
    ok = worst < 1e-12 and all(closed)
    verdict(2, ok, f"100 random inputs per loss, max deviation from scalar oracles {worst:.1e} (<1e-12); "
                   f"{sum(closed)}/{len(closed)} closed forms exact")
    assert ok


# -- 3 ----------------------------------------------------------------------
def test_criterion_3_geometry_round_trips():
    rng = np.random.default_rng(3)
    n = 10_000
    r, th, ph = rng.uniform(0.1, 80, n), rng.uniform(-np.pi + 1e-6, np.pi, n), rng.uniform(-1.5, 1.5, n)
    sph = np.stack([r, th, ph], -1)
    cart = np.asarray(geometry.spherical_to_cartesian(sph))
    back = np.asarray(geometry.cartesian_to_spherical(cart))
    e_sph = np.max(np.abs(back - sph))
    xyz = rng.uniform(-50, 50, (n, 3))
    e_cart = np.max(np.abs(np.asarray(geometry.spherical_to_cartesian(geometry.cartesian_to_spherical(xyz))) - xyz))
    ego = np.column_stack([rng.uniform(-500, 500, (n, 2)), rng.uniform(-np.pi, np.pi, n)])
    glob = geometry.local_to_global(sph, ego)
    loc_back = geometry.global_to_local(glob, ego)
    e_loc = np.max(np.abs(loc_back - np.asarray(geometry.spherical_to_ground(sph))))
    p = rng.uniform(-500, 500, (n, 2))
    lg = np.asarray(geometry.global_to_local(p, ego))
    fwd, left = lg[:, 0], lg[:, 1]
    c, s = np.cos(ego[:, 2]), np.sin(ego[:, 2])
    e_glob = np.max(np.abs(ego[:, :2] + np.column_stack([fwd * c - left * s, fwd * s + left * c]) - p))
    params = sd.GenParams(seed=33, count=32, pixel_noise=0.0, dropout=0.0)
    e_rec = 0.0
    for i in range(params.count):
        rec, joints, _ = sd.generate_record(params, i, return_joints=True)
        e_rec = max(e_rec, np.max(np.abs(geometry.local_to_global(rec.gt_spherical, rec.ego) - rec.gt_traj)),
                    np.max(np.abs(geometry.project_point(joints, rec.intrinsics) - rec.keypoints[..., :2])))
    worst = max(e_sph, e_cart, e_loc, e_glob, e_rec)
    ok = worst < 1e-9
    verdict(3, ok, f"1e4 cases: cart<->sph {max(e_sph, e_cart):.1e}, local<->global {max(e_loc, e_glob):.1e}; "
                   f"noiseless records {e_rec:.1e} (all <1e-9)")
    assert ok


# -- 4 ----------------------------------------------------------------------
def test_criterion_4_kalman():
    rng = np.random.default_rng(4)
    e_exact = e_eq = 0.0
    for _ in range(200):
        p0, v = rng.uniform(-50, 50, 2), rng.uniform(-3, 3, 2)
        track = p0 + (np.arange(10) * 0.5)[:, None] * v
        e_exact = max(e_exact, np.max(np.linalg.norm(kalman.kf_predict_trajectory(track[:4], 6) - track[4:], axis=1)))
        obs = np.cumsum(rng.normal(size=(4, 2)), axis=0)
        base = kalman.kf_predict_trajectory(obs, 6)
        shift, a = rng.uniform(-100, 100, 2), rng.uniform(-np.pi, np.pi)
        R = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
        e_eq = max(e_eq, np.max(np.abs(kalman.kf_predict_trajectory(obs + shift, 6) - base - shift)),
                   np.max(np.abs(kalman.kf_predict_trajectory(obs @ R.T, 6) - base @ R.T)))
    ok = e_exact < 1e-6 and e_eq < 1e-9
    verdict(4, ok, f"constant velocity max step error {e_exact:.1e} m (<1e-6); equivariance {e_eq:.1e} (<1e-9)")
    assert ok


# -- 5 ----------------------------------------------------------------------
def test_criterion_5_overfit():
    batch = sd.to_batch(sd.generate_dataset(sd.GenParams(count=16, seed=3, pixel_noise=0.0, dropout=0.0)))
    cfg = models.ModelConfig(**OVERFIT_CFG)
    store = models.init_params(cfg)
    t0 = time.perf_counter()
    training.train_stage("L", batch, cfg, store, OVERFIT_EPOCHS["L"], eval_every=10**9)
    after_l = training.evaluate(batch, cfg, store)["mt"]
    loc_ade = float(metrics.ade(after_l.est_obs, after_l.gt_obs).mean())
    training.train_stage("T", batch, cfg, store, OVERFIT_EPOCHS["T"], stage_index=1, eval_every=10**9)
    elapsed = time.perf_counter() - t0
    ev = training.evaluate(batch, cfg, store)["mt"]
    pred_ade = float(metrics.ade(ev.pred, ev.gt_future).mean())
    ok = loc_ade < 0.05 and pred_ade < 0.05 and elapsed < 300
    verdict(5, ok, f"16 noiseless samples: stage L localization ADE {loc_ade:.4f} m, L->T prediction ADE "
                   f"{pred_ade:.4f} m (both <0.05); {elapsed:.0f} s single-threaded (<300 s)")
    assert ok


# -- 6-8 --------------------------------------------------------------------
@pytest.fixture(scope="module")
def benchmark():
    train = sd.to_batch(sd.generate_dataset(BENCH_TRAIN))
    held_out = sd.to_batch(sd.generate_dataset(BENCH_EVAL))
    rows, bins, t0 = [], {}, time.perf_counter()
    for seed in BENCH_SEEDS:
        cfg = models.ModelConfig(**BENCH_CFG, seed=seed)
        cache: dict = {}
        for plan in training.standard_plans(BENCH_EPOCHS, seed):
            res = training.run_training_order(plan, train, cfg, held_out, cache=cache, eval_every=10**9)
            rows.append(res.summary)
            if plan.name == "L->T->LT":
                rep = training.evaluate(held_out, cfg, res.store)["mt"].report()
                bins[seed] = [b.ade_loc for b in rep.bins]
    ablation_time = time.perf_counter() - t0
    no_dir = []
    for seed in BENCH_SEEDS:
        cfg = models.ModelConfig(**BENCH_CFG, seed=seed, lambda_dir=0.0)
        plan = next(p for p in training.standard_plans(BENCH_EPOCHS, seed) if p.name == "L->T->LT")
        no_dir.append(training.run_training_order(plan, train, cfg, held_out, eval_every=10**9).summary)
    medians = {r["plan"]: r for r in cli.median_rows(rows)}
    print(training.summary_table(rows))
    print(json.dumps({"medians": medians, "bins": bins, "no_dir": no_dir}, default=str))
    return {"rows": rows, "medians": medians, "bins": bins, "no_dir": no_dir, "ablation_time": ablation_time}


def test_criterion_6_training_order_pattern(benchmark):
    med = benchmark["medians"]
    loc = {p: med[p]["ade_loc"] for p in med}
    a = loc["LT"] > loc["L->T->LT"]
    best = min(loc.values())
    b = loc["L->T"] <= best * (1 + TIE_REL_TOL)
    t = benchmark["ablation_time"]
    ok = a and b and t < 1800
    shown = ", ".join(f"{p} {v:.3f}" for p, v in loc.items())
    verdict(6, ok, f"median held-out localization ADE over seeds {list(BENCH_SEEDS)}: {shown}; "
                   f"(a) LT worse than L->T->LT: {a}; (b) L->T best or within {TIE_REL_TOL:.0%} of best: {b}; "
                   f"{t:.0f} s (<1800 s)")
    assert ok


def test_criterion_7_directional_loss(benchmark):
    with_dir = float(np.median([r["ade_pred"] for r in benchmark["rows"] if r["plan"] == "L->T->LT"]))
    without = float(np.median([r["ade_pred"] for r in benchmark["no_dir"]]))
    ok = with_dir <= without
    verdict(7, ok, f"median prediction ADE (L->T->LT, pixel noise 1.5 px): lambda_dir=1 {with_dir:.4f} m vs "
                   f"lambda_dir=0 {without:.4f} m (need <=)")
    assert ok


def test_criterion_8_distance_sensitivity(benchmark):
    per_bin = np.median(np.array([benchmark["bins"][s] for s in BENCH_SEEDS], dtype=float), axis=0)
    ok = bool(np.all(np.diff(per_bin) >= 0))
    verdict(8, ok, "median per-bin localization ADE [0,10) / [10,20) / [20,inf) m: "
                   + " / ".join(f"{v:.3f}" for v in per_bin) + " (need non-decreasing)")
    assert ok


# -- 9 ----------------------------------------------------------------------
def test_criterion_9_predictor_swap(tmp_path):
    data = tmp_path / "data.txt"
    assert cli.main(["gen-data", "--seed", "9", "--count", "32", "--out", str(data),
                     "--output-dir", str(tmp_path / "g")]) == 0
    assert cli.main(["train", "--data", str(data), "--stages", "L,T", "--epochs", "2,2", "--output-dir",
                     str(tmp_path / "t"), "--set", "d_model=16", "--set", "n_heads=2"]) == 0
    out = tmp_path / "e"
    assert cli.main(["eval", "--data", str(data), "--checkpoint", str(tmp_path / "t" / "final.ckpt"),
                     "--predictor", "both", "--output-dir", str(out)]) == 0
    sums = dict(line.split() for line in (out / "localization.sha256").read_text().splitlines())
    store, manifest = checkpoint.load(tmp_path / "t" / "final.ckpt")
    cfg = models.ModelConfig.from_dict(manifest["config"])
    independent = training.evaluate(sd.to_batch(sd.read_dataset(data)), cfg, store, ("mt",))["mt"]
    reports = [(out / f"report_{p}.txt").is_file() for p in ("mt", "kf")]
    ok = sums["mt"] == sums["kf"] == independent.localization_checksum() and all(reports)
    verdict(9, ok, f"one eval run wrote mt and kf reports; localization checksums mt={sums['mt'][:12]} "
                   f"kf={sums['kf'][:12]} (identical: {sums['mt'] == sums['kf']})")
    assert ok


# -- 10 ---------------------------------------------------------------------
def test_criterion_10_determinism_and_formats(tmp_path):
    checks = {}
    for k in ("a", "b"):
        assert cli.main(["gen-data", "--seed", "10", "--count", "48", "--output-dir", str(tmp_path / k)]) == 0
        assert cli.main(["train", "--data", str(tmp_path / k / "dataset.txt"), "--stages", "L,T,LT",
                         "--epochs", "2,1,1", "--output-dir", str(tmp_path / k / "t"), "--set", "d_model=16",
                         "--set", "n_heads=2"]) == 0
    for name in ("dataset.txt", "t/final.ckpt", "t/stage0_L.ckpt", "t/train_log.jsonl"):
        checks[name] = (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    recs = sd.read_dataset(tmp_path / "a" / "dataset.txt")
    sd.write_dataset(recs, tmp_path / "again.txt")
    checks["dataset round trip"] = (tmp_path / "again.txt").read_bytes() == (tmp_path / "a" / "dataset.txt").read_bytes()
    store, manifest = checkpoint.load(tmp_path / "a" / "t" / "final.ckpt")
    checks["checkpoint round trip"] = checkpoint.dumps(store, manifest["config"], manifest["rng_state"],
                                                       manifest["extra"]) == (tmp_path / "a" / "t" / "final.ckpt").read_bytes()
    log_text = (tmp_path / "a" / "t" / "train_log.jsonl").read_text()
    checks["log round trip"] = training.TrainLog.from_jsonl(log_text).to_jsonl() == log_text
    cfg = models.ModelConfig.from_dict(manifest["config"])
    rep = training.evaluate(sd.to_batch(recs), cfg, store, ("kf",))["kf"].report("kf")
    checks["report table round trip"] = metrics.EvalReport.from_table(rep.to_table()) == rep
    checks["report records round trip"] = metrics.EvalReport.from_jsonl(rep.to_jsonl()) == rep
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    verdict(10, ok, f"{sum(checks.values())}/{len(checks)} byte-identity and round-trip checks hold"
                    + (f"; failed: {failed}" if failed else ""))
    assert ok
