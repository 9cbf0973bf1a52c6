"""Command-line entry point.

Settings resolve as defaults < JSON config file (``--config``) < flags. The
config file may hold three sections: ``model`` (ModelConfig fields),
``data`` (GenParams fields) and ``train`` (plan settings). Every run writes
the values it actually used to ``effective_config.json`` in its output
directory. The output directory defaults to ``$MT_OUTPUT_ROOT/<subcommand>``
(``runs/<subcommand>`` when the variable is unset).

Exit status: 0 on success, 2 on usage errors, 1 on runtime failures. Runtime
failures print ``error [<category>]: <message>`` to stderr.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import geometry, models, synthdata, training
from .diffnet import checkpoint, nn
from .diffnet.tensor import DimensionError

ENV_OUTPUT_ROOT = "MT_OUTPUT_ROOT"
CONFIG_SECTIONS = ("model", "data", "train")
BENCH_NOTE = ("model inference only (localizer + predictor on normalised keypoints); "
              "pose estimation, tracking and ego-motion estimation are not included")


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


# -- configuration ----------------------------------------------------------
def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _parse_assignments(items: list[str] | None, flag: str) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise CliError("usage", f"{flag} expects KEY=VALUE, got {item!r}")
        out[key.strip()] = _parse_value(value)
    return out


def load_config_file(path) -> dict:
    if path is None:
        return {s: {} for s in CONFIG_SECTIONS}
    p = Path(path)
    if not p.is_file():
        raise CliError("input", f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliError("config", f"{p}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise CliError("config", f"{p}: top level must be an object")
    unknown = set(raw) - set(CONFIG_SECTIONS)
    if unknown:
        raise CliError("config", f"{p}: unknown sections {sorted(unknown)}")
    return {s: dict(raw.get(s, {})) for s in CONFIG_SECTIONS}


def _model_config(args, file_cfg: dict, base: dict | None = None) -> models.ModelConfig:
    d = dict(base or {})
    d.update(file_cfg["model"])
    d.update(_parse_assignments(args.set, "--set"))
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    try:
        return models.ModelConfig.from_dict(d)
    except TypeError as exc:
        raise CliError("config", str(exc)) from None


def _gen_params(args, file_cfg: dict) -> synthdata.GenParams:
    d = dict(file_cfg["data"])
    d.update(_parse_assignments(getattr(args, "gen", None), "--gen"))
    for flag in ("seed", "count"):
        if getattr(args, flag, None) is not None:
            d[flag] = getattr(args, flag)
    if isinstance(d.get("intrinsics"), dict):
        d["intrinsics"] = geometry.CameraIntrinsics(**d["intrinsics"])
    return synthdata.GenParams().with_overrides(**d)


def _train_setting(args, file_cfg: dict, name: str, default):
    flag = getattr(args, name, None)
    if flag is not None:
        return flag
    return file_cfg["train"].get(name, default)


def _int_list(value) -> list[int]:
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    try:
        return [int(v) for v in value]
    except (TypeError, ValueError):
        raise CliError("config", f"expected a list of integers, got {value!r}") from None


def _float_list(value) -> list[float] | None:
    if value is None:
        return None
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    return [float(v) for v in value]


def _stage_list(value) -> list[str]:
    if isinstance(value, str):
        value = [v.strip() for v in value.replace("->", ",").split(",") if v.strip()]
    return list(value)


def _output_dir(args) -> Path:
    if args.output_dir:
        out = Path(args.output_dir)
    else:
        out = Path(os.environ.get(ENV_OUTPUT_ROOT, "runs")) / args.command
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError("output", f"cannot create output directory {out}: {exc}") from None
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def _echo_config(out: Path, command: str, **sections) -> None:
    doc = {"subcommand": command, **sections}
    (out / "effective_config.json").write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError("input", f"{what} not found: {p}")
    return p


def _load_checkpoint(path):
    store, manifest = checkpoint.load(_require_file(path, "checkpoint"))
    cfg = models.ModelConfig.from_dict(manifest["config"])
    return store, cfg, manifest


def _load_records(path, cfg: models.ModelConfig | None = None):
    records = synthdata.read_dataset(_require_file(path, "dataset"))
    if not records:
        raise CliError("input", f"dataset {path} holds no records")
    if cfg is not None:
        bad = [r.sample_id for r in records if r.length != cfg.t_pred]
        if bad:
            raise CliError("input", f"records {bad[:5]} have length != t_pred={cfg.t_pred}")
    return records


def _plan_slug(name: str) -> str:
    return name.replace("->", "-")


# -- subcommands ------------------------------------------------------------
def cmd_gen_data(args, file_cfg) -> int:
    params = _gen_params(args, file_cfg)
    out = _output_dir(args)
    path = Path(args.out) if args.out else out / "dataset.txt"
    records = synthdata.generate_dataset(params, workers=args.workers)
    synthdata.write_dataset(records, path)
    _echo_config(out, "gen-data", data=asdict(params), outputs={"dataset": path})
    print(f"wrote {len(records)} records to {path}")
    return 0


def _split(records, seed: int, val_fraction: float, eval_data, cfg):
    if eval_data:
        return synthdata.to_batch(records), synthdata.to_batch(_load_records(eval_data, cfg))
    train_recs, val_recs = synthdata.split_by_scene(records, seed, val_fraction)
    if not train_recs:
        raise CliError("input", "training split is empty; lower --val-fraction")
    return synthdata.to_batch(train_recs), (synthdata.to_batch(val_recs) if val_recs else None)


def cmd_train(args, file_cfg) -> int:
    cfg = _model_config(args, file_cfg)
    stages = _stage_list(_train_setting(args, file_cfg, "stages", "L,T"))
    epochs = _int_list(_train_setting(args, file_cfg, "epochs", [10] * len(stages)))
    lrs = _float_list(_train_setting(args, file_cfg, "lrs", None))
    val_fraction = float(_train_setting(args, file_cfg, "val_fraction", 0.1))
    eval_every = int(_train_setting(args, file_cfg, "eval_every", 1))
    from_scratch = bool(_train_setting(args, file_cfg, "from_scratch", False))
    plan = training.TrainPlan(args.name or "->".join(stages), stages, epochs, lrs, seed=cfg.seed,
                              from_scratch=from_scratch)
    records = _load_records(args.data, cfg)
    train, val = _split(records, cfg.seed, val_fraction, args.eval_data, cfg)
    out = _output_dir(args)
    _echo_config(out, "train", model=cfg.to_dict(),
                 train={"stages": stages, "epochs": epochs, "lrs": lrs, "val_fraction": val_fraction,
                        "eval_every": eval_every, "from_scratch": from_scratch, "plan": plan.name},
                 inputs={"data": args.data, "eval_data": args.eval_data})
    res = training.run_training_order(plan, train, cfg, val, eval_every=eval_every)
    (out / "train_log.jsonl").write_text(res.log.to_jsonl())
    for i, blob in enumerate(res.stage_checkpoints):
        (out / f"stage{i}_{plan.stages[i]}.ckpt").write_bytes(blob)
    if res.stage_checkpoints:
        (out / "final.ckpt").write_bytes(res.stage_checkpoints[-1])
    (out / "summary.txt").write_text(training.summary_table([res.summary]))
    (out / "summary.jsonl").write_text(json.dumps(_jsonable(res.summary), sort_keys=True) + "\n")
    print(training.summary_table([res.summary]), end="")
    if res.summary["diverged"]:
        d = res.summary["diverged"]
        raise CliError("divergence", f"stage {d['stage']} diverged at epoch {d['epoch']} (loss={d['loss']})")
    return 0


def cmd_ablate_orders(args, file_cfg) -> int:
    cfg0 = _model_config(args, file_cfg)
    total = int(_train_setting(args, file_cfg, "total_epochs", 20))
    seeds = _int_list(_train_setting(args, file_cfg, "seeds", [0, 1, 2]))
    val_fraction = float(_train_setting(args, file_cfg, "val_fraction", 0.1))
    eval_every = int(_train_setting(args, file_cfg, "eval_every", total))
    records = _load_records(args.data, cfg0)
    out = _output_dir(args)
    _echo_config(out, "ablate-orders", model=cfg0.to_dict(),
                 train={"total_epochs": total, "seeds": seeds, "val_fraction": val_fraction,
                        "eval_every": eval_every,
                        "plans": [{"name": p.name, "stages": p.stages, "epochs": p.epochs}
                                  for p in training.standard_plans(total)]},
                 inputs={"data": args.data, "eval_data": args.eval_data})
    (out / "logs").mkdir(exist_ok=True)
    rows = []
    for seed in seeds:
        cfg = models.ModelConfig.from_dict({**cfg0.to_dict(), "seed": seed})
        train, val = _split(records, seed, val_fraction, args.eval_data, cfg)
        cache: dict = {}
        for plan in training.standard_plans(total, seed):
            res = training.run_training_order(plan, train, cfg, val, cache=cache, eval_every=eval_every)
            (out / "logs" / f"{_plan_slug(plan.name)}_seed{seed}.jsonl").write_text(res.log.to_jsonl())
            rows.append(res.summary)
            print(training.summary_table([res.summary]).splitlines()[1], flush=True)
    medians = median_rows(rows)
    table = training.summary_table(rows)
    (out / "summary.txt").write_text(table)
    (out / "summary.jsonl").write_text("".join(json.dumps(_jsonable(r), sort_keys=True) + "\n" for r in rows))
    (out / "median.txt").write_text(training.summary_table(medians))
    print("median over seeds:")
    print(training.summary_table(medians), end="")
    return 0


def median_rows(rows: list[dict]) -> list[dict]:
    """Per-plan medians of the summary metrics; seed column holds the seed count."""
    plans = list(dict.fromkeys(r["plan"] for r in rows))
    out = []
    for p in plans:
        rs = [r for r in rows if r["plan"] == p]
        med = {k: float(np.median([r[k] for r in rs])) for k in ("ade_loc", "ade_pred", "fde_pred")}
        diverged = next((r["diverged"] for r in rs if r["diverged"]), None)
        out.append({"plan": p, "seed": len(rs), "diverged": diverged, **med})
    return out


def comparison_table(reports: dict) -> str:
    """Per-bin table with one prediction column pair per predictor (the
    localization column is shared because every predictor reads the same
    localization pass)."""
    names = list(reports)
    first = reports[names[0]]
    head = f"{'range_m':<14}{'count':>8}  {'ade_loc':>10}"
    for n in names:
        head += f"  {'ade_' + n:>10}  {'fde_' + n:>10}"
    lines = [head]

    def f(v):
        return f"{'-':>10}" if v is None else f"{v:>10.4f}"
    for i, b in enumerate(first.bins):
        line = f"{b.label:<14}{b.count:>8}  {f(b.ade_loc)}"
        for n in names:
            rb = reports[n].bins[i]
            line += f"  {f(rb.ade_pred)}  {f(rb.fde_pred)}"
        lines.append(line)
    line = f"{'overall':<14}{first.count:>8}  {f(first.ade_localization)}"
    for n in names:
        line += f"  {f(reports[n].ade_prediction)}  {f(reports[n].fde_prediction)}"
    lines.append(line)
    return "\n".join(lines) + "\n"


def cmd_eval(args, file_cfg) -> int:
    store, cfg, _ = _load_checkpoint(args.checkpoint)
    records = _load_records(args.data, cfg)
    predictors = ("mt", "kf") if args.predictor == "both" else (args.predictor,)
    out = _output_dir(args)
    _echo_config(out, "eval", model=cfg.to_dict(), eval={"predictors": list(predictors)},
                 inputs={"data": args.data, "checkpoint": args.checkpoint})
    results = training.evaluate(synthdata.to_batch(records), cfg, store, predictors)
    reports = {}
    sums = []
    for p in predictors:
        rep = results[p].report(name=p)
        reports[p] = rep
        (out / f"report_{p}.txt").write_text(rep.to_table())
        (out / f"report_{p}.jsonl").write_text(rep.to_jsonl())
        sums.append(f"{p} {results[p].localization_checksum()}")
    (out / "localization.sha256").write_text("\n".join(sums) + "\n")
    table = comparison_table(reports)
    (out / "comparison.txt").write_text(table)
    print(table, end="")
    for line in sums:
        print(f"localization checksum {line}")
    return 0


def _prediction_doc(rec, cfg, store) -> dict:
    kp = rec.normalized_keypoints()[None, :cfg.t_obs]
    loc = models.localize(kp, cfg, store)
    obs, pred = models.mt_infer(kp, rec.ego[None], cfg, store)
    return {
        "sample_id": rec.sample_id,
        "scene_id": rec.scene_id,
        "ped_id": rec.ped_id,
        "t_obs": cfg.t_obs,
        "frame_interval": cfg.frame_interval,
        "localization": {"r": loc.r.data[0].tolist(), "theta": loc.theta.data[0].tolist(),
                         "phi": loc.phi.data[0].tolist(), "b": loc.b.data[0].tolist()},
        "observed_estimate": obs[0].tolist(),
        "predicted": pred[0].tolist(),
        "ground_truth": rec.gt_traj.tolist(),
    }


def _select(records, ids):
    if ids is None:
        return records
    by_id = {r.sample_id: r for r in records}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise CliError("input", f"sample ids not in dataset: {missing}")
    return [by_id[i] for i in ids]


def cmd_predict(args, file_cfg) -> int:
    store, cfg, _ = _load_checkpoint(args.checkpoint)
    records = _load_records(args.data, cfg)
    ids = _int_list(args.sample_ids) if args.sample_ids else [records[0].sample_id]
    out = _output_dir(args)
    _echo_config(out, "predict", model=cfg.to_dict(),
                 inputs={"data": args.data, "checkpoint": args.checkpoint, "sample_ids": ids})
    docs = [_prediction_doc(r, cfg, store) for r in _select(records, ids)]
    text = "".join(json.dumps(d, sort_keys=True) + "\n" for d in docs)
    (out / "predictions.jsonl").write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_bench(args, file_cfg) -> int:
    if args.checkpoint:
        store, cfg, _ = _load_checkpoint(args.checkpoint)
    else:
        cfg = _model_config(args, file_cfg)
        store = models.init_params(cfg)
    if args.frames < 1000:
        raise CliError("usage", "--frames must be at least 1000")
    params = synthdata.GenParams(seed=0, count=8, t_pred=cfg.t_pred, frame_interval=cfg.frame_interval)
    records = synthdata.generate_dataset(params)
    kps = [r.normalized_keypoints()[None, :cfg.t_obs] for r in records]
    egos = [r.ego[None, :cfg.t_obs] for r in records]
    per_call = models.inference_latency_frames(cfg)
    calls = math.ceil(args.frames / per_call)
    for i in range(min(5, calls)):
        models.mt_infer(kps[i % len(kps)], egos[i % len(egos)], cfg, store)
    t0 = time.perf_counter()
    for i in range(calls):
        models.mt_infer(kps[i % len(kps)], egos[i % len(egos)], cfg, store)
    elapsed = time.perf_counter() - t0
    frames = calls * per_call
    result = {"frames": frames, "calls": calls, "frames_per_call": per_call,
              "total_seconds": elapsed, "ms_per_frame": 1000.0 * elapsed / frames,
              "ms_per_call": 1000.0 * elapsed / calls, "parameters": models.param_count(store),
              "note": BENCH_NOTE}
    out = _output_dir(args)
    _echo_config(out, "bench", model=cfg.to_dict(), bench={"frames": args.frames},
                 inputs={"checkpoint": args.checkpoint})
    (out / "bench.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    print(f"mean latency {result['ms_per_frame']:.4f} ms/frame over {frames} frames "
          f"({result['ms_per_call']:.4f} ms per {per_call}-frame call)")
    print(f"note: {BENCH_NOTE}")
    return 0


_SERIES = (("ground_truth", "#777777"), ("observed_estimate", "#1f5fbf"), ("predicted", "#d0402a"))


def trajectory_svg(doc: dict, size: int = 480, margin: int = 36) -> str:
    """Top-down overlay of ground truth, observed estimate and prediction."""
    pts = np.concatenate([np.asarray(doc[k], dtype=float) for k, _ in _SERIES])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = max(float(np.max(hi - lo)), 1.0)
    scale = (size - 2 * margin) / span
    centre = (lo + hi) / 2

    def xy(p):
        # x to the right, y upwards on the page
        return (size / 2 + (p[0] - centre[0]) * scale, size / 2 - (p[1] - centre[1]) * scale)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">',
             f'<rect width="{size}" height="{size}" fill="white"/>',
             f'<text x="8" y="16" font-family="sans-serif" font-size="12">sample {doc["sample_id"]} '
             f'(1 m = {scale:.1f} px)</text>']
    for i, (key, colour) in enumerate(_SERIES):
        coords = [xy(p) for p in doc[key]]
        path = " ".join(f"{x:.2f},{y:.2f}" for x, y in coords)
        parts.append(f'<polyline points="{path}" fill="none" stroke="{colour}" stroke-width="2"/>')
        parts += [f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2.5" fill="{colour}"/>' for x, y in coords]
        parts.append(f'<text x="8" y="{size - 10 - 14 * i}" font-family="sans-serif" font-size="11" '
                     f'fill="{colour}">{key.replace("_", " ")}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def trajectory_csv(doc: dict) -> str:
    lines = ["series,step,x,y"]
    for key, _ in _SERIES:
        offset = doc["t_obs"] if key == "predicted" else 0
        for i, (x, y) in enumerate(doc[key]):
            lines.append(f"{key},{i + offset},{x!r},{y!r}")
    return "\n".join(lines) + "\n"


def cmd_plot(args, file_cfg) -> int:
    store, cfg, _ = _load_checkpoint(args.checkpoint)
    records = _load_records(args.data, cfg)
    if args.sample_ids:
        chosen = _select(records, _int_list(args.sample_ids))
    else:
        chosen = records[:args.count]
    out = _output_dir(args)
    _echo_config(out, "plot", model=cfg.to_dict(),
                 inputs={"data": args.data, "checkpoint": args.checkpoint,
                         "sample_ids": [r.sample_id for r in chosen]})
    for rec in chosen:
        doc = _prediction_doc(rec, cfg, store)
        (out / f"sample_{rec.sample_id}.svg").write_text(trajectory_svg(doc))
        (out / f"sample_{rec.sample_id}.csv").write_text(trajectory_csv(doc))
    print(f"wrote {len(chosen)} overlays to {out}")
    return 0


# -- parser -----------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="monotransmotion",
                                     description="Pose-keypoint BEV localization and trajectory prediction.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")

    def common(p, model=True):
        p.add_argument("--config", help="JSON config file with model/data/train sections")
        p.add_argument("--output-dir", help=f"output directory (default ${ENV_OUTPUT_ROOT}/<subcommand>)")
        if model:
            p.add_argument("--set", action="append", metavar="KEY=VALUE", help="ModelConfig override")
            p.add_argument("--seed", type=int)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(p, model=False)
    p.add_argument("--seed", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--gen", action="append", metavar="KEY=VALUE", help="generator parameter override")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="dataset path (default <output-dir>/dataset.txt)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one staged plan")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", help="held-out dataset (default: a scene-hash split of --data)")
    p.add_argument("--stages", help="comma-separated stages, e.g. L,T,LT")
    p.add_argument("--epochs", help="comma-separated epochs per stage")
    p.add_argument("--lrs", help="comma-separated learning rates per stage")
    p.add_argument("--val-fraction", type=float, dest="val_fraction")
    p.add_argument("--eval-every", type=int, dest="eval_every")
    p.add_argument("--from-scratch", action="store_true", default=None, dest="from_scratch")
    p.add_argument("--name")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate-orders", help="compare the four training orders")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data")
    p.add_argument("--total-epochs", type=int, dest="total_epochs")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--val-fraction", type=float, dest="val_fraction")
    p.add_argument("--eval-every", type=int, dest="eval_every")
    p.set_defaults(func=cmd_ablate_orders)

    p = sub.add_parser("eval", help="distance-binned evaluation of a checkpoint")
    common(p, model=False)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--predictor", choices=("mt", "kf", "both"), default="both")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="localize and predict individual samples")
    common(p, model=False)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sample-ids", help="comma-separated sample ids (default: first record)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("bench", help="model inference latency")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--frames", type=int, default=1000)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("plot", help="trajectory overlays as SVG plus CSV")
    common(p, model=False)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sample-ids")
    p.add_argument("--count", type=int, default=4)
    p.set_defaults(func=cmd_plot)
    return parser


def _categorize(exc: Exception) -> str:
    if isinstance(exc, CliError):
        return exc.category
    if isinstance(exc, synthdata.DatasetParseError):
        return "dataset-format"
    if isinstance(exc, checkpoint.CheckpointError):
        return "checkpoint"
    if isinstance(exc, synthdata.GenerationError):
        return "generation"
    if isinstance(exc, (models.ModelConfigError, nn.ConfigError, training.PlanError)):
        return "config"
    if isinstance(exc, DimensionError):
        return "shape"
    if isinstance(exc, (FileNotFoundError, IsADirectoryError, PermissionError)):
        return "input"
    if isinstance(exc, ValueError):
        return "config"
    return "runtime"


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        file_cfg = load_config_file(args.config)
        return args.func(args, file_cfg)
    except CliError as exc:
        if exc.category == "usage":
            parser.print_usage(sys.stderr)
            print(f"{parser.prog}: error: {exc}", file=sys.stderr)
            return 2
        print(f"error [{exc.category}]: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - report every failure with a category
        print(f"error [{_categorize(exc)}]: {exc}", file=sys.stderr)
        return 1
