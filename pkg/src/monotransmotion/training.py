"""Staged training: L (localization), T (prediction, localizer frozen) and
LT (joint), composed into training-order plans.

The predictor is always supervised with *estimated* trajectories. Its target
is the estimate over the remaining steps from the full ``t_pred``-frame
sequence; its input is by default the estimate from the observation-window
keypoints alone, as at inference (see ``ModelConfig.predictor_input``).
"""
from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kalman, metrics, models
from .diffnet import checkpoint, nn
from .diffnet import tensor as T
from .losses import localization_loss, trajectory_loss
from .models import ModelConfig
from .synthdata import Batch

STAGES = ("L", "T", "LT")
_STAGE_CODE = {"L": 1, "T": 2, "LT": 3}
FINETUNE_LR_FACTOR = 0.3


class DivergenceError(RuntimeError):
    def __init__(self, stage: str, epoch: int, loss: float):
        super().__init__(f"stage {stage} diverged at epoch {epoch} (loss={loss})")
        self.stage = stage
        self.epoch = epoch
        self.loss = loss


class PlanError(ValueError):
    pass


@dataclass
class TrainPlan:
    name: str
    stages: list[str]
    epochs: list[int]
    lrs: list[float] | None = None
    seed: int = 0
    divergence_factor: float = 1e3
    from_scratch: bool = False

    def __post_init__(self):
        if not self.stages or len(self.stages) != len(self.epochs):
            raise PlanError("stages and epochs must be nonempty and the same length")
        if any(s not in STAGES for s in self.stages):
            raise PlanError(f"unknown stage in {self.stages}")
        if any(e <= 0 for e in self.epochs):
            raise PlanError("epoch counts must be positive")
        if self.lrs is not None and len(self.lrs) != len(self.stages):
            raise PlanError("one learning rate per stage")
        first_loc = next((i for i, s in enumerate(self.stages) if "L" in s), len(self.stages))
        if "T" in self.stages[:first_loc] and not self.from_scratch:
            raise PlanError("stage T before any localization stage needs from_scratch=True")

    @property
    def total_epochs(self) -> int:
        return sum(self.epochs)

    def stage_lr(self, i: int, base_lr: float) -> float:
        if self.lrs is not None:
            return self.lrs[i]
        # joint fine-tuning after earlier stages uses a reduced rate
        if self.stages[i] == "LT" and i > 0:
            return base_lr * FINETUNE_LR_FACTOR
        return base_lr


def standard_plans(total_epochs: int, seed: int = 0) -> list[TrainPlan]:
    """The four training orders at an equal total epoch budget."""
    half = total_epochs // 2
    quarter = (total_epochs - half) // 2
    return [
        TrainPlan("L->T", ["L", "T"], [half, total_epochs - half], seed=seed),
        TrainPlan("L->LT", ["L", "LT"], [half, total_epochs - half], seed=seed),
        TrainPlan("LT", ["LT"], [total_epochs], seed=seed),
        TrainPlan("L->T->LT", ["L", "T", "LT"], [half, quarter, total_epochs - half - quarter], seed=seed),
    ]


@dataclass
class EpochRecord:
    stage: str
    stage_index: int
    epoch: int
    train: dict
    eval: dict
    val: dict | None = None
    wall_time: float = 0.0


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, rec: EpochRecord) -> None:
        prev = [r for r in self.records if r.stage_index == rec.stage_index]
        if prev and rec.epoch != prev[-1].epoch + 1:
            raise ValueError("epochs must be numbered consecutively within a stage")
        self.records.append(rec)

    def extend(self, other: "TrainLog") -> None:
        for r in other.records:
            self.append(r)

    def to_jsonl(self, include_timing: bool = False) -> str:
        """Line-delimited records.  Wall-clock times are left out unless asked
        for, so that identical runs serialise identically."""
        lines = []
        for r in self.records:
            d = asdict(r)
            if not include_timing:
                d.pop("wall_time")
            lines.append(json.dumps(d, sort_keys=True, allow_nan=True))
        return "".join(line + "\n" for line in lines)

    @classmethod
    def from_jsonl(cls, text: str) -> "TrainLog":
        log = cls()
        for line in text.splitlines():
            if line.strip():
                d = json.loads(line)
                log.records.append(EpochRecord(**d))
        return log


# -- losses on a batch ------------------------------------------------------
def _loc_terms(kp, batch: Batch, cfg: ModelConfig, store, n_t: int):
    loc = models.localize(kp[:, :n_t], cfg, store)
    est = models.localize_trajectory(loc, batch.ego[:, :n_t])
    br = localization_loss(loc, est, batch.gt_spherical[:, :n_t], batch.gt_traj[:, :n_t],
                           cfg.lambda_dir, cfg.dir_include_last)
    return loc, est, br


def stage_loss(stage: str, batch: Batch, cfg: ModelConfig, store: nn.ParameterStore):
    """Scalar objective for ``stage`` on ``batch`` plus a float breakdown.

    The target future always comes from the full-window estimate. With
    ``cfg.predictor_input == "observation"`` the predictor input is localized
    from the observation-window keypoints alone, as at inference; with
    ``"full"`` it is the first ``t_obs`` steps of the full-window estimate.
    """
    kp = batch.keypoints
    parts: dict[str, float] = {}
    total = None
    separate_obs = cfg.predictor_input == "observation"
    if stage == "T":
        with T.no_grad():
            _, est, br = _loc_terms(kp, batch, cfg, store, cfg.t_pred)
            est_obs = _loc_terms(kp, batch, cfg, store, cfg.t_obs)[1] if separate_obs else est[:, :cfg.t_obs]
        est, est_obs = T.Value(est.data), T.Value(est_obs.data)
    else:
        _, est, br = _loc_terms(kp, batch, cfg, store, cfg.t_pred)
        total = T.mean(br.localization_total)
        est_obs = est[:, :cfg.t_obs]
        if cfg.prefix_supervision or (stage == "LT" and separate_obs):
            _, prefix_est, br_obs = _loc_terms(kp, batch, cfg, store, cfg.t_obs)
            if separate_obs:
                est_obs = prefix_est
        if cfg.prefix_supervision:
            total = T.add(total, T.mean(br_obs.localization_total))
            parts["loc_obs_window"] = float(np.mean(br_obs.localization_total.data))
    parts.update(br.as_floats())
    if stage in ("T", "LT"):
        pred = models.traj_predictor_forward(est_obs, cfg, store)
        lt = T.mean(trajectory_loss(pred, est[:, cfg.t_obs:]))
        parts["trajectory"] = lt.item()
        total = lt if total is None else T.add(total, T.mul(lt, cfg.joint_traj_weight))
    parts["objective"] = total.item()
    return total, parts


def trainable_names(stage: str, store: nn.ParameterStore) -> list[str]:
    if stage == "L":
        return store.names("loc.")
    if stage == "T":
        return store.names("pred.")
    return store.names()


# -- evaluation -------------------------------------------------------------
@dataclass
class EvalResult:
    est_obs: np.ndarray
    pred: np.ndarray
    gt_obs: np.ndarray
    gt_future: np.ndarray
    mean_range: np.ndarray
    predictor: str

    def report(self, name: str = "", edges=metrics.DEFAULT_BIN_EDGES) -> metrics.EvalReport:
        return metrics.distance_binned_report(self.est_obs, self.gt_obs, self.pred, self.gt_future,
                                              self.mean_range, edges, name)

    def localization_checksum(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.est_obs, dtype="<f8").tobytes()).hexdigest()


def localize_observation(batch: Batch, cfg: ModelConfig, store, chunk: int = 256) -> np.ndarray:
    """Estimated observation-window trajectories [N, T_obs, 2] (inference protocol)."""
    out = []
    with T.no_grad():
        for i in range(0, len(batch), chunk):
            kp = batch.keypoints[i:i + chunk, :cfg.t_obs]
            loc = models.localize(kp, cfg, store)
            out.append(models.localize_trajectory(loc, batch.ego[i:i + chunk, :cfg.t_obs]).data)
    return np.concatenate(out)


def predict_from_observation(est_obs: np.ndarray, cfg: ModelConfig, store, predictor: str = "mt",
                             kf_q: float = 0.5, kf_sigma: float = 0.05, chunk: int = 256) -> np.ndarray:
    if predictor == "kf":
        return kalman.kf_predict_batch(est_obs, cfg.horizon, cfg.frame_interval, kf_q, kf_sigma)
    if predictor != "mt":
        raise ValueError(f"unknown predictor {predictor!r}")
    out = []
    with T.no_grad():
        for i in range(0, len(est_obs), chunk):
            out.append(models.traj_predictor_forward(est_obs[i:i + chunk], cfg, store).data)
    return np.concatenate(out)


def evaluate(batch: Batch, cfg: ModelConfig, store, predictors=("mt",), est_obs: np.ndarray | None = None
             ) -> dict[str, EvalResult]:
    """Evaluate one or more predictors on a single shared localization pass."""
    if est_obs is None:
        est_obs = localize_observation(batch, cfg, store)
    mean_range = batch.gt_spherical[:, :cfg.t_obs, 0].mean(axis=1)
    res = {}
    for p in predictors:
        pred = predict_from_observation(est_obs, cfg, store, p)
        res[p] = EvalResult(est_obs, pred, batch.gt_traj[:, :cfg.t_obs], batch.gt_traj[:, cfg.t_obs:],
                            mean_range, p)
    return res


def _summary_metrics(batch: Batch | None, cfg, store) -> dict | None:
    if batch is None or len(batch) == 0:
        return None
    r = evaluate(batch, cfg, store)["mt"]
    return {"ade_loc": float(metrics.ade(r.est_obs, r.gt_obs).mean()),
            "ade_pred": float(metrics.ade(r.pred, r.gt_future).mean()),
            "fde_pred": float(metrics.fde(r.pred, r.gt_future).mean())}


def full_set_loss(stage: str, batch: Batch, cfg: ModelConfig, store, chunk: int = 256) -> dict:
    """Stage objective averaged over the whole set with fixed parameters."""
    sums: dict[str, float] = {}
    n = len(batch)
    with T.no_grad():
        for i in range(0, n, chunk):
            part = batch.take(slice(i, i + chunk))
            _, parts = stage_loss(stage, part, cfg, store)
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v * len(part)
    return {k: v / n for k, v in sums.items()}


# -- training ---------------------------------------------------------------
def stage_rng(seed: int, stage_index: int, stage: str) -> np.random.Generator:
    return np.random.default_rng([seed, 100 + stage_index, _STAGE_CODE[stage]])


def scheduled_lr(cfg: ModelConfig, lr: float, epoch: int, epochs: int) -> float:
    if cfg.lr_schedule == "constant" or epochs <= 1:
        return lr
    frac = epoch / (epochs - 1)
    lo = lr * cfg.lr_final_factor
    return lo + 0.5 * (lr - lo) * (1.0 + math.cos(math.pi * frac))


def train_stage(stage: str, data: Batch, cfg: ModelConfig, store: nn.ParameterStore, epochs: int,
                lr: float | None = None, seed: int | None = None, stage_index: int = 0,
                val: Batch | None = None, divergence_factor: float = 1e3,
                eval_every: int = 1) -> TrainLog:
    """Train ``store`` in place for ``epochs`` epochs of ``stage``."""
    if stage not in STAGES:
        raise PlanError(f"unknown stage {stage!r}")
    if len(data) == 0:
        raise ValueError("training set is empty")
    lr = cfg.lr if lr is None else lr
    seed = cfg.seed if seed is None else seed
    rng = stage_rng(seed, stage_index, stage)
    names = trainable_names(stage, store)
    log = TrainLog()
    initial = None
    for epoch in range(epochs):
        t0 = time.perf_counter()
        epoch_lr = scheduled_lr(cfg, lr, epoch, epochs)
        order = rng.permutation(len(data))
        acc: dict[str, float] = {}
        for i in range(0, len(data), cfg.batch_size):
            mb = data.take(order[i:i + cfg.batch_size])
            store.zero_grad()
            total, parts = stage_loss(stage, mb, cfg, store)
            loss = total.item()
            if initial is None:
                initial = abs(loss) if loss != 0 else 1.0
            if not math.isfinite(loss) or abs(loss) > divergence_factor * max(initial, 1.0):
                raise DivergenceError(stage, epoch, loss)
            total.backward()
            nn.clip_grad_norm(store, cfg.clip_norm, names)
            nn.adam_update(store, epoch_lr, cfg.beta1, cfg.beta2, cfg.adam_eps, names=names, allow_missing=True)
            for k, v in parts.items():
                acc[k] = acc.get(k, 0.0) + v * len(mb)
        train_parts = {k: v / len(data) for k, v in acc.items()}
        last = epoch == epochs - 1
        if last or (epoch + 1) % eval_every == 0:
            eval_parts = full_set_loss(stage, data, cfg, store)
            val_metrics = _summary_metrics(val, cfg, store)
        else:
            eval_parts, val_metrics = {}, None
        log.append(EpochRecord(stage, stage_index, epoch, train_parts, eval_parts, val_metrics,
                               time.perf_counter() - t0))
    return log


@dataclass
class PlanResult:
    plan: TrainPlan
    store: nn.ParameterStore
    log: TrainLog
    summary: dict
    stage_checkpoints: list[bytes] = field(default_factory=list)


def run_training_order(plan: TrainPlan, data: Batch, cfg: ModelConfig, val: Batch | None = None,
                       cache: dict | None = None, eval_every: int = 1) -> PlanResult:
    """Run the stages of ``plan`` in order from freshly initialised parameters.

    ``cache`` (optional, shared across plans with the same seed, data and
    config) memoises completed stage prefixes; training is deterministic so a
    cached prefix is identical to recomputing it.  Divergence is recorded in
    the summary instead of being raised.
    """
    cfg_key = json.dumps(cfg.to_dict(), sort_keys=True)
    store = models.init_params(cfg, plan.seed)
    log = TrainLog()
    ckpts: list[bytes] = []
    diverged = None
    start = 0
    if cache is not None:
        for k in range(len(plan.stages), 0, -1):
            key = (cfg_key, plan.seed, tuple(plan.stages[:k]), tuple(plan.epochs[:k]),
                   tuple(plan.stage_lr(i, cfg.lr) for i in range(k)))
            if key in cache:
                cached_store, cached_log, cached_ckpts = cache[key]
                store = cached_store.copy()
                log.extend(cached_log)
                ckpts = list(cached_ckpts)
                start = k
                break
    for i in range(start, len(plan.stages)):
        stage = plan.stages[i]
        try:
            stage_log = train_stage(stage, data, cfg, store, plan.epochs[i], plan.stage_lr(i, cfg.lr),
                                    plan.seed, i, val, plan.divergence_factor, eval_every)
        except DivergenceError as exc:
            diverged = {"stage": exc.stage, "stage_index": i, "epoch": exc.epoch, "loss": exc.loss}
            break
        log.extend(stage_log)
        ckpts.append(checkpoint.dumps(
            store, cfg.to_dict(),
            rng_state={"seed_sequence": [plan.seed, 100 + i, _STAGE_CODE[stage]], "epochs_drawn": plan.epochs[i]},
            extra={"stages": plan.stages[:i + 1], "epochs": plan.epochs[:i + 1]}))
        if cache is not None:
            key = (cfg_key, plan.seed, tuple(plan.stages[:i + 1]), tuple(plan.epochs[:i + 1]),
                   tuple(plan.stage_lr(j, cfg.lr) for j in range(i + 1)))
            cache[key] = (store.copy(), TrainLog(list(log.records)), list(ckpts))
    summary = {"plan": plan.name, "seed": plan.seed, "total_epochs": plan.total_epochs,
               "diverged": diverged}
    ev = _summary_metrics(val if val is not None else data, cfg, store)
    if ev is None or diverged is not None and not all(math.isfinite(v) for v in ev.values()):
        ev = {"ade_loc": math.nan, "ade_pred": math.nan, "fde_pred": math.nan}
    summary.update(ev)
    return PlanResult(plan, store, log, summary, ckpts)


def summary_table(rows: list[dict]) -> str:
    """Training-order summary: localization ADE and prediction ADE/FDE per plan."""
    lines = [f"{'plan':<12}{'seed':>6}  {'ade_loc':>10}  {'ade_pred':>10}  {'fde_pred':>10}  status"]
    for r in rows:
        status = "ok" if not r.get("diverged") else f"diverged({r['diverged']['stage']}@{r['diverged']['epoch']})"
        lines.append(f"{r['plan']:<12}{r['seed']:>6}  {r['ade_loc']:>10.4f}  {r['ade_pred']:>10.4f}  "
                     f"{r['fde_pred']:>10.4f}  {status}")
    return "\n".join(lines) + "\n"
