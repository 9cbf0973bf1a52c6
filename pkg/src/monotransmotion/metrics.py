"""Displacement metrics and distance-binned evaluation reports."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

DEFAULT_BIN_EDGES = (0.0, 10.0, 20.0, math.inf)


class MetricsDomainError(ValueError):
    pass


def _check(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise MetricsDomainError(f"trajectory shapes differ: {pred.shape} vs {gt.shape}")
    if pred.ndim < 2 or pred.shape[-2] == 0:
        raise MetricsDomainError("trajectories must have at least one step")
    return pred, gt


def ade(pred, gt):
    """Mean Euclidean distance over steps ([..., T, 2] -> [...])."""
    pred, gt = _check(pred, gt)
    out = np.linalg.norm(pred - gt, axis=-1).mean(axis=-1)
    return float(out) if out.ndim == 0 else out


def fde(pred, gt):
    """Euclidean distance at the final step."""
    pred, gt = _check(pred, gt)
    out = np.linalg.norm(pred[..., -1, :] - gt[..., -1, :], axis=-1)
    return float(out) if out.ndim == 0 else out


@dataclass
class BinRow:
    lo: float
    hi: float
    count: int
    ade_loc: float | None
    ade_pred: float | None
    fde_pred: float | None

    @property
    def label(self) -> str:
        hi = "inf" if math.isinf(self.hi) else f"{self.hi:g}"
        return f"[{self.lo:g}, {hi})"


@dataclass
class EvalReport:
    ade_localization: float
    ade_prediction: float
    fde_prediction: float
    count: int
    bins: list[BinRow] = field(default_factory=list)
    name: str = ""

    def to_records(self) -> list[dict]:
        """Machine-readable key-value records: one per bin, then the overall row."""
        recs = []
        for b in self.bins:
            recs.append({"report": self.name, "row": "bin", "lo": b.lo,
                         "hi": None if math.isinf(b.hi) else b.hi, "count": b.count,
                         "ade_loc": b.ade_loc, "ade_pred": b.ade_pred, "fde_pred": b.fde_pred})
        recs.append({"report": self.name, "row": "overall", "lo": None, "hi": None, "count": self.count,
                     "ade_loc": self.ade_localization, "ade_pred": self.ade_prediction,
                     "fde_pred": self.fde_prediction})
        return recs

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.to_records())

    @classmethod
    def from_records(cls, records: list[dict]) -> "EvalReport":
        overall = [r for r in records if r["row"] == "overall"]
        if len(overall) != 1:
            raise MetricsDomainError("report needs exactly one overall row")
        o = overall[0]
        bins = [BinRow(r["lo"], math.inf if r["hi"] is None else r["hi"], r["count"],
                       r["ade_loc"], r["ade_pred"], r["fde_pred"]) for r in records if r["row"] == "bin"]
        return cls(o["ade_loc"], o["ade_pred"], o["fde_pred"], o["count"], bins, o.get("report", ""))

    @classmethod
    def from_jsonl(cls, text: str) -> "EvalReport":
        return cls.from_records([json.loads(line) for line in text.splitlines() if line.strip()])

    def to_table(self) -> str:
        """Fixed-width text table: one row per bin plus the overall row."""
        def f(v):
            return "-" if v is None else f"{v:.17g}"
        lines = [f"# report: {self.name}" if self.name else "# report",
                 f"{'range_m':<14}{'count':>8}  {'ade_loc':<24}{'ade_pred':<24}{'fde_pred':<24}"]
        for b in self.bins:
            lines.append(f"{b.label:<14}{b.count:>8}  {f(b.ade_loc):<24}{f(b.ade_pred):<24}{f(b.fde_pred):<24}")
        lines.append(f"{'overall':<14}{self.count:>8}  {f(self.ade_localization):<24}"
                     f"{f(self.ade_prediction):<24}{f(self.fde_prediction):<24}")
        return "\n".join(s.rstrip() for s in lines) + "\n"

    @classmethod
    def from_table(cls, text: str) -> "EvalReport":
        lines = [l for l in text.splitlines() if l.strip()]
        name = lines[0][len("# report: "):] if lines[0].startswith("# report: ") else ""

        def g(s):
            return None if s == "-" else float(s)
        bins = []
        overall = None
        for line in lines[2:]:
            if line.startswith("overall"):
                parts = line.split()
                overall = (int(parts[1]), g(parts[2]), g(parts[3]), g(parts[4]))
                continue
            label, rest = line[:14].strip(), line[14:].split()
            lo, hi = label.strip("[)").split(", ")
            bins.append(BinRow(float(lo), float(hi), int(rest[0]), g(rest[1]), g(rest[2]), g(rest[3])))
        if overall is None:
            raise MetricsDomainError("table has no overall row")
        return cls(overall[1], overall[2], overall[3], overall[0], bins, name)


def distance_binned_report(est_obs, gt_obs, pred, gt_future, mean_range,
                           edges=DEFAULT_BIN_EDGES, name: str = "") -> EvalReport:
    """Aggregate localization ADE (observation window) and prediction
    ADE/FDE (future window) overall and per range bin.

    ``mean_range`` is each sample's mean ground-truth range over the
    observation window; bins are half-open ``[lo, hi)``.
    """
    est_obs, gt_obs = _check(est_obs, gt_obs)
    pred, gt_future = _check(pred, gt_future)
    mean_range = np.asarray(mean_range, dtype=np.float64)
    n = est_obs.shape[0]
    if n == 0:
        raise MetricsDomainError("cannot report on an empty sample set")
    a_loc = np.atleast_1d(ade(est_obs, gt_obs))
    a_pred = np.atleast_1d(ade(pred, gt_future))
    f_pred = np.atleast_1d(fde(pred, gt_future))
    rows = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        m = (mean_range >= lo) & (mean_range < hi)
        c = int(m.sum())
        if c:
            rows.append(BinRow(float(lo), float(hi), c, float(a_loc[m].mean()),
                               float(a_pred[m].mean()), float(f_pred[m].mean())))
        else:
            rows.append(BinRow(float(lo), float(hi), 0, None, None, None))
    return EvalReport(float(a_loc.mean()), float(a_pred.mean()), float(f_pred.mean()), n, rows, name)
