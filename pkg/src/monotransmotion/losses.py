"""Localization and trajectory losses.

Every loss accepts numpy arrays or :class:`~monotransmotion.diffnet.Value`
inputs with time on the last axis (``[..., T]``, or ``[..., T, 2]`` for
trajectories) and returns a :class:`Value` with the leading batch axes
preserved, so callers can average over the batch and backpropagate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffnet import tensor as T
from .diffnet.tensor import DimensionError, Value, as_value

EPS_V = 1e-6


class LossDomainError(ValueError):
    pass


def _same_shape(name: str, a: Value, b: Value) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} differ")


def laplace_loss(r, b, r_gt) -> Value:
    """Sum over t of |1 - r/r*| / b + log(2b)."""
    r, b, r_gt = as_value(r), as_value(b), as_value(r_gt)
    _same_shape("laplace_loss", r, r_gt)
    _same_shape("laplace_loss", r, b)
    if np.any(r_gt.data <= 0):
        raise LossDomainError("ground-truth range must be positive")
    ratio_err = T.vabs(T.sub(1.0, T.div(r, r_gt)))
    per_step = T.add(T.div(ratio_err, b), T.log(T.mul(b, 2.0)))
    return T.vsum(per_step, axis=-1)


def _wrapped_diff(a: Value, b: Value) -> Value:
    d = T.sub(a, b)
    # constant shift by a multiple of 2*pi; derivative is unaffected
    shift = 2.0 * np.pi * np.ceil((d.data - np.pi) / (2.0 * np.pi))
    return T.sub(d, shift)


def angle_l1_loss(theta, phi, theta_gt, phi_gt) -> Value:
    """Sum over t of |wrap(theta - theta*)| + |wrap(phi - phi*)|."""
    theta, phi = as_value(theta), as_value(phi)
    theta_gt, phi_gt = as_value(theta_gt), as_value(phi_gt)
    _same_shape("angle_l1_loss", theta, theta_gt)
    _same_shape("angle_l1_loss", phi, phi_gt)
    per_step = T.add(T.vabs(_wrapped_diff(theta, theta_gt)), T.vabs(_wrapped_diff(phi, phi_gt)))
    return T.vsum(per_step, axis=-1)


def directional_loss(est, gt, include_last: bool = False, eps_v: float = EPS_V) -> Value:
    """Negative mean cosine between estimated and true step velocities.

    Velocities v_t = x_t - x_{t-1} for t = 2..T-1 (1-based) enter the sum,
    normalised by 1/(T-2); ``include_last`` also adds v_T and normalises by
    1/(T-1).  A step where either velocity is shorter than ``eps_v`` adds 0.
    """
    est, gt = as_value(est), as_value(gt)
    _same_shape("directional_loss", est, gt)
    n_t = est.shape[-2]
    if n_t < 3:
        raise LossDomainError(f"directional loss needs T >= 3, got {n_t}")
    n_v = n_t - 1 if include_last else n_t - 2
    v = T.sub(est[..., 1:n_v + 1, :], est[..., :n_v, :])
    v_gt = T.sub(gt[..., 1:n_v + 1, :], gt[..., :n_v, :])
    nv, nv_gt = T.norm(v), T.norm(v_gt)
    moving = (nv.data >= eps_v) & (nv_gt.data >= eps_v)
    safe = lambda n: T.where(moving, n, 1.0)  # noqa: E731
    unit = T.div(v, T.reshape(safe(nv), nv.shape + (1,)))
    unit_gt = T.div(v_gt, T.reshape(safe(nv_gt), nv_gt.shape + (1,)))
    cos = T.mul(T.vsum(T.mul(unit, unit_gt), axis=-1), moving.astype(np.float64))
    return T.mul(T.vsum(cos, axis=-1), -1.0 / n_v)


def trajectory_loss(pred, gt) -> Value:
    """Mean over future steps of the (unsquared) Euclidean error."""
    pred, gt = as_value(pred), as_value(gt)
    _same_shape("trajectory_loss", pred, gt)
    return T.mean(T.norm(T.sub(pred, gt)), axis=-1)


@dataclass
class LossBreakdown:
    laplace: Value
    angle_l1: Value
    directional: Value
    localization_total: Value
    trajectory: Value | None = None

    def as_floats(self) -> dict[str, float]:
        out = {
            "laplace": float(np.mean(self.laplace.data)),
            "angle_l1": float(np.mean(self.angle_l1.data)),
            "directional": float(np.mean(self.directional.data)),
            "localization_total": float(np.mean(self.localization_total.data)),
        }
        if self.trajectory is not None:
            out["trajectory"] = float(np.mean(self.trajectory.data))
        return out


def localization_loss(loc_out, est_traj, gt_spherical, gt_traj, lambda_dir: float = 1.0,
                      include_last: bool = False) -> LossBreakdown:
    """Laplace + angle L1 + lambda_dir * directional, per sample.

    ``loc_out`` carries ``r, theta, phi, b`` ([..., T]); ``gt_spherical`` is
    [..., T, 3] of (r, theta, phi); trajectories are [..., T, 2].
    """
    gt_s = np.asarray(gt_spherical, dtype=np.float64)
    lap = laplace_loss(loc_out.r, loc_out.b, gt_s[..., 0])
    ang = angle_l1_loss(loc_out.theta, loc_out.phi, gt_s[..., 1], gt_s[..., 2])
    dirl = directional_loss(est_traj, gt_traj, include_last=include_last)
    total = T.add(T.add(lap, ang), T.mul(dirl, float(lambda_dir)))
    return LossBreakdown(lap, ang, dirl, total)


def laplace_optimum(ratio_error: float) -> tuple[float, float]:
    """Closed-form minimiser over b of e/b + log(2b): (b*, value)."""
    return ratio_error, 1.0 + math.log(2.0 * ratio_error)
