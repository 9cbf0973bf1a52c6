"""Camera-frame and ground-plane geometry.

Conventions used throughout the package:

* camera frame: ``z`` forward, ``x`` right, ``y`` down;
* azimuth ``theta`` is the angle of ``(x, z)`` measured from ``+z`` towards
  ``+x``, elevation ``phi`` is positive above the horizontal plane (``y < 0``);
* the camera is rigidly aligned with the ego frame, so camera ``+z`` is the
  ego heading and camera ``+x`` is the ego's right;
* ego-local ground-plane vectors are ``(forward, left)``; the global frame is
  an absolute world frame, ``yaw`` counter-clockwise from global ``+x``.

Functions accept scalars or numpy arrays with the coordinate on the last
axis and are vectorised over the leading axes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

N_JOINTS = 17


class GeometryDomainError(ValueError):
    pass


class ProjectionError(ValueError):
    pass


def wrap_angle(a):
    """Map angles into (-pi, pi]."""
    a = np.asarray(a, dtype=np.float64)
    out = a - 2.0 * np.pi * np.ceil((a - np.pi) / (2.0 * np.pi))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: float
    height: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryDomainError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise GeometryDomainError("principal point must lie inside the image")


@dataclass(frozen=True)
class SphericalPoint:
    r: float
    theta: float
    phi: float

    def __post_init__(self):
        if not self.r > 0:
            raise GeometryDomainError(f"range must be positive, got {self.r}")
        if not (-math.pi < self.theta <= math.pi):
            raise GeometryDomainError(f"azimuth {self.theta} outside (-pi, pi]")
        if not (-math.pi / 2 <= self.phi <= math.pi / 2):
            raise GeometryDomainError(f"elevation {self.phi} outside [-pi/2, pi/2]")

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.theta, self.phi])


@dataclass(frozen=True)
class UncertainSpherical:
    point: SphericalPoint
    b: float

    def check(self, b_min: float = 1e-3) -> None:
        if self.b < b_min:
            raise GeometryDomainError(f"Laplace scale {self.b} below floor {b_min}")


@dataclass(frozen=True)
class EgoPose:
    x: float
    y: float
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.yaw])


@dataclass(frozen=True)
class BevPoint:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise GeometryDomainError("BEV point must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])


def _arr(p) -> np.ndarray:
    if isinstance(p, (SphericalPoint, EgoPose, BevPoint)):
        return p.as_array()
    return np.asarray(p, dtype=np.float64)


def _out(a: np.ndarray):
    return tuple(float(v) for v in a) if a.ndim == 1 else a


def cartesian_to_spherical(p):
    """Camera-frame point(s) [..., 3] -> (r, theta, phi)."""
    p = _arr(p)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    r = np.sqrt(x * x + y * y + z * z)
    if np.any(r <= 0):
        raise GeometryDomainError("cannot convert the zero vector to spherical coordinates")
    theta = np.arctan2(x, z)
    theta = np.where(theta <= -np.pi, np.pi, theta)
    phi = np.arcsin(np.clip(-y / r, -1.0, 1.0))
    return _out(np.stack([r, theta, phi], axis=-1))


def spherical_to_cartesian(s):
    """(r, theta, phi) [..., 3] -> camera-frame point(s)."""
    s = _arr(s)
    r, theta, phi = s[..., 0], s[..., 1], s[..., 2]
    c = r * np.cos(phi)
    return _out(np.stack([c * np.sin(theta), -r * np.sin(phi), c * np.cos(theta)], axis=-1))


def spherical_to_ground(s):
    """Ground-plane ego-local (forward, left) components of a spherical point."""
    s = _arr(s)
    r, theta, phi = s[..., 0], s[..., 1], s[..., 2]
    c = r * np.cos(phi)
    return _out(np.stack([c * np.cos(theta), -c * np.sin(theta)], axis=-1))


def local_to_global(s, ego):
    """Spherical camera-local point(s) + ego pose(s) [..., 3] -> global BEV (x, y)."""
    fl = np.asarray(spherical_to_ground(s), dtype=np.float64)
    e = _arr(ego)
    cy, sy = np.cos(e[..., 2]), np.sin(e[..., 2])
    f, l = fl[..., 0], fl[..., 1]
    return _out(np.stack([e[..., 0] + cy * f - sy * l, e[..., 1] + sy * f + cy * l], axis=-1))


def global_to_local(p, ego):
    """Global BEV point(s) -> ego-local ground-plane (forward, left)."""
    p = _arr(p)
    e = _arr(ego)
    dx, dy = p[..., 0] - e[..., 0], p[..., 1] - e[..., 1]
    cy, sy = np.cos(e[..., 2]), np.sin(e[..., 2])
    return _out(np.stack([cy * dx + sy * dy, -sy * dx + cy * dy], axis=-1))


def ego_local_to_camera(p_ego):
    """Ego-local 3D (forward, left, up) relative to the camera centre -> camera frame."""
    p = _arr(p_ego)
    return np.stack([-p[..., 1], -p[..., 2], p[..., 0]], axis=-1)


def project_point(p, K: CameraIntrinsics, z_near: float = 0.1):
    """Pinhole projection of camera-frame point(s) to pixels (u, v)."""
    p = _arr(p)
    z = p[..., 2]
    if np.any(z <= z_near):
        raise ProjectionError(f"point behind the near plane (z <= {z_near})")
    u = K.fx * p[..., 0] / z + K.cx
    v = K.fy * p[..., 1] / z + K.cy
    return _out(np.stack([u, v], axis=-1))


def normalize_keypoints(kp, K: CameraIntrinsics) -> np.ndarray:
    """Keypoints [..., 17, 3] of (u, v, confidence) -> intrinsic-normalised
    rays ((u - cx)/fx, (v - cy)/fy, confidence); missing joints become zeros."""
    kp = np.asarray(kp, dtype=np.float64)
    out = np.empty_like(kp)
    out[..., 0] = (kp[..., 0] - K.cx) / K.fx
    out[..., 1] = (kp[..., 1] - K.cy) / K.fy
    out[..., 2] = kp[..., 2]
    out[kp[..., 2] <= 0] = 0.0
    return out
