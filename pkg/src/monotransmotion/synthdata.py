"""Synthetic monocular pedestrian scenes and the line-delimited dataset format.

Each record follows one pedestrian for ``t_pred`` frames as seen from a
moving ego camera: a smoothed random-heading walk on the ground plane, a
17-joint COCO-ordered skeleton with a sinusoidal gait, pinhole projection,
Gaussian pixel noise and random joint dropout.  Pedestrians must stay in
the camera frustum and inside the range band for every frame; otherwise
the record is redrawn.

Every record draws from its own RNG stream keyed by (seed, scene, sample,
attempt), so generation order and parallelism do not change the output.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import geometry
from .geometry import CameraIntrinsics, N_JOINTS

FORMAT_VERSION = 1
HEADER_PREFIX = "#monotransmotion-dataset"

JOINT_NAMES = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)

# (forward, left, up) in metres for a 1.75 m adult, body frame at the feet
CANONICAL_SKELETON = np.array([
    [0.10, 0.00, 1.62],
    [0.08, 0.03, 1.66],
    [0.08, -0.03, 1.66],
    [0.00, 0.075, 1.63],
    [0.00, -0.075, 1.63],
    [0.00, 0.19, 1.45],
    [0.00, -0.19, 1.45],
    [0.00, 0.22, 1.16],
    [0.00, -0.22, 1.16],
    [0.02, 0.22, 0.88],
    [0.02, -0.22, 0.88],
    [0.00, 0.10, 0.95],
    [0.00, -0.10, 0.95],
    [0.02, 0.10, 0.52],
    [0.02, -0.10, 0.52],
    [0.00, 0.10, 0.08],
    [0.00, -0.10, 0.08],
])
REFERENCE_HEIGHT = 0.95  # hip centre, before height scaling

# forward swing per unit gait amplitude and the sign of the gait phase
_SWING = np.zeros(N_JOINTS)
_SWING[[13, 15]] = [0.5, 1.0]     # left knee, ankle
_SWING[[14, 16]] = [-0.5, -1.0]   # right leg in antiphase
_SWING[[7, 9]] = [-0.3, -0.6]     # arms counter-swing
_SWING[[8, 10]] = [0.3, 0.6]


class GenerationError(RuntimeError):
    pass


class DatasetParseError(ValueError):
    def __init__(self, line: int, field_name: str, msg: str):
        super().__init__(f"line {line}, field {field_name}: {msg}")
        self.line = line
        self.field = field_name


def default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=1260.0, fy=1260.0, cx=800.0, cy=450.0, width=1600.0, height=900.0)


@dataclass(frozen=True)
class GenParams:
    seed: int = 0
    count: int = 64
    t_pred: int = 10
    frame_interval: float = 0.5
    speed_range: tuple[float, float] = (0.5, 2.0)
    heading_change_std: float = 0.15
    heading_smoothing: float = 0.7
    ego_speed_range: tuple[float, float] = (0.0, 1.5)
    ego_yaw_rate_std: float = 0.03
    camera_height: float = 1.5
    pixel_noise: float = 1.5
    dropout: float = 0.05
    range_band: tuple[float, float] = (3.0, 30.0)
    height_scale_range: tuple[float, float] = (0.92, 1.08)
    gait_amplitude: float = 0.25
    stride_length: float = 1.4
    peds_per_scene: int = 4
    max_attempts: int = 200
    z_near: float = 0.1
    intrinsics: CameraIntrinsics = field(default_factory=default_intrinsics)
    skeleton: tuple = tuple(map(tuple, CANONICAL_SKELETON))

    def __post_init__(self):
        for name in ("speed_range", "ego_speed_range", "range_band", "height_scale_range"):
            lo, hi = getattr(self, name)
            if not (0 <= lo <= hi) or hi <= 0:
                raise ValueError(f"{name} must be a nonempty non-negative range, got {(lo, hi)}")
        if self.speed_range[0] <= 0 or self.range_band[0] <= 0:
            raise ValueError("speed and range lower bounds must be positive")
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError("dropout must be a probability")
        if self.pixel_noise < 0 or self.count < 1 or self.t_pred < 2 or self.peds_per_scene < 1:
            raise ValueError("invalid generator parameters")
        if len(self.skeleton) != N_JOINTS:
            raise ValueError(f"skeleton needs {N_JOINTS} joints")

    def with_overrides(self, **kw) -> "GenParams":
        known = {f.name for f in fields(self)}
        bad = set(kw) - known
        if bad:
            raise ValueError(f"unknown generator parameters {sorted(bad)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in kw.items()}
        return replace(self, **kw)


@dataclass
class SampleRecord:
    sample_id: int
    scene_id: int
    ped_id: int
    keypoints: np.ndarray        # [T, 17, 3] pixels + confidence
    ego: np.ndarray              # [T, 3] x, y, yaw
    intrinsics: CameraIntrinsics
    gt_spherical: np.ndarray     # [T, 3] r, theta, phi
    gt_traj: np.ndarray          # [T, 2] global BEV
    frame_interval: float = 0.5

    @property
    def length(self) -> int:
        return self.keypoints.shape[0]

    def normalized_keypoints(self) -> np.ndarray:
        return geometry.normalize_keypoints(self.keypoints, self.intrinsics)

    def validate(self) -> None:
        t = self.length
        if self.keypoints.shape != (t, N_JOINTS, 3):
            raise ValueError(f"keypoints must be [T, {N_JOINTS}, 3], got {self.keypoints.shape}")
        for name, arr, w in (("ego", self.ego, 3), ("gt_spherical", self.gt_spherical, 3),
                             ("gt_traj", self.gt_traj, 2)):
            if arr.shape != (t, w):
                raise ValueError(f"{name} must be [{t}, {w}], got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite values")
        if np.any(self.gt_spherical[:, 0] <= 0):
            raise ValueError("ground-truth range must be positive")
        conf = self.keypoints[..., 2]
        if np.any((conf < 0) | (conf > 1)):
            raise ValueError("confidence outside [0, 1]")
        recon = geometry.local_to_global(self.gt_spherical, self.ego)
        if np.max(np.abs(recon - self.gt_traj)) > 1e-6:
            raise ValueError("gt_spherical and gt_traj disagree under the ego poses")

    def equals(self, other: "SampleRecord") -> bool:
        return (self.sample_id == other.sample_id and self.scene_id == other.scene_id
                and self.ped_id == other.ped_id and self.intrinsics == other.intrinsics
                and self.frame_interval == other.frame_interval
                and all(np.array_equal(getattr(self, n), getattr(other, n))
                        for n in ("keypoints", "ego", "gt_spherical", "gt_traj")))


# -- simulation -------------------------------------------------------------
def simulate_ego(params: GenParams, scene_id: int) -> np.ndarray:
    rng = np.random.default_rng([params.seed, 0, scene_id])
    t, dt = params.t_pred, params.frame_interval
    pos = rng.uniform(-100.0, 100.0, size=2)
    yaw = rng.uniform(-np.pi, np.pi)
    speed = rng.uniform(*params.ego_speed_range)
    yaw_rate = rng.normal(0.0, params.ego_yaw_rate_std)
    ego = np.empty((t, 3))
    for k in range(t):
        ego[k] = pos[0], pos[1], geometry.wrap_angle(yaw)
        pos = pos + speed * dt * np.array([math.cos(yaw), math.sin(yaw)])
        yaw += yaw_rate
    return ego


def _body_joints(skeleton: np.ndarray, scale: float, phase: float, amplitude: float) -> np.ndarray:
    j = skeleton * scale
    j[:, 0] += amplitude * scale * _SWING * math.sin(phase)
    return j


def _simulate_pedestrian(params: GenParams, ego: np.ndarray, rng: np.random.Generator):
    """One attempt: returns (ground positions [T,2], 3D joints in camera frame
    [T,17,3], camera-frame reference points [T,3]) or None if rejected."""
    K = params.intrinsics
    t, dt = params.t_pred, params.frame_interval
    half_fov = math.atan2(K.width - K.cx, K.fx)
    r0 = rng.uniform(*params.range_band)
    az0 = rng.uniform(-0.8 * half_fov, 0.8 * half_fov)
    start_local = np.array([r0 * math.cos(az0), -r0 * math.sin(az0)])  # (forward, left)
    c, s = math.cos(ego[0, 2]), math.sin(ego[0, 2])
    pos = ego[0, :2] + np.array([c * start_local[0] - s * start_local[1], s * start_local[0] + c * start_local[1]])
    heading = rng.uniform(-np.pi, np.pi)
    speed = rng.uniform(*params.speed_range)
    scale = rng.uniform(*params.height_scale_range)
    phase = rng.uniform(0.0, 2 * np.pi)
    dphase = 2 * np.pi * speed / params.stride_length * dt
    turn = 0.0
    skeleton = np.asarray(params.skeleton, dtype=np.float64)
    ref_h = REFERENCE_HEIGHT * scale - params.camera_height

    positions = np.empty((t, 2))
    headings = np.empty(t)
    for k in range(t):
        positions[k] = pos
        headings[k] = heading
        turn = params.heading_smoothing * turn + rng.normal(0.0, params.heading_change_std)
        heading += turn
        pos = pos + speed * dt * np.array([math.cos(heading), math.sin(heading)])
    # body faces the direction of travel of the step it is taking
    joints_cam = np.empty((t, N_JOINTS, 3))
    refs = np.empty((t, 3))
    for k in range(t):
        body = _body_joints(skeleton, scale, phase + k * dphase, params.gait_amplitude)
        ch, sh = math.cos(headings[k]), math.sin(headings[k])
        gx = positions[k, 0] + ch * body[:, 0] - sh * body[:, 1]
        gy = positions[k, 1] + sh * body[:, 0] + ch * body[:, 1]
        fl = geometry.global_to_local(np.stack([gx, gy], axis=-1), ego[k])
        local3 = np.column_stack([fl, body[:, 2] - params.camera_height])
        joints_cam[k] = geometry.ego_local_to_camera(local3)
        ref_fl = np.asarray(geometry.global_to_local(positions[k], ego[k]))
        refs[k] = geometry.ego_local_to_camera(np.array([ref_fl[0], ref_fl[1], ref_h]))
    if np.any(joints_cam[..., 2] <= params.z_near):
        return None
    uv = geometry.project_point(joints_cam, K, params.z_near)
    if np.any(uv[..., 0] < 0) or np.any(uv[..., 0] >= K.width) or np.any(uv[..., 1] < 0) or np.any(uv[..., 1] >= K.height):
        return None
    r = np.linalg.norm(refs, axis=-1)
    if np.any(r < params.range_band[0]) or np.any(r > params.range_band[1]):
        return None
    return positions, joints_cam, refs


def generate_record(params: GenParams, sample_id: int, return_joints: bool = False):
    """Generate the record with the given id (deterministic in (seed, id))."""
    scene_id, ped_id = divmod(sample_id, params.peds_per_scene)
    ego = simulate_ego(params, scene_id)
    for attempt in range(params.max_attempts):
        rng = np.random.default_rng([params.seed, 1, sample_id, attempt])
        sim = _simulate_pedestrian(params, ego, rng)
        if sim is None:
            continue
        positions, joints_cam, refs = sim
        uv_clean = np.asarray(geometry.project_point(joints_cam, params.intrinsics, params.z_near))
        noise = rng.normal(0.0, 1.0, size=uv_clean.shape)
        drop = rng.uniform(size=uv_clean.shape[:2]) < params.dropout
        kp = np.empty(uv_clean.shape[:2] + (3,))
        kp[..., :2] = uv_clean + params.pixel_noise * noise
        kp[..., 2] = 1.0
        kp[drop] = 0.0
        gt_sph = np.asarray(geometry.cartesian_to_spherical(refs))
        gt_traj = np.asarray(geometry.local_to_global(gt_sph, ego))
        rec = SampleRecord(sample_id, scene_id, ped_id, kp, ego.copy(), params.intrinsics,
                           gt_sph, gt_traj, params.frame_interval)
        if return_joints:
            return rec, joints_cam, positions
        return rec
    raise GenerationError(f"sample {sample_id}: no valid pedestrian after {params.max_attempts} attempts; "
                          "check that the range band fits inside the camera frustum")


def _gen_one(args):
    params, i = args
    return generate_record(params, i)


def generate_dataset(params: GenParams, workers: int = 1) -> list[SampleRecord]:
    ids = range(params.count)
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            recs = list(ex.map(_gen_one, [(params, i) for i in ids], chunksize=16))
    else:
        recs = [generate_record(params, i) for i in ids]
    return sorted(recs, key=lambda r: r.sample_id)


# -- batching ---------------------------------------------------------------
@dataclass
class Batch:
    keypoints: np.ndarray     # [N, T, 17, 3] normalised
    ego: np.ndarray           # [N, T, 3]
    gt_spherical: np.ndarray  # [N, T, 3]
    gt_traj: np.ndarray       # [N, T, 2]
    sample_ids: np.ndarray

    def __len__(self) -> int:
        return self.keypoints.shape[0]

    def take(self, idx) -> "Batch":
        return Batch(self.keypoints[idx], self.ego[idx], self.gt_spherical[idx], self.gt_traj[idx],
                     self.sample_ids[idx])


def to_batch(records: list[SampleRecord]) -> Batch:
    return Batch(
        np.stack([r.normalized_keypoints() for r in records]),
        np.stack([r.ego for r in records]),
        np.stack([r.gt_spherical for r in records]),
        np.stack([r.gt_traj for r in records]),
        np.array([r.sample_id for r in records]),
    )


def split_by_scene(records: list[SampleRecord], seed: int = 0, val_fraction: float = 0.1):
    """Deterministic train/validation split keyed on a hash of the scene id."""
    import hashlib

    def bucket(scene: int) -> float:
        h = hashlib.sha256(f"{seed}:{scene}".encode()).digest()
        return int.from_bytes(h[:8], "little") / 2 ** 64

    train = [r for r in records if bucket(r.scene_id) >= val_fraction]
    val = [r for r in records if bucket(r.scene_id) < val_fraction]
    return train, val


# -- file format ------------------------------------------------------------
def field_names(t: int) -> list[str]:
    names = ["sample_id", "scene_id", "ped_id", "t", "frame_interval",
             "fx", "fy", "cx", "cy", "width", "height"]
    names += [f"ego[{k}].{c}" for k in range(t) for c in ("x", "y", "yaw")]
    names += [f"gt_sph[{k}].{c}" for k in range(t) for c in ("r", "theta", "phi")]
    names += [f"gt_bev[{k}].{c}" for k in range(t) for c in ("x", "y")]
    names += [f"kp[{k}][{j}].{c}" for k in range(t) for j in range(N_JOINTS) for c in ("u", "v", "conf")]
    return names


def header_line() -> str:
    return (f"{HEADER_PREFIX} v{FORMAT_VERSION} joints={N_JOINTS} "
            "fields=sample_id,scene_id,ped_id,t,frame_interval,fx,fy,cx,cy,width,height,"
            "ego[t](x,y,yaw),gt_sph[t](r,theta,phi),gt_bev[t](x,y),kp[t][17](u,v,conf)")


def _g(x: float) -> str:
    return format(float(x), ".17g")


def format_record(rec: SampleRecord) -> str:
    K = rec.intrinsics
    parts = [str(rec.sample_id), str(rec.scene_id), str(rec.ped_id), str(rec.length), _g(rec.frame_interval),
             _g(K.fx), _g(K.fy), _g(K.cx), _g(K.cy), _g(K.width), _g(K.height)]
    for arr in (rec.ego, rec.gt_spherical, rec.gt_traj, rec.keypoints):
        parts.extend(_g(v) for v in arr.ravel())
    return " ".join(parts)


def parse_record(line: str, lineno: int = 1) -> SampleRecord:
    tokens = line.split()
    if len(tokens) < 4:
        raise DatasetParseError(lineno, field_names(0)[len(tokens)] if len(tokens) < 11 else "?", "record truncated")

    def as_int(i, name):
        try:
            return int(tokens[i])
        except ValueError:
            raise DatasetParseError(lineno, name, f"expected integer, got {tokens[i]!r}") from None

    t = as_int(3, "t")
    if t < 1:
        raise DatasetParseError(lineno, "t", f"sequence length must be positive, got {t}")
    names = field_names(t)
    if len(tokens) < len(names):
        raise DatasetParseError(lineno, names[len(tokens)], f"record truncated ({len(tokens)} of {len(names)} fields)")
    if len(tokens) > len(names):
        raise DatasetParseError(lineno, f"#{len(names)}", f"unexpected extra fields ({len(tokens)} > {len(names)})")
    vals = np.empty(len(names) - 4)
    for i in range(4, len(names)):
        try:
            vals[i - 4] = float(tokens[i])
        except ValueError:
            raise DatasetParseError(lineno, names[i], f"expected float, got {tokens[i]!r}") from None
    if not np.all(np.isfinite(vals)):
        bad = 4 + int(np.argmin(np.isfinite(vals)))
        raise DatasetParseError(lineno, names[bad], "non-finite value")
    frame_interval = vals[0]
    try:
        K = CameraIntrinsics(*vals[1:7])
    except ValueError as exc:
        raise DatasetParseError(lineno, "fx", str(exc)) from None
    o = 7
    ego = vals[o:o + 3 * t].reshape(t, 3); o += 3 * t
    sph = vals[o:o + 3 * t].reshape(t, 3); o += 3 * t
    bev = vals[o:o + 2 * t].reshape(t, 2); o += 2 * t
    kp = vals[o:].reshape(t, N_JOINTS, 3)
    rec = SampleRecord(as_int(0, "sample_id"), as_int(1, "scene_id"), as_int(2, "ped_id"),
                       kp.copy(), ego.copy(), K, sph.copy(), bev.copy(), float(frame_interval))
    try:
        rec.validate()
    except ValueError as exc:
        raise DatasetParseError(lineno, "record", str(exc)) from None
    return rec


def write_dataset(records: list[SampleRecord], path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(header_line() + "\n")
        for rec in records:
            fh.write(format_record(rec) + "\n")


def read_dataset(path) -> list[SampleRecord]:
    lines = Path(path).read_text(encoding="ascii").split("\n")
    if not lines or not lines[0].startswith(HEADER_PREFIX):
        raise DatasetParseError(1, "header", f"missing '{HEADER_PREFIX}' header")
    version = lines[0].split()[1] if len(lines[0].split()) > 1 else ""
    if version != f"v{FORMAT_VERSION}":
        raise DatasetParseError(1, "header", f"unsupported format version {version!r}")
    out = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        out.append(parse_record(line, i))
    return out
