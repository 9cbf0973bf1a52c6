"""Localization networks, the trajectory predictor and end-to-end inference.

Parameters live in a single :class:`ParameterStore`; localization
parameters are prefixed ``loc.`` and predictor parameters ``pred.`` so a
training stage can freeze one module by name.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import geometry
from .diffnet import nn
from .diffnet import tensor as T
from .diffnet.tensor import DimensionError, Value, as_value

LOC_VARIANTS = ("mt", "tf_monoloco", "mlp_monoloco")
R_OFFSET = 0.1


class ModelConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    t_obs: int = 4
    t_pred: int = 10
    frame_interval: float = 0.5
    d_model: int = 64
    n_heads: int = 4
    n_layers_loc: int = 3
    n_layers_pred: int = 3
    mlp_hidden: int = 128
    loc_variant: str = "mt"
    lambda_dir: float = 1.0
    dir_include_last: bool = False
    b_min: float = 1e-3
    range_prior: float | None = 12.0
    joint_traj_weight: float = 1.0
    prefix_supervision: bool = True
    predictor_input: str = "observation"
    lr: float = 1e-3
    lr_schedule: str = "constant"
    lr_final_factor: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if not 2 <= self.t_obs < self.t_pred:
            raise ModelConfigError(f"need 2 <= t_obs < t_pred, got {self.t_obs}, {self.t_pred}")
        if self.lambda_dir < 0:
            raise ModelConfigError("lambda_dir must be non-negative")
        if self.b_min <= 0:
            raise ModelConfigError("b_min must be positive")
        if self.d_model % self.n_heads:
            raise nn.ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ModelConfigError(f"unknown lr schedule {self.lr_schedule!r}")
        if self.predictor_input not in ("observation", "full"):
            raise ModelConfigError(f"predictor_input must be 'observation' or 'full', got {self.predictor_input!r}")
        if self.loc_variant not in LOC_VARIANTS:
            raise ModelConfigError(f"unknown localization variant {self.loc_variant!r}")

    @property
    def horizon(self) -> int:
        return self.t_pred - self.t_obs

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ModelConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class LocalizationOutput:
    """Per-step range, azimuth, elevation and Laplace scale, each [..., T]."""

    r: Value
    theta: Value
    phi: Value
    b: Value

    def __len__(self) -> int:
        return self.r.shape[-1]

    def spherical(self) -> np.ndarray:
        return np.stack([self.r.data, self.theta.data, self.phi.data], axis=-1)

    def to_points(self) -> list[geometry.UncertainSpherical]:
        if self.r.ndim != 1:
            raise DimensionError("to_points() needs an unbatched output")
        return [geometry.UncertainSpherical(geometry.SphericalPoint(float(r), float(t), float(p)), float(b))
                for r, t, p, b in zip(self.r.data, self.theta.data, self.phi.data, self.b.data)]


# -- parameters -------------------------------------------------------------
def init_localizer(store: nn.ParameterStore, cfg: ModelConfig, rng: np.random.Generator,
                   variant: str | None = None) -> None:
    variant = variant or cfg.loc_variant
    d, h = cfg.d_model, cfg.mlp_hidden
    n_in = 3 * geometry.N_JOINTS
    if variant == "mt":
        nn.init_mlp(store, "loc.embed", [n_in, h, d], rng)
        nn.init_encoder(store, "loc.enc", d, cfg.n_layers_loc, cfg.t_pred, 2 * d, rng)
        nn.init_mlp(store, "loc.head", [d, h, 4], rng)
    elif variant == "tf_monoloco":
        nn.init_mlp(store, "loc.embed", [3, h, d], rng)
        nn.init_encoder(store, "loc.enc", d, cfg.n_layers_loc, geometry.N_JOINTS, 2 * d, rng)
        nn.init_mlp(store, "loc.head", [d, h, 4], rng)
    elif variant == "mlp_monoloco":
        nn.init_mlp(store, "loc.head", [n_in, h, h, h, 4], rng)
    else:
        raise ModelConfigError(f"unknown localization variant {variant!r}")
    if cfg.range_prior is not None:
        last = max(int(n.split(".")[2]) for n in store.names("loc.head."))
        # start the range output at a typical pedestrian distance
        store[f"loc.head.{last}.b"].data[0] = np.log(np.expm1(cfg.range_prior - R_OFFSET))


def init_predictor(store: nn.ParameterStore, cfg: ModelConfig, rng: np.random.Generator) -> None:
    d, h = cfg.d_model, cfg.mlp_hidden
    nn.init_mlp(store, "pred.embed", [2, h, d], rng)
    nn.init_encoder(store, "pred.enc", d, cfg.n_layers_pred, cfg.t_obs, 2 * d, rng)
    nn.init_mlp(store, "pred.head", [d, h, 2 * cfg.horizon], rng)


def init_params(cfg: ModelConfig, seed: int | None = None) -> nn.ParameterStore:
    """Fresh localizer + predictor parameters; seeded per module so that the
    localizer initialisation does not depend on the predictor's shape."""
    seed = cfg.seed if seed is None else seed
    store = nn.ParameterStore()
    init_localizer(store, cfg, np.random.default_rng([seed, 1]))
    init_predictor(store, cfg, np.random.default_rng([seed, 2]))
    return store


# -- localization -----------------------------------------------------------
def spherical_head(raw: Value, b_min: float) -> LocalizationOutput:
    """Map raw head outputs [..., 4] to bounded (r, theta, phi, b)."""
    r = T.add(T.softplus(raw[..., 0]), R_OFFSET)
    theta = T.atan(raw[..., 1])
    phi = T.atan(raw[..., 2])
    b = T.add(T.softplus(raw[..., 3]), b_min)
    return LocalizationOutput(r, theta, phi, b)


def _check_keypoints(kp: Value) -> None:
    if kp.shape[-2:] != (geometry.N_JOINTS, 3):
        raise DimensionError(f"expected keypoints [..., {geometry.N_JOINTS}, 3], got {kp.shape}")


def loc_net_forward(kp, cfg: ModelConfig, store: nn.ParameterStore) -> LocalizationOutput:
    """Sequential localizer on normalised keypoints [..., T, 17, 3]."""
    kp = as_value(kp)
    _check_keypoints(kp)
    n_t = kp.shape[-3]
    if n_t < 2:
        raise DimensionError(f"pose sequence needs at least 2 frames, got {n_t}")
    flat = T.reshape(kp, kp.shape[:-2] + (3 * geometry.N_JOINTS,))
    tokens = nn.mlp_forward(flat, store, "loc.embed")
    h = nn.encoder_forward(tokens, store, "loc.enc", cfg.n_layers_loc, cfg.n_heads)
    return spherical_head(nn.mlp_forward(h, store, "loc.head"), cfg.b_min)


def loc_net_single_forward(kp, variant: str, cfg: ModelConfig, store: nn.ParameterStore) -> LocalizationOutput:
    """Single-frame localizers on keypoints [..., 17, 3]; extra leading axes
    (e.g. time) are treated as independent frames."""
    kp = as_value(kp)
    _check_keypoints(kp)
    if variant == "mlp_monoloco":
        flat = T.reshape(kp, kp.shape[:-2] + (3 * geometry.N_JOINTS,))
        raw = nn.mlp_forward(flat, store, "loc.head")
    elif variant == "tf_monoloco":
        tokens = nn.mlp_forward(kp, store, "loc.embed")
        h = nn.encoder_forward(tokens, store, "loc.enc", cfg.n_layers_loc, cfg.n_heads)
        raw = nn.mlp_forward(T.mean(h, axis=-2), store, "loc.head")
    else:
        raise ModelConfigError(f"{variant!r} is not a single-frame variant")
    return spherical_head(raw, cfg.b_min)


def localize(kp, cfg: ModelConfig, store: nn.ParameterStore) -> LocalizationOutput:
    """Dispatch on ``cfg.loc_variant`` for a sequence [..., T, 17, 3]."""
    if cfg.loc_variant == "mt":
        return loc_net_forward(kp, cfg, store)
    return loc_net_single_forward(kp, cfg.loc_variant, cfg, store)


def localize_trajectory(loc_out: LocalizationOutput, ego) -> Value:
    """Project per-step spherical estimates to global BEV points [..., T, 2]
    using ego poses [..., T, 3] of (x, y, yaw)."""
    ego = np.asarray(ego, dtype=np.float64)
    if ego.shape[-1] != 3 or ego.shape[:-1] != loc_out.r.shape:
        raise DimensionError(f"ego poses {ego.shape} do not match localization output {loc_out.r.shape}")
    ground = T.mul(loc_out.r, T.cos(loc_out.phi))
    fwd = T.mul(ground, T.cos(loc_out.theta))
    left = T.mul(T.mul(ground, T.sin(loc_out.theta)), -1.0)
    c, s = np.cos(ego[..., 2]), np.sin(ego[..., 2])
    x = T.add(T.sub(T.mul(fwd, c), T.mul(left, s)), ego[..., 0])
    y = T.add(T.add(T.mul(fwd, s), T.mul(left, c)), ego[..., 1])
    return T.stack([x, y], axis=-1)


# -- prediction -------------------------------------------------------------
def traj_predictor_forward(obs, cfg: ModelConfig, store: nn.ParameterStore) -> Value:
    """Observed BEV trajectory [..., T_obs, 2] -> future [..., T_pred - T_obs, 2].

    Points are embedded relative to the last observation; the head emits
    per-step displacements that are accumulated from that point.
    """
    obs = as_value(obs)
    if obs.ndim < 2 or obs.shape[-2:] != (cfg.t_obs, 2):
        raise DimensionError(f"expected observed trajectory [..., {cfg.t_obs}, 2], got {obs.shape}")
    last = obs[..., cfg.t_obs - 1:cfg.t_obs, :]
    rel = T.sub(obs, last)
    tokens = nn.mlp_forward(rel, store, "pred.embed")
    h = nn.encoder_forward(tokens, store, "pred.enc", cfg.n_layers_pred, cfg.n_heads)
    out = nn.mlp_forward(h[..., cfg.t_obs - 1, :], store, "pred.head")
    steps = T.reshape(out, out.shape[:-1] + (cfg.horizon, 2))
    cum = np.tril(np.ones((cfg.horizon, cfg.horizon)))
    return T.add(T.matmul(cum, steps), last)


def mt_infer(kp, ego, cfg: ModelConfig, store: nn.ParameterStore) -> tuple[np.ndarray, np.ndarray]:
    """Normalised keypoints over the observation window -> (estimated observed
    trajectory [..., T_obs, 2], predicted future [..., T_pred - T_obs, 2])."""
    kp = np.asarray(kp, dtype=np.float64)
    if kp.shape[-3] != cfg.t_obs:
        raise DimensionError(f"inference expects exactly {cfg.t_obs} frames, got {kp.shape[-3]}")
    loc = localize(kp, cfg, store)
    obs = localize_trajectory(loc, np.asarray(ego)[..., :cfg.t_obs, :])
    pred = traj_predictor_forward(obs.data, cfg, store)
    return obs.data, pred.data


def inference_latency_frames(cfg: ModelConfig) -> int:
    """Frames consumed by one inference call (used for per-frame timing)."""
    return cfg.t_obs


def param_count(store: nn.ParameterStore, prefix: str = "") -> int:
    return sum(int(math.prod(store[n].shape)) for n in store.names(prefix))
