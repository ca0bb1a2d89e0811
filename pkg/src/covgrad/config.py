"""Run configuration: flat sectioned key = value files with a JSON mirror.

A configuration bundles the vehicle model parameters, the initial belief,
the loss choice, the planner settings, the simulation settings, and the
output destination. Every field is validated before any computation starts
and problems are reported with their section.key names.
"""

import configparser
import json
import os
from dataclasses import dataclass, field, fields

import numpy as np

from .ekf import BeliefState
from .errors import ConfigError
from .losses import LossKind, LossSpec
from .models import BicycleModel, BicycleParams
from .planner import CorridorSpec, OptimizerOptions, PlanProblem

SEED_ENV_VAR = "COVGRAD_SEED"


@dataclass
class ModelConfig:
    wheelbase: float = 4.0
    dt: float = 1.0
    speed_noise_std: float = 0.1
    steer_noise_std: float = np.pi / 180.0
    gps_noise_std: float = 1.0
    mu_min: float = 0.0
    mu_max: float = 5.0
    nu_max: float = 30.0 * np.pi / 180.0
    dmu_max: float = 1.0
    dnu_max: float = 15.0 * np.pi / 180.0
    theta0: float = 0.0
    px0: float = 0.0
    py0: float = 0.0
    lever_x0: float = 0.0
    lever_y0: float = 0.0
    true_lever_x: float = 1.0
    true_lever_y: float = 0.0
    p0_heading_std: float = 5.0 * np.pi / 180.0
    p0_position_std: float = 10.0
    p0_lever_std: float = 1.0


@dataclass
class LossConfig:
    kind: str = "normalized_trace"
    schatten_power: float = 20.0


@dataclass
class PlannerConfig:
    horizon: int = 150
    max_iters: int = 150
    tol: float = 1e-6
    patience: int = 3
    alpha0: float = 1.0
    armijo_c1: float = 1e-4
    max_halvings: int = 30
    seed: int = 0
    corridor: float = 0.0
    corridor_weight: float = 10.0


@dataclass
class SimulateConfig:
    trials: int = 200
    base_seed: int = 1000
    workers: int = 1
    # World-noise overrides for the simulated truth; negative means "use the
    # model's value". Setting these to zero runs noise-free trials while the
    # filter keeps its nominal noise model.
    speed_noise_std: float = -1.0
    steer_noise_std: float = -1.0
    gps_noise_std: float = -1.0


@dataclass
class OutputConfig:
    directory: str = "results"
    formats: str = "csv,json"


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    output: OutputConfig = field(default_factory=OutputConfig)


_SECTIONS = {
    "model": ModelConfig,
    "loss": LossConfig,
    "planner": PlannerConfig,
    "simulate": SimulateConfig,
    "output": OutputConfig,
}


def _coerce(section, key, raw, target_type):
    try:
        if target_type is int:
            return int(str(raw).strip())
        if target_type is float:
            return float(str(raw).strip())
        return str(raw).strip()
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} as {target_type.__name__}") from exc


def _apply(cfg, section_name, items):
    section_cls = _SECTIONS.get(section_name)
    if section_cls is None:
        raise ConfigError(f"unknown section [{section_name}]")
    target = getattr(cfg, section_name)
    known = {f.name: f.type for f in fields(section_cls)}
    types = {f.name: type(getattr(target, f.name)) for f in fields(section_cls)}
    for key, raw in items:
        if key not in known:
            raise ConfigError(f"{section_name}.{key}: unknown key")
        setattr(target, key, _coerce(section_name, key, raw, types[key]))


def load_config(path):
    """Parse a sectioned key = value file into a validated RunConfig."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh, source=path)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    cfg = RunConfig()
    for section_name in parser.sections():
        _apply(cfg, section_name, parser.items(section_name))
    validate_config(cfg)
    return cfg


def load_json_config(path):
    """Parse the JSON mirror: an object of section objects."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config parse error at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError("top-level JSON value must be an object of sections")
    cfg = RunConfig()
    for section_name, section in data.items():
        if not isinstance(section, dict):
            raise ConfigError(f"section {section_name} must be an object")
        _apply(cfg, section_name, section.items())
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    problems = []
    m = cfg.model
    if m.wheelbase <= 0:
        problems.append("model.wheelbase: must be positive")
    if m.dt <= 0:
        problems.append("model.dt: must be positive")
    for key in ("speed_noise_std", "steer_noise_std", "gps_noise_std"):
        if getattr(m, key) < 0:
            problems.append(f"model.{key}: must be nonnegative")
    for key in ("p0_heading_std", "p0_position_std", "p0_lever_std"):
        if getattr(m, key) <= 0:
            problems.append(f"model.{key}: must be positive")
    if not m.mu_min < m.mu_max:
        problems.append("model.mu_min: must be below mu_max")
    if m.nu_max <= 0 or m.nu_max >= np.pi / 2:
        problems.append("model.nu_max: must lie in (0, pi/2)")
    if m.dmu_max <= 0 or m.dnu_max <= 0:
        problems.append("model.dmu_max/dnu_max: must be positive")

    if cfg.loss.kind not in [k.value for k in LossKind]:
        problems.append(f"loss.kind: unknown kind {cfg.loss.kind!r}")
    if cfg.loss.kind == LossKind.SCHATTEN.value and cfg.loss.schatten_power < 2:
        problems.append("loss.schatten_power: must be at least 2")

    p = cfg.planner
    if p.horizon < 1:
        problems.append("planner.horizon: must be at least 1")
    if p.max_iters < 0:
        problems.append("planner.max_iters: must be nonnegative")
    if p.tol <= 0:
        problems.append("planner.tol: must be positive")
    if p.corridor < 0:
        problems.append("planner.corridor: must be nonnegative (0 disables)")
    if cfg.simulate.trials < 1:
        problems.append("simulate.trials: must be at least 1")
    if problems:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))
    return cfg


def apply_seed_overrides(cfg, cli_seed=None):
    """Seed precedence: command-line flag, then environment, then config."""
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            env_seed = int(env)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env!r}") from exc
        cfg.planner.seed = env_seed
        cfg.simulate.base_seed = env_seed
    if cli_seed is not None:
        cfg.planner.seed = cli_seed
        cfg.simulate.base_seed = cli_seed
    return cfg


def build_bicycle_model(cfg):
    m = cfg.model
    params = BicycleParams(
        wheelbase=m.wheelbase,
        dt=m.dt,
        Q=np.diag([m.speed_noise_std, m.steer_noise_std]) ** 2,
        R=np.eye(2) * m.gps_noise_std**2,
        u_min=np.array([m.mu_min, -m.nu_max]),
        u_max=np.array([m.mu_max, m.nu_max]),
        du_max=np.array([m.dmu_max, m.dnu_max]),
    )
    return BicycleModel(params)


def build_initial_belief(cfg):
    m = cfg.model
    x0 = np.array([m.theta0, m.px0, m.py0, m.lever_x0, m.lever_y0])
    P0 = np.diag(
        [
            m.p0_heading_std**2,
            m.p0_position_std**2,
            m.p0_position_std**2,
            m.p0_lever_std**2,
            m.p0_lever_std**2,
        ]
    )
    return BeliefState(x_hat=x0, P=P0)


def build_loss_spec(cfg, initial):
    kind = LossKind(cfg.loss.kind)
    if kind == LossKind.TRACE:
        return LossSpec.trace()
    if kind == LossKind.NORMALIZED_TRACE:
        return LossSpec.normalized_trace(initial.P)
    return LossSpec.schatten(cfg.loss.schatten_power)


def true_initial_state(cfg):
    m = cfg.model
    return np.array([m.theta0, m.px0, m.py0, m.true_lever_x, m.true_lever_y])


def build_sim_model(cfg):
    """Model used for the simulated world; None when identical to the filter's."""
    s = cfg.simulate
    if s.speed_noise_std < 0 and s.steer_noise_std < 0 and s.gps_noise_std < 0:
        return None
    m = cfg.model
    speed = s.speed_noise_std if s.speed_noise_std >= 0 else m.speed_noise_std
    steer = s.steer_noise_std if s.steer_noise_std >= 0 else m.steer_noise_std
    gps = s.gps_noise_std if s.gps_noise_std >= 0 else m.gps_noise_std
    params = BicycleParams(
        wheelbase=m.wheelbase,
        dt=m.dt,
        Q=np.diag([speed, steer]) ** 2,
        R=np.eye(2) * gps**2,
        u_min=np.array([m.mu_min, -m.nu_max]),
        u_max=np.array([m.mu_max, m.nu_max]),
        du_max=np.array([m.dmu_max, m.dnu_max]),
    )
    return BicycleModel(params)


def build_plan_problem(cfg):
    model = build_bicycle_model(cfg)
    initial = build_initial_belief(cfg)
    loss = build_loss_spec(cfg, initial)
    loss.validate(model.state_dim)
    p = cfg.planner
    corridor = None
    if p.corridor > 0:
        corridor = CorridorSpec(max_deviation=p.corridor, weight=p.corridor_weight)
    options = OptimizerOptions(
        max_iters=p.max_iters,
        tol=p.tol,
        patience=p.patience,
        alpha0=p.alpha0,
        armijo_c1=p.armijo_c1,
        max_halvings=p.max_halvings,
    )
    return PlanProblem.from_bicycle(
        model, initial, loss, p.horizon, corridor=corridor, options=options
    )
