"""Run configuration: sectioned INI files mapped onto frozen dataclasses.

Every numeric default of the closed loop lives here. Unknown sections or
keys are rejected so that typos fail loudly in ``validate``.
"""

import configparser
import dataclasses
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .trajectories import KINDS

VARIANTS = ("CLBFET", "FL-QP-MPC", "LB-FL-MPC", "LB-FL-QP", "ROBUST")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunSection:
    variant: str = "CLBFET"
    trajectory: str = "lemniscate"
    seed: int = 0
    duration: float = 35.0
    dt: float = 0.01
    noise_seed: int = 1000


@dataclass(frozen=True)
class PlantSection:
    mass: float = 1.0
    gravity: float = 9.81
    noise_std: float = 0.01


@dataclass(frozen=True)
class WindSection:
    constant: bool = True
    turbulence: bool = True
    gust: bool = True
    c_mag_min: float = 3.0
    c_mag_max: float = 10.0
    planar: bool = True
    altitude: float = 10.0
    w20: float = 7.72
    airspeed: float = 5.0
    n_modes: int = 64
    max_freq: float = 100.0
    clip_sigmas: float = 6.0
    gust_start_min: float = 5.0
    gust_start_max: float = 30.0
    gust_duration_min: float = 1.0
    gust_duration_max: float = 3.0
    gust_amp_min: float = 2.0
    gust_amp_max: float = 5.0


@dataclass(frozen=True)
class GpSection:
    capacity: int = 60
    sigma_f: float = 1.0
    length_scale: float = 5.0
    noise_var: float = 1.0
    hyperopt_iters: int = 3
    hyperopt_tol: float = 1e-5
    beta_mode: str = "fixed"
    beta: float = 1.0
    varsigma: float = 0.05
    rkhs_bound: float = 1.0


@dataclass(frozen=True)
class ControllerSection:
    kp: float = 1.0
    kd: float = 1.0
    q_lyap: float = 1.0
    epsilon: float = 100.0
    p1: float = 1e8
    p2: float = 1e12
    u_max: float = 30.0
    gamma: float = 0.08
    gamma_p: float = 5.0
    delta_max: float = 10.0


@dataclass(frozen=True)
class MpcSection:
    horizon: int = 20
    dt: float = 0.1
    q_pos: float = 10.0
    q_vel: float = 0.5
    r: float = 0.5
    input_box: float = 30.0


@dataclass(frozen=True)
class TriggerSection:
    policy: str = "event"
    interval: int = 1
    min_gap: int = 5
    tol: float = 0.0


@dataclass(frozen=True)
class ObstacleSection:
    enabled: bool = True
    times: tuple = (10.0, 19.0, 28.0)
    radius: float = 1.0


@dataclass(frozen=True)
class QpSection:
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    max_iter: int = 4000


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    plant: PlantSection = field(default_factory=PlantSection)
    wind: WindSection = field(default_factory=WindSection)
    gp: GpSection = field(default_factory=GpSection)
    controller: ControllerSection = field(default_factory=ControllerSection)
    mpc: MpcSection = field(default_factory=MpcSection)
    trigger: TriggerSection = field(default_factory=TriggerSection)
    obstacles: ObstacleSection = field(default_factory=ObstacleSection)
    qp: QpSection = field(default_factory=QpSection)

    @property
    def n_ticks(self):
        return int(round(self.run.duration / self.run.dt))

    def with_run(self, **kw):
        return replace(self, run=replace(self.run, **kw))

    def with_section(self, name, **kw):
        return replace(self, **{name: replace(getattr(self, name), **kw)})


def _parse(raw, kind, where):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is tuple:
            return tuple(float(s) for s in raw.split(",") if s.strip())
        return kind(raw.strip())
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind.__name__}") from None


def _kind(default):
    return type(default) if not isinstance(default, tuple) else tuple


def load_config(path):
    """Read an INI file; missing keys keep their defaults."""
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_parser(cp)


def from_parser(cp):
    base = RunConfig()
    sections = {}
    names = {f.name for f in fields(RunConfig)}
    for sec in cp.sections():
        if sec not in names:
            raise ConfigError(f"unknown section [{sec}]")
    for f in fields(RunConfig):
        cur = getattr(base, f.name)
        if not cp.has_section(f.name):
            sections[f.name] = cur
            continue
        known = {g.name: getattr(cur, g.name) for g in fields(cur)}
        kw = {}
        for key, raw in cp.items(f.name):
            if key not in known:
                raise ConfigError(f"unknown key {f.name}.{key}")
            kw[key] = _parse(raw, _kind(known[key]), f"{f.name}.{key}")
        sections[f.name] = replace(cur, **kw)
    cfg = RunConfig(**sections)
    validate(cfg)
    return cfg


def to_ini(cfg):
    """Serialize back to INI text; ``load_config`` of the output reproduces ``cfg``."""
    lines = []
    for f in fields(cfg):
        sec = getattr(cfg, f.name)
        lines.append(f"[{f.name}]")
        for g in fields(sec):
            v = getattr(sec, g.name)
            if isinstance(v, tuple):
                v = ", ".join(repr(float(a)) for a in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{g.name} = {v}")
        lines.append("")
    return "\n".join(lines)


def validate(cfg):
    """Raise ConfigError on any inconsistent value; returns the config otherwise."""
    r = cfg.run
    errs = []
    if r.variant not in VARIANTS:
        errs.append(f"run.variant must be one of {VARIANTS}")
    if r.trajectory not in KINDS:
        errs.append(f"run.trajectory must be one of {KINDS}")
    if r.dt <= 0 or r.duration <= 0:
        errs.append("run.dt and run.duration must be positive")
    elif abs(r.duration / r.dt - round(r.duration / r.dt)) > 1e-9:
        errs.append("run.duration must be a multiple of run.dt")
    if cfg.plant.mass <= 0 or cfg.plant.noise_std < 0:
        errs.append("plant.mass must be positive and plant.noise_std non-negative")
    w = cfg.wind
    for lo, hi in (("c_mag_min", "c_mag_max"), ("gust_start_min", "gust_start_max"),
                   ("gust_duration_min", "gust_duration_max"), ("gust_amp_min", "gust_amp_max")):
        if getattr(w, lo) > getattr(w, hi):
            errs.append(f"wind.{lo} > wind.{hi}")
    if w.gust_duration_min <= 0 or w.n_modes < 1 or w.max_freq <= 0:
        errs.append("wind gust duration, n_modes and max_freq must be positive")
    g = cfg.gp
    if g.capacity < 1 or min(g.sigma_f, g.length_scale, g.noise_var) <= 0:
        errs.append("gp capacity and hyperparameters must be positive")
    if g.beta_mode not in ("fixed", "info_gain"):
        errs.append("gp.beta_mode must be 'fixed' or 'info_gain'")
    if not 0 < g.varsigma < 1:
        errs.append("gp.varsigma must lie in (0, 1)")
    c = cfg.controller
    if min(c.kp, c.kd, c.q_lyap, c.epsilon, c.p1, c.p2, c.u_max, c.gamma, c.gamma_p) <= 0:
        errs.append("controller gains, penalties and bounds must be positive")
    if c.delta_max < 0:
        errs.append("controller.delta_max must be non-negative")
    m = cfg.mpc
    if m.horizon < 1 or m.dt <= 0 or m.r <= 0 or min(m.q_pos, m.q_vel) < 0:
        errs.append("mpc horizon, dt and r must be positive, weights non-negative")
    t = cfg.trigger
    if t.policy not in ("event", "periodic", "never"):
        errs.append("trigger.policy must be event, periodic or never")
    if t.interval < 1 or t.min_gap < 0 or t.tol < 0:
        errs.append("trigger.interval >= 1, min_gap >= 0, tol >= 0 required")
    o = cfg.obstacles
    if o.radius <= 0:
        errs.append("obstacles.radius must be positive")
    if o.enabled and any(not 0 <= tt <= r.duration for tt in o.times):
        errs.append("obstacle times must lie within the run")
    if errs:
        raise ConfigError("; ".join(errs))
    return cfg


def effective(cfg):
    """Apply the variant's forced settings (e.g. per-tick updates for LB-FL-MPC)."""
    v = cfg.run.variant
    if v == "LB-FL-MPC":
        return cfg.with_section("trigger", policy="periodic", interval=1)
    if v in ("FL-QP-MPC", "ROBUST"):
        return cfg.with_section("trigger", policy="never")
    return cfg


def as_dict(cfg):
    return dataclasses.asdict(cfg)


def gains_arrays(c):
    """Diagonal gain matrices from the scalar controller settings."""
    return dict(K_P=c.kp * np.eye(3), K_D=c.kd * np.eye(3), Q_lyap=c.q_lyap * np.eye(6),
                epsilon=c.epsilon, p1=c.p1, p2=c.p2,
                u_min=np.full(3, -c.u_max), u_max=np.full(3, c.u_max))
