"""Stochastic wind disturbance: constant + von Karman turbulence + 1-cos gust.

The disturbance is applied directly as an acceleration [m/s^2]. Turbulence
is realized by the spectral (sum of cosines) method: for each axis, M
frequencies are drawn from the normalized von Karman PSD and combined with
independent uniform phases, which gives a stationary Gaussian-like process
whose variance equals the PSD integral over the simulated band.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

FT = 0.3048
# von Karman shape constant
_A = 1.339


@dataclass(frozen=True)
class TurbulenceParams:
    """Per-axis von Karman intensities [m/s^2] and length scales [m].

    Axis 0 uses the longitudinal spectrum, axes 1 and 2 the transverse one.
    """

    sigma: tuple = (1.457, 1.457, 0.772)
    length: tuple = (67.3, 67.3, 10.0)
    airspeed: float = 5.0
    n_modes: int = 64
    max_freq: float = 100.0
    clip_sigmas: float = 6.0

    def __post_init__(self):
        if len(self.sigma) != 3 or len(self.length) != 3:
            raise ValueError("sigma and length need 3 components")
        if min(self.sigma) < 0 or min(self.length) <= 0:
            raise ValueError("turbulence intensities must be >= 0 and lengths > 0")
        if self.airspeed <= 0 or self.n_modes < 1 or self.max_freq <= 0:
            raise ValueError("invalid turbulence sampling parameters")

    @classmethod
    def low_altitude(cls, altitude=10.0, w20=7.72, airspeed=5.0, **kw):
        """Low-altitude (< 1000 ft) intensities and scales from altitude [m] and 20 ft wind [m/s]."""
        h = altitude / FT
        base = 0.177 + 0.000823 * h
        sigma_w = 0.1 * w20
        sigma_u = sigma_w / base**0.4
        l_u = h / base**1.2 * FT
        l_w = h * FT
        return cls(sigma=(sigma_u, sigma_u, sigma_w), length=(l_u, l_u, l_w), airspeed=airspeed, **kw)


def von_karman_psd(omega, sigma, length, airspeed, longitudinal):
    """One-sided von Karman PSD in temporal frequency omega [rad/s]."""
    s = _A * length * np.asarray(omega, dtype=float) / airspeed
    if longitudinal:
        shape = 2.0 / (1.0 + s**2) ** (5.0 / 6.0)
    else:
        shape = (1.0 + 8.0 / 3.0 * s**2) / (1.0 + s**2) ** (11.0 / 6.0)
    return sigma**2 * length / (np.pi * airspeed) * shape


def band_variance(params, axis, n_grid=20001):
    """Variance of one axis restricted to [0, max_freq], by trapezoidal quadrature."""
    w = _freq_grid(params, axis, n_grid)
    psd = von_karman_psd(w, params.sigma[axis], params.length[axis], params.airspeed, axis == 0)
    return float(np.trapezoid(psd, w))


def _freq_grid(params, axis, n_grid):
    # log spacing resolves the corner frequency V/(1.339 L) for any length scale
    corner = params.airspeed / (_A * params.length[axis])
    lo = min(corner * 1e-4, params.max_freq * 1e-6)
    return np.concatenate([[0.0], np.geomspace(lo, params.max_freq, n_grid - 1)])


@dataclass(frozen=True)
class TurbulenceField:
    """One sampled realization: frequencies/phases (3 x M) and per-axis amplitudes."""

    freqs: np.ndarray
    phases: np.ndarray
    amps: np.ndarray
    clip: np.ndarray

    @classmethod
    def sample(cls, params, rng):
        m = params.n_modes
        freqs = np.zeros((3, m))
        amps = np.zeros(3)
        for ax in range(3):
            w = _freq_grid(params, ax, 4001)
            psd = von_karman_psd(w, params.sigma[ax], params.length[ax], params.airspeed, ax == 0)
            cdf = np.concatenate([[0.0], np.cumsum(0.5 * (psd[1:] + psd[:-1]) * np.diff(w))])
            var = cdf[-1]
            if var > 0:
                freqs[ax] = np.interp(rng.uniform(0.0, var, m), cdf, w)
            amps[ax] = np.sqrt(2.0 * var / m)
        phases = rng.uniform(0.0, 2.0 * np.pi, (3, m))
        clip = params.clip_sigmas * np.sqrt(amps**2 * m / 2.0)
        return cls(freqs, phases, amps, clip)

    @classmethod
    def zero(cls):
        return cls(np.zeros((3, 1)), np.zeros((3, 1)), np.zeros(3), np.zeros(3))


def turbulence(t, tfield):
    """Turbulent component at time t; clipped at ``clip_sigmas`` standard deviations."""
    val = tfield.amps * np.cos(tfield.freqs * t + tfield.phases).sum(axis=1)
    over = np.abs(val) > tfield.clip
    if np.any(over & (tfield.clip > 0)):
        log.info("turbulence clipped at t=%.3f", t)
        val = np.clip(val, -tfield.clip, tfield.clip)
    return val


@dataclass(frozen=True)
class GustParams:
    t_start: float = 20.0
    duration: float = 2.0
    amplitude: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("gust duration must be positive")


def gust(t, gp):
    """1-cos gust: amplitude * (1 - cos(2 pi (t - t0) / T)) / 2 inside the window."""
    tau = t - gp.t_start
    if tau < 0 or tau > gp.duration:
        return np.zeros(3)
    return np.asarray(gp.amplitude, dtype=float) * 0.5 * (1.0 - np.cos(2.0 * np.pi * tau / gp.duration))


@dataclass(frozen=True)
class WindParams:
    c_mag_range: tuple = (3.0, 10.0)
    planar: bool = False
    turbulence: TurbulenceParams = field(default_factory=TurbulenceParams)
    gust_start_range: tuple = (5.0, 30.0)
    gust_duration_range: tuple = (1.0, 3.0)
    gust_amp_range: tuple = (2.0, 5.0)
    seed: int = 0

    def __post_init__(self):
        for name in ("c_mag_range", "gust_start_range", "gust_duration_range", "gust_amp_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: low > high")
        if self.gust_duration_range[0] <= 0:
            raise ValueError("gust duration must be positive")


def _random_direction(rng, planar):
    if planar:
        a = rng.uniform(0.0, 2.0 * np.pi)
        return np.array([np.cos(a), np.sin(a), 0.0])
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


def constant_component(params, rng):
    """Episode-constant wind: uniform random direction, magnitude ~ U(c_mag_range)."""
    mag = rng.uniform(*params.c_mag_range)
    return mag * _random_direction(rng, params.planar)


@dataclass(frozen=True)
class WindModel:
    """A drawn wind realization; evaluate with :meth:`total` or by calling it."""

    constant: np.ndarray
    field: TurbulenceField
    gust: GustParams

    @classmethod
    def from_params(cls, params):
        rng = np.random.default_rng(params.seed)
        const = constant_component(params, rng)
        tfield = TurbulenceField.sample(params.turbulence, rng)
        g = GustParams(
            t_start=rng.uniform(*params.gust_start_range),
            duration=rng.uniform(*params.gust_duration_range),
            amplitude=tuple(rng.uniform(*params.gust_amp_range) * _random_direction(rng, params.planar)),
        )
        return cls(const, tfield, g)

    @classmethod
    def calm(cls):
        return cls(np.zeros(3), TurbulenceField.zero(), GustParams())

    def total(self, t):
        return self.constant + turbulence(t, self.field) + gust(t, self.gust)

    __call__ = total


def total(t, model):
    return model.total(t)
