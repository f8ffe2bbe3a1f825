"""Benchmark reference trajectories and on-path obstacle placement.

Parameterizations approximate the five benchmark shapes (line, circle,
lemniscate of Gerono, conical spiral, cylindrical helix). Each is C-infinity
in time, so velocity and acceleration are exact derivatives.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .controller import Obstacle

KINDS = ("line", "circle", "lemniscate", "conical_spiral", "cylindrical_helix")

DEFAULT_GEOMETRY = {
    "line": {"start": (0.0, 0.0, 1.0), "direction": (1.0, 0.5, 0.1), "speed": 1.0},
    "circle": {"center": (0.0, 0.0, 2.0), "radius": 5.0, "period": 30.0},
    "lemniscate": {"center": (0.0, 0.0, 2.0), "radius": 5.0, "period": 30.0},
    "conical_spiral": {"center": (0.0, 0.0, 1.0), "radius": 1.0, "growth": 0.12, "period": 12.0, "climb": 0.1},
    "cylindrical_helix": {"center": (0.0, 0.0, 1.0), "radius": 4.0, "period": 15.0, "climb": 0.15},
}


@dataclass(frozen=True)
class Reference:
    kind: str
    t0: float = 0.0
    T: float = 35.0
    geometry: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if not self.T > self.t0:
            raise ValueError("need T > t0")
        geo = dict(DEFAULT_GEOMETRY[self.kind])
        geo.update(self.geometry)
        object.__setattr__(self, "geometry", geo)

    def _derivs(self, t):
        """Position, velocity and acceleration at (already clamped) times ``t``."""
        g = self.geometry
        t = np.atleast_1d(np.asarray(t, dtype=float))
        s = t - self.t0
        zero = np.zeros_like(s)
        if self.kind == "line":
            d = np.asarray(g["direction"], dtype=float)
            d = d / np.linalg.norm(d)
            p = np.asarray(g["start"])[:, None] + g["speed"] * d[:, None] * s
            v = np.repeat(g["speed"] * d[:, None], len(s), axis=1)
            return p, v, np.zeros_like(p)
        c = np.asarray(g["center"], dtype=float)[:, None]
        w = 2.0 * np.pi / g["period"]
        if self.kind == "circle":
            R = g["radius"]
            p = np.stack([R * np.cos(w * s), R * np.sin(w * s), zero])
            v = np.stack([-R * w * np.sin(w * s), R * w * np.cos(w * s), zero])
            a = np.stack([-R * w**2 * np.cos(w * s), -R * w**2 * np.sin(w * s), zero])
        elif self.kind == "lemniscate":
            R = g["radius"]
            p = np.stack([R * np.sin(w * s), 0.5 * R * np.sin(2 * w * s), zero])
            v = np.stack([R * w * np.cos(w * s), R * w * np.cos(2 * w * s), zero])
            a = np.stack([-R * w**2 * np.sin(w * s), -2 * R * w**2 * np.sin(2 * w * s), zero])
        elif self.kind == "conical_spiral":
            r, rd = g["radius"] + g["growth"] * s, g["growth"]
            cs, sn = np.cos(w * s), np.sin(w * s)
            p = np.stack([r * cs, r * sn, g["climb"] * s])
            v = np.stack([rd * cs - r * w * sn, rd * sn + r * w * cs, g["climb"] + zero])
            a = np.stack([-2 * rd * w * sn - r * w**2 * cs, 2 * rd * w * cs - r * w**2 * sn, zero])
        else:
            R = g["radius"]
            p = np.stack([R * np.cos(w * s), R * np.sin(w * s), g["climb"] * s])
            v = np.stack([-R * w * np.sin(w * s), R * w * np.cos(w * s), g["climb"] + zero])
            a = np.stack([-R * w**2 * np.cos(w * s), -R * w**2 * np.sin(w * s), zero])
        return p + c, v, a

    def _eval(self, t, which):
        scalar = np.ndim(t) == 0
        tc = np.clip(t, self.t0, self.T)
        out = self._derivs(tc)[which]
        return out[:, 0] if scalar else out.T

    def position(self, t):
        return self._eval(t, 0)

    def velocity(self, t):
        return self._eval(t, 1)

    def acceleration(self, t):
        return self._eval(t, 2)

    def state(self, t):
        return np.concatenate([self.position(t), self.velocity(t)])


def reference(ref, t):
    """``(x_1ref, x_2ref)``: position and velocity, with ``t`` clamped to ``[t0, T]``."""
    return ref.position(t), ref.velocity(t)


def reference_window(ref, t, K, dt):
    """K stacked reference states at t + i*dt (i = 1..K); past T the final point is held at rest."""
    times = t + dt * np.arange(1, K + 1)
    p = ref.position(times)
    v = ref.velocity(times)
    v[times > ref.T] = 0.0
    return np.hstack([p, v])


def place_obstacles(ref, times=(10.0, 19.0, 28.0), r=1.0):
    for tt in times:
        if not ref.t0 <= tt <= ref.T:
            raise ValueError(f"obstacle time {tt} outside [{ref.t0}, {ref.T}]")
    return [Obstacle(ref.position(tt), r) for tt in times]


def export_csv(ref, path, dt=0.01):
    n = int(round((ref.T - ref.t0) / dt)) + 1
    ts = ref.t0 + dt * np.arange(n)
    P, V = ref.position(ts), ref.velocity(ts)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "px", "py", "pz", "vx", "vy", "vz"])
        for t, p, v in zip(ts, P, V):
            w.writerow([repr(float(t))] + [repr(float(a)) for a in (*p, *v)])
