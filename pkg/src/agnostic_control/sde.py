"""Brownian noise, Euler-Maruyama integration of dq = (aq + u)dt + dW, crossings.

All paths of a batch are stepped together; a strategy sees the whole batch
as arrays and keeps per-path state (see :mod:`agnostic_control.strategies`).
Noise for path ``i`` comes from its own counter-based Philox stream keyed by
the root seed, so results do not depend on how paths are grouped.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .config import steps_for
from .errors import ContractViolation, Diverged, InvalidArgument

DIVERGENCE_LEVEL = 1e12
_MASK64 = (1 << 64) - 1
_BLOCK = 512


def path_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Independent generator for path ``index`` under root ``seed``."""
    bitgen = np.random.Philox(key=int(seed) & _MASK64, counter=[0, 0, 0, int(index)])
    return np.random.Generator(bitgen)


@dataclass(frozen=True)
class BrownianPath:
    dt: float
    increments: np.ndarray
    seed: int
    index: int = 0

    @property
    def horizon(self) -> float:
        return len(self.increments) * self.dt

    def negated(self) -> "BrownianPath":
        return BrownianPath(self.dt, -self.increments, self.seed, self.index)


def generate_brownian(horizon: float, dt: float, seed: int, index: int = 0) -> BrownianPath:
    """Gaussian increments N(0, dt) covering ``horizon``; deterministic in (seed, index)."""
    if not horizon > 0:
        raise InvalidArgument(f"horizon must be positive, got {horizon}")
    if not dt > 0:
        raise InvalidArgument(f"dt must be positive, got {dt}")
    n = steps_for(horizon, dt)
    inc = path_rng(seed, index).standard_normal(n) * math.sqrt(dt)
    return BrownianPath(dt=dt, increments=inc, seed=seed, index=index)


class NoiseSource:
    """Streams unit-variance normals for a contiguous range of path indices.

    Blocks are drawn sequentially from each path's generator, so any block
    split reproduces the same numbers as a single draw.
    """

    def __init__(self, seed: int, start: int, stop: int, sign: float = 1.0):
        self.gens = [path_rng(seed, i) for i in range(start, stop)]
        self.sign = sign

    @property
    def n(self) -> int:
        return len(self.gens)

    def block(self, m: int) -> np.ndarray:
        out = np.empty((len(self.gens), m))
        for row, g in zip(out, self.gens):
            g.standard_normal(out=row)
        if self.sign != 1.0:
            out *= self.sign
        return out


class _ArrayNoise:
    def __init__(self, z: np.ndarray):
        self.z = np.atleast_2d(z)
        self.pos = 0

    @property
    def n(self) -> int:
        return self.z.shape[0]

    def block(self, m: int) -> np.ndarray:
        out = self.z[:, self.pos:self.pos + m]
        if out.shape[1] < m:
            raise InvalidArgument("Brownian path does not cover the requested horizon")
        self.pos += m
        return out


class Event(NamedTuple):
    label: str
    step: int
    paths: np.ndarray
    level: float


class SimContext:
    """Shared clock and event log for one batch simulation."""

    def __init__(self, n: int, dt: float, record_events: bool = True):
        self.n = n
        self.dt = dt
        self.k = 0
        self.record_events = record_events
        self.events: list[Event] = []

    @property
    def t(self) -> float:
        return self.k * self.dt

    def record(self, label: str, mask: np.ndarray, level: float = math.nan):
        if self.record_events and mask.any():
            self.events.append(Event(label, self.k, np.flatnonzero(mask), float(level)))


@dataclass
class BatchResult:
    cost: np.ndarray
    diverged: np.ndarray
    blowup_time: np.ndarray
    q_final: np.ndarray
    events: list[Event]
    times: np.ndarray
    q: np.ndarray | None = None
    u: np.ndarray | None = None
    running_cost: np.ndarray | None = None


def simulate_batch(strategy, a: float, q0, horizon: float, noise, dt: float,
                   record_paths: bool = False, record_events: bool = True) -> BatchResult:
    """Integrate ``strategy`` on every path of ``noise``.

    ``noise`` is a :class:`NoiseSource` or an ``(n, steps)`` array of
    unit-variance normals.  Paths whose ``|q|`` exceeds ``DIVERGENCE_LEVEL``
    are frozen and reported with infinite cost.
    """
    if not horizon > 0:
        raise InvalidArgument(f"horizon must be positive, got {horizon}")
    if isinstance(noise, np.ndarray):
        noise = _ArrayNoise(noise)
    n = noise.n
    n_steps = steps_for(horizon, dt)
    h = np.full(n_steps, dt)
    h[-1] = horizon - (n_steps - 1) * dt
    sqrt_h = np.sqrt(h)
    times = np.concatenate([[0.0], np.cumsum(h)])
    times[-1] = horizon

    ctx = SimContext(n, dt, record_events)
    state = strategy.init(ctx, n)
    q = np.broadcast_to(np.asarray(q0, dtype=float), (n,)).copy()
    everyone = np.ones(n, dtype=bool)
    strategy.start(state, everyone, np.full(n, float(horizon)), q.copy(), {})

    cost = np.zeros(n)
    alive = everyone.copy()
    blowup = np.full(n, math.inf)
    if record_paths:
        q_hist = np.empty((n, n_steps + 1))
        u_hist = np.empty((n, n_steps))
        c_hist = np.empty((n, n_steps + 1))
        q_hist[:, 0] = q
        c_hist[:, 0] = 0.0

    z = None
    for k in range(n_steps):
        if k % _BLOCK == 0:
            z = noise.block(min(_BLOCK, n_steps - k))
        ctx.k = k
        t = np.full(n, times[k])
        u = np.asarray(strategy.control(t, q, state, alive), dtype=float)
        if u.shape != (n,):
            raise ContractViolation(f"control returned shape {u.shape}, expected {(n,)}")
        u = np.where(alive, u, 0.0)
        if not np.all(np.isfinite(u)):
            bad = int(np.flatnonzero(~np.isfinite(u))[0])
            raise ContractViolation("strategy produced a non-finite control", t=times[k], u=u[bad])
        hk = h[k]
        cost += (q * q + u * u) * hk
        with np.errstate(over="ignore", invalid="ignore"):
            q = q + (a * q + u) * hk + z[:, k % _BLOCK] * sqrt_h[k]
        bad = alive & ~(np.abs(q) <= DIVERGENCE_LEVEL)
        if bad.any():
            alive &= ~bad
            blowup[bad] = times[k + 1]
            cost[bad] = math.inf
        if not alive.all():
            # diverged paths are parked at zero so they stay finite
            q[~alive] = 0.0
        if record_paths:
            q_hist[:, k + 1] = np.where(alive, q, np.nan)
            u_hist[:, k] = u
            c_hist[:, k + 1] = cost

    result = BatchResult(cost=cost, diverged=~alive, blowup_time=blowup, q_final=q,
                         events=ctx.events, times=times)
    if record_paths:
        result.q, result.u, result.running_cost = q_hist, u_hist, c_hist
    return result


@dataclass
class Trajectory:
    times: np.ndarray
    q: np.ndarray
    u: np.ndarray
    a: float
    running_cost: np.ndarray
    stops: list[tuple[str, float, float]] = field(default_factory=list)

    @property
    def cost(self) -> float:
        return float(self.running_cost[-1])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "q", "u", "running_cost"])
            for k, t in enumerate(self.times):
                u = repr(float(self.u[k])) if k < len(self.u) else ""
                w.writerow([repr(float(t)), repr(float(self.q[k])), u,
                            repr(float(self.running_cost[k]))])


def simulate(strategy, a: float, q0: float, horizon: float, path: BrownianPath) -> Trajectory:
    """Single-path simulation against a fixed Brownian path."""
    z = (path.increments / math.sqrt(path.dt))[None, :]
    if z.shape[1] < steps_for(horizon, path.dt):
        raise InvalidArgument("Brownian path does not cover the requested horizon")
    res = simulate_batch(strategy, a, q0, horizon, z, path.dt, record_paths=True)
    if res.diverged[0]:
        raise Diverged(f"trajectory diverged at t={res.blowup_time[0]:.6g}", t=float(res.blowup_time[0]))
    stops = [(e.label, float(res.times[e.step]), e.level) for e in res.events]
    return Trajectory(times=res.times, q=res.q[0], u=res.u[0], a=a,
                      running_cost=res.running_cost[0], stops=stops)


def first_crossing(times, q, level: float, direction: str = "up") -> float | None:
    """First grid time after t=0 at which ``q`` crosses ``level``.

    ``direction`` is ``"up"`` (from below to >= level), ``"down"`` (from
    above to <= level) or ``"absolute"`` (``|q| >= level``).  Returns
    ``None`` if no crossing is detected on the grid.
    """
    if isinstance(times, Trajectory):
        times, q = times.times, times.q
    q = np.asarray(q, dtype=float)
    if direction == "up":
        hit = (q[:-1] < level) & (q[1:] >= level)
    elif direction == "down":
        hit = (q[:-1] > level) & (q[1:] <= level)
    elif direction == "absolute":
        hit = np.abs(q[1:]) >= level
    else:
        raise InvalidArgument(f"unknown direction {direction!r}")
    idx = np.flatnonzero(hit)
    if idx.size == 0:
        return None
    return float(times[idx[0] + 1])
