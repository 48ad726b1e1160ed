"""Monte Carlo estimation, regret curves, hitting frequencies and the claim harness.

Paths are simulated in fixed chunks of ``cfg.chunk_size`` consecutive
indices.  Path ``i`` always draws its noise from the same Philox stream,
so two strategies evaluated with the same root seed see identical noise,
and the result does not depend on ``cfg.workers``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .analytics import j0, j0_asymptote
from .config import ExperimentConfig, steps_for
from .errors import EstimationFailed, InvalidArgument
from .sde import _BLOCK, NoiseSource, simulate_batch

CSV_HEADER = ("a", "mean", "se", "j0", "ar", "mr", "hr", "n", "diverged")


def _chunks(n: int, size: int):
    return [(lo, min(lo + size, n)) for lo in range(0, n, size)]


def _map_chunks(fn, cfg: ExperimentConfig, n: int | None = None):
    chunks = _chunks(n or cfg.n_paths, cfg.chunk_size)
    if cfg.workers == 1 or len(chunks) == 1:
        return [fn(lo, hi) for lo, hi in chunks]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(lambda c: fn(*c), chunks))


def simulate_costs(sigma, a: float, cfg: ExperimentConfig, q0: float | None = None,
                   horizon: float | None = None, sign: float = 1.0):
    """Per-path costs (``inf`` where diverged) for paths ``0 .. n_paths-1``."""
    q0 = cfg.q0 if q0 is None else q0
    horizon = cfg.T if horizon is None else horizon

    def run(lo, hi):
        res = simulate_batch(sigma, a, q0, horizon, NoiseSource(cfg.root_seed, lo, hi, sign),
                             cfg.dt, record_events=False)
        return res.cost

    return np.concatenate(_map_chunks(run, cfg))


@dataclass(frozen=True)
class CostEstimate:
    mean: float
    std_error: float
    n: int
    diverged: int

    @classmethod
    def from_costs(cls, costs: np.ndarray) -> "CostEstimate":
        finite = costs[np.isfinite(costs)]
        n_div = len(costs) - len(finite)
        if len(finite) == 0:
            raise EstimationFailed(f"all {len(costs)} paths diverged")
        se = float(finite.std(ddof=1) / math.sqrt(len(finite))) if len(finite) > 1 else 0.0
        return cls(mean=float(finite.mean()), std_error=se, n=len(costs), diverged=n_div)


def estimate_cost(sigma, a: float, cfg: ExperimentConfig, q0: float | None = None,
                  horizon: float | None = None) -> CostEstimate:
    """Mean cost over ``cfg.n_paths`` paths with its standard error."""
    return CostEstimate.from_costs(simulate_costs(sigma, a, cfg, q0, horizon))


# --- regret ------------------------------------------------------------------

REGRET_KINDS = ("ar", "mr", "hr")


@dataclass
class RegretReport:
    a_grid: np.ndarray
    estimates: list[CostEstimate]
    j0: np.ndarray
    gamma: float
    T: float
    q0: float
    ar: np.ndarray = field(init=False)
    mr: np.ndarray = field(init=False)
    hr: np.ndarray = field(init=False)
    worst: dict = field(init=False)

    def __post_init__(self):
        self.a_grid = np.asarray(self.a_grid, dtype=float)
        mean = self.mean
        self.ar = mean - self.j0
        self.mr = mean / self.j0
        self.hr = mean / (self.j0 + self.gamma)
        self.worst = {k: worst_case_regret(self, k) for k in REGRET_KINDS}

    @property
    def mean(self) -> np.ndarray:
        return np.array([e.mean for e in self.estimates])

    @property
    def se(self) -> np.ndarray:
        return np.array([e.std_error for e in self.estimates])

    def values(self, kind: str) -> np.ndarray:
        if kind not in REGRET_KINDS:
            raise InvalidArgument(f"unknown regret kind {kind!r}; use one of {REGRET_KINDS}")
        return getattr(self, kind)

    def rows(self):
        for i, a in enumerate(self.a_grid):
            e = self.estimates[i]
            yield (float(a), e.mean, e.std_error, float(self.j0[i]), float(self.ar[i]),
                   float(self.mr[i]), float(self.hr[i]), e.n, e.diverged)


def regret_curve(sigma, a_grid, cfg: ExperimentConfig, gamma: float | None = None) -> RegretReport:
    """Estimate J(sigma, a) on a grid and form AR, MR and HR against the exact j0."""
    grid = np.atleast_1d(np.asarray(a_grid, dtype=float))
    if grid.size == 0:
        raise InvalidArgument("drift grid is empty")
    gamma = cfg.gamma if gamma is None else gamma
    if not gamma > 0:
        raise InvalidArgument("gamma must be positive")
    estimates = [estimate_cost(sigma, float(a), cfg) for a in grid]
    denom = np.array([j0(float(a), cfg.T, cfg.q0) for a in grid])
    return RegretReport(grid, estimates, denom, gamma, cfg.T, cfg.q0)


def worst_case_regret(report: RegretReport, kind: str = "mr", include_tail: bool = False):
    """(value, argmax) of a regret kind over the grid; ties go to the smallest |a|.

    With ``include_tail`` the edge estimates are also scored against the
    large-|a| asymptote of j0, standing in for drifts beyond the grid; if
    that dominates, the argmax is reported as +-inf.
    """
    vals = report.values(kind)
    if len(vals) == 0:
        raise InvalidArgument("empty regret report")
    best = np.max(vals)
    ties = np.flatnonzero(vals == best)
    i = ties[np.argmin(np.abs(report.a_grid[ties]))]
    value, argmax = float(best), float(report.a_grid[i])
    if include_tail:
        for idx, side in ((int(np.argmin(report.a_grid)), -math.inf),
                          (int(np.argmax(report.a_grid)), math.inf)):
            a = float(report.a_grid[idx])
            if a == 0:
                continue
            asym = j0_asymptote(a, report.T, report.q0)
            mean = report.estimates[idx].mean
            tail = {"ar": mean - asym, "mr": mean / asym, "hr": mean / (asym + report.gamma)}[kind]
            if tail > value:
                value, argmax = float(tail), side
    return value, argmax


# --- hitting frequencies -------------------------------------------------------


@dataclass(frozen=True)
class HittingLevels:
    """Levels for :func:`hitting_experiment`; any of them may be left out.

    ``eps`` defines the band (1 +- eps) q0, ``t_max`` caps the band watch,
    ``q0_star`` is the disaster level, ``level`` an absolute upward level
    and ``abar_above`` asks for the frequency of log(1+eps)/tau_+ exceeding it.
    """

    eps: float | None = None
    t_max: float | None = None
    q0_star: float | None = None
    level: float | None = None
    abar_above: float | None = None


@dataclass
class HittingResult:
    n: int
    freq: dict

    def p(self, name):
        return self.freq[name][0]

    def se(self, name):
        return self.freq[name][1]


def _first_hits(a, q0, horizon, dt, seed, lo, hi, levels: HittingLevels):
    """First grid step (1-based) at which each watched event happens; 0 if never."""
    n = hi - lo
    n_steps = steps_for(horizon, dt)
    h = np.full(n_steps, dt)
    h[-1] = horizon - (n_steps - 1) * dt
    sq = np.sqrt(h)
    noise = NoiseSource(seed, lo, hi)
    q = np.full(n, float(q0))
    watch = {}
    if levels.eps is not None:
        watch["up"] = lambda q: q >= (1 + levels.eps) * q0
        watch["down"] = lambda q: q <= (1 - levels.eps) * q0
    if levels.q0_star is not None:
        watch["neg_star"] = lambda q: q <= -levels.q0_star
        watch["abs_star"] = lambda q: np.abs(q) >= levels.q0_star
    if levels.level is not None:
        watch["level"] = lambda q: q >= levels.level
    hit = {k: np.zeros(n, dtype=np.int64) for k in watch}
    for k in range(n_steps):
        if k % _BLOCK == 0:
            z = noise.block(min(_BLOCK, n_steps - k))
        q += a * q * h[k] + z[:, k % _BLOCK] * sq[k]
        for name, test in watch.items():
            fresh = (hit[name] == 0) & test(q)
            hit[name][fresh] = k + 1
    return hit


def _binomial(mask):
    p = float(np.mean(mask))
    return p, math.sqrt(p * (1 - p) / len(mask))


def hitting_experiment(a: float, q0: float, levels: HittingLevels, cfg: ExperimentConfig) -> HittingResult:
    """Frequencies of band exits, disaster crossings and level crossings of the uncontrolled system.

    Reported events (when their levels are given): ``up_first``,
    ``down_first`` and ``cap`` for the band watched up to ``t_max``;
    ``up_late`` for tau_+ >= t_max; ``star_before_up``; ``ever_star``;
    ``level``; ``abar_above``.  Each maps to (frequency, binomial SE).
    """
    horizon = cfg.T
    parts = _map_chunks(
        lambda lo, hi: _first_hits(a, q0, horizon, cfg.dt, cfg.root_seed, lo, hi, levels), cfg)
    hit = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    never = np.iinfo(np.int64).max
    t_of = {k: np.where(v == 0, never, v) for k, v in hit.items()}
    freq = {}
    if levels.eps is not None:
        cap_step = steps_for(levels.t_max, cfg.dt) if levels.t_max is not None else never
        up, down = t_of["up"], t_of["down"]
        first = np.minimum(up, down)
        freq["up_first"] = _binomial((up < down) & (up <= cap_step))
        freq["down_first"] = _binomial((down < up) & (down <= cap_step))
        freq["cap"] = _binomial(first > cap_step)
        if levels.t_max is not None:
            freq["up_late"] = _binomial(up >= cap_step)
        if levels.abar_above is not None:
            tau = np.where(up == never, np.inf, up * cfg.dt)
            freq["abar_above"] = _binomial(math.log1p(levels.eps) / tau > levels.abar_above)
        if levels.q0_star is not None:
            freq["star_before_up"] = _binomial(t_of["neg_star"] < up)
    if levels.q0_star is not None:
        freq["ever_star"] = _binomial(hit["abs_star"] > 0)
    if levels.level is not None:
        freq["level"] = _binomial(hit["level"] > 0)
    return HittingResult(n=cfg.n_paths, freq=freq)


def verify_claim(claim_id: str, cfg: ExperimentConfig | None = None, **overrides):
    """Run a registered claim check; see :mod:`agnostic_control.claims`."""
    from .claims import verify_claim as _verify

    return _verify(claim_id, cfg, **overrides)
