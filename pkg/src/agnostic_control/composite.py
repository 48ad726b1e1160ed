"""Composite agnostic strategies built from the combinators in :mod:`strategies`.

* ``large_q_strategy``: wait inside a narrow band around q0, estimate the
  drift from the exit time, then play a feedback law matched to it.
* ``large_a_strategy``: wait for an upward crossing, control hard with
  gain 2*abar, and fall back to the bounded-regret strategy on disaster.
* ``bounded_regret_strategy``: wait until |q| is large, then the large-q law.
* ``almost_optimal_strategy``: route between the three above and a guarded,
  rescaled copy of a user-supplied strategy.
* ``zero_start_strategy``: the same from q0 = 0.

Every stopping decision is recorded in the simulation event log under the
branch label, e.g. ``lqs:up->case3``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .analytics import kappa
from .errors import InvalidArgument
from .strategies import (
    CAP, DOWN, NULL, UP, Branch, Choice, ConstantGain, Crossing, Entry, ExtendHorizon,
    OptimalKnownA, Rescale, Select, SignNormalized, Strategy, assert_a_bounded, guard_with_lqs,
)

DEFAULT_Q_BIG = 25.0


@dataclass(frozen=True)
class LqsParams:
    eps: float = 0.05
    t_max: float | None = None
    A1: float = 20.0
    c0: float = 0.1

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise InvalidArgument(f"eps must lie in (0, 1), got {self.eps}")
        if self.t_max is None:
            object.__setattr__(self, "t_max", self.c0 * math.sqrt(self.eps))
        if not self.t_max > 0:
            raise InvalidArgument("t_max must be positive")
        if not self.a_small < self.A1:
            raise InvalidArgument(f"A1={self.A1} must exceed eps^(1/4)={self.a_small:.4g}")

    @property
    def a_tiny(self) -> float:
        return math.sqrt(self.eps)

    @property
    def a_small(self) -> float:
        return self.eps ** 0.25

    def validate_for(self, T: float):
        if not self.t_max < T:
            raise InvalidArgument(f"t_max={self.t_max:.4g} must be below the horizon T={T}")


@dataclass(frozen=True)
class LasParams:
    eps: float = 0.05
    q0_star: float = 4.0
    A: float = 40.0

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise InvalidArgument(f"eps must lie in (0, 1), got {self.eps}")
        if not self.A > 0:
            raise InvalidArgument("A must be positive")

    def validate_for(self, q0: float):
        if not self.q0_star >= 2 * abs(q0):
            raise InvalidArgument(f"q0_star={self.q0_star} must be at least 2|q0|={2 * abs(q0)}")


@dataclass(frozen=True)
class SigmaStarParams:
    eps: float = 0.05
    eps0: float = 0.05
    A: float = 40.0
    q_rare: float = 4.0
    q0_star: float = 4.0
    C0: float = 3.0
    m0: int = 1
    q_big: float = DEFAULT_Q_BIG
    lqs: LqsParams = LqsParams()

    def __post_init__(self):
        if not 0 < self.eps0 < 1:
            raise InvalidArgument(f"eps0 must lie in (0, 1), got {self.eps0}")
        if not 0 < self.eps < 1:
            raise InvalidArgument(f"eps must lie in (0, 1), got {self.eps}")
        if not self.A > 0:
            raise InvalidArgument("A must be positive")

    @classmethod
    def from_config(cls, cfg) -> "SigmaStarParams":
        return cls(eps=cfg.eps, eps0=cfg.eps0, A=cfg.A, q_rare=cfg.q_rare, q0_star=cfg.q0_star,
                   C0=cfg.C0, m0=cfg.m0, q_big=cfg.q_big,
                   lqs=LqsParams(eps=cfg.eps, A1=cfg.A1, c0=cfg.c0))


def _lqs_chooser(p: LqsParams):
    def choose(e: Entry) -> Choice:
        n = len(e.tau)
        tau = np.maximum(e.tau, 1e-300)
        abar = np.where(e.kind == UP, math.log1p(p.eps) / tau,
                        np.where(e.kind == DOWN, math.log1p(-p.eps) / tau, 0.0))
        idx = np.select(
            [e.kind == CAP, abar >= p.A1, abar > 0, abar <= -p.A1],
            [0, 1, 2, 3], default=4)
        alpha = np.zeros(n)
        alpha[idx == 1] = 2.0 * abar[idx == 1]
        alpha[idx == 2] = abar[idx == 2]
        case5 = idx == 4
        if case5.any():
            # gain frozen at its value on entry
            alpha[case5] = kappa(np.maximum(e.remaining[case5], 0.0), abar[case5])
        return Choice(idx, {"alpha": alpha})

    return choose


def large_q_strategy(params: LqsParams, T: float | None = None, q0: float | None = None,
                     q_big: float = DEFAULT_Q_BIG) -> Strategy:
    """Large-start strategy; negative starts are handled by mirroring."""
    if T is not None:
        params.validate_for(T)
    if q0 is not None and abs(q0) < q_big:
        warnings.warn(f"|q0|={abs(q0):g} is below q_big={q_big:g}; the near-optimality guarantee "
                      "only applies to large starts", stacklevel=2)
    stop = Crossing(up_factor=1 + params.eps, down_factor=1 - params.eps, t_cap=params.t_max)
    children = [OptimalKnownA(0.0), ConstantGain(None), OptimalKnownA(None), NULL, ConstantGain(None)]
    labels = ["case1", "case2", "case3", "case4", "case5"]
    inner = Branch(NULL, stop, children, _lqs_chooser(params), label="lqs", child_labels=labels)
    return SignNormalized(inner)


def bounded_regret_strategy(T: float | None = None, q0: float | None = None,
                            q_big: float = DEFAULT_Q_BIG,
                            lqs_params: LqsParams | None = None) -> Strategy:
    """Uncontrolled until |q| reaches ``q_big``, then the large-start strategy."""
    if not q_big > 0:
        raise InvalidArgument("q_big must be positive")
    lqs = large_q_strategy(lqs_params or LqsParams(), T)
    wait = Branch(NULL, Crossing(abs_level=q_big), [lqs], label="br", child_labels=["lqs"])
    strat = Select(lambda q0_, h: np.abs(q0_) >= q_big, lqs, wait, label="br")
    strat.label = "br"
    return strat


def large_a_strategy(params: LasParams, T: float | None = None, q0: float | None = None,
                     br_factory=None) -> Strategy:
    """Testing, Control and Disaster-Mitigation epochs for large positive drift."""
    if q0 is not None:
        params.validate_for(q0)
    br = br_factory() if br_factory is not None else bounded_regret_strategy(T)
    eps = params.eps

    control = Branch(ConstantGain(None), Crossing(abs_level=params.q0_star), [br],
                     label="las-control", child_labels=["br"])

    def choose(e: Entry) -> Choice:
        up = e.kind == UP
        abar = np.where(up, math.log1p(eps) / np.maximum(e.tau, 1e-300), 0.0)
        return Choice(np.where(up, 0, 1), {"alpha": 2.0 * abar})

    stop = Crossing(up_factor=1 + eps, down_level=-params.q0_star)
    inner = Branch(NULL, stop, [control, br], choose, label="las", child_labels=["control", "br"])
    return SignNormalized(inner)


def almost_optimal_strategy(sigma: Strategy, params: SigmaStarParams, T: float | None = None,
                            q0: float | None = None) -> Strategy:
    """Agnostic strategy routing between LaS, a guarded copy of ``sigma`` and BR.

    ``sigma`` is treated as a strategy for horizon T + eps0 and is checked
    against the A-bound on every step.
    """
    if q0 is not None and not q0 > 0:
        raise InvalidArgument("almost_optimal_strategy needs q0 > 0; mirror it for negative starts")
    if q0 is not None and not params.q_rare > q0:
        raise InvalidArgument(f"q_rare={params.q_rare} must exceed q0={q0}")
    if q0 is not None and not params.q0_star > (1 + params.eps0) * q0:
        raise InvalidArgument("q0_star must exceed the rescaled start (1+eps0) q0")
    lam = 1.0 + params.eps0
    br = bounded_regret_strategy(T, q_big=params.q_big, lqs_params=params.lqs)
    las = large_a_strategy(LasParams(params.eps, params.q0_star, params.A), T, br_factory=lambda: br)

    checked = assert_a_bounded(sigma, params.A, params.C0, params.m0)
    lqs = large_q_strategy(params.lqs)
    guarded = guard_with_lqs(ExtendHorizon(checked, extra=params.eps0), params.q0_star, lqs,
                             extra_horizon=params.eps0)
    sigma_bar = Rescale(guarded, lam)
    threshold = params.A / 10.0

    def choose(e: Entry) -> Choice:
        up = e.kind == UP
        abar = np.where(up, math.log1p(params.eps0) / np.maximum(e.tau, 1e-300), 0.0)
        idx = np.where(up, np.where(abar >= threshold, 0, 1), 2)
        # sigma_bar is the rescaling of a horizon-(T - tau) strategy
        horizon = np.where(idx == 1, lam * lam * e.remaining, e.remaining)
        return Choice(idx, {}, horizon)

    stop = Crossing(up_factor=lam, down_level=-params.q_rare)
    return Branch(NULL, stop, [las, sigma_bar, br], choose, label="sigma*",
                  child_labels=["las", "sigma-bar", "br"])


class _RequireZeroStart(Strategy):
    def __init__(self, inner: Strategy):
        self.inner = inner
        self.label = inner.label

    def init(self, ctx, n):
        return self.inner.init(ctx, n)

    def start(self, state, mask, horizon, q0, params):
        if np.any(q0[mask] != 0):
            raise InvalidArgument("zero-start strategy requires q0 = 0")
        self.inner.start(state, mask, horizon, q0, params)

    def control(self, t, q, state, active):
        return self.inner.control(t, q, state, active)


def zero_start_strategy(sigma_star_factory, eps: float, T: float | None = None) -> Strategy:
    """Uncontrolled until |q| = eps, then sigma* built for start eps (mirrored below zero).

    ``sigma_star_factory(q0)`` returns sigma* for starting position ``q0``.
    """
    if not eps > 0:
        raise InvalidArgument(f"eps must be positive, got {eps}")
    star = SignNormalized(sigma_star_factory(eps))
    inner = Branch(NULL, Crossing(abs_level=eps), [star], label="zero-start", child_labels=["sigma*"])
    return _RequireZeroStart(inner)
