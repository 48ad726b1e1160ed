"""Control strategies and the combinators used to assemble them.

A strategy is an immutable blueprint.  The simulator calls

* ``init(ctx, n)`` once per batch to allocate per-path state,
* ``start(state, mask, horizon, q0, params)`` to (re)start the paths in
  ``mask`` with their own horizon, start position and parameters,
* ``control(t, q, state, active)`` at every grid time, with the local time
  since that path's start and the current positions.

Strategies only ever see the positions observed so far, so they cannot
anticipate the noise.  Per-path parameters (``params``) let a single
blueprint serve a whole family, e.g. ``CG(2*abar)`` with a different
``abar`` on every path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from types import SimpleNamespace
from typing import Callable, NamedTuple

import numpy as np

from .analytics import GainFunction, kappa
from .errors import ContractViolation, InvalidArgument

_TIME_TOL = 1e-12


class Strategy:
    label = "strategy"

    def init(self, ctx, n):
        return SimpleNamespace(ctx=ctx)

    def start(self, state, mask, horizon, q0, params):
        pass

    def control(self, t, q, state, active):
        raise NotImplementedError

    def __repr__(self):
        return f"<{type(self).__name__} {self.label}>"


def _param(params, key, mask, default=None):
    if key in params:
        return np.asarray(params[key], dtype=float)[mask]
    if default is None:
        raise InvalidArgument(f"strategy requires parameter {key!r}")
    return default


class SimpleFeedback(Strategy):
    """u(t) = -v(t) q(t) for a deterministic gain on local time."""

    def __init__(self, gain: GainFunction | Callable, label: str = "feedback"):
        self.gain = gain
        self.label = label

    def control(self, t, q, state, active):
        return -np.asarray(self.gain(t), dtype=float) * q


def simple_feedback(v: GainFunction | Callable, label: str = "feedback") -> Strategy:
    return SimpleFeedback(v, label)


class ConstantGain(Strategy):
    """u = -alpha q.  With ``alpha=None`` the gain is read from ``params['alpha']``."""

    def __init__(self, alpha: float | None = None):
        if alpha is not None and alpha < 0:
            raise InvalidArgument(f"constant gain must be >= 0, got {alpha}")
        self.alpha = alpha
        self.label = f"cg:{alpha:g}" if alpha is not None else "cg:<param>"

    def init(self, ctx, n):
        return SimpleNamespace(ctx=ctx, alpha=np.full(n, self.alpha if self.alpha is not None else 0.0))

    def start(self, state, mask, horizon, q0, params):
        if self.alpha is None:
            alpha = _param(params, "alpha", mask)
            if np.any(alpha < 0):
                raise InvalidArgument("constant gain must be >= 0")
            state.alpha[mask] = alpha

    def control(self, t, q, state, active):
        return -state.alpha * q


def constant_gain(alpha: float | None = None) -> Strategy:
    return ConstantGain(alpha)


NULL = ConstantGain(0.0)


class OptimalKnownA(Strategy):
    """Riccati feedback u = -kappa(H - t, alpha) q for the started horizon H."""

    def __init__(self, alpha: float | None = None):
        self.alpha = alpha
        self.label = f"opt:{alpha:g}" if alpha is not None else "opt:<param>"

    def init(self, ctx, n):
        return SimpleNamespace(ctx=ctx, alpha=np.full(n, self.alpha if self.alpha is not None else 0.0),
                               horizon=np.zeros(n))

    def start(self, state, mask, horizon, q0, params):
        state.horizon[mask] = horizon[mask]
        if self.alpha is None:
            state.alpha[mask] = _param(params, "alpha", mask)

    def control(self, t, q, state, active):
        remaining = np.maximum(state.horizon - t, 0.0)
        return -kappa(remaining, state.alpha) * q


def optimal_known_a(alpha: float | None = None, T: float | None = None) -> Strategy:
    """Known-drift optimum.  The horizon is taken from the simulation, so ``T`` only validates."""
    if T is not None and not T > 0:
        raise InvalidArgument("T must be positive")
    return OptimalKnownA(alpha)


class Mirror(Strategy):
    """Plays ``inner`` on the reflected system q -> -q."""

    def __init__(self, inner: Strategy):
        self.inner = inner
        self.label = f"mirror({inner.label})"

    def init(self, ctx, n):
        return self.inner.init(ctx, n)

    def start(self, state, mask, horizon, q0, params):
        self.inner.start(state, mask, horizon, -q0, params)

    def control(self, t, q, state, active):
        return -self.inner.control(t, -q, state, active)


def mirror(sigma: Strategy) -> Strategy:
    return Mirror(sigma)


class SignNormalized(Strategy):
    """Mirrors ``inner`` on exactly those paths that start below zero."""

    def __init__(self, inner: Strategy):
        self.inner = inner
        self.label = inner.label

    def init(self, ctx, n):
        return SimpleNamespace(ctx=ctx, inner=self.inner.init(ctx, n), sign=np.ones(n))

    def start(self, state, mask, horizon, q0, params):
        state.sign[mask] = np.where(q0[mask] < 0, -1.0, 1.0)
        self.inner.start(state.inner, mask, horizon, state.sign * q0, params)

    def control(self, t, q, state, active):
        s = state.sign
        return s * self.inner.control(t, s * q, state.inner, active)


class Rescale(Strategy):
    """Space-time rescaling: horizon H -> lambda^2 H, start q0 -> lambda q0.

    The rescaled control at time t is u(t / lambda^2) / lambda evaluated on
    the rescaled observation q / lambda.
    """

    def __init__(self, inner: Strategy, lam: float):
        if not lam > 0:
            raise InvalidArgument(f"rescale factor must be positive, got {lam}")
        self.inner = inner
        self.lam = float(lam)
        self.label = f"rescale({inner.label},{lam:g})"

    def init(self, ctx, n):
        return self.inner.init(ctx, n)

    def start(self, state, mask, horizon, q0, params):
        lam = self.lam
        self.inner.start(state, mask, horizon / (lam * lam), q0 / lam, params)

    def control(self, t, q, state, active):
        lam = self.lam
        return self.inner.control(t / (lam * lam), q / lam, state, active) / lam


def rescale(sigma: Strategy, lam: float) -> Strategy:
    return Rescale(sigma, lam)


class ExtendHorizon(Strategy):
    """Starts ``inner`` with ``factor * H + extra`` instead of the horizon H it is given."""

    def __init__(self, inner: Strategy, extra: float = 0.0, factor: float = 1.0):
        if extra < 0 or factor < 1:
            raise InvalidArgument("a horizon may only be extended")
        self.inner = inner
        self.extra = float(extra)
        self.factor = float(factor)
        self.label = inner.label

    def init(self, ctx, n):
        return self.inner.init(ctx, n)

    def start(self, state, mask, horizon, q0, params):
        self.inner.start(state, mask, horizon * self.factor + self.extra, q0, params)

    def control(self, t, q, state, active):
        return self.inner.control(t, q, state, active)


# --- stopping rules ---------------------------------------------------------

NONE, UP, DOWN, ABS, CAP = 0, 1, 2, 3, 4
KIND_LABELS = ("", "up", "down", "abs", "cap")


@dataclass(frozen=True)
class Crossing:
    """A stopping rule evaluated on the observed path at grid times t > 0.

    Levels are either relative to the start position (``*_factor``) or
    absolute (``*_level``).  ``abs_level`` fires on ``|q| >= abs_level``
    and ``t_cap`` on elapsed local time.  When several fire on the same
    step the priority is cap, abs, up, down.
    """

    up_factor: float | None = None
    down_factor: float | None = None
    up_level: float | None = None
    down_level: float | None = None
    abs_level: float | None = None
    t_cap: float | None = None

    def __post_init__(self):
        if self.up_factor is not None and self.up_level is not None:
            raise InvalidArgument("give either up_factor or up_level, not both")
        if self.down_factor is not None and self.down_level is not None:
            raise InvalidArgument("give either down_factor or down_level, not both")

    def init(self, n):
        return SimpleNamespace(up=np.full(n, math.inf), down=np.full(n, -math.inf))

    def start(self, st, mask, q0):
        if self.up_factor is not None:
            st.up[mask] = self.up_factor * q0[mask]
        elif self.up_level is not None:
            st.up[mask] = self.up_level
        if self.down_factor is not None:
            st.down[mask] = self.down_factor * q0[mask]
        elif self.down_level is not None:
            st.down[mask] = self.down_level

    def check(self, t, q, st, active):
        """Return (fired mask, kind codes, crossed level) for this step."""
        live = active & (t > 0)
        kind = np.zeros(len(q), dtype=np.int8)
        level = np.full(len(q), math.nan)
        down = live & (q <= st.down)
        kind[down], level[down] = DOWN, st.down[down]
        up = live & (q >= st.up)
        kind[up], level[up] = UP, st.up[up]
        if self.abs_level is not None:
            ab = live & (np.abs(q) >= self.abs_level)
            kind[ab], level[ab] = ABS, self.abs_level
        if self.t_cap is not None:
            cap = live & (t >= self.t_cap - _TIME_TOL)
            kind[cap], level[cap] = CAP, math.nan
        return kind != NONE, kind, level


NEVER = Crossing()


class Entry(NamedTuple):
    """What a chooser sees about the paths that just stopped (compressed arrays)."""

    tau: np.ndarray
    q: np.ndarray
    kind: np.ndarray
    q0: np.ndarray
    horizon: np.ndarray
    remaining: np.ndarray


class Choice(NamedTuple):
    index: np.ndarray
    params: dict = {}
    horizon: np.ndarray | None = None


def always(index: int = 0, **params):
    """Chooser that sends every stopped path to child ``index``."""

    def choose(entry: Entry) -> Choice:
        n = len(entry.tau)
        return Choice(np.full(n, index), {k: np.full(n, float(v)) for k, v in params.items()})

    return choose


class Branch(Strategy):
    """Play ``base`` until ``stop`` fires, then hand over to one of ``children``.

    At the stopping time tau the chosen child is started afresh with local
    time 0, start position q(tau) and horizon H - tau (or longer if the
    chooser asks for it).  A child whose horizon would be shorter than the
    time left is a contract violation.
    """

    def __init__(self, base: Strategy, stop: Crossing, children, chooser=None,
                 label: str = "branch", child_labels=None):
        self.base = base
        self.stop = stop
        self.children = list(children)
        self.chooser = chooser or always(0)
        self.label = label
        self.child_labels = list(child_labels or [c.label for c in self.children])

    def init(self, ctx, n):
        return SimpleNamespace(
            ctx=ctx,
            base=self.base.init(ctx, n),
            stop=self.stop.init(n),
            children=[c.init(ctx, n) for c in self.children],
            switched=np.zeros(n, dtype=bool),
            which=np.full(n, -1),
            entry=np.zeros(n),
            horizon=np.zeros(n),
            q0=np.zeros(n),
        )

    def start(self, state, mask, horizon, q0, params):
        state.switched[mask] = False
        state.which[mask] = -1
        state.entry[mask] = 0.0
        state.horizon[mask] = horizon[mask]
        state.q0[mask] = q0[mask]
        self.stop.start(state.stop, mask, q0)
        self.base.start(state.base, mask, horizon, q0, params)

    def _switch(self, state, fired, t, q, kind, level):
        idx = np.flatnonzero(fired)
        remaining = state.horizon[idx] - t[idx]
        entry = Entry(tau=t[idx], q=q[idx], kind=kind[idx], q0=state.q0[idx],
                      horizon=state.horizon[idx], remaining=remaining)
        choice = self.chooser(entry)
        which = np.asarray(choice.index, dtype=int)
        child_h = remaining if choice.horizon is None else np.asarray(choice.horizon, dtype=float)
        if np.any(child_h < remaining - 1e-9):
            raise ContractViolation(
                f"{self.label}: continuation horizon shorter than the time left", t=float(t[idx[0]]))
        n = len(q)
        horizon_full = np.zeros(n)
        horizon_full[idx] = child_h
        state.switched[idx] = True
        state.which[idx] = which
        state.entry[idx] = t[idx]
        for j, child in enumerate(self.children):
            sel = which == j
            if not sel.any():
                continue
            mask = np.zeros(n, dtype=bool)
            mask[idx[sel]] = True
            params = {}
            for key, vals in choice.params.items():
                full = np.zeros(n)
                full[idx] = vals
                params[key] = full
            child.start(state.children[j], mask, horizon_full, q.copy(), params)
            for code in np.unique(kind[mask]):
                m = mask & (kind == code)
                lvl = level[m][0] if m.any() else math.nan
                state.ctx.record(f"{self.label}:{KIND_LABELS[code]}->{self.child_labels[j]}", m, lvl)

    def control(self, t, q, state, active):
        on_base = active & ~state.switched
        if on_base.any():
            fired, kind, level = self.stop.check(t, q, state.stop, on_base)
            if fired.any():
                self._switch(state, fired, t, q, kind, level)
        u = np.zeros(len(q))
        m = active & ~state.switched
        if m.any():
            u = np.where(m, self.base.control(t, q, state.base, m), u)
        for j, child in enumerate(self.children):
            mj = active & state.switched & (state.which == j)
            if mj.any():
                local = np.where(mj, t - state.entry, 0.0)
                u = np.where(mj, child.control(local, q, state.children[j], mj), u)
        return u


def branch(base: Strategy, stop: Crossing, chooser, children=None, **kw) -> Strategy:
    """Build a branching strategy.

    ``chooser`` may be a single Strategy (every stopped path continues with
    it) or a callable ``Entry -> Choice`` selecting among ``children``.
    """
    if isinstance(chooser, Strategy):
        return Branch(base, stop, [chooser], always(0), **kw)
    if children is None:
        raise InvalidArgument("a callable chooser needs the list of children")
    return Branch(base, stop, children, chooser, **kw)


class Select(Strategy):
    """Choose between two strategies per path from the start position."""

    def __init__(self, predicate, if_true: Strategy, if_false: Strategy, label: str = "select"):
        self.predicate = predicate
        self.options = (if_true, if_false)
        self.label = label

    def init(self, ctx, n):
        return SimpleNamespace(ctx=ctx, pick=np.zeros(n, dtype=bool),
                               states=[s.init(ctx, n) for s in self.options])

    def start(self, state, mask, horizon, q0, params):
        pick = np.asarray(self.predicate(q0, horizon), dtype=bool)
        state.pick[mask] = pick[mask]
        yes, no = mask & pick, mask & ~pick
        if yes.any():
            self.options[0].start(state.states[0], yes, horizon, q0, params)
        if no.any():
            self.options[1].start(state.states[1], no, horizon, q0, params)

    def control(self, t, q, state, active):
        u = np.zeros(len(q))
        for flag, strat, st in zip((True, False), self.options, state.states):
            m = active & (state.pick == flag)
            if m.any():
                u = np.where(m, strat.control(t, q, st, m), u)
        return u


def guard_with_lqs(sigma: Strategy, q0_star: float, lqs: Strategy, extra_horizon: float = 0.0,
                   q0: float | None = None) -> Strategy:
    """Play ``sigma`` until |q| first reaches ``q0_star``, then ``lqs`` for the rest.

    The continuation is started with horizon ``H - t* + extra_horizon`` and
    only the part up to H is simulated.  ``lqs`` is mirrored automatically
    when entered at ``-q0_star``.
    """
    if q0 is not None and not q0_star > abs(q0):
        raise InvalidArgument(f"q0_star={q0_star} must exceed |q0|={abs(q0)}")

    def choose(entry: Entry) -> Choice:
        return Choice(np.zeros(len(entry.tau), dtype=int), {}, entry.remaining + extra_horizon)

    return Branch(sigma, Crossing(abs_level=q0_star), [SignNormalized(lqs)], choose,
                  label=f"guard({sigma.label})", child_labels=[lqs.label])


class ABounded(Strategy):
    """Passes controls through, failing loudly if |u| > C0 A^m0 (|q| + 1)."""

    def __init__(self, inner: Strategy, A: float, C0: float, m0: int):
        if not A > 0:
            raise InvalidArgument("A must be positive")
        self.inner = inner
        self.bound = C0 * A ** m0
        self.label = inner.label

    def init(self, ctx, n):
        return self.inner.init(ctx, n)

    def start(self, state, mask, horizon, q0, params):
        self.inner.start(state, mask, horizon, q0, params)

    def control(self, t, q, state, active):
        u = self.inner.control(t, q, state, active)
        limit = self.bound * (np.abs(q) + 1.0) * (1.0 + 1e-12)
        bad = active & (np.abs(u) > limit)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ContractViolation(
                f"A-bound violated at t={t[i]:.6g}: |u|={abs(u[i]):.6g} > {limit[i]:.6g}",
                t=float(t[i]), u=float(u[i]))
        return u


def assert_a_bounded(sigma: Strategy, A: float, C0: float, m0: int) -> Strategy:
    return ABounded(sigma, A, C0, m0)


@dataclass(frozen=True)
class AbarEstimate:
    value: float
    crossing_time: float
    sign: str
    epsilon: float


def estimate_abar(tau: float, epsilon: float, sign: str = "+") -> AbarEstimate:
    """Drift estimate log(1 +/- epsilon) / tau from a band-crossing time."""
    if not tau > 0:
        raise InvalidArgument(f"crossing time must be positive, got {tau}")
    if not 0 < epsilon < 1:
        raise InvalidArgument(f"epsilon must lie in (0, 1), got {epsilon}")
    if sign not in ("+", "-"):
        raise InvalidArgument(f"sign must be '+' or '-', got {sign!r}")
    num = math.log1p(epsilon) if sign == "+" else math.log1p(-epsilon)
    return AbarEstimate(value=num / tau, crossing_time=tau, sign=sign, epsilon=epsilon)
