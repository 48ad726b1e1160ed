"""Closed-form expected costs for the scalar linear-quadratic problem.

kappa(s, alpha) is the Riccati gain with s units of time remaining, K its
time integral, and j0 = kappa(T,a) q0^2 + K(T,a) the optimal cost when the
drift is known.  Everything accepts numpy arrays where that makes sense.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidArgument

_SERIES_CUTOFF = 1e-6


def _roots(alpha):
    """Return r = sqrt(alpha^2+1), r + alpha and r - alpha without cancellation."""
    alpha = np.asarray(alpha, dtype=float)
    r = np.hypot(alpha, 1.0)
    big = np.abs(alpha) + r  # r + |alpha|, never cancels
    r_plus = np.where(alpha >= 0, big, 1.0 / big)
    r_minus = np.where(alpha >= 0, 1.0 / big, big)
    return r, r_plus, r_minus


def kappa(s, alpha):
    """Riccati gain with ``s`` time remaining for drift belief ``alpha``."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0):
        raise InvalidArgument("kappa requires s >= 0")
    r, r_plus, r_minus = _roots(alpha)
    x = s_arr * r
    th = np.tanh(x)
    one_minus_th = 2.0 / (np.exp(np.minimum(2.0 * x, 700.0)) + 1.0)
    alpha = np.asarray(alpha, dtype=float)
    # r - alpha*tanh(x), split so that large positive alpha does not cancel
    denom = np.where(alpha >= 0, r_minus + alpha * one_minus_th, r - alpha * th)
    out = th / denom
    return out if out.ndim else float(out)


def k_integral(t, alpha):
    """K(t, alpha), the integral of kappa(s, alpha) over s in [0, t]."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise InvalidArgument("k_integral requires t >= 0")
    r, r_plus, r_minus = _roots(alpha)
    decay = np.exp(-2.0 * t_arr * r)
    out = r_plus * t_arr + np.log(r_minus / (2.0 * r)) + np.log1p(decay * r_plus / r_minus)
    out = np.where(t_arr == 0, 0.0, out)
    return out if out.ndim else float(out)


def j0(a, T, q0):
    """Optimal expected cost when the drift ``a`` is known."""
    if not np.all(np.asarray(T) > 0):
        raise InvalidArgument("j0 requires T > 0")
    return kappa(T, a) * np.square(q0) + k_integral(T, a)


def j0_asymptote(a, T, q0):
    """Large-|a| approximation of :func:`j0`."""
    if a == 0:
        raise InvalidArgument("no asymptote at a = 0")
    base = q0 * q0 + T
    return 2.0 * a * base if a > 0 else base / (2.0 * abs(a))


def xt_variance(a, t):
    """Variance of e^{-at} q(t) - q0 for the uncontrolled system; equals t at a = 0."""
    a = float(a)
    t = np.asarray(t, dtype=float)
    y = 2.0 * a * t
    small = np.abs(y) < _SERIES_CUTOFF
    with np.errstate(divide="ignore", invalid="ignore"):
        exact = -np.expm1(-y) / (2.0 * a) if a != 0 else t
    series = t * (1.0 - y / 2.0 + y * y / 6.0)
    out = np.where(small, series, exact)
    return out if out.ndim else float(out)


def cg_cost(alpha, a, T, q0):
    """Expected cost of the constant-gain law u = -alpha q."""
    if alpha < 0:
        raise InvalidArgument(f"constant gain must be >= 0, got {alpha}")
    if not T > 0:
        raise InvalidArgument("cg_cost requires T > 0")
    x = a - alpha
    y = 2.0 * T * x
    if abs(x) * T < _SERIES_CUTOFF:
        # (e^y - 1)/(2x) and ((e^y - 1)/(2x) - T)/(2x) expanded to second order
        growth = T * (1.0 + y / 2.0 + y * y / 6.0)
        excess = T * T * (0.5 + y / 6.0 + y * y / 24.0)
    else:
        with np.errstate(over="ignore"):
            growth = math.expm1(y) / (2.0 * x) if y < 709 else math.inf
        excess = (growth - T) / (2.0 * x)
    return (1.0 + alpha * alpha) * (excess + growth * q0 * q0)


@dataclass(frozen=True)
class GainFunction:
    """Deterministic feedback gain t -> v(t) on [0, T]; ``evaluator`` must accept arrays."""

    evaluator: Callable[[np.ndarray], np.ndarray]
    T: float

    def __call__(self, t):
        return self.evaluator(t)

    @classmethod
    def constant(cls, value: float, T: float) -> "GainFunction":
        return cls(lambda t: np.full_like(np.asarray(t, dtype=float), value), T)

    @classmethod
    def riccati(cls, alpha: float, T: float) -> "GainFunction":
        return cls(lambda t: kappa(np.maximum(T - np.asarray(t, dtype=float), 0.0), alpha), T)


@dataclass(frozen=True)
class CostBreakdown:
    phi0_term: float
    integral_term: float

    @property
    def total(self) -> float:
        return self.phi0_term + self.integral_term


def phi_profile(v: GainFunction, a: float, n: int = 10_000):
    """Solve -phi' = 2 phi (a - v) + 1 + v^2, phi(T) = 0, backward with RK4.

    Returns the grid and phi on it.
    """
    T = v.T
    t = np.linspace(0.0, T, n + 1)
    h = T / n
    v_nodes = np.asarray(v(t), dtype=float)
    v_mid = np.asarray(v(t[:-1] + h / 2), dtype=float)
    if not (np.all(np.isfinite(v_nodes)) and np.all(np.isfinite(v_mid))):
        raise InvalidArgument("gain function must be finite on [0, T]")

    def rhs(phi, vv):
        # d phi / dt
        return -(2.0 * phi * (a - vv) + 1.0 + vv * vv)

    phi = np.empty(n + 1)
    phi[n] = 0.0
    for i in range(n, 0, -1):
        p = phi[i]
        k1 = rhs(p, v_nodes[i])
        k2 = rhs(p - h / 2 * k1, v_mid[i - 1])
        k3 = rhs(p - h / 2 * k2, v_mid[i - 1])
        k4 = rhs(p - h * k3, v_nodes[i - 1])
        phi[i - 1] = p - h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return t, phi


def feedback_cost(v: GainFunction, a: float, T: float, q0: float, n: int = 10_000) -> CostBreakdown:
    """Expected cost of the simple feedback law u = -v(t) q."""
    if abs(v.T - T) > 1e-12:
        v = GainFunction(v.evaluator, T)
    if n % 2:
        n += 1
    t, phi = phi_profile(v, a, n)
    h = T / n
    simpson = h / 3 * (phi[0] + phi[-1] + 4 * phi[1:-1:2].sum() + 2 * phi[2:-1:2].sum())
    return CostBreakdown(phi0_term=float(phi[0] * q0 * q0), integral_term=float(simpson))
