"""Scripted desk-scale checks of the theory, driven by ``data/claims.json``.

Each check returns evidence rows plus a pass flag.  Parameters come from
the manifest and may be overridden per call; the root seed, worker count
and chunk size always come from the supplied config.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy import integrate

from .analytics import cg_cost, j0, k_integral, kappa
from .composite import SigmaStarParams, almost_optimal_strategy
from .config import ExperimentConfig
from .errors import UnknownClaim
from .experiments import HittingLevels, estimate_cost, hitting_experiment
from .registry import build_strategy
from .sde import BrownianPath, first_crossing, simulate
from .strategies import ConstantGain, OptimalKnownA, estimate_abar


def load_manifest() -> dict:
    with resources.files("agnostic_control").joinpath("data/claims.json").open() as fh:
        return json.load(fh)


@dataclass
class ClaimResult:
    claim: str
    passed: bool
    rows: list[dict]
    params: dict

    def to_csv(self, path):
        cols = list(self.rows[0]) if self.rows else []
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            w.writerows(self.rows)

    def summary(self) -> str:
        return f"{self.claim}: {'PASS' if self.passed else 'FAIL'} ({len(self.rows)} rows)"


def _cfg(base: ExperimentConfig, p: dict, **extra) -> ExperimentConfig:
    keys = ("T", "q0", "dt", "n_paths", "eps", "eps0", "A", "A1", "c0", "q_big", "q_rare")
    changes = {k: p[k] for k in keys if k in p}
    changes.update(extra)
    if "T" in changes and "dt" not in changes:
        changes["dt"] = base.dt
    return base.replace(**changes)


def _check_cg(cfg, p):
    rows = []
    c = _cfg(cfg, p)
    for alpha in p["alphas"]:
        for a in p["drifts"]:
            est = estimate_cost(ConstantGain(float(alpha)), float(a), c)
            exact = cg_cost(float(alpha), float(a), c.T, c.q0)
            z = (est.mean - exact) / est.std_error
            rows.append(dict(alpha=alpha, a=a, mean=est.mean, se=est.std_error, exact=exact,
                             z=z, ok=abs(z) <= p["k_se"]))
    return rows


def _check_opt(cfg, p):
    rows = []
    c = _cfg(cfg, p)
    for a in p["drifts"]:
        est = estimate_cost(OptimalKnownA(float(a)), float(a), c)
        exact = j0(float(a), c.T, c.q0)
        z = (est.mean - exact) / est.std_error
        rows.append(dict(a=a, mean=est.mean, se=est.std_error, j0=exact, z=z, ok=abs(z) <= p["k_se"]))
    return rows


def _check_os(cfg, p):
    rows = []
    c = _cfg(cfg, p)
    for spec in p["strategies"]:
        strat = build_strategy(spec, c)
        for a in p["drifts"]:
            est = estimate_cost(strat, float(a), c)
            exact = j0(float(a), c.T, c.q0)
            rows.append(dict(strategy=spec, a=a, mean=est.mean, se=est.std_error, j0=exact,
                             ok=est.mean >= exact - p["k_se"] * est.std_error))
    return rows


def _check_riccati(cfg, p):
    rng = np.random.default_rng(p["seed"])
    s = rng.uniform(*p["s_range"], p["samples"])
    a = rng.uniform(*p["a_range"], p["samples"])
    h = p["fd_step"]
    k = kappa(s, a)
    deriv = (kappa(s + h, a) - kappa(s - h, a)) / (2 * h)
    fd = np.abs(deriv - (1.0 + 2.0 * a * k - k * k))
    quad = np.array([abs(k_integral(si, ai) - integrate.quad(lambda x: kappa(x, ai), 0.0, si,
                                                              epsabs=1e-13, epsrel=1e-13)[0])
                     for si, ai in zip(s, a)])
    return [dict(check="riccati_fd", max_residual=float(fd.max()), tol=p["fd_tol"],
                 ok=bool(fd.max() < p["fd_tol"])),
            dict(check="k_quadrature", max_residual=float(quad.max()), tol=p["quad_tol"],
                 ok=bool(quad.max() < p["quad_tol"]))]


def _check_asymptotics(cfg, p):
    rows = []
    T, q0 = p["T"], p["q0"]
    base = q0 * q0 + T
    for a in p["drifts"]:
        exact = j0(a, T, q0)
        if a > 0:
            rel = abs(exact - 2 * a * base) / (a * base)
        else:
            rel = abs(exact - base / (2 * abs(a))) / (base / abs(a))
        rows.append(dict(a=a, j0=exact, rel_error=rel, tol=p["tol"], ok=rel < p["tol"]))
    return rows


def _check_reflection(cfg, p):
    c = cfg.replace(T=p["t"], dt=p["dt"], n_paths=p["n_paths"], q0=0.0)
    res = hitting_experiment(0.0, 0.0, HittingLevels(level=p["M"]), c)
    exact = math.erfc(p["M"] / math.sqrt(2 * p["t"]))
    prob, se = res.freq["level"]
    return [dict(M=p["M"], t=p["t"], freq=prob, se=se, exact=exact,
                 ok=abs(prob - exact) <= p["k_se"] * se)]


def _check_lqs(cfg, p):
    rows = []
    c = _cfg(cfg, p)
    strat = build_strategy("lqs", c)
    for a in p["drifts"]:
        est = estimate_cost(strat, float(a), c)
        exact = j0(float(a), c.T, c.q0)
        bound = p["factor"] * exact
        rows.append(dict(a=a, mean=est.mean, se=est.std_error, j0=exact, ratio=est.mean / exact,
                         bound=bound, ok=est.mean <= bound + p["k_se"] * est.std_error))
    return rows


def _check_las(cfg, p):
    rows = []
    c = _cfg(cfg, p)
    strat = build_strategy("las", c)
    for a in p["large"]:
        est = estimate_cost(strat, float(a), c)
        exact = j0(float(a), c.T, c.q0)
        bound = p["factor"] * exact
        rows.append(dict(regime="a>=A", a=a, mean=est.mean, se=est.std_error, bound=bound,
                         ok=est.mean <= bound + p["k_se"] * est.std_error))
    for a in p["small"]:
        est = estimate_cost(strat, float(a), c)
        bound = p["C"] * p["A"] ** 2
        rows.append(dict(regime="a<=A", a=a, mean=est.mean, se=est.std_error, bound=bound,
                         ok=est.mean <= bound))
    return rows


def _check_asharp(cfg, p):
    rows = []
    c = _cfg(cfg, p)
    for a in p["drifts"]:
        res = hitting_experiment(float(a), c.q0, HittingLevels(eps=p["eps"], abar_above=p["A_sharp"]), c)
        prob, se = res.freq["abar_above"]
        rows.append(dict(a=a, freq=prob, se=se, threshold=p["threshold"], ok=prob < p["threshold"]))
    return rows


def _check_decay(cfg, p):
    c = _cfg(cfg, p)
    res = hitting_experiment(p["a"], c.q0, HittingLevels(q0_star=p["q0_star"]), c)
    prob, se = res.freq["ever_star"]
    return [dict(a=p["a"], q0=c.q0, q0_star=p["q0_star"], freq=prob, se=se,
                 threshold=p["threshold"], ok=prob < p["threshold"])]


def _check_two_side(cfg, p):
    c = _cfg(cfg, p)
    t_max = p["c0"] * math.sqrt(p["eps"])
    res = hitting_experiment(p["a"], c.q0, HittingLevels(eps=p["eps"], t_max=t_max), c)
    prob, se = res.freq["up_late"]
    return [dict(a=p["a"], q0=c.q0, eps=p["eps"], t_max=t_max, freq=prob, se=se,
                 threshold=p["threshold"], ok=prob < p["threshold"])]


def _check_one_side(cfg, p):
    c = _cfg(cfg, p)
    rows = []
    for eps in p["eps_values"]:
        res = hitting_experiment(p["a"], c.q0, HittingLevels(eps=eps, q0_star=p["q0_star"]), c)
        prob, se = res.freq["star_before_up"]
        rows.append(dict(eps=eps, freq=prob, se=se, ok=True))
    order = sorted(rows, key=lambda r: -r["eps"])
    for prev, cur in zip(order, order[1:]):
        cur["ok"] = cur["freq"] < prev["freq"]
    return rows


def _check_abar(cfg, p):
    rows = []
    q0, eps, dt = p["q0"], p["eps"], p["dt"]
    for a in p["drifts"]:
        horizon = 2 * math.log1p(eps) / abs(a)
        n = math.ceil(horizon / dt)
        traj = simulate(ConstantGain(0.0), a, q0, n * dt, BrownianPath(dt, np.zeros(n), 0))
        if a > 0:
            tau = first_crossing(traj, None, (1 + eps) * q0, "up")
            est = estimate_abar(tau, eps, "+")
        else:
            tau = first_crossing(traj, None, (1 - eps) * q0, "down")
            est = estimate_abar(tau, eps, "-")
        rel = abs(est.value - a) / abs(a)
        rows.append(dict(a=a, tau=tau, abar=est.value, rel_error=rel, ok=rel < p["tol"]))
    return rows


def _check_main(cfg, p):
    c = _cfg(cfg, p)
    sigma = OptimalKnownA(p["sigma_belief"])
    star = almost_optimal_strategy(sigma, SigmaStarParams.from_config(c), c.T, c.q0)
    slot, k = p["slot"], p["k_se"]
    rows = []
    for a in p["drifts"]:
        a = float(a)
        lhs = estimate_cost(star, a, c)
        if abs(a) <= c.A:
            window = np.unique(np.linspace(a - p["window"] * abs(a), a + p["window"] * abs(a),
                                           p["window_points"]))
            ests = [estimate_cost(sigma, float(b), c, horizon=c.T + c.eps0) for b in window]
            worst = max(ests, key=lambda e: e.mean)
            rhs = slot + (1 + slot) * worst.mean
            se = math.hypot(lhs.std_error, (1 + slot) * worst.std_error)
            part = "A"
        else:
            rhs = slot + (1 + slot) * j0(a, c.T, c.q0)
            se = lhs.std_error
            part = "B"
        rows.append(dict(part=part, a=a, lhs=lhs.mean, lhs_se=lhs.std_error, rhs=rhs,
                         diverged=lhs.diverged, ok=lhs.mean <= rhs + k * se))
    return rows


CHECKS = {
    "cg-closed-form": _check_cg,
    "optimality": _check_opt,
    "lemma-os": _check_os,
    "riccati": _check_riccati,
    "asymptotics": _check_asymptotics,
    "reflection": _check_reflection,
    "lqs-theorem": _check_lqs,
    "las-theorem": _check_las,
    "asharp": _check_asharp,
    "decay": _check_decay,
    "two-side-pro": _check_two_side,
    "one-side-pro": _check_one_side,
    "abar": _check_abar,
    "main-simp": _check_main,
}


def claim_ids() -> list[str]:
    return list(load_manifest())


def verify_claim(claim_id: str, cfg: ExperimentConfig | None = None, **overrides) -> ClaimResult:
    """Run the registered experiment for ``claim_id``; ``overrides`` replace manifest parameters."""
    manifest = load_manifest()
    if claim_id not in manifest or claim_id not in CHECKS:
        raise UnknownClaim(f"unknown claim {claim_id!r}; known: {', '.join(sorted(manifest))}")
    params = dict(manifest[claim_id]["params"])
    params.update(overrides)
    rows = CHECKS[claim_id](cfg or ExperimentConfig(), params)
    for r in rows:
        r["ok"] = bool(r["ok"])
    return ClaimResult(claim_id, all(r["ok"] for r in rows), rows, params)
