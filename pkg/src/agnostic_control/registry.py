"""Strategy specs as short strings, e.g. ``cg:1``, ``opt:-2`` or ``lqs?eps=0.05&A1=20``.

Composite strategies read their constants from an :class:`ExperimentConfig`;
query parameters override individual fields for that strategy only.
"""
from __future__ import annotations

from urllib.parse import parse_qsl

from .composite import (
    LasParams, LqsParams, SigmaStarParams, almost_optimal_strategy, bounded_regret_strategy,
    large_a_strategy, large_q_strategy, zero_start_strategy,
)
from .config import ExperimentConfig
from .errors import InvalidArgument, UnknownStrategy
from .strategies import NULL, ConstantGain, OptimalKnownA, Strategy

_CONFIG_KEYS = {"eps", "eps0", "A", "A1", "c0", "q_big", "q0_star", "q_rare", "C0", "m0"}


def _lqs_params(cfg):
    return LqsParams(eps=cfg.eps, A1=cfg.A1, c0=cfg.c0)


def _lqs(cfg, arg):
    return large_q_strategy(_lqs_params(cfg), cfg.T, q_big=cfg.q_big)


def _br(cfg, arg):
    return bounded_regret_strategy(cfg.T, q_big=cfg.q_big, lqs_params=_lqs_params(cfg))


def _las(cfg, arg):
    br = _br(cfg, None)
    return large_a_strategy(LasParams(cfg.eps, cfg.q0_star, cfg.A), cfg.T, cfg.q0, br_factory=lambda: br)


def _inner(arg):
    # sigma-star:<alpha> wraps the known-drift optimum for belief alpha (default 1)
    return OptimalKnownA(float(arg) if arg else 1.0)


def _sigma_star(cfg, arg):
    return almost_optimal_strategy(_inner(arg), SigmaStarParams.from_config(cfg), cfg.T, cfg.q0)


def _zero_start(cfg, arg):
    def factory(q0):
        sub = cfg.replace(q0=q0)
        return almost_optimal_strategy(_inner(arg), SigmaStarParams.from_config(sub), cfg.T, q0)

    return zero_start_strategy(factory, cfg.eps, cfg.T)


def _cg(cfg, arg):
    if arg is None:
        raise InvalidArgument("cg needs a gain, e.g. cg:1")
    return ConstantGain(float(arg))


def _opt(cfg, arg):
    if arg is None:
        raise InvalidArgument("opt needs a drift belief, e.g. opt:0")
    return OptimalKnownA(float(arg))


def _null(cfg, arg):
    return NULL


BUILDERS = {
    "cg": _cg,
    "opt": _opt,
    "null": _null,
    "lqs": _lqs,
    "las": _las,
    "br": _br,
    "sigma-star": _sigma_star,
    "zero-start": _zero_start,
}


def parse_spec(spec: str) -> tuple[str, str | None, dict]:
    head, _, query = spec.partition("?")
    name, sep, arg = head.partition(":")
    overrides = {}
    for key, value in parse_qsl(query, keep_blank_values=True, strict_parsing=bool(query)):
        if key not in _CONFIG_KEYS:
            raise InvalidArgument(f"unknown strategy parameter {key!r} in {spec!r}")
        overrides[key] = int(value) if key == "m0" else float(value)
    return name.strip(), (arg.strip() if sep else None), overrides


def build_strategy(spec: str, cfg: ExperimentConfig | None = None) -> Strategy:
    """Resolve a strategy spec string against ``cfg`` (default config if omitted)."""
    cfg = cfg or ExperimentConfig()
    try:
        name, arg, overrides = parse_spec(spec)
    except ValueError as exc:
        raise InvalidArgument(f"malformed strategy spec {spec!r}: {exc}") from exc
    if name not in BUILDERS:
        raise UnknownStrategy(f"unknown strategy {name!r}; known: {', '.join(sorted(BUILDERS))}")
    if overrides:
        cfg = cfg.replace(**overrides)
    try:
        strat = BUILDERS[name](cfg, arg)
    except ValueError as exc:
        raise InvalidArgument(f"bad strategy spec {spec!r}: {exc}") from exc
    return strat
