"""Command-line front end.

Every command writes a JSON run manifest holding the fully resolved argument
list (including the seed), so ``agnostic-control replay MANIFEST`` repeats
the run exactly.  Exit codes: 0 ok, 1 other error, 2 usage, 3 estimation failed, 4 claim
failed.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import secrets
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .analytics import cg_cost, j0, j0_asymptote, k_integral, kappa
from .claims import claim_ids, verify_claim
from .config import ExperimentConfig
from .errors import AgnosticControlError, EstimationFailed, InvalidArgument, UnknownClaim, UnknownStrategy
from .experiments import (
    CSV_HEADER, HittingLevels, estimate_cost, hitting_experiment, regret_curve, worst_case_regret,
)
from .registry import build_strategy

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_ESTIMATION, EXIT_CLAIM = 0, 1, 2, 3, 4

# flag name -> ExperimentConfig field
_CONFIG_FLAGS = {
    "T": "T", "q0": "q0", "dt": "dt", "paths": "n_paths", "seed": "root_seed", "eps": "eps",
    "eps0": "eps0", "A": "A", "A1": "A1", "c0": "c0", "q_big": "q_big", "q0_star": "q0_star",
    "q_rare": "q_rare", "C0": "C0", "m0": "m0", "gamma": "gamma", "workers": "workers",
    "chunk_size": "chunk_size",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(rows, header, path):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    text = buf.getvalue()
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def _config_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("experiment configuration (flags > --config file > defaults)")
    g.add_argument("--config", help="JSON file with ExperimentConfig fields")
    g.add_argument("--seed", type=int, help="root seed; chosen and printed when omitted")
    g.add_argument("--paths", type=int, help="number of Monte Carlo paths")
    g.add_argument("--T", type=float, help="horizon")
    g.add_argument("--q0", type=float, help="starting position")
    g.add_argument("--dt", type=float, help="Euler step")
    g.add_argument("--workers", type=int, help="worker threads (results do not depend on it)")
    g.add_argument("--chunk-size", dest="chunk_size", type=int, help=argparse.SUPPRESS)
    for name in ("eps", "eps0", "A", "A1", "c0", "C0", "gamma"):
        g.add_argument(f"--{name}", type=float)
    g.add_argument("--m0", type=int)
    g.add_argument("--q-big", dest="q_big", type=float)
    g.add_argument("--q0-star", dest="q0_star", type=float)
    g.add_argument("--q-rare", dest="q_rare", type=float)
    g.add_argument("--output", "-o", help="output CSV path (default: stdout)")
    g.add_argument("--manifest", help="run manifest path (default: <command>.manifest.json)")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="agnostic-control",
                     description="Simulate and evaluate control strategies for dq = (aq + u)dt + dW.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _config_parent()

    p = sub.add_parser("oracle", help="closed-form quantities for one (a, T, q0)")
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--q0", type=float, required=True)
    p.add_argument("--alpha", type=float, help="also report the constant-gain cost")
    p.add_argument("--output", "-o")
    p.add_argument("--manifest")

    p = sub.add_parser("estimate", parents=[common], help="Monte Carlo cost of one strategy")
    p.add_argument("--strategy", required=True, help="e.g. cg:1, opt:0, lqs, lqs?eps=0.05")
    p.add_argument("--a", type=float, required=True)

    p = sub.add_parser("regret", parents=[common], help="regret curve over a drift grid")
    p.add_argument("--strategy", required=True)
    p.add_argument("--a-grid", dest="a_grid", required=True, help="lo:hi:n")
    p.add_argument("--kind", choices=("ar", "mr", "hr"), default="mr", help="regret for the summary line")
    p.add_argument("--tail", action="store_true", help="include the large-|a| tail in the worst case")

    p = sub.add_parser("verify", parents=[common], help="run a registered claim check")
    p.add_argument("claim", help="claim id; see 'verify --list'", nargs="?")
    p.add_argument("--list", action="store_true", help="list registered claims")
    p.add_argument("--set", action="append", default=[], metavar="KEY=JSON",
                   help="override a claim parameter, e.g. --set n_paths=2000")

    p = sub.add_parser("hitting", parents=[common], help="crossing frequencies of the uncontrolled system")
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--band", type=float, help="band half-width eps around q0")
    p.add_argument("--t-max", dest="t_max", type=float)
    p.add_argument("--star", type=float, help="disaster level q0*")
    p.add_argument("--level", type=float, help="absolute upward level")
    p.add_argument("--abar-above", dest="abar_above", type=float)

    p = sub.add_parser("sweep", parents=[common], help="cost estimates while varying one config field")
    p.add_argument("--strategy", required=True)
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--param", required=True, help="config field to vary, e.g. eps")
    p.add_argument("--values", required=True, help="comma-separated values")

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest_path")
    p.add_argument("--output", "-o", help="redirect the main output")
    p.add_argument("--manifest", help="where to write the new manifest")
    return parser


def _resolve_config(args) -> ExperimentConfig:
    data = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidArgument(f"cannot read config {args.config}: {exc}") from exc
    for flag, field_name in _CONFIG_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            data[field_name] = value
    return ExperimentConfig.from_dict(data)


def parse_grid(spec: str) -> np.ndarray:
    try:
        lo, hi, n = spec.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError as exc:
        raise InvalidArgument(f"grid must look like lo:hi:n, got {spec!r}") from exc
    if n < 1:
        raise InvalidArgument("grid is empty")
    if n == 1 and lo != hi:
        raise InvalidArgument("a single-point grid needs lo == hi")
    return np.linspace(lo, hi, n)


def _estimate_row(est, a, cfg):
    base = j0(a, cfg.T, cfg.q0)
    return (a, est.mean, est.std_error, base, est.mean - base, est.mean / base,
            est.mean / (base + cfg.gamma), est.n, est.diverged)


def cmd_oracle(args, out):
    if not args.T > 0:
        raise InvalidArgument(f"T must be positive, got T={args.T}")
    header = ["a", "T", "q0", "kappa", "K", "j0", "alpha", "cg_cost", "asymptote"]
    row = [args.a, args.T, args.q0, kappa(args.T, args.a), k_integral(args.T, args.a),
           j0(args.a, args.T, args.q0),
           "" if args.alpha is None else args.alpha,
           "" if args.alpha is None else cg_cost(args.alpha, args.a, args.T, args.q0),
           "" if args.a == 0 else j0_asymptote(args.a, args.T, args.q0)]
    _write_csv([row], header, out)
    return EXIT_OK, None


def cmd_estimate(args, out, cfg):
    strat = build_strategy(args.strategy, cfg)
    est = estimate_cost(strat, args.a, cfg)
    _write_csv([_estimate_row(est, args.a, cfg)], CSV_HEADER, out)
    return EXIT_OK, args.strategy


def cmd_regret(args, out, cfg):
    grid = parse_grid(args.a_grid)
    strat = build_strategy(args.strategy, cfg)
    report = regret_curve(strat, grid, cfg)
    _write_csv(report.rows(), CSV_HEADER, out)
    value, argmax = worst_case_regret(report, args.kind, include_tail=args.tail)
    print(f"worst {args.kind}={value!r} at a={argmax!r}", file=sys.stderr)
    return EXIT_OK, args.strategy


def _parse_sets(items):
    overrides = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise InvalidArgument(f"--set expects KEY=VALUE, got {item!r}")
        try:
            overrides[key] = json.loads(value)
        except json.JSONDecodeError:
            overrides[key] = value
    return overrides


def cmd_verify(args, out, cfg):
    if args.list:
        for cid in claim_ids():
            print(cid)
        return EXIT_OK, None
    if not args.claim:
        raise InvalidArgument("verify needs a claim id (see --list)")
    result = verify_claim(args.claim, cfg, **_parse_sets(args.set))
    cols = list(result.rows[0]) if result.rows else []
    _write_csv(([r[c] for c in cols] for r in result.rows), cols, out)
    print(result.summary(), file=sys.stderr)
    return (EXIT_OK if result.passed else EXIT_CLAIM), None


def cmd_hitting(args, out, cfg):
    levels = HittingLevels(eps=args.band, t_max=args.t_max, q0_star=args.star, level=args.level,
                           abar_above=args.abar_above)
    res = hitting_experiment(args.a, cfg.q0, levels, cfg)
    _write_csv(((name, p, se, res.n) for name, (p, se) in res.freq.items()),
               ["event", "freq", "se", "n"], out)
    return EXIT_OK, None


def cmd_sweep(args, out, cfg):
    field_name = _CONFIG_FLAGS.get(args.param, args.param)
    if field_name not in ExperimentConfig.__dataclass_fields__:
        raise InvalidArgument(f"unknown config field {args.param!r}")
    rows = []
    for raw in args.values.split(","):
        value = int(raw) if field_name in ("n_paths", "m0") else float(raw)
        sub = cfg.replace(**{field_name: value})
        est = estimate_cost(build_strategy(args.strategy, sub), args.a, sub)
        rows.append((field_name, value) + _estimate_row(est, args.a, sub))
    _write_csv(rows, ("param", "value") + CSV_HEADER, out)
    return EXIT_OK, args.strategy


COMMANDS = {"estimate": cmd_estimate, "regret": cmd_regret, "verify": cmd_verify,
            "hitting": cmd_hitting, "sweep": cmd_sweep}


def _with_option(argv, flag, value):
    """Replace or append ``flag value`` in an argument list."""
    argv = list(argv)
    if flag in argv:
        argv[argv.index(flag) + 1] = value
    else:
        argv += [flag, value]
    return argv


def _join_grid_flag(argv):
    """Let ``--a-grid -1:1:3`` through; argparse would read the value as an option."""
    out, i = [], 0
    while i < len(argv):
        if argv[i] == "--a-grid" and i + 1 < len(argv):
            out.append(f"--a-grid={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def _run(argv):
    argv = _join_grid_flag(list(argv))
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "replay":
        try:
            with open(args.manifest_path) as fh:
                manifest = json.load(fh)
            replay_argv = manifest["argv"]
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise InvalidArgument(f"cannot read manifest {args.manifest_path}: {exc}") from exc
        if args.output:
            replay_argv = _with_option(replay_argv, "--output", args.output)
        if args.manifest:
            replay_argv = _with_option(replay_argv, "--manifest", args.manifest)
        return _run(replay_argv)

    argv = list(argv)
    if args.command != "oracle" and args.seed is None:
        args.seed = secrets.randbits(63)
        print(f"seed: {args.seed}", file=sys.stderr)
        argv = _with_option(argv, "--seed", str(args.seed))
    started = datetime.now(timezone.utc).isoformat()
    out = args.output
    if args.command == "oracle":
        code, spec = cmd_oracle(args, out)
        cfg = None
    else:
        cfg = _resolve_config(args)
        code, spec = COMMANDS[args.command](args, out, cfg)
    manifest = {
        "command": args.command,
        "argv": argv,
        "config": cfg.to_dict() if cfg else None,
        "strategy_spec": spec,
        "root_seed": cfg.root_seed if cfg else None,
        "outputs": [out] if out not in (None, "-") else [],
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "exit_code": code,
        "version": __version__,
    }
    path = args.manifest or f"{args.command}.manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        return _run(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (InvalidArgument, UnknownStrategy, UnknownClaim) as exc:
        msg = exc.args[0] if exc.args else str(exc)
        print(f"agnostic-control: error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    except EstimationFailed as exc:
        print(f"agnostic-control: estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except AgnosticControlError as exc:
        print(f"agnostic-control: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
