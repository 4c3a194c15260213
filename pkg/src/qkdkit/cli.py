"""Command line front-end.

Every subcommand reads JSON, writes one JSON report (stdout or ``--out``)
and exits with the error family's code on failure: 1 parse, 2 validation,
3 dimension, 4 numerical.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .compose import parallel_compose, sequential_compose, transcript_copying_attack
from .distinctness import (
    conformance_check,
    delta_hat,
    delta_tilde,
    p_neq_max_bounds,
    trace_distance,
)
from .errors import BadConfig, DimMismatch, ParseError, QkdkitError
from .keystates import KeyedCQState, security_report
from .protocol import AttackModel, ProtocolConfig, run_protocol
from .statekit import DEFAULT_TOLERANCES, max_dimension, operator_from_json, validate_density

DEFAULT_SEED = 0


def _format_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        return "null"
    s = format(x, ".17g")
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """Deterministic JSON with every float written to 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{pad}{dumps(v, indent, _level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _format_float(float(obj))
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ParseError(f"no such file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc


def _envelope(command: str, seed, result: dict) -> dict:
    return {
        "command": command,
        "version": __version__,
        "seed": seed,
        "tolerances": DEFAULT_TOLERANCES.to_json(),
        "max_dim": max_dimension(),
        "result": result,
    }


# --- subcommands -------------------------------------------------------------


def cmd_metric(args) -> dict:
    rho = validate_density(operator_from_json(load_json(args.a)))
    sigma = validate_density(operator_from_json(load_json(args.b)))
    if rho.dim != sigma.dim:
        raise DimMismatch(f"{rho.dim} vs {sigma.dim}")
    bounds = p_neq_max_bounds(rho, sigma, refine_budget=args.refine, seed=args.seed)
    result = {
        "trace_distance": trace_distance(rho, sigma),
        "delta_tilde_ab": delta_tilde(rho, sigma),
        "delta_tilde_ba": delta_tilde(sigma, rho),
        "delta_hat": delta_hat(rho, sigma),
        "bounds": bounds.to_json(),
    }
    return _envelope("metric", args.seed, result)


def cmd_keystate(args) -> dict:
    state = KeyedCQState.from_json(load_json(args.state))
    return _envelope("keystate", None, security_report(state).to_json())


def _protocol_inputs(obj: dict, seed: int | None = None) -> tuple[ProtocolConfig, AttackModel]:
    if not isinstance(obj, dict):
        raise ParseError("protocol config must be a JSON object")
    attack = AttackModel.from_json(obj.get("attack", {"kind": "passive_depolarizing", "p": 0.0}))
    cfg = ProtocolConfig.from_json({k: v for k, v in obj.items() if k != "attack"})
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg, attack


def cmd_protocol(args) -> dict:
    cfg, attack = _protocol_inputs(load_json(args.config), args.seed)
    run = run_protocol(cfg, attack)
    result = {
        "security": security_report(run.final_state).to_json(),
        "run": run.to_json(),
    }
    return _envelope("protocol", cfg.seed, result)


def _manifest_run(entry: dict, base: Path):
    if "state" in entry:
        return KeyedCQState.from_json(load_json(base / entry["state"]))
    if "config" in entry:
        obj = entry["config"]
        if isinstance(obj, str):
            obj = load_json(base / obj)
        cfg, attack = _protocol_inputs(obj)
        if entry.get("adaptive") == "transcript_copy":
            return transcript_copying_attack(cfg)
        return run_protocol(cfg, attack)
    raise BadConfig("manifest run needs 'state' or 'config'")


def cmd_compose(args) -> dict:
    manifest = load_json(args.manifest)
    base = Path(args.manifest).parent
    try:
        kind = manifest.get("kind", "sequential")
        entries = manifest["runs"]
        repeat = int(manifest.get("repeat", 1))
    except (AttributeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed manifest: {exc}") from exc
    runs = [_manifest_run(e, base) for e in entries] * repeat
    if kind == "sequential":
        report = sequential_compose(runs, mode=manifest.get("mode", "exact"))
    elif kind == "parallel":
        if len(runs) != 2:
            raise BadConfig("parallel composition takes exactly two runs")
        report = parallel_compose(*runs)
    else:
        raise BadConfig(f"unknown composition kind {kind!r}")
    return _envelope("compose", None, report.to_json())


def cmd_axioms(args) -> dict:
    report = conformance_check(trace_distance, samples=args.samples, seed=args.seed)
    return _envelope("axioms", args.seed, {"functional": "trace_distance", **report.to_json()})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qkdkit", description="Executable QKD security checks.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--out", help="write the report here instead of stdout")
        p.set_defaults(func=func)
        return p

    p = add("metric", cmd_metric, "distinctness bounds for two density operators")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--refine", type=int, default=0, help="path refinement budget")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)

    p = add("keystate", cmd_keystate, "security report of a key state")
    p.add_argument("--state", required=True)

    p = add("protocol", cmd_protocol, "exact protocol simulation")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the hash seed")

    p = add("compose", cmd_compose, "composition of several runs")
    p.add_argument("--manifest", required=True)

    p = add("axioms", cmd_axioms, "conformance suite for the trace distance")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        report = args.func(args)
    except QkdkitError as exc:
        print(f"qkdkit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    text = dumps(report) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
