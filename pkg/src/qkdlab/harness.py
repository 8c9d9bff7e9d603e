"""Command-line driver: JSON experiment configs, per-trial rows, CSV/JSON reports.

Usage::

    qkdlab <experiment> --config run.json [--seed N] [--trials N] [--out DIR] [--workers N]
    qkdlab replay --report DIR/<experiment>.json --trial N [--seed N]

Exit codes are 0 on success, 1 for usage or configuration errors and 2 when
any row fails its verification check. Trial ``i`` draws only from the
substreams of ``(seed, i)``, so rows do not depend on worker count or order.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .attack_model import BellDiagonalState, PureAttackState, attack_from_dict, classicalize, random_attack
from .checking import ProtocolConfig, local_equivalence_report, outcome_distribution, random_plan, run_check_phase
from .distillation import exact_pass_probability, sift_sweep
from .qstate import DensityOperator, fidelity_to_pure, partial_trace
from .rng import trial_streams
from .security import (
    fidelity_decomposition_check,
    holevo_report,
    ideal_pairs,
    mix_ensemble,
    purify,
    random_ensemble,
    register_measurement_equivalence,
)

EXPERIMENTS = (
    "run-protocol",
    "verify-classicalization",
    "verify-local-equivalence",
    "verify-security-bounds",
    "sift-sweep",
)
DEFAULT_TOLERANCES = {"exact": 1e-10, "entropy": 1e-9, "sigma": 3.0}
COMMON_COLUMNS = ["experiment", "trial", "seed", "substream", "version"]

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 1, 2

_ATTACK_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "n_pairs": {"type": "integer", "minimum": 1},
        "eve_dim": {"type": "integer", "minimum": 1, "maximum": 16},
        "terms": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["pattern", "coeff", "eve_state"],
                "properties": {
                    "pattern": {"type": "string", "pattern": "^[0-3]+$"},
                    "coeff": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                    "eve_state": {
                        "type": "array",
                        "minItems": 1,
                        "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                    },
                },
            },
        },
        "named": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["none", "bell_flip", "pauli_channel", "intercept_resend"]},
                "params": {"type": "object"},
            },
        },
        "random": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_terms": {"type": "integer", "minimum": 1, "maximum": 64},
                "eve_dim": {"type": "integer", "minimum": 1, "maximum": 16},
            },
        },
    },
    "oneOf": [{"required": ["terms"]}, {"required": ["named"]}, {"required": ["random"]}],
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["experiment", "protocol"],
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "attack": _ATTACK_SCHEMA,
        "protocol": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n_pairs_total", "e_check", "e_cor"],
            "properties": {
                "n_pairs_total": {"type": "integer", "minimum": 2, "maximum": 1000},
                "e_check": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "e_cor": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "trials": {"type": "integer", "minimum": 1, "maximum": 10**7},
            },
        },
        "output_dir": {"type": "string", "minLength": 1},
        "report_format": {"enum": ["csv", "json", "both"]},
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "exact": {"type": "number", "exclusiveMinimum": 0},
                "entropy": {"type": "number", "exclusiveMinimum": 0},
                "sigma": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "params": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["nonlocal", "local"]},
                "n_checked": {"type": "integer", "minimum": 1},
                "kind": {"enum": [1, 2, 3]},
                "ensemble_elements": {"type": "integer", "minimum": 0, "maximum": 16},
            },
        },
    },
}


class ConfigError(ValueError):
    """Configuration problem; maps to exit code 1."""


def load_config(source: str | Path | dict, seed: int | None = None, trials: int | None = None,
                out: str | None = None) -> dict:
    """Read, validate and normalise an experiment config; CLI overrides win."""
    if isinstance(source, dict):
        raw = json.loads(json.dumps(source))
    else:
        try:
            raw = json.loads(Path(source).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {source}: {exc}") from exc
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {path}: {exc.message}") from exc
    cfg = dict(raw)
    protocol = dict(cfg["protocol"])
    protocol.setdefault("seed", 0)
    protocol.setdefault("trials", 1)
    if seed is not None:
        protocol["seed"] = seed
    if trials is not None:
        protocol["trials"] = trials
    cfg["protocol"] = protocol
    cfg.setdefault("attack", {"named": {"kind": "none"}})
    cfg.setdefault("report_format", "both")
    cfg.setdefault("params", {})
    if out is not None:
        cfg["output_dir"] = out
    cfg.setdefault("output_dir", "reports")
    cfg["tolerances"] = {**DEFAULT_TOLERANCES, **cfg.get("tolerances", {})}
    try:
        protocol_config(cfg)
        if cfg["experiment"] != "sift-sweep":
            _fixed_attack(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg["experiment"] in ("verify-classicalization", "verify-security-bounds"):
        attack = cfg["attack"]
        if "named" in attack:
            raise ConfigError(f"{cfg['experiment']} needs a pure attack ('terms' or 'random')")
    if cfg["params"].get("ensemble_elements") and "random" not in cfg["attack"]:
        raise ConfigError("ensemble_elements needs a 'random' attack to size the ensemble")
    return cfg


def protocol_config(cfg: dict) -> ProtocolConfig:
    return ProtocolConfig(**cfg["protocol"])


def _n_pairs(cfg: dict) -> int:
    return int(cfg["attack"].get("n_pairs", cfg["protocol"]["n_pairs_total"]))


def _fixed_attack(cfg: dict):
    """The attack shared by every trial, or None when it is drawn per trial."""
    attack = cfg["attack"]
    if "random" in attack:
        return None
    return attack_from_dict(attack, _n_pairs(cfg))


def _trial_attack(cfg: dict, streams, fixed):
    if fixed is not None:
        return fixed
    desc = cfg["attack"]["random"]
    eve_dim = int(desc.get("eve_dim", cfg["attack"].get("eve_dim", 2)))
    return random_attack(streams.attack, _n_pairs(cfg), eve_dim, int(desc.get("n_terms", 5)))


def _residual_fidelity(residual) -> float:
    if isinstance(residual, BellDiagonalState):
        return float(residual.probs[0])
    if isinstance(residual, PureAttackState):
        return float(residual.pattern_weights()[0])
    if isinstance(residual, DensityOperator):
        return fidelity_to_pure(residual, ideal_pairs(len(residual.layout.dims)))
    raise TypeError(f"unexpected residual {type(residual).__name__}")


def _plan_cells(plan) -> dict:
    return {
        "checked_pairs": " ".join(str(p) for p in plan.checked_pairs),
        "bases": "".join(plan.bases),
    }


def _n_checked(cfg: dict, n_pairs: int) -> int:
    n_checked = int(cfg["params"].get("n_checked", max(1, n_pairs // 2)))
    if n_checked > n_pairs:
        raise ValueError(f"n_checked={n_checked} exceeds the {n_pairs} pairs")
    return n_checked


def _run_protocol(cfg, streams, fixed):
    state = _trial_attack(cfg, streams, fixed)
    mode = cfg["params"].get("mode", "nonlocal")
    out = run_check_phase(state, protocol_config(cfg), streams, mode=mode)
    return {
        "mode": mode,
        **_plan_cells(out.plan),
        "error_bits": "".join(str(r.error_bit) for r in out.records),
        "n_errors": out.n_errors,
        "error_rate": out.error_rate,
        "accepted": out.accepted,
        "residual_fidelity": _residual_fidelity(out.residual),
        "passed": True,
    }


def _verify_classicalization(cfg, streams, fixed):
    state = _trial_attack(cfg, streams, fixed)
    plan = random_plan(state.n_pairs, _n_checked(cfg, state.n_pairs), streams.plan)
    pure = outcome_distribution(state, plan)
    classical = outcome_distribution(classicalize(state), plan)
    dev = max(abs(pure[k] - classical.get(k, 0.0)) for k in pure)
    return {
        "n_pairs": state.n_pairs,
        "eve_dim": state.eve_dim,
        **_plan_cells(plan),
        "max_abs_deviation": float(dev),
        "passed": bool(dev < cfg["tolerances"]["exact"]),
    }


def _verify_local_equivalence(cfg, streams, fixed):
    state = _trial_attack(cfg, streams, fixed)
    n_pairs = state.n_pairs
    plan = random_plan(n_pairs, _n_checked(cfg, n_pairs), streams.plan)
    rep = local_equivalence_report(state, plan)
    return {
        "n_pairs": n_pairs,
        **_plan_cells(plan),
        "distribution_deviation": rep.distribution_deviation,
        "nonlocal_invariance_deviation": rep.nonlocal_invariance_deviation,
        "local_invariance_deviation": rep.local_invariance_deviation,
        "max_abs_deviation": rep.max_deviation,
        "passed": rep.ok(cfg["tolerances"]["exact"]),
    }


def _verify_security_bounds(cfg, streams, fixed):
    state = _trial_attack(cfg, streams, fixed)
    tol = cfg["tolerances"]["entropy"]
    rep = holevo_report(state)
    row = {
        "n_pairs": state.n_pairs,
        "eve_dim": state.eve_dim,
        "S_AB": rep.S_AB,
        "S_E": rep.S_E,
        "chi": rep.chi,
        "fidelity": rep.fidelity,
        "entropy_bound": rep.entropy_bound,
        "max_abs_deviation": abs(rep.S_AB - rep.S_E),
    }
    passed = not rep.violations(tol)
    n_elements = cfg["params"].get("ensemble_elements", 0)
    if n_elements:
        exact = cfg["tolerances"]["exact"]
        ens = random_ensemble(streams.attack, n_elements, state.n_pairs, state.eve_dim)
        dec = fidelity_decomposition_check(ens)
        pur = purify(ens)
        labels = [lab for lab in pur.layout.labels if lab.startswith("pair-")]
        roundtrip = float(np.max(np.abs(partial_trace(pur, labels).matrix - mix_ensemble(ens).matrix)))
        reg = register_measurement_equivalence(pur, ens)
        register_dev = float(np.max(np.abs(reg.probabilities - ens.probs)))
        row.update(
            identity_deviation=dec.identity_deviation,
            term_bound_ok=dec.term_bound_holds(exact),
            roundtrip_deviation=roundtrip,
            register_deviation=register_dev,
            weighted_chi=reg.weighted_chi,
            S_AB_purified=reg.S_AB,
        )
        passed = passed and dec.identity_deviation < exact and dec.term_bound_holds(exact)
        passed = passed and roundtrip < exact and register_dev < exact and reg.bound_holds(tol)
    row["passed"] = bool(passed)
    return row


TRIAL_RUNNERS = {
    "run-protocol": _run_protocol,
    "verify-classicalization": _verify_classicalization,
    "verify-local-equivalence": _verify_local_equivalence,
    "verify-security-bounds": _verify_security_bounds,
}


def _common(cfg: dict, trial: int) -> dict:
    seed = cfg["protocol"]["seed"]
    return {
        "experiment": cfg["experiment"],
        "trial": trial,
        "seed": seed,
        "substream": f"{seed}:{trial}",
        "version": __version__,
    }


def run_trial(cfg: dict, trial: int) -> dict:
    """One report row; depends only on ``cfg`` and ``trial``."""
    streams = trial_streams(cfg["protocol"]["seed"], trial)
    fixed = _fixed_attack(cfg)
    return {**_common(cfg, trial), **TRIAL_RUNNERS[cfg["experiment"]](cfg, streams, fixed)}


def sift_rows(cfg: dict) -> list[dict]:
    """Pass probability for every illegitimate count ``m``; all trials share substream 0."""
    config = protocol_config(cfg)
    kind = int(cfg["params"].get("kind", 1))
    trials = cfg["protocol"]["trials"]
    sigma = cfg["tolerances"]["sigma"]
    sweep = sift_sweep(config, trials, trial_streams(config.seed, 0), kind)
    n = config.n_checked
    tail_mask = np.arange(n + 1) / n > 2 * config.e_cor
    rows = []
    for m in range(config.n_pairs_total + 1):
        p = float(sweep.pass_probability[m])
        exact = exact_pass_probability(m, config, kind)
        se = float(np.sqrt(exact * (1 - exact) / trials))
        z = (p - exact) / se if se > 0 else None
        ok = abs(p - exact) <= sigma * se if se > 0 else p == exact
        counts = sweep.residual_counts[m]
        tail = float(counts[tail_mask].sum() / counts.sum()) if counts.sum() else None
        rows.append(
            {
                **_common(cfg, 0),
                "kind": kind,
                "m": m,
                "trials": trials,
                "pass_probability": p,
                "standard_error": float(sweep.standard_error[m]),
                "exact_pass_probability": exact,
                "z_score": z,
                "residual_tail": tail,
                "passed": bool(ok),
            }
        )
    for prev, row in zip(rows, rows[1:]):
        if row["pass_probability"] > prev["pass_probability"]:
            row["passed"] = False
    return rows


def run_rows(cfg: dict, workers: int = 1) -> list[dict]:
    if cfg["experiment"] == "sift-sweep":
        return sift_rows(cfg)
    trials = range(cfg["protocol"]["trials"])
    job = partial(run_trial, cfg)
    if workers <= 1:
        return [job(t) for t in trials]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, trials, chunksize=max(1, len(trials) // (4 * workers))))


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    columns = list(rows[0]) if rows else COMMON_COLUMNS
    writer = csv.writer(buf)
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c)) for c in columns])
    return buf.getvalue()


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


def summarize(cfg: dict, rows: list[dict]) -> dict:
    failed = [r for r in rows if not r["passed"]]
    key = "m" if cfg["experiment"] == "sift-sweep" else "trial"
    return {
        "version": __version__,
        "experiment": cfg["experiment"],
        "passed": not failed,
        "n_rows": len(rows),
        "n_failed": len(failed),
        "failed_rows": [r[key] for r in failed],
        "tolerances": cfg["tolerances"],
        "config": cfg,
    }


def write_reports(cfg: dict, rows: list[dict]) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    fmt = cfg["report_format"]
    name = cfg["experiment"]
    if fmt in ("csv", "both"):
        (out / f"{name}.csv").write_text(rows_to_csv(rows), newline="")
    if fmt in ("json", "both"):
        (out / f"{name}.json").write_text(_dump(rows))
    (out / "summary.json").write_text(_dump(summarize(cfg, rows)))
    return out


def run_experiment(cfg: dict, workers: int = 1) -> tuple[int, list[dict]]:
    """Run the configured suite, write reports and return ``(exit code, rows)``."""
    rows = run_rows(cfg, workers)
    write_reports(cfg, rows)
    failed = [r for r in rows if not r["passed"]]
    return (EXIT_FAILED if failed else EXIT_OK), rows


def _read_rows(path: Path) -> list[dict]:
    text = path.read_text()
    if path.suffix == ".csv":
        return list(csv.DictReader(io.StringIO(text, newline="")))
    return json.loads(text)


def replay(row: dict, cfg: dict, seed: int | None = None) -> dict:
    """Regenerate one report row.

    Raises ``ConfigError`` when the row was produced by another version.
    ``seed`` overrides the row's seed, which is useful as a negative control.
    """
    if str(row.get("version")) != __version__:
        raise ConfigError(f"row has version {row.get('version')!r}, this build is {__version__}")
    cfg = json.loads(json.dumps(cfg))
    cfg["protocol"]["seed"] = int(row["seed"]) if seed is None else seed
    if cfg["experiment"] == "sift-sweep":
        return sift_rows(cfg)[int(row["m"])]
    return run_trial(cfg, int(row["trial"]))


def rows_match(a: dict, b: dict) -> bool:
    """Cell-by-cell equality in report formatting; works for CSV and JSON rows."""
    keys = set(a) | set(b)
    return all(_cell(a.get(k)) == _cell(b.get(k)) for k in keys)


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qkdlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"qkdlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} suite")
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--trials", type=int, help="override the trial count")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--workers", type=int, default=1, help="worker processes (default 1)")
    p = sub.add_parser("replay", help="regenerate one row of a previous report")
    p.add_argument("--report", required=True, help="report file (.json or .csv) next to its summary.json")
    p.add_argument("--trial", type=int, help="trial index of the row (m for sift-sweep)")
    p.add_argument("--config", help="config to use instead of the one stored in summary.json")
    p.add_argument("--seed", type=int, help="replay with a different seed")
    return parser


def _main_replay(args) -> int:
    report = Path(args.report)
    try:
        rows = _read_rows(report)
        if args.config:
            cfg = load_config(args.config)
        else:
            cfg = json.loads((report.parent / "summary.json").read_text())["config"]
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read report: {exc}") from exc
    key = "m" if cfg["experiment"] == "sift-sweep" else "trial"
    if args.trial is None:
        flagged = [r for r in rows if _cell(r.get("passed")) == "false"]
        if not flagged:
            raise ConfigError("no --trial given and the report has no flagged row")
        row = flagged[0]
    else:
        matches = [r for r in rows if str(r[key]) == str(args.trial)]
        if not matches:
            raise ConfigError(f"report has no row with {key}={args.trial}")
        row = matches[0]
    fresh = replay(row, cfg, args.seed)
    same = rows_match(row, fresh)
    print(_dump({"reproduced": same, "row": fresh}), end="")
    return EXIT_OK if same else EXIT_FAILED


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        if args.command == "replay":
            return _main_replay(args)
        cfg = load_config(args.config, seed=args.seed, trials=args.trials, out=args.out)
        if cfg["experiment"] != args.command:
            raise ConfigError(f"config is for {cfg['experiment']!r}, command is {args.command!r}")
        if args.workers < 1:
            raise ConfigError("--workers must be positive")
        code, rows = run_experiment(cfg, args.workers)
    except ValueError as exc:
        print(f"qkdlab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    key = "m" if cfg["experiment"] == "sift-sweep" else "trial"
    for row in rows:
        if not row["passed"]:
            print(f"qkdlab: FLAGGED {key}={row[key]}: {row}", file=sys.stderr)
    status = "PASS" if code == EXIT_OK else "FAIL"
    print(f"{cfg['experiment']}: {status} ({len(rows)} rows) -> {cfg['output_dir']}")
    return code


if __name__ == "__main__":
    sys.exit(main())
