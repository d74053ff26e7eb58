"""Command-line driver.

Exit codes: 0 success, 1 an embedded check failed, 2 usage error or
malformed input, 3 parameters outside their domain, 4 I/O failure.
Machine output goes to ``--out`` (or stdout); a short summary goes to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from deltarec.distributions import ModelDomainError, ModelSpecError, parse_model
from deltarec.hazard import (
    HazardError,
    build_hazard,
    cond_moment_oracle,
    cond_var_increment,
    delta_rate,
    delta_rate_product,
    telescoping_sum,
)
from deltarec.minima import MinimaError, MinimaSpec, deheuvels_diagnostics, h_log, simulate_partial_minima
from deltarec.montecarlo import ExperimentConfig, ExperimentError, run_experiment, trend_check
from deltarec.normalizers import VARIANT_KEYS, NormalizerError, make_plan
from deltarec.rng import MASK64, RngState

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_DOMAIN, EXIT_IO = 0, 1, 2, 3, 4
DEFAULT_GRID = (1000, 10_000, 100_000, 1_000_000)

PRESETS: dict[str, dict[str, Any]] = {
    "example-5.1-weak": dict(dist="geometric:p=0.5", delta=-1, variant="thm31a", reps=2000, seed=5101),
    "example-5.1-pos": dict(dist="geometric:p=0.5", delta=1, variant="thm41", reps=2000, seed=5102),
    "example-5.2": dict(dist="negbinomial:a=2,p=0.5", delta=-1, variant="cor-simplified", reps=1000, seed=5200),
    "example-5.3": dict(dist="zeta:a=2", delta=-1, variant="cor-simplified", reps=1000, seed=5300),
    "example-5.4-neg": dict(dist="poisson:lambda=1", delta=-1, variant="poisson-special", reps=1000, seed=5401),
    "example-5.4-delta1": dict(dist="poisson:lambda=1", delta=1, variant="poisson-special", reps=1000, seed=5402),
    "example-5.4-delta2": dict(dist="poisson:lambda=1", delta=2, variant="thm41", reps=200, seed=5403),
}

ORACLE_TOL = 1e-10
IDENTITY_TOL = 1e-12


class UsageError(Exception):
    pass


@dataclass
class CliCommand:
    subcommand: str
    options: dict[str, Any] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# argument parsing


def _parse_int(text: str) -> int:
    try:
        value = float(text) if any(c in text for c in ".eE") and not text.lower().startswith("0x") else int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed integer {text!r}") from None
    if isinstance(value, float):
        if not value.is_integer():
            raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
        value = int(value)
    return value


def _parse_grid(text: str) -> tuple[int, ...]:
    items = [s for s in text.split(",") if s.strip()]
    if not items:
        raise argparse.ArgumentTypeError("empty n list")
    grid = tuple(_parse_int(s.strip()) for s in items)
    if any(n < 1 for n in grid):
        raise argparse.ArgumentTypeError("stream lengths must be positive")
    return grid


def _parse_seed(text: str) -> int:
    value = _parse_int(text)
    if not 0 <= value <= MASK64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="deltarec", description="δ-record counting: oracles, normalizers and simulation")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    def common(p, *, need_delta=True, grid_default=DEFAULT_GRID):
        p.add_argument("--dist", required=True, help="geometric:p=..|negbinomial:a=..,p=..|zeta:a=..|poisson:lambda=..|table:FILE|rates:FILE")
        if need_delta:
            p.add_argument("--delta", type=_parse_int, required=True)
        p.add_argument("--n", type=_parse_grid, default=grid_default, help="comma-separated stream lengths, e.g. 1e3,1e4")
        p.add_argument("--out", default=None)
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--depth", type=_parse_int, default=None)

    p = sub.add_parser("simulate", help="Monte Carlo experiment for the normalized count")
    common(p)
    p.add_argument("--reps", type=_parse_int, default=1000)
    p.add_argument("--seed", type=_parse_seed, default=0)
    p.add_argument("--variant", choices=VARIANT_KEYS + ("auto",), default="auto")
    p.add_argument("--method", choices=("jump", "direct"), default="jump")
    p.add_argument("--raw", action="store_true", help="embed per-replication counts")

    p = sub.add_parser("normalizers", help="centering and scaling on an n grid")
    common(p, grid_default=(1_000_000,))
    p.add_argument("--variant", choices=VARIANT_KEYS + ("auto",), default="auto")

    p = sub.add_parser("oracle-check", help="exact identities by brute-force summation")
    common(p, grid_default=(1,))
    p.add_argument("--m-max", type=_parse_int, default=30)

    p = sub.add_parser("minima", help="sums of partial minima and their normalization")
    common(p, need_delta=False, grid_default=(1_000_000,))
    p.add_argument("--reps", type=_parse_int, default=100)
    p.add_argument("--seed", type=_parse_seed, default=0)
    p.add_argument("--z", choices=("survival", "condvar"), default="survival")
    p.add_argument("--delta", type=_parse_int, default=None, help="shift for --z condvar")

    p = sub.add_parser("preset", help="pinned configurations for the worked examples")
    p.add_argument("name", choices=sorted(PRESETS))
    p.add_argument("--n", type=_parse_grid, default=None)
    p.add_argument("--reps", type=_parse_int, default=None)
    p.add_argument("--seed", type=_parse_seed, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--raw", action="store_true")
    return parser


def parse_args(argv: Sequence[str]) -> CliCommand:
    """Parse ``argv`` into a command; raises ``UsageError`` on bad grammar."""
    ns = build_parser().parse_args(list(argv))
    opts = vars(ns)
    return CliCommand(opts.pop("subcommand"), opts)


def config_to_argv(config: ExperimentConfig) -> list[str]:
    """``simulate`` arguments that rebuild ``config``."""
    argv = [
        "simulate",
        "--dist", config.dist if config.dist is not None else config.model.spec(),
        "--delta", str(config.delta),
        "--n", ",".join(str(n) for n in config.n_grid),
        "--reps", str(config.reps),
        "--seed", str(config.master_seed),
        "--variant", config.variant,
        "--method", config.method,
    ]
    if config.keep_raw:
        argv.append("--raw")
    return argv


def command_to_config(cmd: CliCommand) -> ExperimentConfig:
    """Experiment configuration for ``simulate`` and ``preset`` commands."""
    o = cmd.options
    if cmd.subcommand == "preset":
        base = PRESETS[o["name"]]
        return ExperimentConfig(
            model=parse_model(base["dist"]),
            delta=base["delta"],
            variant=base["variant"],
            n_grid=o["n"] or DEFAULT_GRID,
            reps=o["reps"] if o["reps"] is not None else base["reps"],
            master_seed=o["seed"] if o["seed"] is not None else base["seed"],
            keep_raw=o["raw"],
            workers=_workers(),
            dist=base["dist"],
        )
    if o["delta"] == 0:
        raise NormalizerError("delta = 0 has no normalizer")
    return ExperimentConfig(
        model=parse_model(o["dist"]),
        delta=o["delta"],
        variant=o["variant"],
        n_grid=o["n"],
        reps=o["reps"],
        master_seed=o["seed"],
        keep_raw=o["raw"],
        method=o["method"],
        workers=_workers(),
        dist=o["dist"],
    )


def _workers() -> int:
    raw = os.environ.get("DELTAREC_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise UsageError(f"DELTAREC_THREADS must be an integer, got {raw!r}") from None
    if value < 0:
        raise UsageError("DELTAREC_THREADS must be non-negative")
    return value


# ---------------------------------------------------------------------------
# subcommands: each returns (exit code, payload dict, csv rows, summary text)


def _csv_text(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def _run_simulate(cmd: CliCommand):
    config = command_to_config(cmd)
    report = run_experiment(config)
    payload = report.to_dict()
    payload["argv"] = config_to_argv(config)
    if len(config.n_grid) >= 3 and config.n_grid[-1] >= 1000 * config.n_grid[0]:
        passed, table = trend_check(report)
        payload["trend"] = {"passed": passed, "table": table}
    rows = [
        {k: r[k] for k in ("n", "center", "scale", "mean", "var", "skew", "kurt", "ks", "count_mean", "compensator_ratio")}
        for r in report.per_n
    ]
    last = report.per_n[-1]
    summary = (
        f"{payload['plan']['variant']} {config.model.spec()} delta={config.delta} reps={config.reps}: "
        f"n={last['n']} mean(T)={last['mean']:.4f} var(T)={last['var']:.4f} KS={last['ks']:.4f}"
    )
    return EXIT_OK, payload, rows, summary


def _run_normalizers(cmd: CliCommand):
    o = cmd.options
    if o["delta"] == 0:
        raise NormalizerError("delta = 0 has no normalizer")
    model = parse_model(o["dist"])
    table = None
    if o["depth"] is not None:
        table = build_hazard(model, o["delta"], o["depth"])
    plan = make_plan(o["variant"], model, o["delta"], table)
    payload = plan.to_dict(o["n"])
    rows = [dict(g, scale2=g["scale"] ** 2) for g in payload["grid"]]
    g = payload["grid"][-1]
    summary = f"{plan.variant}: n={g['n']} center={g['center']:.6g} scale^2={g['scale'] ** 2:.6g} sigma2={plan.sigma2}"
    return EXIT_OK, payload, rows, summary


def _run_oracle_check(cmd: CliCommand):
    o = cmd.options
    delta = o["delta"]
    if delta == 0:
        raise HazardError("delta must be non-zero")
    model = parse_model(o["dist"])
    table = build_hazard(model, delta, o["depth"])
    ms = range(-1, o["m_max"] + 1)
    k = np.arange(0, 201)
    s1, s2 = delta_rate(model, delta, k), delta_rate_product(model, delta, k)
    checks = [
        ("martingale_mean", max(abs(cond_moment_oracle(model, table, m, 1) - model.survival(m + delta)) for m in ms), ORACLE_TOL),
        ("conditional_variance", max(abs(cond_moment_oracle(model, table, m, 2) - cond_var_increment(table, m)) for m in ms), ORACLE_TOL),
        ("telescoping", max(abs(telescoping_sum(table, m) - model.survival(m + delta)) for m in ms), ORACLE_TOL),
        ("delta_rate_forms", float(np.max(np.abs(s1 - s2) / np.maximum(1.0, np.abs(s1)))), IDENTITY_TOL),
    ]
    if delta > 0:
        checks.append(("variance_forms", float(np.max(np.abs(table.z - table.z_display))), IDENTITY_TOL))
    rows = [{"identity": name, "max_error": err, "tol": tol, "pass": bool(err <= tol)} for name, err, tol in checks]
    ok = all(r["pass"] for r in rows)
    payload = {
        "model": model.to_dict(),
        "delta": delta,
        "depth": table.depth,
        "tail_bound": table.tail_bound,
        "m_range": [-1, o["m_max"]],
        "checks": rows,
        "passed": ok,
    }
    summary = "; ".join(f"{r['identity']}={r['max_error']:.2e}" for r in rows)
    return (EXIT_OK if ok else EXIT_CHECK), payload, rows, summary


def _run_minima(cmd: CliCommand):
    o = cmd.options
    model = parse_model(o["dist"])
    if o["reps"] < 1:
        raise MinimaError("reps must be positive")
    if o["z"] == "survival":
        spec = MinimaSpec.survival(model, o["depth"])
    else:
        if o["delta"] is None or o["delta"] >= 0:
            raise MinimaError("--z condvar needs --delta < 0")
        spec = MinimaSpec.conditional_variance(build_hazard(model, o["delta"], o["depth"]))
    grid = list(o["n"])
    diag = deheuvels_diagnostics(spec, grid)
    samples = np.array(
        [simulate_partial_minima(spec, grid[-1], RngState.for_replication(o["seed"], i), grid) for i in range(o["reps"])]
    )
    rows = []
    for j, n in enumerate(grid):
        ratio = samples[:, j] / h_log(spec, n)
        rows.append(
            {
                "n": n,
                "H": h_log(spec, n),
                "median_ratio": float(np.median(ratio)),
                "mean_ratio": math.fsum(ratio.tolist()) / len(ratio),
                "a1": diag["rows"][j]["a1"],
                "a2": diag["rows"][j]["a2"],
            }
        )
    payload = {
        "model": model.to_dict(),
        "z": o["z"],
        "reps": o["reps"],
        "seed": o["seed"],
        "diagnostics": diag,
        "ratios": rows,
        "samples": {str(n): samples[:, j].tolist() for j, n in enumerate(grid)},
    }
    last = rows[-1]
    summary = f"S_n/H(log n) at n={last['n']}: median={last['median_ratio']:.4f} mean={last['mean_ratio']:.4f}"
    return EXIT_OK, payload, rows, summary


def _emit(cmd: CliCommand, payload: dict, rows: list[dict]) -> None:
    fmt = cmd.options.get("format", "json")
    text = json.dumps(payload, sort_keys=True, indent=1) + "\n" if fmt == "json" else _csv_text(rows)
    out = cmd.options.get("out")
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


HANDLERS = {
    "simulate": _run_simulate,
    "preset": _run_simulate,
    "normalizers": _run_normalizers,
    "oracle-check": _run_oracle_check,
    "minima": _run_minima,
}


def run(cmd: CliCommand) -> int:
    """Execute a parsed command and return its exit code."""
    try:
        code, payload, rows, summary = HANDLERS[cmd.subcommand](cmd)
        _emit(cmd, payload, rows)
    except ModelSpecError as exc:
        print(f"deltarec: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (ModelDomainError, NormalizerError, HazardError, ExperimentError, MinimaError) as exc:
        print(f"deltarec: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"deltarec: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(summary, file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    try:
        cmd = parse_args(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    return run(cmd)


if __name__ == "__main__":
    sys.exit(main())
