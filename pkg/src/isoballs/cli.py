"""Command-line front end: ``isoballs <command> [options]``.

Every output embeds the model, seed, sample count and package version.
JSON is written with sorted keys and no timing fields, and CSV outputs carry the
same metadata on leading ``#`` lines, so a repeated run with the same
options gives byte-identical files whatever the thread count.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .bounds import (
    CONSTANTS,
    C_gamma,
    coro1_report,
    general_proof_form,
    n_threshold,
    thm1_bound,
    thm2_report,
    variance_bounds,
)
from .coupling import Coupler, CouplingBatch
from .errors import IsoballsError, TooLargeError
from .exact import distance_lower_bound, exact_moments, exact_pmf, kolmogorov_distance
from .model import UrnModel, model_from_json, uniform
from .montecarlo import mc_run
from .streams import chunked, default_threads, fresh_seed, run_chunks
from .verify import chi_square_pvalue, run_suite

SWEEP_COLUMNS = ("n", "m", "alpha", "mu", "sigma", "d_hat", "d_radius", "thm1_bound", "lower_bound")
DEFAULT_SAMPLES = {"simulate": 100_000, "couple": 100_000, "verify": 100_000, "sweep": 20_000}


class ConfigError(Exception):
    """Invalid command-line configuration (exit status 2)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="isoballs", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, samples=True):
        p.add_argument("--model", help="model JSON, a path to a JSON file, or '-' for stdin")
        p.add_argument("--seed", type=int, help="master seed (drawn from OS entropy if omitted)")
        p.add_argument("--threads", type=int, help="worker threads (default: $ISOBALLS_THREADS or CPU count)")
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        if samples:
            p.add_argument("--samples", type=int)

    common(sub.add_parser("exact", help="exact pmf, moments and Kolmogorov distance"), samples=False)
    common(sub.add_parser("simulate", help="Monte Carlo summary"))
    p = sub.add_parser("couple", help="size-biased coupling draws")
    common(p)
    p.add_argument("--coupler", choices=("uniform", "general"))
    p = sub.add_parser("bounds", help="evaluate the distance and variance bounds")
    common(p, samples=False)
    p.add_argument("--alpha", type=float, help="ratio n/m for the proportional-growth limit")
    p = sub.add_parser("verify", help="run the verification suite")
    common(p)
    p.add_argument("--checks", default="sizebias,increment,delta,covariance,rate")
    p = sub.add_parser("sweep", help="CSV of moments, distances and bounds over a parameter range")
    common(p)
    p.add_argument("--alpha", type=float, help="fix n/m while sweeping n")
    p.add_argument("--sweep", required=True, help="KEY=A..B[:STEP] with KEY in n, m, alpha")
    return parser


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def load_model(spec: str | None, required: bool = True) -> UrnModel | None:
    if spec is None:
        if required:
            raise ConfigError("--model is required")
        return None
    if spec == "-":
        text = sys.stdin.read()
    elif spec.lstrip().startswith("{"):
        text = spec
    else:
        path = Path(spec)
        if not path.is_file():
            raise ConfigError(f"--model is neither JSON nor an existing file: {spec!r}")
        text = path.read_text()
    try:
        return model_from_json(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid model JSON: {exc}") from None


def parse_sweep(text: str) -> tuple[str, list[float]]:
    """``n=10..100:10`` to ``("n", [10, 20, ..., 100])``; the end point is inclusive."""
    try:
        key, rng = text.split("=", 1)
        span, _, step_s = rng.partition(":")
        a_s, b_s = span.split("..")
        key = key.strip()
        if key not in ("n", "m", "alpha"):
            raise ValueError
        conv = float if key == "alpha" else int
        a, b = conv(a_s), conv(b_s)
        step = conv(step_s) if step_s else conv(1)
    except ValueError:
        raise ConfigError(f"bad --sweep {text!r}; expected KEY=A..B[:STEP] with KEY in n, m, alpha") from None
    if step <= 0 or b < a:
        raise ConfigError("--sweep needs A <= B and STEP > 0")
    count = int(math.floor((b - a) / step + 1e-9)) + 1
    return key, [a + i * step for i in range(count)]


def _check_positive(name: str, value: int | None, minimum: int = 1):
    if value is not None and value < minimum:
        raise ConfigError(f"--{name} must be >= {minimum}, got {value}")


def _dump_json(obj: dict[str, Any]) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _csv_header(meta: dict[str, Any]) -> str:
    return "".join(f"# {k}: {json.dumps(meta[k], sort_keys=True)}\n" for k in sorted(meta))


def _pmf_csv(support, mass) -> str:
    return "value,probability\n" + "".join(f"{k},{q!r}\n" for k, q in zip(support, mass))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_exact(args, meta) -> tuple[dict, str]:
    model = meta["_model"]
    mu, var = exact_moments(model)
    sigma = math.sqrt(var)
    out: dict[str, Any] = {"mean": mu, "variance": var, "sigma": sigma, "pmf": None, "kolmogorov_distance": None}
    try:
        pmf = exact_pmf(model)
    except TooLargeError as exc:
        out["note"] = f"pmf not computed: {exc}"
        pmf = None
    if pmf is not None:
        out["pmf"] = {str(k): q for k, q in zip(pmf.support, pmf.mass)}
        out["pmf_method"] = pmf.provenance
        if var > 0:
            out["kolmogorov_distance"] = kolmogorov_distance(pmf, mu, sigma)
    if var > 0:
        out["distance_lower_bound"] = distance_lower_bound(sigma)
    csv = _pmf_csv(pmf.support, pmf.mass) if pmf is not None else "value,probability\n"
    return out, csv


def cmd_simulate(args, meta) -> tuple[dict, str]:
    s = mc_run(meta["_model"], meta["samples"], meta["seed"], meta["_threads"])
    out = s.as_dict()
    for k in ("model", "samples", "seed"):
        out.pop(k)
    return out, _pmf_csv(s.pmf.support, s.pmf.mass)


def cmd_couple(args, meta) -> tuple[dict, str]:
    model = meta["_model"]
    if model.n < 2:
        raise ConfigError("coupling needs n >= 2")
    coupler = Coupler(model, args.coupler)
    parts = run_chunks(
        lambda rng, size: coupler.batch(size, rng), chunked(meta["samples"], 1 << 16), meta["seed"], meta["_threads"]
    )
    batch = CouplingBatch.concat(parts)
    inc = batch.increment
    out: dict[str, Any] = {
        "coupler": coupler.method,
        "increment_limit": 2 if coupler.method == "uniform" else 3,
        "max_abs_increment": int(np.abs(inc).max()),
        "mean_increment": float(inc.mean()),
        "mean_y": float(batch.y.mean()),
        "mean_y_sizebiased": float(batch.y_sb.mean()),
        "import_rate": float(batch.b.mean()),
    }
    mu, var = exact_moments(model)
    out["exact_var_over_mean"] = var / mu
    try:
        target = exact_pmf(model).size_biased()
    except TooLargeError:
        out["sizebias_check"] = None
    else:
        vals, cnts = np.unique(batch.y_sb, return_counts=True)
        pval, dof = chi_square_pvalue({int(v): int(c) for v, c in zip(vals, cnts)}, target)
        out["sizebias_check"] = {"p_value": pval, "dof": dof, "passed": pval > 1e-3}
    return out, batch.to_csv()


def cmd_bounds(args, meta) -> tuple[dict, str]:
    model = meta.get("_model")
    if model is None and args.alpha is None:
        raise ConfigError("bounds needs --model and/or --alpha")
    reports = []
    if args.alpha is not None:
        if not args.alpha > 0:
            raise ConfigError("--alpha must be positive")
        reports.append(coro1_report(args.alpha).as_dict())
        reports.append({
            "name": "general_constants",
            "context": {"gamma": 1.0},
            "values": {"C_gamma": C_gamma(1.0), "n_threshold": n_threshold(1.0), "p_max_limit": CONSTANTS["p_max"]},
        })
    if model is not None:
        mu, var = exact_moments(model)
        sigma = math.sqrt(var)
        reports.append(variance_bounds(model).as_dict() | {"exact_variance": var})
        if sigma > 0:
            if model.is_uniform and model.m >= 4 and model.n >= 2:
                reports.append(thm1_bound(model.n, model.m, mu, sigma).as_dict())
            rep = thm2_report(model, sigma).as_dict()
            rep["values"]["proof_form_upper"] = general_proof_form(model.gamma, sigma)
            reports.append(rep)
    return {"constants": CONSTANTS, "reports": reports}, _reports_csv(reports)


def _reports_csv(reports: list[dict]) -> str:
    lines = ["report,quantity,value"]
    for r in reports:
        for k in sorted(r.get("values", {})):
            lines.append(f"{r['name']},{k},{r['values'][k]!r}")
    return "\n".join(lines) + "\n"


def cmd_verify(args, meta) -> tuple[dict, str]:
    checks = tuple(c.strip() for c in args.checks.split(",") if c.strip())
    known = {"sizebias", "increment", "delta", "covariance", "rate"}
    if not checks or set(checks) - known:
        raise ConfigError(f"--checks must be a subset of {sorted(known)}")
    reports = run_suite(meta["samples"], meta["seed"], meta["_threads"], checks)
    out = {"passed": all(r.passed for r in reports), "checks": [r.as_dict() for r in reports]}
    lines = ["check,instances,worst_margin,passed"]
    lines += [f"{r.name},{r.instances},{r.worst_margin!r},{int(r.passed)}" for r in reports]
    return out, "\n".join(lines) + "\n"


def sweep_rows(key: str, values: list, base: UrnModel | None, alpha: float | None, samples: int, seed: int, threads: int):
    rows = []
    for idx, v in enumerate(values):
        if key == "n":
            n = int(v)
            if alpha is not None:
                m = max(1, round(n / alpha))
            elif base is not None:
                m = base.m
            else:
                raise ConfigError("sweeping n needs --alpha or --model to fix m")
        elif key == "m":
            if base is None:
                raise ConfigError("sweeping m needs --model to fix n")
            n, m = base.n, int(v)
        else:
            if base is None:
                raise ConfigError("sweeping alpha needs --model to fix n")
            if not v > 0:
                raise ConfigError("alpha values must be positive")
            n, m = base.n, max(1, round(base.n / v))
        if n < 1 or m < 1:
            raise ConfigError("n and m must be >= 1")
        model = uniform(n, m)
        mu, var = exact_moments(model)
        sigma = math.sqrt(var)
        row: dict[str, Any] = {"n": n, "m": m, "alpha": n / m, "mu": mu, "sigma": sigma}
        row["d_hat"] = row["d_radius"] = row["thm1_bound"] = row["lower_bound"] = None
        if sigma > 0:
            s = mc_run(model, samples, seed + idx, threads, standardize="exact")
            row["d_hat"], row["d_radius"] = s.d_hat, s.d_radius
            row["lower_bound"] = distance_lower_bound(sigma)
            if m >= 4 and n >= 2:
                row["thm1_bound"] = thm1_bound(n, m, mu, sigma).values["distance_upper"]
        rows.append(row)
    return rows


def cmd_sweep(args, meta) -> tuple[dict, str]:
    key, values = parse_sweep(args.sweep)
    base = meta.get("_model")
    if base is not None and not base.is_uniform:
        raise ConfigError("sweep supports uniform models only")
    rows = sweep_rows(key, values, base, args.alpha, meta["samples"], meta["seed"], meta["_threads"])
    fmt = lambda v: "" if v is None else repr(v) if isinstance(v, float) else str(v)  # noqa: E731
    lines = [",".join(SWEEP_COLUMNS)] + [",".join(fmt(r[c]) for c in SWEEP_COLUMNS) for r in rows]
    return {"sweep": args.sweep, "rows": rows}, "\n".join(lines) + "\n"


COMMANDS = {
    "exact": (cmd_exact, True),
    "simulate": (cmd_simulate, True),
    "couple": (cmd_couple, True),
    "bounds": (cmd_bounds, False),
    "verify": (cmd_verify, False),
    "sweep": (cmd_sweep, False),
}


def run(argv: list[str] | None = None) -> tuple[int, str, str | None]:
    """Execute a command; returns ``(exit_code, output_text, out_path)`` without writing."""
    args = build_parser().parse_args(argv)
    fn, needs_model = COMMANDS[args.command]
    model = load_model(args.model, required=needs_model)
    samples = getattr(args, "samples", None)
    _check_positive("samples", samples)
    _check_positive("threads", args.threads)
    if samples is None and args.command in DEFAULT_SAMPLES:
        samples = DEFAULT_SAMPLES[args.command]
    if args.command == "simulate" and samples < 2:
        raise ConfigError("--samples must be >= 2")
    seed = args.seed if args.seed is not None else fresh_seed()
    if seed < 0:
        raise ConfigError("--seed must be non-negative")
    meta: dict[str, Any] = {
        "command": args.command,
        "model": model.to_json_dict() if model is not None else None,
        "samples": samples,
        "seed": seed,
        "version": __version__,
    }
    ctx = dict(meta, _model=model, _threads=args.threads or default_threads())
    result, csv = fn(args, ctx)
    if args.format == "json":
        text = _dump_json(meta | result)
    else:
        text = _csv_header(meta) + csv
    code = 1 if args.command == "verify" and not result["passed"] else 0
    return code, text, args.out


def main(argv: list[str] | None = None) -> int:
    try:
        code, text, out = run(argv)
        if out:
            Path(out).write_text(text)
        else:
            sys.stdout.write(text)
    except (ConfigError, IsoballsError, ValueError, OSError) as exc:
        print(f"isoballs: error: {exc}", file=sys.stderr)
        return 2
    return code


if __name__ == "__main__":
    sys.exit(main())
