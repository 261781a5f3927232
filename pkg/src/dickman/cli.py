"""Command-line front end.

Every subcommand is deterministic in its arguments and seed: the same
invocation writes byte-identical output.  Exit status is 0 on success, 1
when a bound check fails and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import rng as _rng
from .core import DickmanSpec, rho_bound, sample_dtheta_s
from .errors import DickmanError
from .metrics import CLAIMS, check_bound, reference_oracle, smooth_distance_lower, wasserstein1_empirical
from .primes import MARK_LAWS, build_prime_table, mu_n, prime_table, sample_prime_sum, save_prime_table
from .stein import solve_stein
from .utilities import ExponentialCARA, Identity, LogShift, PowerMixture, Tabulated
from .witnesses import cosine, hinge, identity, sine

__all__ = ["main", "build_parser"]

PROG = "dickman"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _default_seed() -> int:
    env = os.environ.get("DICKMAN_SEED")
    if env is None or env == "":
        return 0
    try:
        seed = int(env)
    except ValueError:
        raise UsageError(f"DICKMAN_SEED must be an integer, got {env!r}") from None
    return seed


def _nonneg_int(text: str) -> int:
    try:
        v = int(float(text)) if "e" in text.lower() else int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0: {text}")
    return v


def _positive_int(text: str) -> int:
    v = _nonneg_int(text)
    if v == 0:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be positive and finite: {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=_nonneg_int, default=None, help="u64 seed (default: $DICKMAN_SEED or 0)")
    common.add_argument("--output", "-o", default=None, help="write here instead of stdout")
    common.add_argument("--format", choices=("csv", "json"), default=None, help="csv or newline-delimited json")
    common.add_argument("--threads", type=_positive_int, default=None, help="cap on worker threads")

    model = _Parser(add_help=False)
    model.add_argument("--theta", type=_positive_float, default=1.0)
    model.add_argument("--utility", choices=("identity", "exp", "log", "power", "table"), default="identity")
    model.add_argument("--alpha", type=_positive_float, default=1.0, help="risk aversion for --utility exp")
    model.add_argument("--power-a", type=float, default=0.5, help="max exponent for --utility power")
    model.add_argument("--table", default=None, help="two-column x,s(x) CSV for --utility table")

    p = _Parser(prog=PROG, description="Dickman approximation toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("sample", parents=[common, model], help="draw from the depth-n recursion")
    s.add_argument("--depth", type=_nonneg_int, default=60)
    s.add_argument("--samples", type=_nonneg_int, default=10**5)

    d = sub.add_parser("distance", parents=[common, model], help="W1 and smooth lower bound vs a reference")
    d.add_argument("--depth", type=_nonneg_int, default=5)
    d.add_argument("--samples", type=_positive_int, default=10**5)
    d.add_argument("--epsilon", type=_positive_float, default=1e-3, help="certified error of the reference")
    d.add_argument("--n-boot", type=_nonneg_int, default=200)

    b = sub.add_parser("bound-check", parents=[common, model], help="check a registered bound")
    b.add_argument("--claim", default=None)
    b.add_argument("--list", action="store_true", help="list claim ids and statements")
    b.add_argument("--n", type=_positive_int, default=None)
    b.add_argument("--depth", type=_nonneg_int, default=None)
    b.add_argument("--samples", type=_positive_int, default=None)
    b.add_argument("--marks", choices=sorted(MARK_LAWS), default=None)
    b.add_argument("--table-cache", default=None)

    ps = sub.add_parser("prime-sum", parents=[common], help="draw S_n for a prime mark law")
    ps.add_argument("--n", type=_positive_int, default=1000)
    ps.add_argument("--marks", choices=sorted(MARK_LAWS), default="geometric")
    ps.add_argument("--samples", type=_nonneg_int, default=10**5)
    ps.add_argument("--table-cache", default=None)

    st = sub.add_parser("stein", parents=[common, model], help="export a Stein-equation solution")
    st.add_argument("--witness", choices=("cos", "sin", "x", "hinge"), default="cos")
    st.add_argument("--omega", type=_positive_float, default=1.0)
    st.add_argument("--center", type=float, default=1.0, help="hinge location")
    st.add_argument("--x-max", type=_positive_float, default=10.0)
    st.add_argument("--epsilon", type=_positive_float, default=1e-6)

    sub.add_parser("rho", parents=[common, model], help="contraction constant and its certificate")

    pt = sub.add_parser("prime-table", parents=[common], help="build and cache a prime table")
    pt.add_argument("--n", type=_positive_int, default=10**6)
    pt.add_argument("--table-cache", default=None)
    return p


def _utility(args):
    kind = args.utility
    if kind == "identity":
        return Identity()
    if kind == "exp":
        return ExponentialCARA(args.alpha)
    if kind == "log":
        return LogShift()
    if kind == "power":
        if not 0 < args.power_a <= 1:
            raise UsageError("--power-a must lie in (0, 1]")
        return PowerMixture.uniform(args.power_a)
    if args.table is None:
        raise UsageError("--utility table needs --table FILE")
    try:
        data = np.loadtxt(args.table, delimiter=",", comments="#", ndmin=2)
    except OSError as e:
        raise UsageError(f"cannot read {args.table}: {e.strerror}") from None
    except ValueError as e:
        raise UsageError(f"bad table {args.table}: {e}") from None
    if data.shape[1] != 2:
        raise UsageError("table must have two columns")
    return Tabulated(tuple(data[:, 0]), tuple(data[:, 1]))


def _meta_lines(meta: dict) -> list[str]:
    return [f"# {k}={v}" for k, v in meta.items()]


def _fmt(x) -> str:
    return repr(float(x))


def _emit_values(meta: dict, column: str, values: np.ndarray, fmt: str) -> str:
    if fmt == "json":
        lines = [json.dumps({"meta": meta})]
        lines += [json.dumps({column: float(v)}) for v in values]
        return "\n".join(lines) + "\n"
    buf = io.StringIO()
    for line in _meta_lines(meta):
        buf.write(line + "\n")
    buf.write(column + "\n")
    buf.writelines(_fmt(v) + "\n" for v in values)
    return buf.getvalue()


def _emit_record(record: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(record) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(record))
    w.writerow([_fmt(v) if isinstance(v, float) else v for v in record.values()])
    return buf.getvalue()


def _cmd_sample(args) -> tuple[str, int]:
    spec = DickmanSpec(args.theta, _utility(args))
    batch = sample_dtheta_s(spec, args.depth, args.samples, args.seed)
    meta = {
        "command": "sample",
        "theta": args.theta,
        "utility": spec.utility.tag,
        "depth": args.depth,
        "samples": args.samples,
        "seed": args.seed,
        "certified_d1": batch.certified_d1,
        "generator": _rng.GENERATOR_ID,
    }
    return _emit_values(meta, "value", batch.values, args.format or "csv"), 0


def _cmd_distance(args) -> tuple[str, int]:
    if args.utility != "identity":
        raise UsageError("distance compares against the D_theta reference; use --utility identity")
    spec = DickmanSpec(args.theta)
    batch = sample_dtheta_s(spec, args.depth, args.samples, args.seed)
    ref = reference_oracle(args.theta, args.epsilon, args.samples, args.seed + 1)
    w1, w1_se = wasserstein1_empirical(batch, ref, args.n_boot, args.seed)
    low = smooth_distance_lower(batch, ref, details=True)
    record = {
        "theta": args.theta,
        "depth": args.depth,
        "reference_depth": ref.depth_n,
        "reference_slack": float(ref.certified_d1),
        "certified_d1": float(batch.certified_d1),
        "w1": w1,
        "w1_stderr": w1_se,
        "smooth_lower": low.value,
        "smooth_lower_stderr": low.stderr,
        "witness": low.witness,
        "samples": args.samples,
        "seed": args.seed,
    }
    return _emit_record(record, args.format or "json"), 0


def _cmd_bound_check(args) -> tuple[str, int]:
    fmt = args.format or "json"
    if args.list:
        rows = [{"claim_id": c.claim_id, "statement": c.statement} for c in CLAIMS.values()]
        if fmt == "json":
            return "".join(json.dumps(r) + "\n" for r in rows), 0
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["claim_id", "statement"])
        for r in rows:
            w.writerow([r["claim_id"], r["statement"]])
        return buf.getvalue(), 0
    if args.claim is None:
        raise UsageError("bound-check needs --claim ID or --list")
    if args.claim not in CLAIMS:
        raise UsageError(f"unknown claim {args.claim!r} (see bound-check --list)")
    params = {"seed": args.seed, "theta": args.theta, "table_cache": args.table_cache}
    for key in ("n", "depth", "samples", "marks"):
        v = getattr(args, key)
        if v is not None:
            params[key] = v
    if args.utility != "identity":
        params["utility"] = _utility(args)
    report = check_bound(args.claim, params)
    status = 1 if report.verdict == "fail" else 0
    if fmt == "json":
        return report.to_json() + "\n", status
    return _emit_record(report.to_dict(), "csv"), status


def _cmd_prime_sum(args) -> tuple[str, int]:
    table = prime_table(args.n, args.table_cache)
    marks = MARK_LAWS[args.marks]()
    batch = sample_prime_sum(table, marks, args.samples, args.seed)
    meta = {
        "command": "prime-sum",
        "n": args.n,
        "marks": args.marks,
        "mu_n": _fmt(mu_n(table, marks)),
        "samples": args.samples,
        "seed": args.seed,
    }
    return _emit_values(meta, "value", batch.values, args.format or "csv"), 0


def _witness(args):
    if args.witness == "cos":
        return cosine(args.omega)
    if args.witness == "sin":
        return sine(args.omega)
    if args.witness == "x":
        return identity()
    return hinge(args.center)


def _cmd_stein(args) -> tuple[str, int]:
    spec = DickmanSpec(args.theta, _utility(args))
    sol = solve_stein(spec, _witness(args), epsilon=args.epsilon, x_max=args.x_max)
    if (args.format or "csv") == "csv":
        return sol.to_csv(), 0
    meta = {
        "theta": args.theta,
        "utility": spec.utility.tag,
        "K": sol.K,
        "tail_bound": sol.tail_bound,
        "rho": sol.rho,
        "centering": sol.centering,
        "max_residual": sol.max_residual(),
    }
    lines = [json.dumps({"meta": meta})]
    for row in zip(sol.grid, sol.f, sol.f_prime, sol.f_double_prime):
        lines.append(json.dumps(dict(zip(("x", "f", "f_prime", "f_double_prime"), map(float, row)))))
    return "\n".join(lines) + "\n", 0


def _cmd_rho(args) -> tuple[str, int]:
    spec = DickmanSpec(args.theta, _utility(args))
    res = rho_bound(spec)
    if args.format == "json":
        record = {"rho": res.rho, "certified": res.certified, "tag": res.tag, "grid_sup": res.grid_sup}
        return json.dumps(record) + "\n", 0
    if args.format == "csv":
        return _emit_record({"rho": res.rho, "tag": res.tag, "grid_sup": res.grid_sup}, "csv"), 0
    return f"{res.rho!r} {res.tag}\n", 0


def _cmd_prime_table(args) -> tuple[str, int]:
    table = build_prime_table(args.n)
    if args.table_cache:
        save_prime_table(table, args.table_cache)
    record = {
        "n": table.n,
        "p_n": int(table.primes[-1]),
        "mu_geometric": float(table.mu_geometric),
        "mu_bernoulli": float(table.mu_bernoulli),
        "cache": args.table_cache or "",
    }
    return _emit_record(record, args.format or "json"), 0


COMMANDS = {
    "sample": _cmd_sample,
    "distance": _cmd_distance,
    "bound-check": _cmd_bound_check,
    "prime-sum": _cmd_prime_sum,
    "stein": _cmd_stein,
    "rho": _cmd_rho,
    "prime-table": _cmd_prime_table,
}


def _one_line(msg: str) -> str:
    return " ".join(str(msg).split())


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.seed is None:
            args.seed = _default_seed()
        if args.threads is not None:
            _rng.set_max_threads(args.threads)
        text, status = COMMANDS[args.command](args)
    except UsageError as e:
        print(f"{PROG}: error: {_one_line(e)}", file=sys.stderr)
        return 2
    except (DickmanError, ValueError) as e:
        print(f"{PROG}: error: {_one_line(e)}", file=sys.stderr)
        return 2
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return status


if __name__ == "__main__":
    sys.exit(main())
