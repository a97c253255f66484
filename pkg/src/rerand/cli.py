"""Command-line front end: allocate, simulate, diagnose.

Exit codes: 0 on success (including rejection exhaustion, which is a
statistical soft failure reported in the output, not an operator error),
1 on validation or I/O failure, 2 on usage errors.

All randomness flows from --seed; without the flag a seed is drawn from
system entropy and printed so the run can be reproduced. Output files
contain no wall-clock values unless --timings is passed, so fixed-seed
reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import secrets
import sys

from .balance import calibrate, choose_lambda, predict_reduction
from .core import (
    RngStream,
    format_float,
    group_means,
    read_covariate_csv,
    standardize,
    write_allocation_csv,
)
from .dist import chi2_quantile, shrinkage_coeff
from .engine import DEFAULT_MAX_DRAWS, complete_randomization, rerandomize
from .simharness import (
    FactorGrid,
    anova,
    gen_covariates,
    run_study,
    write_anova_csv,
    write_metrics_csv,
    write_summary_json,
    write_timings_csv,
)
from .spectral import decompose, select_k

_ALLOCATE_SCHEMA = """\
allocate writes into --out:
  allocation.csv   unit_index, assignment            (deterministic)
  diagnostics.csv  covariate, smd_before, smd_after  (deterministic)
  report.json      scheme, n, d, p_a, gamma, lambda, k, threshold, v_ak,
                   criterion_value, draws_attempted, accepted, degenerate,
                   note, near_equal, seed             (deterministic)
smd_* are standardized treatment-control mean differences; "before" uses
an independent complete randomization from the same seed, "after" the
returned allocation. With --timings, report.json also carries
elapsed_seconds (not reproducible byte for byte).
"""

_SIMULATE_SCHEMA = """\
simulate writes into --out:
  metrics.csv        n, d, rho, surface, beta, resid_var, scheme,
                     r_sigma_bar_sq, r_mse, k_selected, k_mean, v_ak,
                     exhausted                        (deterministic)
  summary.json       study config + the records above (deterministic)
  anova_r_sigma.csv  term, df, sum_sq, mean_sq, f_ratio (deterministic;
                     needs groups >= 2)
  anova_r_mse.csv    same columns                     (deterministic)
  timings.csv        n, d, rho, scheme, mean_seconds, median_seconds
                     (only with --timings; varies run to run)
Config file: one "key = value" per line, '#' comments, comma lists.
Keys: n, d, rho, schemes, surfaces, betas, resid_vars, replications,
groups, pa, gamma, lambda (number or auto), tau, max_draws, ridge_n_cal,
master_n, master_d, seed.
"""

_DIAGNOSE_SCHEMA = """\
diagnose writes into --out:
  spectrum.csv   component_index, sigma, explained_cumulative
  shrinkage.csv  k, a_k, v_ak, v_full, reduction_pct
                 (v_full is the full-rank coefficient at the same p_a;
                 reduction_pct = 100 (1 - v_ak / v_full))
  prv.csv        covariate_index, covariate, prv
  report.json    n, d, p, k_selected, gamma, p_a, a_k, v_ak, v_full
All outputs are deterministic given --seed (synthetic input) or the
input file.
"""


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return int(args.seed)
    seed = secrets.randbits(63)
    print(f"seed: {seed} (drawn from system entropy; pass --seed to reproduce)")
    return seed


def _parse_lambda(text):
    if text is None or text == "auto":
        return None
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"--lambda must be a number or 'auto', got {text!r}")
    if value < 0:
        raise ValueError("--lambda must be nonnegative")
    return value


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cmd_allocate(args) -> int:
    if args.schema:
        print(_ALLOCATE_SCHEMA, end="")
        return 0
    if not args.input:
        raise ValueError("allocate requires --input")
    seed = _resolve_seed(args)
    names, raw = read_covariate_csv(args.input)
    x = standardize(raw)
    if x.n % 2 == 1 and not args.near_equal:
        raise ValueError("odd number of units; pass --near-equal to allow")

    root = RngStream(seed)
    basis = decompose(x)
    sel = select_k(basis, args.gamma)
    lam = _parse_lambda(getattr(args, "lambda"))

    kwargs = {}
    if args.scheme == "pca":
        kwargs["k"] = sel.k
    elif args.scheme == "ridge":
        kwargs["lam"] = lam if lam is not None else choose_lambda(basis, args.pa)
    criterion = calibrate(args.scheme, args.pa, basis, **kwargs)

    baseline = complete_randomization(x.n, root.child(0), near_equal=args.near_equal)
    result = rerandomize(
        x,
        criterion,
        root.child(1),
        max_draws=args.max_draws,
        basis=basis,
        near_equal=args.near_equal,
    )

    os.makedirs(args.out, exist_ok=True)
    write_allocation_csv(os.path.join(args.out, "allocation.csv"), result.allocation)

    before = group_means(x, baseline).diff
    after = group_means(x, result.allocation).diff
    with open(os.path.join(args.out, "diagnostics.csv"), "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["covariate", "smd_before", "smd_after"])
        for name, b, a in zip(names, before, after):
            out.writerow([name, format_float(float(b)), format_float(float(a))])

    v_ak = None
    if criterion.scheme in ("rer", "pca"):
        v_ak = shrinkage_coeff(criterion.dof, criterion.threshold)
    payload = {
        "scheme": criterion.scheme,
        "n": x.n,
        "d": x.d,
        "p_a": args.pa,
        "gamma": args.gamma,
        "lambda": criterion.lam,
        "k": criterion.k,
        "threshold": criterion.threshold,
        "v_ak": v_ak,
        "criterion_value": result.criterion_value,
        "draws_attempted": result.draws_attempted,
        "accepted": result.accepted,
        "degenerate": criterion.degenerate,
        "note": criterion.note,
        "near_equal": bool(args.near_equal),
        "seed": seed,
    }
    if args.timings:
        payload["elapsed_seconds"] = result.elapsed
    _write_json(os.path.join(args.out, "report.json"), payload)

    status = "accepted" if result.accepted else "exhausted (best-so-far returned)"
    print(
        f"{criterion.scheme}: {status} after {result.draws_attempted} draw(s)"
        + (
            f", criterion value {result.criterion_value:.6g}"
            if result.criterion_value is not None
            else ""
        )
    )
    return 0


def _parse_config(path) -> dict:
    known = {
        "n", "d", "rho", "schemes", "surfaces", "betas", "resid_vars",
        "replications", "groups", "pa", "gamma", "lambda", "tau",
        "max_draws", "ridge_n_cal", "master_n", "master_d", "seed",
    }
    cfg: dict = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = text.partition("=")
            key, value = key.strip(), value.strip()
            if key not in known:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            cfg[key] = value
    return cfg


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v.strip()) for v in text.split(","))


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v.strip()) for v in text.split(","))


def _strs(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(","))


def _grid_from_config(cfg: dict) -> FactorGrid:
    for req in ("n", "d", "rho"):
        if req not in cfg:
            raise ValueError(f"config is missing required key {req!r}")
    n_levels = _ints(cfg["n"])
    d_levels = _ints(cfg["d"])
    if "master_n" in cfg:
        master_n = int(cfg["master_n"])
        for n in n_levels:
            if n > master_n:
                raise ValueError(f"n level {n} exceeds master_n {master_n}")
    if "master_d" in cfg:
        master_d = int(cfg["master_d"])
        for d in d_levels:
            if d > master_d:
                raise ValueError(f"d level {d} exceeds master_d {master_d}")
    kwargs = dict(
        n_levels=n_levels,
        d_levels=d_levels,
        rho_levels=_floats(cfg["rho"]),
    )
    if "schemes" in cfg:
        kwargs["schemes"] = _strs(cfg["schemes"])
    if "surfaces" in cfg:
        kwargs["surfaces"] = _strs(cfg["surfaces"])
    if "betas" in cfg:
        kwargs["beta_choices"] = _strs(cfg["betas"])
    if "resid_vars" in cfg:
        kwargs["resid_vars"] = _floats(cfg["resid_vars"])
    if "replications" in cfg:
        kwargs["replications"] = int(cfg["replications"])
    if "groups" in cfg:
        kwargs["groups"] = int(cfg["groups"])
    if "pa" in cfg:
        kwargs["p_a"] = float(cfg["pa"])
    if "gamma" in cfg:
        kwargs["gamma"] = float(cfg["gamma"])
    if "lambda" in cfg:
        kwargs["lam"] = _parse_lambda(cfg["lambda"])
    if "tau" in cfg:
        kwargs["tau"] = float(cfg["tau"])
    if "max_draws" in cfg:
        kwargs["max_draws"] = int(cfg["max_draws"])
    if "ridge_n_cal" in cfg:
        kwargs["ridge_n_cal"] = int(cfg["ridge_n_cal"])
    return FactorGrid(**kwargs)


def _cmd_simulate(args) -> int:
    if args.schema:
        print(_SIMULATE_SCHEMA, end="")
        return 0
    if not args.config:
        raise ValueError("simulate requires --config")
    cfg = _parse_config(args.config)
    grid = _grid_from_config(cfg)
    if args.seed is not None:
        seed = int(args.seed)
    elif "seed" in cfg:
        seed = int(cfg["seed"])
    else:
        seed = secrets.randbits(63)
        print(f"seed: {seed} (drawn from system entropy; pass --seed to reproduce)")

    report = run_study(grid, seed)
    os.makedirs(args.out, exist_ok=True)
    write_metrics_csv(report, os.path.join(args.out, "metrics.csv"))
    write_summary_json(report, os.path.join(args.out, "summary.json"))
    if grid.groups >= 2:
        write_anova_csv(
            anova(report, "r_sigma_bar_sq"),
            os.path.join(args.out, "anova_r_sigma.csv"),
        )
        write_anova_csv(
            anova(report, "r_mse"), os.path.join(args.out, "anova_r_mse.csv")
        )
    else:
        print("groups < 2: skipping ANOVA tables (no within-cell residual)")
    if args.timings:
        write_timings_csv(report, os.path.join(args.out, "timings.csv"))

    exhausted = sum(r.exhausted for r in report.records)
    print(
        f"simulate: {len(report.records)} records, "
        f"{exhausted} exhausted rejection run(s), outputs in {args.out}"
    )
    return 0


def _cmd_diagnose(args) -> int:
    if args.schema:
        print(_DIAGNOSE_SCHEMA, end="")
        return 0
    if args.input:
        names, raw = read_covariate_csv(args.input)
        x = standardize(raw)
    else:
        if args.n is None or args.d is None or args.rho is None:
            raise ValueError("diagnose needs --input or all of --n, --d, --rho")
        seed = _resolve_seed(args)
        x = gen_covariates(args.n, args.d, args.rho, RngStream(seed))
        names = [f"x{i + 1}" for i in range(args.d)]

    basis = decompose(x)
    sel = select_k(basis, args.gamma)
    os.makedirs(args.out, exist_ok=True)

    with open(os.path.join(args.out, "spectrum.csv"), "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["component_index", "sigma", "explained_cumulative"])
        for j in range(basis.p):
            out.writerow([
                j + 1,
                format_float(float(basis.singular_values[j])),
                format_float(float(sel.explained[j])),
            ])

    a_full = chi2_quantile(basis.p, args.pa)
    v_full = shrinkage_coeff(basis.p, a_full)
    with open(os.path.join(args.out, "shrinkage.csv"), "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["k", "a_k", "v_ak", "v_full", "reduction_pct"])
        for k in range(1, basis.p + 1):
            a_k = chi2_quantile(k, args.pa)
            v_k = shrinkage_coeff(k, a_k)
            out.writerow([
                k,
                format_float(a_k),
                format_float(v_k),
                format_float(v_full),
                format_float(100.0 * (1.0 - v_k / v_full)),
            ])

    criterion = calibrate("pca", args.pa, basis, k=sel.k)
    reduction = predict_reduction(criterion, basis)
    with open(os.path.join(args.out, "prv.csv"), "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["covariate_index", "covariate", "prv"])
        for i, name in enumerate(names):
            out.writerow([
                i + 1, name, format_float(float(reduction.per_covariate_prv[i])),
            ])

    _write_json(
        os.path.join(args.out, "report.json"),
        {
            "n": x.n,
            "d": x.d,
            "p": basis.p,
            "k_selected": sel.k,
            "gamma": args.gamma,
            "p_a": args.pa,
            "a_k": criterion.threshold,
            "v_ak": reduction.shrinkage_value,
            "v_full": v_full,
        },
    )
    print(f"diagnose: p = {basis.p}, selected k = {sel.k}, outputs in {args.out}")
    return 0


def _add_common(sub, timings: bool = False) -> None:
    sub.add_argument("--pa", type=float, default=0.05,
                     help="target acceptance probability (default 0.05)")
    sub.add_argument("--gamma", type=float, default=0.95,
                     help="cumulative-variance threshold for k (default 0.95)")
    sub.add_argument("--seed", type=int, default=None,
                     help="master seed; drawn from entropy and printed if absent")
    sub.add_argument("--out", default=".", help="output directory (default .)")
    sub.add_argument("--schema", action="store_true",
                     help="print the output file schemas and exit")
    if timings:
        sub.add_argument("--timings", action="store_true",
                         help="also write wall-clock values (not reproducible)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rerand",
        description="Covariate-balanced treatment allocation by rerandomization",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    alloc = commands.add_parser("allocate", help="allocate units from a covariate CSV")
    alloc.add_argument("--input", help="covariate CSV (header row, numeric cells)")
    alloc.add_argument("--scheme", choices=["cr", "rer", "ridge", "pca"],
                       default="pca", help="randomization scheme (default pca)")
    alloc.add_argument("--lambda", default="auto", dest="lambda",
                       help="ridge penalty, a number or 'auto' (default auto)")
    alloc.add_argument("--max-draws", type=int, default=DEFAULT_MAX_DRAWS,
                       dest="max_draws", help="rejection draw cap (default 1e6)")
    alloc.add_argument("--near-equal", action="store_true", dest="near_equal",
                       help="allow odd n with a near-equal split")
    _add_common(alloc, timings=True)
    alloc.set_defaults(func=_cmd_allocate)

    sim = commands.add_parser("simulate", help="run a factorial simulation study")
    sim.add_argument("--config", help="study config file (key = value lines)")
    _add_common(sim, timings=True)
    sim.set_defaults(func=_cmd_simulate)

    diag = commands.add_parser("diagnose", help="spectral and shrinkage diagnostics")
    diag.add_argument("--input", help="covariate CSV (header row, numeric cells)")
    diag.add_argument("--n", type=int, help="synthetic unit count")
    diag.add_argument("--d", type=int, help="synthetic covariate count")
    diag.add_argument("--rho", type=float, help="synthetic equicorrelation")
    _add_common(diag)
    diag.set_defaults(func=_cmd_diagnose)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
