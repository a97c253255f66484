"""Monte Carlo study: covariate generation, outcomes, metrics, and ANOVA.

The study reuses leading sub-blocks of one master covariate matrix per
(rho, replication) across all (n, d) cells, and every scheme inside a
replication sees the identical covariates and the identical outcome
noise. Scheme differences are therefore isolated to the allocation,
which makes the relative metrics precise at small replication counts.

Reduction metrics are relative to complete randomization on the same
draws: r_sigma_bar_sq compares the average (over covariates) variance of
the treatment-control mean difference, r_mse the mean squared error of
the effect estimate. Both are computed within each replication group and
averaged across groups; the group-to-group spread is what the ANOVA uses
as its residual.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .balance import BalanceCriterion, calibrate
from .core import (
    Allocation,
    CovariateMatrix,
    Outcome,
    RngStream,
    as_generator,
    format_float,
    group_means,
    sate_estimator,
    standardize,
)
from .dist import shrinkage_coeff
from .engine import DEFAULT_MAX_DRAWS, rerandomize
from .spectral import decompose, select_k

RERAND_SCHEMES = ("rer", "ridge", "pca")
SURFACES = ("linear", "exp")
BETA_CHOICES = ("ones", "half_doubled", "spectral")

# Stream tags keeping covariate, noise, and allocation randomness apart.
_COV, _NOISE, _ALLOC = 1, 2, 3


@dataclass(frozen=True)
class FactorGrid:
    """Factor levels and settings for one simulation study.

    Complete randomization is always run as the baseline and is not
    listed in `schemes`. `lam` of None means the per-matrix default
    ridge penalty; `replications` must divide evenly into `groups`
    blocks, which supply the within-configuration variance.
    """

    n_levels: tuple[int, ...]
    d_levels: tuple[int, ...]
    rho_levels: tuple[float, ...]
    schemes: tuple[str, ...] = ("pca",)
    surfaces: tuple[str, ...] = ("linear",)
    beta_choices: tuple[str, ...] = ("ones",)
    resid_vars: tuple[float, ...] = (1.0,)
    replications: int = 200
    groups: int = 5
    p_a: float = 0.05
    gamma: float = 0.95
    lam: float | None = None
    tau: float = 1.0
    max_draws: int = DEFAULT_MAX_DRAWS
    ridge_n_cal: int = 10000

    def __post_init__(self):
        for name in ("n_levels", "d_levels", "rho_levels", "schemes",
                     "surfaces", "beta_choices", "resid_vars"):
            if not getattr(self, name):
                raise ValueError(f"{name} must be nonempty")
        if any(n < 2 or n % 2 for n in self.n_levels):
            raise ValueError("n levels must be even and at least 2")
        if any(d < 1 for d in self.d_levels):
            raise ValueError("d levels must be positive")
        if any(not 0.0 <= r < 1.0 for r in self.rho_levels):
            raise ValueError("rho levels must lie in [0, 1)")
        bad = set(self.schemes) - set(RERAND_SCHEMES)
        if bad:
            raise ValueError(f"unknown schemes: {sorted(bad)}")
        bad = set(self.surfaces) - set(SURFACES)
        if bad:
            raise ValueError(f"unknown surfaces: {sorted(bad)}")
        bad = set(self.beta_choices) - set(BETA_CHOICES)
        if bad:
            raise ValueError(f"unknown beta choices: {sorted(bad)}")
        if any(v < 0 for v in self.resid_vars):
            raise ValueError("residual variances must be nonnegative")
        if self.groups < 1 or self.replications < 1:
            raise ValueError("replications and groups must be positive")
        if self.replications % self.groups:
            raise ValueError("replications must be divisible by groups")
        if not 0.0 < self.p_a < 1.0 or not 0.0 < self.gamma < 1.0:
            raise ValueError("p_a and gamma must lie strictly inside (0, 1)")
        if self.lam is not None and self.lam < 0:
            raise ValueError("lambda must be nonnegative")


@dataclass(frozen=True)
class OutcomeModel:
    """y_i = g(x_i, beta) + tau W_i + eps_i with eps_i ~ N(0, resid_sd^2)."""

    surface: str
    beta: np.ndarray
    tau: float = 1.0
    resid_sd: float = 1.0

    def __post_init__(self):
        if self.surface not in SURFACES:
            raise ValueError(f"surface must be one of {SURFACES}")
        if not np.all(np.isfinite(self.beta)) or not np.isfinite(self.tau):
            raise ValueError("model parameters must be finite")
        if not np.isfinite(self.resid_sd) or self.resid_sd < 0:
            raise ValueError("resid_sd must be finite and nonnegative")


@dataclass(frozen=True)
class CellRecord:
    n: int
    d: int
    rho: float
    surface: str
    beta_choice: str
    resid_var: float
    scheme: str
    r_sigma_bar_sq: float
    r_mse: float
    mean_seconds: float
    k_selected: int | None = None
    k_mean: float | None = None
    v_ak: float | None = None
    exhausted: int = 0


@dataclass(frozen=True)
class AnovaRow:
    term: str
    df: int
    sum_sq: float
    mean_sq: float
    f_ratio: float | None


@dataclass(frozen=True)
class SimReport:
    grid: FactorGrid
    master_seed: int
    records: list[CellRecord]
    # group-level metric values backing the records and the ANOVA
    sigma_groups: dict = field(default_factory=dict)
    mse_groups: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)


def gen_covariates(n: int, d: int, rho: float, rng) -> CovariateMatrix:
    """n i.i.d. draws from N(0, (1-rho) I + rho 11'), standardized.

    Sampled by the one-factor construction
    x = sqrt(rho) z0 1 + sqrt(1-rho) z, which requires rho >= 0; the
    exchangeable-negative range is not supported.
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError(
            "rho must lie in [0, 1): the one-factor construction "
            "requires rho >= 0"
        )
    gen = as_generator(rng)
    z0 = gen.standard_normal(n)
    z = gen.standard_normal((n, d))
    raw = np.sqrt(rho) * z0[:, None] + np.sqrt(1.0 - rho) * z
    return standardize(raw)


def nested_submatrix(master: CovariateMatrix, n_sub: int, d_sub: int) -> CovariateMatrix:
    """Leading n_sub x d_sub block of the master, re-standardized."""
    if not 2 <= n_sub <= master.n or not 1 <= d_sub <= master.d:
        raise ValueError("sub-block dimensions out of range")
    return standardize(master.values[:n_sub, :d_sub])


def gen_outcome(x: CovariateMatrix, w: Allocation, model: OutcomeModel, rng) -> Outcome:
    """Draw one outcome vector under the model (fresh noise from rng)."""
    beta = np.asarray(model.beta, dtype=float)
    if beta.shape != (x.d,):
        raise ValueError("beta length disagrees with covariate count")
    if w.n != x.n:
        raise ValueError("allocation length disagrees with covariate rows")
    g = _surface_values(x, model.surface, beta)
    eps = model.resid_sd * as_generator(rng).standard_normal(x.n)
    y = g + model.tau * np.asarray(w.assignment, dtype=float) + eps
    return Outcome(y=y)


def _surface_values(x: CovariateMatrix, surface: str, beta: np.ndarray) -> np.ndarray:
    if surface == "linear":
        return x.values @ beta
    return np.exp(x.values) @ beta


def beta_vector(choice: str, d: int, basis=None, k: int | None = None) -> np.ndarray:
    """Coefficient presets.

    "ones": all ones. "half_doubled": ones on the first ceil(d/2)
    covariates, twos after. "spectral": V beta_tilde with
    beta_tilde_j = j(j+1)/2 on the first k components and zero after,
    so the signal lives entirely in the retained subspace (needs the
    matrix's own basis and k).
    """
    if choice == "ones":
        return np.ones(d)
    if choice == "half_doubled":
        b = np.ones(d)
        b[(d + 1) // 2:] = 2.0
        return b
    if choice == "spectral":
        if basis is None or k is None:
            raise ValueError("spectral beta needs a basis and k")
        btil = np.zeros(basis.p)
        js = np.arange(1, k + 1, dtype=float)
        btil[:k] = js * (js + 1) / 2.0
        return basis.v @ btil
    raise ValueError(f"unknown beta choice {choice!r}")


def _make_criterion(scheme: str, grid: FactorGrid, basis, k: int) -> BalanceCriterion:
    if scheme == "cr":
        return calibrate("cr", grid.p_a, basis)
    if scheme == "rer":
        return calibrate("rer", grid.p_a, basis)
    if scheme == "pca":
        return calibrate("pca", grid.p_a, basis, k=k)
    return calibrate(
        "ridge", grid.p_a, basis, lam=grid.lam, n_cal=grid.ridge_n_cal
    )


def run_study(grid: FactorGrid, master_seed: int) -> SimReport:
    """Run the factorial study and assemble per-cell records.

    Within a replication, the covariate matrix, the selected basis, and
    the outcome noise are shared by every scheme; each scheme only
    contributes its allocation. Metrics are computed per replication
    group against the complete-randomization baseline, then averaged.
    """
    root = RngStream(int(master_seed))
    R, G = grid.replications, grid.groups
    block = R // G
    n_max, d_max = max(grid.n_levels), max(grid.d_levels)
    cells = [(n, d) for n in grid.n_levels for d in grid.d_levels]
    schemes = ("cr",) + tuple(grid.schemes)
    models = [
        (surf, bc, rv)
        for surf in grid.surfaces
        for bc in grid.beta_choices
        for rv in grid.resid_vars
    ]

    records: list[CellRecord] = []
    sigma_groups: dict = {}
    mse_groups: dict = {}
    timings: dict = {}

    for rho_idx, rho in enumerate(grid.rho_levels):
        diffs = {
            (ci, s): np.empty((R, cells[ci][1]))
            for ci in range(len(cells))
            for s in schemes
        }
        taus = {
            (ci, s, mi): np.empty(R)
            for ci in range(len(cells))
            for s in schemes
            for mi in range(len(models))
        }
        secs = {(ci, s): np.empty(R) for ci in range(len(cells)) for s in schemes}
        ks = {ci: np.empty(R, dtype=int) for ci in range(len(cells))}
        vaks = {(ci, s): np.full(R, np.nan) for ci in range(len(cells)) for s in schemes}
        exhausted = {(ci, s): 0 for ci in range(len(cells)) for s in schemes}

        for rep in range(R):
            cov_stream = root.child(_COV).child(rho_idx).child(rep)
            master = gen_covariates(n_max, d_max, rho, cov_stream)
            noise = (
                root.child(_NOISE).child(rho_idx).child(rep)
                .generator().standard_normal(n_max)
            )
            alloc_root = root.child(_ALLOC).child(rho_idx).child(rep)

            for ci, (n, d) in enumerate(cells):
                x = nested_submatrix(master, n, d)
                basis = decompose(x)
                sel = select_k(basis, grid.gamma)
                ks[ci][rep] = sel.k
                betas = {
                    bc: beta_vector(bc, d, basis=basis, k=sel.k)
                    for bc in grid.beta_choices
                }
                surfaces = {
                    (surf, bc): _surface_values(x, surf, betas[bc])
                    for surf in grid.surfaces
                    for bc in grid.beta_choices
                }

                for si, scheme in enumerate(schemes):
                    # Per-allocation cost includes threshold calibration:
                    # each replication's matrix needs its own criterion,
                    # and for ridge that is a Monte Carlo step.
                    t0 = time.perf_counter()
                    crit = _make_criterion(scheme, grid, basis, sel.k)
                    res = rerandomize(
                        x,
                        crit,
                        alloc_root.child(ci).child(si),
                        grid.max_draws,
                        basis=basis,
                    )
                    w = res.allocation
                    secs[(ci, scheme)][rep] = time.perf_counter() - t0
                    if scheme != "cr" and not res.accepted:
                        exhausted[(ci, scheme)] += 1
                    diffs[(ci, scheme)][rep] = group_means(x, w).diff
                    if scheme in ("rer", "pca") and not crit.degenerate:
                        vaks[(ci, scheme)][rep] = shrinkage_coeff(
                            crit.dof, crit.threshold
                        )
                    wvec = np.asarray(w.assignment, dtype=float)
                    for mi, (surf, bc, rv) in enumerate(models):
                        y = (
                            surfaces[(surf, bc)]
                            + grid.tau * wvec
                            + np.sqrt(rv) * noise[:n]
                        )
                        taus[(ci, scheme, mi)][rep] = float(
                            y[wvec == 1].mean() - y[wvec == 0].mean()
                        )

        for ci, (n, d) in enumerate(cells):
            k_counts = np.bincount(ks[ci])
            k_modal = int(k_counts.argmax())
            k_mean = float(ks[ci].mean())
            for scheme in schemes:
                r_sig = np.empty(G)
                for g in range(G):
                    sl = slice(g * block, (g + 1) * block)
                    var_s = diffs[(ci, scheme)][sl].var(axis=0, ddof=1).mean()
                    var_cr = diffs[(ci, "cr")][sl].var(axis=0, ddof=1).mean()
                    r_sig[g] = 1.0 - var_s / var_cr
                sigma_groups[(n, d, rho, scheme)] = r_sig
                timings[(n, d, rho, scheme)] = (
                    float(secs[(ci, scheme)].mean()),
                    float(np.median(secs[(ci, scheme)])),
                )
                vak_arr = vaks[(ci, scheme)]
                vak = (
                    float(np.nanmean(vak_arr))
                    if not np.all(np.isnan(vak_arr))
                    else None
                )
                for mi, (surf, bc, rv) in enumerate(models):
                    r_mse = np.empty(G)
                    for g in range(G):
                        sl = slice(g * block, (g + 1) * block)
                        mse_s = np.mean((taus[(ci, scheme, mi)][sl] - grid.tau) ** 2)
                        mse_cr = np.mean((taus[(ci, "cr", mi)][sl] - grid.tau) ** 2)
                        r_mse[g] = 1.0 - mse_s / mse_cr
                    mse_groups[(n, d, rho, surf, bc, rv, scheme)] = r_mse
                    records.append(
                        CellRecord(
                            n=n,
                            d=d,
                            rho=rho,
                            surface=surf,
                            beta_choice=bc,
                            resid_var=rv,
                            scheme=scheme,
                            r_sigma_bar_sq=float(r_sig.mean()),
                            r_mse=float(r_mse.mean()),
                            mean_seconds=timings[(n, d, rho, scheme)][0],
                            k_selected=k_modal if scheme == "pca" else None,
                            k_mean=k_mean if scheme == "pca" else None,
                            v_ak=vak,
                            exhausted=exhausted[(ci, scheme)],
                        )
                    )

    return SimReport(
        grid=grid,
        master_seed=int(master_seed),
        records=records,
        sigma_groups=sigma_groups,
        mse_groups=mse_groups,
        timings=timings,
    )


def _response_layout(report: SimReport, response: str):
    grid = report.grid
    if response == "r_sigma_bar_sq":
        factors = [
            ("n", list(grid.n_levels)),
            ("d", list(grid.d_levels)),
            ("rho", list(grid.rho_levels)),
            ("scheme", list(grid.schemes)),
        ]
        return factors, report.sigma_groups
    if response == "r_mse":
        factors = [
            ("n", list(grid.n_levels)),
            ("d", list(grid.d_levels)),
            ("rho", list(grid.rho_levels)),
            ("surface", list(grid.surfaces)),
            ("beta", list(grid.beta_choices)),
            ("resid_var", list(grid.resid_vars)),
            ("scheme", list(grid.schemes)),
        ]
        return factors, report.mse_groups
    raise ValueError(f"unknown response {response!r}")


def anova(report: SimReport, response: str) -> list[AnovaRow]:
    """Balanced fixed-effects factorial ANOVA of a reduction metric.

    Every main effect and every interaction among the varied factors is
    decomposed by the standard balanced-design contrasts; the residual is
    the within-configuration (group-to-group) mean square. Rows come back
    sorted by F-ratio, residual last. Needs at least two groups.

    Complete randomization is the reference level the metrics are built
    from, so "scheme" ranges over the rerandomization schemes only.
    """
    grid = report.grid
    if grid.groups < 2:
        raise ValueError("anova needs at least two replication groups")
    factors, table = _response_layout(report, response)
    lens = [len(levels) for _, levels in factors]
    shape = tuple(lens) + (grid.groups,)
    y = np.empty(shape)
    for idx in np.ndindex(*lens):
        key = tuple(factors[i][1][idx[i]] for i in range(len(factors)))
        y[idx] = table[key]
    cell_means = y.mean(axis=-1)
    n_cells = int(np.prod(lens))

    resid_ss = float(((y - cell_means[..., None]) ** 2).sum())
    resid_df = n_cells * (grid.groups - 1)
    resid_ms = resid_ss / resid_df

    active = [i for i, L in enumerate(lens) if L > 1]
    rows: list[AnovaRow] = []
    for r in range(1, len(active) + 1):
        for term_axes in combinations(active, r):
            eff = cell_means
            # Average out the axes not in the term, keeping dims for
            # broadcasting, then center along each axis in the term.
            others = tuple(i for i in range(len(lens)) if i not in term_axes)
            if others:
                eff = eff.mean(axis=others, keepdims=True)
            for ax in term_axes:
                eff = eff - eff.mean(axis=ax, keepdims=True)
            scale = grid.groups * int(np.prod([lens[i] for i in others], dtype=int))
            ss = float(scale * (eff**2).sum())
            df = int(np.prod([lens[i] - 1 for i in term_axes]))
            ms = ss / df
            name = ":".join(factors[i][0] for i in term_axes)
            rows.append(AnovaRow(name, df, ss, ms, ms / resid_ms))

    rows.sort(key=lambda row: row.f_ratio, reverse=True)
    rows.append(AnovaRow("residual", resid_df, resid_ss, resid_ms, None))
    return rows


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format_float(value)
    return str(value)


def write_metrics_csv(report: SimReport, path) -> None:
    """Per-record metrics table. Timing is deliberately not included
    here (it is not reproducible byte for byte); see write_timings_csv."""
    cols = [
        "n", "d", "rho", "surface", "beta", "resid_var", "scheme",
        "r_sigma_bar_sq", "r_mse", "k_selected", "k_mean", "v_ak", "exhausted",
    ]
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(cols)
        for r in report.records:
            out.writerow([
                r.n, r.d, _fmt(r.rho), r.surface, r.beta_choice,
                _fmt(r.resid_var), r.scheme, _fmt(r.r_sigma_bar_sq),
                _fmt(r.r_mse), _fmt(r.k_selected), _fmt(r.k_mean),
                _fmt(r.v_ak), r.exhausted,
            ])


def write_anova_csv(rows: list[AnovaRow], path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["term", "df", "sum_sq", "mean_sq", "f_ratio"])
        for row in rows:
            out.writerow([
                row.term, row.df, _fmt(row.sum_sq), _fmt(row.mean_sq),
                _fmt(row.f_ratio),
            ])


def write_timings_csv(report: SimReport, path) -> None:
    """Wall-clock summaries per cell and scheme. Values vary run to run;
    this file is opt-in at the CLI so default outputs stay deterministic."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["n", "d", "rho", "scheme", "mean_seconds", "median_seconds"])
        for (n, d, rho, scheme), (mean_s, med_s) in sorted(report.timings.items()):
            out.writerow([n, d, _fmt(rho), scheme, _fmt(mean_s), _fmt(med_s)])


def write_summary_json(report: SimReport, path) -> None:
    """Machine-readable study summary (deterministic fields only)."""
    grid = report.grid
    payload = {
        "master_seed": report.master_seed,
        "grid": {
            "n_levels": list(grid.n_levels),
            "d_levels": list(grid.d_levels),
            "rho_levels": list(grid.rho_levels),
            "schemes": list(grid.schemes),
            "surfaces": list(grid.surfaces),
            "beta_choices": list(grid.beta_choices),
            "resid_vars": list(grid.resid_vars),
            "replications": grid.replications,
            "groups": grid.groups,
            "p_a": grid.p_a,
            "gamma": grid.gamma,
            "lambda": grid.lam,
            "tau": grid.tau,
            "max_draws": grid.max_draws,
        },
        "records": [
            {
                "n": r.n,
                "d": r.d,
                "rho": r.rho,
                "surface": r.surface,
                "beta": r.beta_choice,
                "resid_var": r.resid_var,
                "scheme": r.scheme,
                "r_sigma_bar_sq": r.r_sigma_bar_sq,
                "r_mse": r.r_mse,
                "k_selected": r.k_selected,
                "k_mean": r.k_mean,
                "v_ak": r.v_ak,
                "exhausted": r.exhausted,
            }
            for r in report.records
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
