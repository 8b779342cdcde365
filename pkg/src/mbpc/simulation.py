"""Data generation and the Monte Carlo harness.

Covariates are independent stationary AR(1) columns with unit variance;
errors are AR(1) ("ar1"), AR(1) with conditionally heteroskedastic
innovations tied to the covariate level ("hk"), or i.i.d. ("indep").
Innovations are scaled so that Var(e_it) = 1 exactly for every (i, t).
All randomness flows through seeds derived per replication, so reports are
reproducible and independent of worker count.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .estimator import (
    LloydConfig,
    StartRun,
    align_labels,
    lloyd_fit,
    lloyd_starts,
    relabel_assignment,
)
from .inference import InferenceResult, coverage_fraction, hac_covariance
from .panel import (
    Assignment,
    BlockSpec,
    ClusterConfig,
    PanelData,
    ParamSet,
    evaluate_metrics,
)
from .parallel import parallel_map, split_indices
from .seeds import child_seed
from .selection import cp_select, model_loss

_ERROR_KINDS = ("ar1", "hk", "indep")
_DATA_STREAM = 21
_FIT_STREAM = 22


@dataclass(frozen=True)
class DgpSpec:
    """Complete description of one simulated design."""

    n_units: int
    n_periods: int
    block_spec: BlockSpec
    clusters: ClusterConfig
    theta: ParamSet
    error_kind: str = "ar1"
    rho_x: float = 0.5
    rho_e: float = 0.3
    noise_scale: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_units < 1 or self.n_periods < 1:
            raise ValueError("n_units and n_periods must be positive")
        if self.error_kind not in _ERROR_KINDS:
            raise ValueError(f"error_kind must be one of {_ERROR_KINDS}, got {self.error_kind!r}")
        if self.theta.dims != self.block_spec.dims:
            raise ValueError("theta block widths do not match the block layout")
        if self.theta.counts != self.clusters.counts:
            raise ValueError("theta type counts do not match the cluster configuration")
        if not (abs(self.rho_x) < 1 and abs(self.rho_e) < 1):
            raise ValueError("autoregressive coefficients must lie in (-1, 1)")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be nonnegative")
        if self.error_kind == "indep":
            object.__setattr__(self, "rho_x", 0.0)
            object.__setattr__(self, "rho_e", 0.0)


def generate(spec: DgpSpec) -> tuple[PanelData, ParamSet, Assignment]:
    """Draw one panel: (data, true parameters, true assignment).

    The draw order is fixed (labels, then x column innovations period by
    period, then error innovations period by period), so a given seed always
    produces the same panel.
    """
    rng = np.random.default_rng(np.random.SeedSequence(int(spec.seed)))
    n, t, p = spec.n_units, spec.n_periods, spec.block_spec.total_dim

    labels = np.empty((n, spec.clusters.n_blocks), dtype=np.int64)
    for l, k in enumerate(spec.clusters.counts):
        labels[:, l] = rng.integers(0, k, size=n)
    assignment = Assignment(labels, spec.clusters.counts)

    x = np.empty((n, t, p))
    x[:, 0, :] = rng.standard_normal((n, p))
    sd_x = math.sqrt(1.0 - spec.rho_x**2)
    for s in range(1, t):
        x[:, s, :] = spec.rho_x * x[:, s - 1, :] + sd_x * rng.standard_normal((n, p))

    e = np.empty((n, t))
    e[:, 0] = rng.standard_normal(n)
    sd_e = math.sqrt(1.0 - spec.rho_e**2)
    for s in range(1, t):
        innov = sd_e * rng.standard_normal(n)
        if spec.error_kind == "hk":
            innov = innov * np.sqrt(0.5 + (x[:, s, :] ** 2).sum(axis=1) / (2.0 * p))
        e[:, s] = spec.rho_e * e[:, s - 1] + innov

    comp = spec.theta.composite_matrix(labels)
    y = np.einsum("ntp,np->nt", x, comp) + spec.noise_scale * e
    return PanelData(y, x), spec.theta, assignment


# ---------------------------------------------------------------------------
# designs
# ---------------------------------------------------------------------------


def design_separation(
    alpha: float = math.pi / 2,
    n_units: int = 150,
    n_periods: int = 10,
    error_kind: str = "ar1",
    seed: int = 0,
) -> DgpSpec:
    """Two 2-wide blocks with two types each, separated by the angle alpha."""
    theta1 = np.array([[1.0, math.cos(alpha)], [0.0, math.sin(alpha)]])
    theta2 = np.array([[0.0, -math.sin(alpha)], [1.0, math.cos(alpha)]])
    return DgpSpec(
        n_units=n_units,
        n_periods=n_periods,
        block_spec=BlockSpec((2, 2)),
        clusters=ClusterConfig((2, 2)),
        theta=ParamSet((theta1, theta2)),
        error_kind=error_kind,
        seed=seed,
    )


def design_sample_size(
    n_units: int, n_periods: int, error_kind: str = "ar1", seed: int = 0
) -> DgpSpec:
    """The orthogonal separation design at varying panel sizes."""
    return design_separation(math.pi / 2, n_units, n_periods, error_kind, seed)


def _circle_columns(k: int) -> np.ndarray:
    if not (1 <= k <= 5):
        raise ValueError("type counts on the unit circle must lie in 1..5")
    angles = 2.0 * math.pi * np.arange(1, k + 1) / 5.0
    return np.vstack([np.cos(angles), np.sin(angles)])


def design_clusters(
    k1: int = 2,
    k2: int = 2,
    n_units: int = 150,
    n_periods: int = 10,
    error_kind: str = "ar1",
    seed: int = 0,
) -> DgpSpec:
    """Two 2-wide blocks whose type coefficients sit on the unit circle."""
    return DgpSpec(
        n_units=n_units,
        n_periods=n_periods,
        block_spec=BlockSpec((2, 2)),
        clusters=ClusterConfig((k1, k2)),
        theta=ParamSet((_circle_columns(k1), _circle_columns(k2))),
        error_kind=error_kind,
        seed=seed,
    )


def design_misspec(
    k1: int = 3,
    k2: int = 3,
    n_units: int = 150,
    n_periods: int = 10,
    error_kind: str = "ar1",
    seed: int = 0,
) -> tuple[DgpSpec, BlockSpec, ClusterConfig]:
    """Unit-circle truth with two blocks, plus the single-block fit layout.

    The single-block comparison uses one type per truth-type pair (k1*k2
    composites), so it can represent the truth exactly but must estimate far
    more coefficients.
    """
    spec = design_clusters(k1, k2, n_units, n_periods, error_kind, seed)
    return spec, BlockSpec((4,)), ClusterConfig((k1 * k2,))


def design_imbalance(
    m: int,
    n_units: int = 150,
    n_periods: int = 10,
    error_kind: str = "ar1",
    seed: int = 0,
) -> DgpSpec:
    """Twelve covariates split into blocks of width m and 12 - m, two types each.

    Type coefficients are +/- 1/sqrt(12) in every coordinate, so the total
    signal variance is 1 and narrow first blocks carry weak signal.
    """
    p = 12
    if not (1 <= m <= p - 1):
        raise ValueError(f"m must lie in 1..{p - 1}")
    val = 1.0 / math.sqrt(p)
    theta1 = np.column_stack([np.full(m, val), np.full(m, -val)])
    theta2 = np.column_stack([np.full(p - m, val), np.full(p - m, -val)])
    return DgpSpec(
        n_units=n_units,
        n_periods=n_periods,
        block_spec=BlockSpec((m, p - m)),
        clusters=ClusterConfig((2, 2)),
        theta=ParamSet((theta1, theta2)),
        error_kind=error_kind,
        seed=seed,
    )


def design_dimension(
    p: int,
    n_units: int = 150,
    n_periods: int = 10,
    error_kind: str = "indep",
    seed: int = 0,
) -> DgpSpec:
    """One single-covariate block per covariate, types +1 and -1."""
    if p < 1:
        raise ValueError("p must be positive")
    theta = tuple(np.array([[1.0, -1.0]]) for _ in range(p))
    return DgpSpec(
        n_units=n_units,
        n_periods=n_periods,
        block_spec=BlockSpec((1,) * p),
        clusters=ClusterConfig((2,) * p),
        theta=ParamSet(theta),
        error_kind=error_kind,
        seed=seed,
    )


def design_model_select(
    k1: int = 2,
    k2: int = 3,
    n_units: int = 150,
    n_periods: int = 10,
    error_kind: str = "ar1",
    seed: int = 0,
) -> DgpSpec:
    """Unit-circle truth used for the type-count selection experiments."""
    return design_clusters(k1, k2, n_units, n_periods, error_kind, seed)


# ---------------------------------------------------------------------------
# Monte Carlo driver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class McReport:
    """Per-replication records and aggregates of one experiment."""

    n_reps: int
    columns: dict[str, np.ndarray]
    aggregates: dict[str, float]
    failures: tuple[tuple[int, str], ...]


def _coverage_value(inf: InferenceResult, theta_true: ParamSet) -> float:
    scale = np.maximum(1.0, np.abs(inf.coef))
    if np.all(inf.se <= 1e-14 * scale):
        return float("nan")  # degenerate intervals, coverage undefined
    return coverage_fraction(inf, theta_true)


def _mc_fit_chunk(args: tuple) -> list[tuple[int, dict | str]]:
    spec, reps, seed, config, fit_dims, fit_counts, level, with_inference = args
    fit_blocks = BlockSpec(fit_dims)
    fit_clusters = ClusterConfig(fit_counts)
    matches = fit_dims == spec.block_spec.dims and fit_counts == spec.clusters.counts
    out: list[tuple[int, dict | str]] = []
    for rep in reps:
        try:
            data, theta0, gamma0 = generate(
                dataclasses.replace(spec, seed=child_seed(seed, _DATA_STREAM, rep))
            )
            fit = lloyd_fit(
                data,
                fit_blocks,
                fit_clusters,
                dataclasses.replace(config, seed=child_seed(seed, _FIT_STREAM, rep)),
            )
            row: dict[str, float] = {
                "risk": fit.risk,
                "converged_share": float(np.mean([s.converged for s in fit.starts])),
            }
            if matches:
                al = align_labels(fit.params, theta0)
                gam = relabel_assignment(fit.assignment, al)
                met = evaluate_metrics(data, al.params, gam, theta0, gamma0)
                row["param_mse"] = met.param_mse
                row["function_mse"] = met.function_mse
                row["cluster_loss"] = met.cluster_loss
                row["tuple_loss"] = float(
                    np.mean(np.any(gam.labels != gamma0.labels, axis=1))
                )
                row["collision"] = float(any(al.collisions))
                for l in range(spec.block_spec.n_blocks):
                    wrong = gam.labels[:, l] != gamma0.labels[:, l]
                    row[f"cluster_loss_b{l + 1}"] = float(np.mean(wrong))
                if with_inference:
                    inf = hac_covariance(
                        data, al.params, gam, fit_blocks, fit_clusters, level=level
                    )
                    row["coverage"] = _coverage_value(inf, theta0)
                    truth = theta0.vec()
                    inside = (truth >= inf.ci_lower) & (truth <= inf.ci_upper)
                    pos = 0
                    for l, (d, k) in enumerate(zip(spec.block_spec.dims, spec.clusters.counts)):
                        span = d * k
                        block_inside = inside[pos : pos + span]
                        row[f"coverage_b{l + 1}"] = (
                            float("nan") if np.isnan(row["coverage"]) else float(np.mean(block_inside))
                        )
                        pos += span
            else:
                met = evaluate_metrics(data, fit.params, fit.assignment, theta0, gamma0)
                row["param_mse"] = met.param_mse
                row["function_mse"] = met.function_mse
            out.append((rep, row))
        except Exception as exc:  # recorded, never fatal for the experiment
            out.append((rep, f"{type(exc).__name__}: {exc}"))
    return out


def _collect(
    n_reps: int, results: list[tuple[int, dict | str]]
) -> tuple[dict[str, np.ndarray], dict[str, float], tuple[tuple[int, str], ...]]:
    failures: list[tuple[int, str]] = []
    names: list[str] = []
    for _rep, row in results:
        if isinstance(row, dict):
            for key in row:
                if key not in names:
                    names.append(key)
    columns = {name: np.full(n_reps, np.nan) for name in names}
    for rep, row in results:
        if isinstance(row, dict):
            for key, value in row.items():
                columns[key][rep] = value
        else:
            failures.append((rep, row))
    aggregates: dict[str, float] = {}
    for name, values in columns.items():
        valid = values[~np.isnan(values)]
        aggregates[name] = float(valid.mean()) if valid.size else float("nan")
        aggregates[f"{name}_se"] = (
            float(valid.std(ddof=1) / math.sqrt(valid.size)) if valid.size > 1 else float("nan")
        )
    aggregates["n_failures"] = float(len(failures))
    return columns, aggregates, tuple(failures)


def run_mc(
    spec: DgpSpec,
    n_reps: int,
    config: LloydConfig | None = None,
    seed: int = 0,
    fit_block_spec: BlockSpec | None = None,
    fit_clusters: ClusterConfig | None = None,
    level: float = 0.95,
    with_inference: bool = True,
    n_jobs: int = 1,
) -> McReport:
    """Repeatedly draw, fit, align, and score one design.

    Replication r draws its data and fit seeds from (seed, r), so any subset
    of replications can be reproduced and results do not depend on n_jobs.
    An optional fit layout different from the truth (misspecification) limits
    the metrics to the label-free ones.  Per-replication exceptions are
    recorded as failures and excluded from aggregates.
    """
    config = config or LloydConfig()
    fit_dims = (fit_block_spec or spec.block_spec).dims
    fit_counts = (fit_clusters or spec.clusters).counts
    chunks = split_indices(n_reps, n_jobs if n_jobs > 1 else 1)
    tasks = [
        (spec, reps, seed, config, fit_dims, fit_counts, level, with_inference)
        for reps in chunks
    ]
    results = [r for part in parallel_map(_mc_fit_chunk, tasks, n_jobs) for r in part]
    columns, aggregates, failures = _collect(n_reps, results)
    return McReport(n_reps=n_reps, columns=columns, aggregates=aggregates, failures=failures)


def _mc_select_chunk(args: tuple) -> list[tuple[int, dict | str]]:
    spec, reps, seed, config, k_max, epsilon, grid_cap = args
    out: list[tuple[int, dict | str]] = []
    for rep in reps:
        try:
            data, _theta0, _gamma0 = generate(
                dataclasses.replace(spec, seed=child_seed(seed, _DATA_STREAM, rep))
            )
            sel = cp_select(
                data,
                spec.block_spec,
                k_max,
                dataclasses.replace(config, seed=child_seed(seed, _FIT_STREAM, rep)),
                epsilon=epsilon,
                grid_cap=grid_cap,
            )
            row = {
                "model_loss": model_loss(sel.k_hat, spec.clusters.counts),
                "exact": float(sel.k_hat == spec.clusters.counts),
            }
            for l, k in enumerate(sel.k_hat):
                row[f"k_hat_b{l + 1}"] = float(k)
            out.append((rep, row))
        except Exception as exc:
            out.append((rep, f"{type(exc).__name__}: {exc}"))
    return out


def run_mc_selection(
    spec: DgpSpec,
    k_max: tuple[int, ...],
    n_reps: int,
    config: LloydConfig | None = None,
    seed: int = 0,
    epsilon: float = 0.0,
    grid_cap: int = 1000,
    n_jobs: int = 1,
) -> McReport:
    """Monte Carlo study of the Cp selection rule on a known truth."""
    config = config or LloydConfig()
    chunks = split_indices(n_reps, n_jobs if n_jobs > 1 else 1)
    tasks = [(spec, reps, seed, config, tuple(k_max), epsilon, grid_cap) for reps in chunks]
    results = [r for part in parallel_map(_mc_select_chunk, tasks, n_jobs) for r in part]
    columns, aggregates, failures = _collect(n_reps, results)
    return McReport(n_reps=n_reps, columns=columns, aggregates=aggregates, failures=failures)


# ---------------------------------------------------------------------------
# multistart convergence diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceReport:
    """Averaged running-best error curves over the number of starts.

    s_q / s_theta are the number of additional starts beyond the first after
    which the averaged relative risk / coefficient error falls below the
    threshold (0 means the first start suffices).
    """

    r_q: np.ndarray
    r_theta: np.ndarray
    s_q: int
    s_theta: int
    n_starts: int
    n_reps: int
    threshold: float


def start_convergence(runs: list[StartRun]) -> tuple[np.ndarray, np.ndarray]:
    """Relative running-best risk and coefficient gaps for one multistart path."""
    risks = np.asarray([r.risk for r in runs])
    vecs = np.stack([r.params.vec() for r in runs])
    n = len(runs)
    best = 0
    r_q = np.empty(n)
    r_t = np.empty(n)
    final_best = int(np.argmin(risks))
    denom_q = max(abs(risks[final_best]), 1e-300)
    denom_t = max(float(np.linalg.norm(vecs[final_best])), 1e-300)
    for s in range(n):
        if risks[s] < risks[best]:
            best = s
        r_q[s] = (risks[best] - risks[final_best]) / denom_q
        r_t[s] = np.linalg.norm(vecs[best] - vecs[final_best]) / denom_t
    return r_q, r_t


def _diag_chunk(args: tuple) -> list[tuple[int, tuple[np.ndarray, np.ndarray] | str]]:
    spec, reps, seed, config, n_starts_max = args
    out = []
    for rep in reps:
        try:
            data, _theta0, _gamma0 = generate(
                dataclasses.replace(spec, seed=child_seed(seed, _DATA_STREAM, rep))
            )
            runs = lloyd_starts(
                data,
                spec.block_spec,
                spec.clusters,
                dataclasses.replace(
                    config, seed=child_seed(seed, _FIT_STREAM, rep), n_starts=n_starts_max
                ),
            )
            out.append((rep, start_convergence(runs)))
        except Exception as exc:
            out.append((rep, f"{type(exc).__name__}: {exc}"))
    return out


def convergence_diagnostics(
    spec: DgpSpec,
    n_starts_max: int = 50,
    n_reps: int = 100,
    config: LloydConfig | None = None,
    seed: int = 0,
    threshold: float = 1e-3,
    n_jobs: int = 1,
) -> ConvergenceReport:
    """Average the running-best curves over replications and locate thresholds."""
    config = config or LloydConfig()
    chunks = split_indices(n_reps, n_jobs if n_jobs > 1 else 1)
    tasks = [(spec, reps, seed, config, n_starts_max) for reps in chunks]
    results = [r for part in parallel_map(_diag_chunk, tasks, n_jobs) for r in part]
    curves = [c for _rep, c in results if not isinstance(c, str)]
    if not curves:
        raise RuntimeError("all diagnostic replications failed")
    r_q = np.mean(np.stack([c[0] for c in curves]), axis=0)
    r_t = np.mean(np.stack([c[1] for c in curves]), axis=0)

    def first_below(curve: np.ndarray) -> int:
        hits = np.flatnonzero(curve < threshold)
        return int(hits[0]) if hits.size else int(curve.size)

    return ConvergenceReport(
        r_q=r_q,
        r_theta=r_t,
        s_q=first_below(r_q),
        s_theta=first_below(r_t),
        n_starts=n_starts_max,
        n_reps=len(curves),
        threshold=threshold,
    )
