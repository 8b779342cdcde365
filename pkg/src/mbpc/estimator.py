"""Joint clusterwise least squares via multistart Lloyd iterations.

The estimator alternates two exact coordinate steps: reassign every unit to
its risk-minimizing label tuple given the coefficients, then refit the
coefficients given the labels (one block-descent sweep by default, or one
joint solve in "full" mode).  Both steps weakly decrease the sample risk.
Each random start runs on its own derived RNG stream, so the multistart
minimum is reproducible and independent of execution order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _core
from .panel import Assignment, BlockSpec, ClusterConfig, PanelData, ParamSet
from .parallel import parallel_map, single_threaded_blas, split_indices
from .seeds import start_rng

_UPDATE_MODES = ("partial", "full")


@dataclass(frozen=True)
class LloydConfig:
    """Tuning parameters for the multistart Lloyd estimator."""

    n_starts: int = 50
    tol: float = 1e-8
    itermax: int = 400
    init_sigma: float = 1.0
    update_mode: str = "partial"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_starts < 1:
            raise ValueError("n_starts must be at least 1")
        if not (self.tol > 0):
            raise ValueError("tol must be positive")
        if self.itermax < 1:
            raise ValueError("itermax must be at least 1")
        if not (self.init_sigma > 0):
            raise ValueError("init_sigma must be positive")
        if self.update_mode not in _UPDATE_MODES:
            raise ValueError(f"update_mode must be one of {_UPDATE_MODES}, got {self.update_mode!r}")


@dataclass(frozen=True)
class StartRun:
    """Full outcome of a single Lloyd start."""

    params: ParamSet
    assignment: Assignment
    risk: float
    iterations: int
    converged: bool
    n_deficient: int
    risk_history: np.ndarray | None = None


@dataclass(frozen=True)
class StartRecord:
    """Light per-start summary kept on FitResult."""

    risk: float
    iterations: int
    converged: bool
    n_deficient: int


@dataclass(frozen=True)
class FitResult:
    """Best start of a multistart Lloyd fit."""

    params: ParamSet
    assignment: Assignment
    risk: float
    best_start: int
    starts: tuple[StartRecord, ...]


@dataclass(frozen=True)
class LabelAlignment:
    """Permutation of estimated types onto reference types, one per block."""

    params: ParamSet
    perms: tuple[np.ndarray, ...]
    collisions: tuple[bool, ...]


# ---------------------------------------------------------------------------
# single coordinate steps (public, array-validated wrappers around _core)
# ---------------------------------------------------------------------------


def _workspace(data: PanelData, block_spec: BlockSpec, clusters: ClusterConfig) -> _core.Workspace:
    return _core.Workspace(data.y, data.x, block_spec.dims, clusters.counts)


def assignment_step(
    data: PanelData, params: ParamSet, block_spec: BlockSpec, clusters: ClusterConfig
) -> Assignment:
    """Assign every unit to its risk-minimizing label tuple given `params`.

    Ties go to the smallest label in row-major order.
    """
    ws = _workspace(data, block_spec, clusters)
    ssr = _core.assignment_ssr(ws, list(params.theta))
    flat = ssr.argmin(axis=1)
    return Assignment(ws.label_matrix[flat], clusters.counts)


def full_update(
    data: PanelData,
    assignment: Assignment,
    block_spec: BlockSpec,
    clusters: ClusterConfig,
    params_prev: ParamSet | None = None,
) -> ParamSet:
    """Joint least-squares coefficients for fixed labels.

    Solves the stacked normal equations over all occupied (block, type)
    coordinates in one shot; unoccupied types keep their previous column
    (zero without `params_prev`).  A rank-deficient system is solved in the
    least-norm sense.
    """
    ws = _workspace(data, block_spec, clusters)
    prev = params_prev.vec() if params_prev is not None else None
    vec, _deficient = _core.full_solve(ws, assignment.labels, prev)
    return ParamSet.from_vec(vec, ws.dims, ws.counts)


def partial_update(
    data: PanelData,
    assignment: Assignment,
    params: ParamSet,
    block_spec: BlockSpec,
    clusters: ClusterConfig,
) -> ParamSet:
    """One block-descent sweep over blocks 1..B for fixed labels.

    Each block's type coefficients are refit against the partial residual of
    the other blocks, using already-updated coefficients for earlier blocks.
    The sample risk cannot increase.
    """
    ws = _workspace(data, block_spec, clusters)
    thetas, _total, _n_def = _core.sweep(ws, assignment.labels, list(params.theta))
    return ParamSet(tuple(thetas))


# ---------------------------------------------------------------------------
# Lloyd iteration
# ---------------------------------------------------------------------------


def _run_start(ws: _core.Workspace, config: LloydConfig, index: int, track: bool) -> StartRun:
    rng = start_rng(config.seed, index)
    n, _t = ws.n_units, ws.n_periods
    thetas = [rng.normal(0.0, config.init_sigma, size=(d, k)) for d, k in zip(ws.dims, ws.counts)]
    labels = np.empty((n, ws.n_blocks), dtype=np.int64)
    for l, k in enumerate(ws.counts):
        labels[:, l] = rng.integers(0, k, size=n)

    vec = _core.pack(thetas)
    history: list[float] = []
    if track:
        history.append(_core.direct_risk(ws, thetas, labels))
    converged = False
    n_deficient = 0
    iterations = 0
    unit_rows = np.arange(n)

    for iterations in range(1, config.itermax + 1):
        ssr = _core.assignment_ssr(ws, thetas)
        flat = ssr.argmin(axis=1)
        new_labels = ws.label_matrix[flat]
        stable = bool(np.array_equal(new_labels, labels))
        labels = new_labels
        if track:
            history.append(float(ssr[unit_rows, flat].sum() / (n * ws.n_periods)))

        if config.update_mode == "full" or stable:
            # At a stable assignment the joint solve is the exact fixed point
            # the sweeps converge to; in full mode it is simply the update.
            vec_new, deficient = _core.full_solve(ws, labels, vec)
            thetas = _core.unpack(vec_new, ws.dims, ws.counts)
            n_deficient += int(deficient)
        else:
            thetas, _total, n_def = _core.sweep(ws, labels, thetas)
            vec_new = _core.pack(thetas)
            n_deficient += n_def
        if track:
            history.append(_core.direct_risk(ws, thetas, labels))

        delta = float(np.linalg.norm(vec_new - vec))
        vec = vec_new
        if delta < config.tol:
            converged = True
            break

    risk = _core.direct_risk(ws, thetas, labels)
    return StartRun(
        params=ParamSet(tuple(thetas)),
        assignment=Assignment(labels, ws.counts),
        risk=risk,
        iterations=iterations,
        converged=converged,
        n_deficient=n_deficient,
        risk_history=np.asarray(history) if track else None,
    )


def lloyd_starts(
    data: PanelData,
    block_spec: BlockSpec,
    clusters: ClusterConfig,
    config: LloydConfig | None = None,
    start_indices: list[int] | None = None,
    track_history: bool = False,
) -> list[StartRun]:
    """Run individual Lloyd starts and return them all, in index order."""
    config = config or LloydConfig()
    ws = _workspace(data, block_spec, clusters)
    if start_indices is None:
        start_indices = list(range(config.n_starts))
    with single_threaded_blas():
        return [_run_start(ws, config, j, track_history) for j in start_indices]


def _lloyd_chunk(args: tuple) -> list[StartRun]:
    y, x, dims, counts, config, indices, track = args
    return lloyd_starts(
        PanelData(y, x), BlockSpec(dims), ClusterConfig(counts), config, indices, track
    )


def lloyd_fit(
    data: PanelData,
    block_spec: BlockSpec,
    clusters: ClusterConfig,
    config: LloydConfig | None = None,
    n_jobs: int = 1,
) -> FitResult:
    """Multistart Lloyd estimate: best start by sample risk, ties to lowest index.

    The result is identical for every `n_jobs`; workers only change wall time.
    """
    config = config or LloydConfig()
    if n_jobs <= 1 or config.n_starts <= 1:
        runs = lloyd_starts(data, block_spec, clusters, config)
    else:
        chunks = split_indices(config.n_starts, n_jobs)
        tasks = [
            (data.y, data.x, block_spec.dims, clusters.counts, config, idx, False)
            for idx in chunks
        ]
        runs = [run for part in parallel_map(_lloyd_chunk, tasks, n_jobs) for run in part]
    risks = np.asarray([r.risk for r in runs])
    best = int(np.argmin(risks))
    records = tuple(
        StartRecord(r.risk, r.iterations, r.converged, r.n_deficient) for r in runs
    )
    return FitResult(
        params=runs[best].params,
        assignment=runs[best].assignment,
        risk=runs[best].risk,
        best_start=best,
        starts=records,
    )


# ---------------------------------------------------------------------------
# label bookkeeping
# ---------------------------------------------------------------------------


def _match_columns(ref: np.ndarray, est: np.ndarray) -> tuple[np.ndarray, bool]:
    """Map each reference column to its nearest estimated column.

    Collisions (non-injective nearest-neighbor maps) are resolved to a
    bijection: each contested estimated column keeps its closest claimant,
    then the remaining reference columns are matched greedily to unused
    estimated columns in increasing-distance order.
    """
    k = ref.shape[1]
    dist = np.linalg.norm(ref[:, :, None] - est[:, None, :], axis=0)
    sigma = dist.argmin(axis=1)
    if np.unique(sigma).size == k:
        return sigma, False
    assigned = np.full(k, -1, dtype=np.int64)
    for b in range(k):
        claimants = np.flatnonzero(sigma == b)
        if claimants.size:
            winner = claimants[np.argmin(dist[claimants, b])]
            assigned[winner] = b
    while np.any(assigned < 0):
        free_a = np.flatnonzero(assigned < 0)
        free_b = np.setdiff1d(np.arange(k), assigned[assigned >= 0])
        sub = dist[np.ix_(free_a, free_b)]
        i, j = np.unravel_index(int(np.argmin(sub)), sub.shape)
        assigned[free_a[i]] = free_b[j]
    return assigned, True


def align_labels(params_est: ParamSet, params_ref: ParamSet) -> LabelAlignment:
    """Permute estimated types within each block to match reference types.

    Column a of the aligned block-l matrix is the estimated column nearest to
    reference column a (Euclidean distance), with collisions resolved to a
    bijection and flagged.
    """
    if params_est.dims != params_ref.dims or params_est.counts != params_ref.counts:
        raise ValueError("parameter sets must share block dims and type counts")
    perms, collisions, aligned = [], [], []
    for t_est, t_ref in zip(params_est.theta, params_ref.theta):
        sigma, collided = _match_columns(t_ref, t_est)
        perms.append(sigma)
        collisions.append(collided)
        aligned.append(t_est[:, sigma])
    return LabelAlignment(
        params=ParamSet(tuple(aligned)),
        perms=tuple(perms),
        collisions=tuple(collisions),
    )


def relabel_assignment(assignment: Assignment, alignment: LabelAlignment) -> Assignment:
    """Rewrite labels so they refer to the aligned (reference-ordered) types."""
    labels = np.empty_like(assignment.labels)
    for l, sigma in enumerate(alignment.perms):
        inverse = np.empty_like(sigma)
        inverse[sigma] = np.arange(sigma.size)
        labels[:, l] = inverse[assignment.labels[:, l]]
    return Assignment(labels, assignment.counts)


def canonical_labels(params: ParamSet, assignment: Assignment) -> tuple[ParamSet, Assignment]:
    """Relabel types into a canonical order (columns sorted lexicographically).

    Fitted values and risk are unchanged; only the labeling is normalized so
    that equivalent fits serialize identically.
    """
    new_thetas, new_labels = [], np.empty_like(assignment.labels)
    for l, t in enumerate(params.theta):
        order = np.lexsort(t[::-1])
        inverse = np.empty_like(order)
        inverse[order] = np.arange(order.size)
        new_thetas.append(t[:, order])
        new_labels[:, l] = inverse[assignment.labels[:, l]]
    return ParamSet(tuple(new_thetas)), Assignment(new_labels, assignment.counts)
