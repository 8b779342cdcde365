"""Type-count selection by a Cp-style penalized risk criterion.

Every candidate count vector k <= k_max (componentwise) is fit independently;
the noise scale is estimated from the saturated per-unit regression, and the
penalty charges sigma2 * g(N, T) per type, with g(N, T) = log(T) / T by
default.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .estimator import FitResult, LloydConfig, lloyd_fit
from .panel import BlockSpec, ClusterConfig, PanelData
from .parallel import parallel_map, split_indices
from .seeds import child_rng, child_seed

# stream tags for seeds derived from the user seed
_GRID_STREAM = 11
_TIE_STREAM = 12


@dataclass(frozen=True)
class SelectionRow:
    """One candidate count vector with its risk, penalty, and criterion value."""

    counts: tuple[int, ...]
    risk: float
    penalty: float
    cp: float


@dataclass(frozen=True)
class SelectionResult:
    """Full Cp table over the candidate grid and the selected counts."""

    k_hat: tuple[int, ...]
    rows: tuple[SelectionRow, ...]
    sigma2: float
    weight: float


def penalty_weight(n_units: int, n_periods: int, epsilon: float = 0.0) -> float:
    """Per-type penalty factor g(N, T) = log(T) / T^(1 - epsilon)."""
    if n_periods < 2:
        raise ValueError("the penalty weight requires at least two periods")
    if not (0.0 <= epsilon < 1.0):
        raise ValueError("epsilon must lie in [0, 1)")
    return float(math.log(n_periods) / n_periods ** (1.0 - epsilon))


def candidate_grid(k_max: tuple[int, ...]) -> list[tuple[int, ...]]:
    """All count vectors 1 <= k <= k_max, row-major (last block fastest)."""
    if any(k < 1 for k in k_max):
        raise ValueError("k_max entries must be positive")
    return list(itertools.product(*(range(1, k + 1) for k in k_max)))


def saturated_risk(data: PanelData) -> float:
    """Sample risk of the saturated model, one coefficient vector per unit.

    Fitting every unit separately is the fully heterogeneous limit of the
    clustered model, so its residual variance estimates the noise scale
    without committing to a type structure.  Informative only for T clearly
    above p; as T approaches p the per-unit fits interpolate and the value
    collapses toward zero.
    """
    total = 0.0
    for i in range(data.n_units):
        xi = data.x[i]
        coef = np.linalg.lstsq(xi, data.y[i], rcond=None)[0]
        resid = data.y[i] - xi @ coef
        total += float(resid @ resid)
    return total / data.y.size


def _fit_grid_point(args: tuple) -> list[tuple[int, float]]:
    y, x, dims, config, jobs = args
    data = PanelData(y, x)
    spec = BlockSpec(dims)
    out = []
    for idx, counts, seed in jobs:
        fit = lloyd_fit(data, spec, ClusterConfig(counts), LloydConfig(
            n_starts=config.n_starts,
            tol=config.tol,
            itermax=config.itermax,
            init_sigma=config.init_sigma,
            update_mode=config.update_mode,
            seed=seed,
        ))
        out.append((idx, fit.risk))
    return out


def cp_select(
    data: PanelData,
    block_spec: BlockSpec,
    k_max: tuple[int, ...],
    config: LloydConfig | None = None,
    epsilon: float = 0.0,
    grid_cap: int = 1000,
    n_jobs: int = 1,
) -> SelectionResult:
    """Fit the whole candidate grid and pick the counts minimizing Cp.

    Cp(k) = risk(k) + sigma2 * g(N, T) * sum(k), with sigma2 the saturated
    per-unit risk.  Grid points are fit independently on their own derived
    seeds, so the table does not depend on evaluation order; exact ties in Cp
    are broken uniformly at random under the configured seed.
    """
    config = config or LloydConfig()
    if len(k_max) != block_spec.n_blocks:
        raise ValueError("k_max must have one entry per block")
    grid = candidate_grid(tuple(int(k) for k in k_max))
    if len(grid) > grid_cap:
        raise ValueError(
            f"candidate grid has {len(grid)} points, above the cap of {grid_cap}; "
            "reduce k_max (or raise grid_cap)"
        )

    jobs = [
        (idx, counts, child_seed(config.seed, _GRID_STREAM, idx))
        for idx, counts in enumerate(grid)
    ]
    if n_jobs <= 1 or len(jobs) <= 1:
        results = _fit_grid_point((data.y, data.x, block_spec.dims, config, jobs))
    else:
        chunks = split_indices(len(jobs), n_jobs)
        tasks = [
            (data.y, data.x, block_spec.dims, config, [jobs[i] for i in chunk])
            for chunk in chunks
        ]
        results = [r for part in parallel_map(_fit_grid_point, tasks, n_jobs) for r in part]
    risks = np.empty(len(grid))
    for idx, risk in results:
        risks[idx] = risk

    sigma2 = saturated_risk(data)
    weight = penalty_weight(data.n_units, data.n_periods, epsilon)
    penalties = np.array([sigma2 * weight * sum(k) for k in grid])
    cps = risks + penalties

    ties = np.flatnonzero(cps == cps.min())
    if ties.size > 1:
        pick = int(ties[child_rng(config.seed, _TIE_STREAM).integers(ties.size)])
    else:
        pick = int(ties[0])

    rows = tuple(
        SelectionRow(counts=grid[i], risk=float(risks[i]), penalty=float(penalties[i]), cp=float(cps[i]))
        for i in range(len(grid))
    )
    return SelectionResult(k_hat=grid[pick], rows=rows, sigma2=sigma2, weight=weight)


def model_loss(k_hat: tuple[int, ...], k_true: tuple[int, ...]) -> float:
    """Mean absolute componentwise error of the selected counts."""
    if len(k_hat) != len(k_true):
        raise ValueError("count vectors must have the same length")
    return float(np.mean(np.abs(np.asarray(k_hat) - np.asarray(k_true))))
