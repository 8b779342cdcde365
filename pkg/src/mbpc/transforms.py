"""Within-unit demeaning and fixed-effects estimation.

Additive unit effects are removed by subtracting unit means from outcomes
and covariates; the clusterwise estimator then runs on the demeaned panel,
and the effects are recovered from the unit means afterwards.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimator import FitResult, LloydConfig, lloyd_fit
from .panel import BlockSpec, ClusterConfig, PanelData

# Covariates with no within-unit variation anywhere are wiped out by
# demeaning and leave their coefficients unidentified.
_WITHIN_VAR_TOL = 1e-12


@dataclass(frozen=True)
class DemeanedPanel:
    """Within-demeaned panel plus the unit means that were removed."""

    panel: PanelData
    y_means: np.ndarray
    x_means: np.ndarray


@dataclass(frozen=True)
class FeFitResult:
    """Clusterwise fit on the demeaned panel plus recovered unit effects."""

    fit: FitResult
    fixed_effects: np.ndarray
    demeaned: DemeanedPanel


def within_demean(data: PanelData) -> DemeanedPanel:
    """Subtract unit means from y and every covariate column.

    Demeaning is linear and idempotent; any additive per-unit shift of y
    leaves the result unchanged.
    """
    if data.n_periods < 2:
        raise ValueError("within-unit demeaning requires at least two periods per unit")
    y_means = data.y.mean(axis=1)
    x_means = data.x.mean(axis=1)
    y_dm = data.y - y_means[:, None]
    x_dm = data.x - x_means[:, None, :]
    return DemeanedPanel(panel=PanelData(y_dm, x_dm), y_means=y_means, x_means=x_means)


def fe_fit(
    data: PanelData,
    block_spec: BlockSpec,
    clusters: ClusterConfig,
    config: LloydConfig | None = None,
    n_jobs: int = 1,
) -> FeFitResult:
    """Clusterwise fit with additive unit effects.

    Fits the demeaned panel, then recovers each unit's effect as
    alpha_i = mean(y_i) - mean(x_i)' theta(c_i).
    """
    within_var = data.x.var(axis=1)
    dead = np.flatnonzero(np.all(within_var < _WITHIN_VAR_TOL, axis=0))
    if dead.size:
        names = ", ".join(f"x{j + 1}" for j in dead)
        raise ValueError(
            f"covariate(s) {names} are constant within every unit and are not "
            "identified after demeaning"
        )
    dm = within_demean(data)
    fit = lloyd_fit(dm.panel, block_spec, clusters, config, n_jobs=n_jobs)
    comp = fit.params.composite_matrix(fit.assignment.labels)
    alpha = dm.y_means - np.einsum("np,np->n", dm.x_means, comp)
    return FeFitResult(fit=fit, fixed_effects=alpha, demeaned=dm)
