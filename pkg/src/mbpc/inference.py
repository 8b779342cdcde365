"""Large-sample inference for the clusterwise estimator.

Standard errors come from a sandwich with a unit-clustered middle: residual
scores are summed within each unit across all periods (every lag enters, no
kernel truncation), which is heteroskedasticity- and within-unit
autocorrelation-robust.  Confidence intervals use normal quantiles; with
accurate classification the fitted labels can be treated as known, so the
same formulas apply as if the types were observed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import _core
from .estimator import _workspace
from .panel import Assignment, BlockSpec, ClusterConfig, PanelData, ParamSet

# Beyond this condition number the cross-moment matrix is treated as singular.
_COND_LIMIT = 1e12


class InferenceError(RuntimeError):
    """The cross-moment matrix cannot be inverted reliably."""


@dataclass(frozen=True)
class InferenceResult:
    """Coefficient-level inference in ParamSet.vec() coordinate order."""

    coef: np.ndarray
    se: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    level: float
    m_hat: np.ndarray
    omega_hat: np.ndarray
    v_hat: np.ndarray


def moment_matrix(
    data: PanelData, assignment: Assignment, block_spec: BlockSpec, clusters: ClusterConfig
) -> np.ndarray:
    """(1/NT) cross-moment matrix of the type-expanded design, shape (D, D)."""
    ws = _workspace(data, block_spec, clusters)
    return _core.scatter_m(ws, assignment.labels) / (data.n_units * data.n_periods)


def moment_vector(
    data: PanelData, assignment: Assignment, block_spec: BlockSpec, clusters: ClusterConfig
) -> np.ndarray:
    """(1/NT) moment vector of outcomes against the type-expanded design, shape (D,)."""
    ws = _workspace(data, block_spec, clusters)
    return _core.scatter_v(ws, assignment.labels) / (data.n_units * data.n_periods)


def oracle_estimate(
    data: PanelData, assignment: Assignment, block_spec: BlockSpec, clusters: ClusterConfig
) -> ParamSet:
    """Coefficients for fixed (e.g. true) labels: solve M vec(theta) = v.

    This is the joint solve over all blocks at once; with more than one block
    it does not decompose into per-block type-wise regressions because the
    cross-block moments couple the systems.
    """
    ws = _workspace(data, block_spec, clusters)
    vec, _deficient = _core.full_solve(ws, assignment.labels, None)
    return ParamSet.from_vec(vec, ws.dims, ws.counts)


def _score_matrix(ws: _core.Workspace, labels: np.ndarray, resid: np.ndarray) -> np.ndarray:
    """Per-unit scores summed over periods, shape (N, D)."""
    n = ws.n_units
    u = np.zeros((n, ws.n_coords))
    rows = np.arange(n)[:, None]
    for l, (d, _k) in enumerate(zip(ws.dims, ws.counts)):
        s = np.einsum("ntd,nt->nd", ws.xb[l], resid)
        cols = ws.block_offset[l] + labels[:, l, None] * d + np.arange(d)[None, :]
        u[rows, cols] = s
    return u


def hac_covariance(
    data: PanelData,
    params: ParamSet,
    assignment: Assignment,
    block_spec: BlockSpec,
    clusters: ClusterConfig,
    level: float = 0.95,
    dof_adjust: bool = False,
) -> InferenceResult:
    """Sandwich covariance and confidence intervals at the given level.

    The middle matrix clusters scores by unit over all period pairs, so
    arbitrary within-unit autocorrelation and heteroskedasticity are allowed.
    `dof_adjust` rescales the covariance by NT/(NT - D) (off by default).
    """
    if not (0.0 < level < 1.0):
        raise ValueError("level must lie strictly between 0 and 1")
    ws = _workspace(data, block_spec, clusters)
    labels = assignment.labels
    nt = data.n_units * data.n_periods

    m_hat = _core.scatter_m(ws, labels) / nt
    cond = float(np.linalg.cond(m_hat))
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise InferenceError(
            f"cross-moment matrix is numerically singular (condition number {cond:.3e}); "
            "check for empty types or collinear covariates"
        )

    comp = params.composite_matrix(labels)
    resid = data.y - np.einsum("ntp,np->nt", data.x, comp)
    u = _score_matrix(ws, labels, resid)
    omega_hat = (u.T @ u) / nt

    m_inv = np.linalg.inv(m_hat)
    v_hat = m_inv @ omega_hat @ m_inv
    if dof_adjust:
        if nt <= ws.n_coords:
            raise ValueError("dof_adjust requires NT > number of coefficients")
        v_hat = v_hat * (nt / (nt - ws.n_coords))

    coef = params.vec()
    se = np.sqrt(np.clip(np.diag(v_hat), 0.0, None) / nt)
    z = float(stats.norm.ppf(0.5 + level / 2.0))
    return InferenceResult(
        coef=coef,
        se=se,
        ci_lower=coef - z * se,
        ci_upper=coef + z * se,
        level=level,
        m_hat=m_hat,
        omega_hat=omega_hat,
        v_hat=v_hat,
    )


def coverage_fraction(result: InferenceResult, params_true: ParamSet) -> float:
    """Share of true coefficients inside their intervals (label-aligned inputs)."""
    truth = params_true.vec()
    if truth.shape != result.coef.shape:
        raise ValueError("true parameters do not match the inference coordinate layout")
    inside = (truth >= result.ci_lower) & (truth <= result.ci_upper)
    return float(np.mean(inside))
