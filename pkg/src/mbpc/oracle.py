"""Exhaustive assignment search for small panels.

Enumerates every assignment of units to label tuples, solves the pooled
least-squares problem exactly for each, and returns the global risk
minimizer.  Complexity is L^N assignments (L = number of label tuples), so
this is a test oracle, not an estimator.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._core import LSTSQ_RCOND, Workspace, full_solve, label_composites, unpack
from .panel import Assignment, BlockSpec, ClusterConfig, PanelData, ParamSet

_DEFAULT_CAP = 2_000_000
_CHUNK = 4096
_TIE_TOL = 1e-12


@dataclass(frozen=True)
class OracleResult:
    """Global minimizer over all assignments.

    When several assignments attain the minimum within 1e-12, the reported
    one is the first in enumeration order (unit 0 varies slowest, the last
    unit fastest) and n_minimizers counts them all.
    """

    params: ParamSet
    assignment: Assignment
    risk: float
    n_enumerated: int
    n_minimizers: int


def _build_tables(ws: Workspace) -> tuple[np.ndarray, np.ndarray]:
    """Per-unit normal-equation contributions for each label tuple.

    Entry [i, a] holds unit i's Gram block / moment slice scattered into the
    stacked coefficient layout under label tuple a, so the normal equations
    of any assignment are plain sums over units.
    """
    n, d_all, n_labels = ws.n_units, ws.n_coords, ws.n_labels
    p = sum(ws.dims)
    gram_full = np.einsum("nti,ntj->nij", ws.x, ws.x)
    mom_full = np.einsum("nti,nt->ni", ws.x, ws.y)
    col_idx = np.empty((n_labels, p), dtype=np.int64)
    pos = 0
    for l, dl in enumerate(ws.dims):
        col_idx[:, pos : pos + dl] = (
            ws.block_offset[l] + ws.label_matrix[:, l, None] * dl + np.arange(dl)
        )
        pos += dl
    gram_u = np.zeros((n, n_labels, d_all, d_all))
    mom_u = np.zeros((n, n_labels, d_all))
    for a in range(n_labels):
        ci = col_idx[a]
        gram_u[:, a, ci[:, None], ci[None, :]] = gram_full
        mom_u[:, a, ci] = mom_full
    return gram_u, mom_u


def _chunk_risks(
    ws: Workspace, tables: tuple[np.ndarray, np.ndarray], flats: np.ndarray
) -> np.ndarray:
    """Exact pooled risk for each row of `flats` ((chunk, N) flat labels).

    Solves every normal-equation system by symmetric eigendecomposition with
    the same relative cutoff as the joint solver, so rank-deficient
    assignments get the least-norm solution, and uses the identity
    SSR = y'y - v'theta.
    """
    gram_u, mom_u = tables
    n_chunk, d = flats.shape[0], ws.n_coords
    m = np.zeros((n_chunk, d, d))
    v = np.zeros((n_chunk, d))
    for i in range(ws.n_units):
        m += gram_u[i, flats[:, i]]
        v += mom_u[i, flats[:, i]]
    w, q = np.linalg.eigh(m)
    good = w > np.maximum(w[:, -1:], 0.0) * LSTSQ_RCOND
    winv = np.where(good, 1.0, 0.0) / np.where(good, w, 1.0)
    qtv = np.einsum("gij,gi->gj", q, v)
    theta = np.einsum("gij,gj->gi", q, winv * qtv)
    ssr = ws.yy - np.einsum("gi,gi->g", v, theta)
    return ssr / (ws.n_units * ws.n_periods)


def _solve_assignment(ws: Workspace, labels: np.ndarray) -> tuple[ParamSet, float]:
    vec, _deficient = full_solve(ws, labels, None)
    thetas = unpack(vec, ws.dims, ws.counts)
    comp = label_composites(ws, thetas)
    flat = np.ravel_multi_index(tuple(labels.T), ws.counts)
    resid = ws.y - np.einsum("ntp,np->nt", ws.x, comp[flat])
    return ParamSet(tuple(thetas)), float(np.mean(resid * resid))


def exhaustive_fit(
    data: PanelData,
    block_spec: BlockSpec,
    clusters: ClusterConfig,
    cap: int = _DEFAULT_CAP,
) -> OracleResult:
    """Search all label assignments and return the exact risk minimizer.

    Raises ValueError when L**N exceeds `cap`.
    """
    ws = Workspace(data.y, data.x, block_spec.dims, clusters.counts)
    n = ws.n_units
    total = ws.n_labels**n
    if total > cap:
        raise ValueError(
            f"{ws.n_labels}^{n} = {total} assignments exceed the cap {cap}; "
            "reduce the panel or raise cap"
        )
    tables = _build_tables(ws)
    shape = (ws.n_labels,) * n
    risks = np.empty(total)
    for lo in range(0, total, _CHUNK):
        hi = min(lo + _CHUNK, total)
        flats = np.stack(np.unravel_index(np.arange(lo, hi), shape), axis=-1)
        risks[lo:hi] = _chunk_risks(ws, tables, flats)
    best = float(risks.min())
    winners = np.flatnonzero(risks <= best + _TIE_TOL)
    first = int(winners[0])
    unit_flats = np.asarray(np.unravel_index(first, shape))
    labels = np.stack(np.unravel_index(unit_flats, ws.counts), axis=-1).astype(np.int64)
    params, risk = _solve_assignment(ws, labels)
    return OracleResult(
        params=params,
        assignment=Assignment(labels, clusters.counts),
        risk=risk,
        n_enumerated=int(total),
        n_minimizers=int(winners.size),
    )
