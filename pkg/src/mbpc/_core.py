"""Shared dense kernels for the clusterwise least-squares estimators.

A `Workspace` caches per-unit moments for one (panel, blocks, clusters)
triple; the assignment, sweep and joint-solve kernels below operate on raw
arrays for speed and are wrapped by the public API in the sibling modules.

Coefficient coordinates are laid out block-major: block l occupies a
contiguous range, within which type a of width d_l occupies columns
offset(l) + a*d_l .. offset(l) + (a+1)*d_l - 1.  This matches
ParamSet.vec().
"""
from __future__ import annotations

import math

import numpy as np

# Singular-value cutoff for least-norm solves, relative to the largest
# singular value.
LSTSQ_RCOND = 1e-10


class Workspace:
    """Precomputed per-unit moments shared by all starts of one fit."""

    def __init__(self, y: np.ndarray, x: np.ndarray, dims: tuple[int, ...], counts: tuple[int, ...]) -> None:
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        n, t, p = x.shape
        if sum(dims) != p:
            raise ValueError(f"block dims {dims} do not sum to the covariate count {p}")
        if len(counts) != len(dims):
            raise ValueError("dims and counts must have one entry per block")
        self.y = y
        self.x = x
        self.n_units, self.n_periods = n, t
        self.dims = tuple(int(d) for d in dims)
        self.counts = tuple(int(k) for k in counts)
        self.n_blocks = len(self.dims)

        col = 0
        self.block_cols: list[slice] = []
        for d in self.dims:
            self.block_cols.append(slice(col, col + d))
            col += d
        self.xb = [np.ascontiguousarray(x[:, :, sl]) for sl in self.block_cols]
        self.x_flat = x.reshape(n * t, p)
        self.y_flat = y.reshape(n * t)
        self.yy = float(self.y_flat @ self.y_flat)

        # coordinate layout of the stacked coefficient vector
        self.block_offset: list[int] = []
        off = 0
        for d, k in zip(self.dims, self.counts):
            self.block_offset.append(off)
            off += d * k
        self.n_coords = off

        # per-unit cross moments sum_t x_it^l (x_it^m)' and sum_t y_it x_it^l
        self.gram: dict[tuple[int, int], np.ndarray] = {}
        for l in range(self.n_blocks):
            for m in range(l, self.n_blocks):
                self.gram[(l, m)] = np.einsum("nti,ntj->nij", self.xb[l], self.xb[m])
        self.xty = [np.einsum("nti,nt->ni", xbl, y) for xbl in self.xb]

        self.n_labels = int(math.prod(self.counts))
        idx = np.arange(self.n_labels)
        self.label_matrix = np.stack(np.unravel_index(idx, self.counts), axis=1).astype(np.int64)


def pack(thetas: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([t.T.ravel() for t in thetas])


def unpack(vec: np.ndarray, dims: tuple[int, ...], counts: tuple[int, ...]) -> list[np.ndarray]:
    out, pos = [], 0
    for d, k in zip(dims, counts):
        out.append(vec[pos : pos + d * k].reshape(k, d).T.copy())
        pos += d * k
    return out


def label_composites(ws: Workspace, thetas: list[np.ndarray]) -> np.ndarray:
    """Composite coefficients for every label tuple, shape (n_labels, p)."""
    comp = np.empty((ws.n_labels, sum(ws.dims)))
    for l, sl in enumerate(ws.block_cols):
        comp[:, sl] = thetas[l][:, ws.label_matrix[:, l]].T
    return comp


def assignment_ssr(ws: Workspace, thetas: list[np.ndarray]) -> np.ndarray:
    """Per-unit sum of squared residuals under every label tuple, shape (N, n_labels)."""
    comp = label_composites(ws, thetas)
    fit = ws.x_flat @ comp.T
    resid = ws.y_flat[:, None] - fit
    np.square(resid, out=resid)
    return resid.reshape(ws.n_units, ws.n_periods, ws.n_labels).sum(axis=1)


def occupied_coords(ws: Workspace, labels: np.ndarray) -> np.ndarray:
    """Boolean mask over coefficient coordinates whose (block, type) has members."""
    parts = []
    for l, (d, k) in enumerate(zip(ws.dims, ws.counts)):
        members = np.bincount(labels[:, l], minlength=k) > 0
        parts.append(np.repeat(members, d))
    return np.concatenate(parts)


def scatter_m(ws: Workspace, labels: np.ndarray) -> np.ndarray:
    """Unnormalized cross-moment matrix of the type-expanded design, (D, D)."""
    m = np.zeros((ws.n_coords, ws.n_coords))
    for l in range(ws.n_blocks):
        dl, kl, ol = ws.dims[l], ws.counts[l], ws.block_offset[l]
        for r in range(l, ws.n_blocks):
            dr, kr, orr = ws.dims[r], ws.counts[r], ws.block_offset[r]
            tab = np.zeros((kl, kr, dl, dr))
            np.add.at(tab, (labels[:, l], labels[:, r]), ws.gram[(l, r)])
            sub = tab.transpose(0, 2, 1, 3).reshape(kl * dl, kr * dr)
            m[ol : ol + kl * dl, orr : orr + kr * dr] = sub
            if r != l:
                m[orr : orr + kr * dr, ol : ol + kl * dl] = sub.T
    return m


def scatter_v(ws: Workspace, labels: np.ndarray) -> np.ndarray:
    """Unnormalized moment vector sum_{it} y_it phi_it of the expanded design, (D,)."""
    v = np.zeros(ws.n_coords)
    for l in range(ws.n_blocks):
        dl, kl, ol = ws.dims[l], ws.counts[l], ws.block_offset[l]
        tab = np.zeros((kl, dl))
        np.add.at(tab, labels[:, l], ws.xty[l])
        v[ol : ol + kl * dl] = tab.ravel()
    return v


def full_solve(ws: Workspace, labels: np.ndarray, prev_vec: np.ndarray | None) -> tuple[np.ndarray, bool]:
    """Joint normal-equation solve for all occupied (block, type) coordinates.

    Unoccupied coordinates keep their previous values (zero when prev_vec is
    None).  Rank-deficient systems fall back to the least-norm solution with
    cutoff LSTSQ_RCOND * sigma_max; the flag reports that case.
    """
    m = scatter_m(ws, labels)
    v = scatter_v(ws, labels)
    occ = occupied_coords(ws, labels)
    vec = prev_vec.copy() if prev_vec is not None else np.zeros(ws.n_coords)
    if occ.all():
        mo, vo = m, v
    else:
        mo = m[np.ix_(occ, occ)]
        vo = v[occ]
    sol, _resid, rank, _sv = np.linalg.lstsq(mo, vo, rcond=LSTSQ_RCOND)
    vec[occ] = sol
    return vec, bool(rank < vo.shape[0])


def sweep(
    ws: Workspace, labels: np.ndarray, thetas: list[np.ndarray]
) -> tuple[list[np.ndarray], np.ndarray, int]:
    """One block-descent pass: refit each block's type coefficients in turn.

    Block l is regressed on the partial residual that nets out all other
    blocks at their current (already swept for < l) coefficients, so the
    sample risk cannot increase.  Returns the new coefficients, the fitted
    values under them, and the number of rank-deficient type solves.
    """
    contrib = [
        np.einsum("ntd,nd->nt", ws.xb[l], thetas[l][:, labels[:, l]].T)
        for l in range(ws.n_blocks)
    ]
    total = contrib[0].copy()
    for c in contrib[1:]:
        total += c
    new_thetas: list[np.ndarray] = []
    n_deficient = 0
    for l in range(ws.n_blocks):
        dl, kl = ws.dims[l], ws.counts[l]
        resid = ws.y - total + contrib[l]
        b_units = np.einsum("ntd,nt->nd", ws.xb[l], resid)
        rhs = np.zeros((kl, dl))
        np.add.at(rhs, labels[:, l], b_units)
        gram = np.zeros((kl, dl, dl))
        np.add.at(gram, labels[:, l], ws.gram[(l, l)])
        occ = np.bincount(labels[:, l], minlength=kl) > 0
        th_new = np.array(thetas[l], dtype=float)
        try:
            sol = np.linalg.solve(gram[occ], rhs[occ][:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            members = np.flatnonzero(occ)
            sol = np.empty((members.size, dl))
            for i, a in enumerate(members):
                s, _r, rank, _sv = np.linalg.lstsq(gram[a], rhs[a], rcond=LSTSQ_RCOND)
                sol[i] = s
                n_deficient += int(rank < dl)
        th_new[:, occ] = sol.T
        new_contrib = np.einsum("ntd,nd->nt", ws.xb[l], th_new[:, labels[:, l]].T)
        total += new_contrib - contrib[l]
        contrib[l] = new_contrib
        new_thetas.append(th_new)
    return new_thetas, total, n_deficient


def direct_risk(ws: Workspace, thetas: list[np.ndarray], labels: np.ndarray) -> float:
    """Sample risk evaluated from the residuals (no normal-equation identities)."""
    comp = np.empty((ws.n_units, sum(ws.dims)))
    for l, sl in enumerate(ws.block_cols):
        comp[:, sl] = thetas[l][:, labels[:, l]].T
    fit = np.einsum("ntp,np->nt", ws.x, comp)
    resid = ws.y - fit
    return float(np.mean(resid * resid))
