"""Balanced-panel containers and the clusterwise regression loss.

Each unit carries one latent type per covariate block; the coefficient vector
acting on x_it is assembled block by block from the unit's type tuple.  This
module holds the containers (panel, block layout, type space, coefficients,
assignments), the composite-coefficient helpers, the sample risk, and the
accuracy metrics used by the Monte Carlo harness.  Estimation lives in
:mod:`mbpc.estimator`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _readonly_float(arr: object, name: str, ndim: int) -> np.ndarray:
    out = np.array(arr, dtype=float)
    if out.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} must contain only finite values")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class BlockSpec:
    """Contiguous partition of the covariate columns into blocks.

    dims[l] is the width of block l; block l covers columns
    sum(dims[:l]) .. sum(dims[:l+1]) - 1 of x.
    """

    dims: tuple[int, ...]

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.dims)
        if len(dims) == 0 or any(d < 1 for d in dims):
            raise ValueError(f"block dims must be positive integers, got {self.dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def n_blocks(self) -> int:
        return len(self.dims)

    @property
    def total_dim(self) -> int:
        return int(sum(self.dims))

    @property
    def starts(self) -> tuple[int, ...]:
        out, col = [], 0
        for d in self.dims:
            out.append(col)
            col += d
        return tuple(out)

    def cols(self, block: int) -> slice:
        start = self.starts[block]
        return slice(start, start + self.dims[block])


@dataclass(frozen=True)
class ClusterConfig:
    """Number of latent types per block; the label space is the product set."""

    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        counts = tuple(int(k) for k in self.counts)
        if len(counts) == 0 or any(k < 1 for k in counts):
            raise ValueError(f"cluster counts must be positive integers, got {self.counts}")
        object.__setattr__(self, "counts", counts)

    @property
    def n_blocks(self) -> int:
        return len(self.counts)

    @property
    def n_labels(self) -> int:
        return int(math.prod(self.counts))

    def label_matrix(self) -> np.ndarray:
        """All label tuples, shape (n_labels, n_blocks), row-major (last block fastest)."""
        idx = np.arange(self.n_labels)
        return np.stack(np.unravel_index(idx, self.counts), axis=1).astype(np.int64)


@dataclass(frozen=True)
class PanelData:
    """Balanced panel: outcomes y (N, T) and covariates x (N, T, p)."""

    y: np.ndarray
    x: np.ndarray

    def __post_init__(self) -> None:
        y = _readonly_float(self.y, "y", 2)
        x = _readonly_float(self.x, "x", 3)
        if x.shape[:2] != y.shape:
            raise ValueError(f"y has shape {y.shape} but x has shape {x.shape[:2]} x p")
        if min(y.shape) < 1 or x.shape[2] < 1:
            raise ValueError("panel must contain at least one unit, period and covariate")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)

    @property
    def n_units(self) -> int:
        return self.y.shape[0]

    @property
    def n_periods(self) -> int:
        return self.y.shape[1]

    @property
    def n_covariates(self) -> int:
        return self.x.shape[2]


@dataclass(frozen=True)
class ParamSet:
    """One coefficient matrix per block; column a holds the type-a coefficients."""

    theta: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        mats = tuple(_readonly_float(t, "theta", 2) for t in self.theta)
        if len(mats) == 0:
            raise ValueError("ParamSet requires at least one block matrix")
        object.__setattr__(self, "theta", mats)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(t.shape[0] for t in self.theta)

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(t.shape[1] for t in self.theta)

    @property
    def total_dim(self) -> int:
        return int(sum(self.dims))

    @property
    def n_coefficients(self) -> int:
        return int(sum(t.size for t in self.theta))

    def vec(self) -> np.ndarray:
        """Stack coefficients: blocks ascending, types within block, coordinates within type."""
        return np.concatenate([t.T.ravel() for t in self.theta])

    @classmethod
    def from_vec(cls, vec: np.ndarray, dims: tuple[int, ...], counts: tuple[int, ...]) -> "ParamSet":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (sum(d * k for d, k in zip(dims, counts)),):
            raise ValueError("vec length does not match dims and counts")
        mats, pos = [], 0
        for d, k in zip(dims, counts):
            mats.append(vec[pos : pos + d * k].reshape(k, d).T)
            pos += d * k
        return cls(tuple(mats))

    def composite_matrix(self, labels: np.ndarray) -> np.ndarray:
        """Composite coefficient rows for a label matrix of shape (n, B)."""
        labels = np.asarray(labels)
        out = np.empty((labels.shape[0], self.total_dim))
        col = 0
        for l, t in enumerate(self.theta):
            d = t.shape[0]
            out[:, col : col + d] = t[:, labels[:, l]].T
            col += d
        return out


@dataclass(frozen=True)
class Assignment:
    """Per-unit type labels, one column per block (0-based internally)."""

    labels: np.ndarray
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        counts = tuple(int(k) for k in self.counts)
        labels = np.array(self.labels, dtype=np.int64)
        if labels.ndim != 2 or labels.shape[1] != len(counts):
            raise ValueError(f"labels must have shape (N, {len(counts)}), got {labels.shape}")
        for l, k in enumerate(counts):
            if labels.shape[0] and (labels[:, l].min() < 0 or labels[:, l].max() >= k):
                raise ValueError(f"labels for block {l} must lie in 0..{k - 1}")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "counts", counts)

    @property
    def n_units(self) -> int:
        return self.labels.shape[0]

    @property
    def n_blocks(self) -> int:
        return self.labels.shape[1]

    def flat(self) -> np.ndarray:
        """Row-major flat index of each unit's label tuple."""
        return np.ravel_multi_index(tuple(self.labels.T), self.counts)

    def one_based(self) -> np.ndarray:
        return self.labels + 1

    @classmethod
    def from_one_based(cls, labels: np.ndarray, counts: tuple[int, ...]) -> "Assignment":
        return cls(np.asarray(labels, dtype=np.int64) - 1, counts)


@dataclass(frozen=True)
class Metrics:
    """Monte Carlo accuracy summary for one fitted replication.

    param_mse is the mean squared composite-coefficient error per coordinate,
    function_mse the mean squared fitted-value gap per block of the fitted
    structure, and cluster_loss the per-block misclassification rate averaged
    over blocks (NaN when the fitted label structure differs from the
    reference).
    """

    param_mse: float
    function_mse: float
    cluster_loss: float


def composite_theta(params: ParamSet, label: np.ndarray) -> np.ndarray:
    """Composite coefficient vector for one label tuple (0-based)."""
    label = np.asarray(label, dtype=np.int64)
    if label.shape != (len(params.theta),):
        raise ValueError(f"label must have one entry per block, got shape {label.shape}")
    return params.composite_matrix(label[None, :])[0]


def fitted_values(data: PanelData, params: ParamSet, assignment: Assignment) -> np.ndarray:
    """Fitted outcomes x_it' theta(c_i), shape (N, T)."""
    if params.total_dim != data.n_covariates:
        raise ValueError("params do not span the covariate columns")
    if assignment.n_units != data.n_units:
        raise ValueError("assignment and panel disagree on the number of units")
    comp = params.composite_matrix(assignment.labels)
    return np.einsum("ntp,np->nt", data.x, comp)


def sample_risk(data: PanelData, params: ParamSet, assignment: Assignment) -> float:
    """Mean squared residual (1/NT) sum (y_it - x_it' theta(c_i))^2."""
    resid = data.y - fitted_values(data, params, assignment)
    return float(np.mean(resid * resid))


def evaluate_metrics(
    data: PanelData,
    params_est: ParamSet,
    assign_est: Assignment,
    params_true: ParamSet,
    assign_true: Assignment,
) -> Metrics:
    """Accuracy of a fit against the data-generating truth.

    Estimated and true composites are compared unit by unit, so the result
    does not depend on how estimated types are labeled.  param_mse averages
    the squared composite error per coefficient coordinate (unit-block pairs
    carry p coordinates in total), which keeps values comparable across block
    layouts; function_mse averages the squared fitted-value gap per period
    and per block of the fitted structure.  cluster_loss is the share of
    wrongly typed (unit, block) pairs, i.e. the per-block misclassification
    rate averaged over blocks; it requires the fitted label structure to
    match the truth and is NaN otherwise.
    """
    comp_est = params_est.composite_matrix(assign_est.labels)
    comp_true = params_true.composite_matrix(assign_true.labels)
    if comp_est.shape != comp_true.shape:
        raise ValueError("estimated and true parameters span different covariate columns")
    diff = comp_est - comp_true
    param_mse = float(np.mean(diff * diff))
    fit_diff = np.einsum("ntp,np->nt", data.x, diff)
    function_mse = float(np.mean(fit_diff * fit_diff) / len(params_est.theta))
    if assign_est.counts == assign_true.counts:
        cluster_loss = float(np.mean(assign_est.labels != assign_true.labels))
    else:
        cluster_loss = float("nan")
    return Metrics(param_mse=param_mse, function_mse=function_mse, cluster_loss=cluster_loss)
