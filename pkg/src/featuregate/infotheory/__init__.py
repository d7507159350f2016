"""Entropy, mutual information, and conditional mutual information estimation
over mixed discrete/continuous column sets.

Estimator family (pinned):

* all-discrete sets use exact plug-in estimates over joint frequencies;
* any continuous column switches to a k-nearest-neighbor estimator in the
  max-norm joint space, with discrete coordinates at unit distance on
  mismatch and zero-distance ties handled by local match counts;
* continuous columns are rank-standardized before neighbor searches for MI
  and CMI (mutual information is invariant under monotone per-column maps;
  differential entropy is not, so entropy uses raw values);
* CMI is the difference I((X,Z);Y) - I(Z;Y) with shared k and rows;
  conditioning sets wider than ``max_condition_columns`` are compressed to
  the columns with the highest marginal MI against Y, and the compression
  is recorded on the returned estimate.

The neighbor-counting kernels are O(n^2 d) and dominate runtime; a compiled
extension is used when available, with a NumPy fallback selected at import.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import digamma

from ..errors import EstimatorError

try:  # compiled kernels; fall back to the NumPy implementation
    from . import _kernels_cy as _kernels

    BACKEND = "compiled"
except ImportError:  # pragma: no cover - depends on build environment
    from . import _kernels_py as _kernels

    BACKEND = "numpy"

from . import _kernels_py

DEFAULT_K = 3
MAX_CONDITION_COLUMNS = 10


def backend_name() -> str:
    return BACKEND


@dataclass(frozen=True)
class VariableSet:
    """Equal-length columns, each tagged discrete or continuous.

    No missing values are allowed; callers impute or drop rows first.
    """

    continuous: np.ndarray  # (n, dc) float64
    discrete: np.ndarray  # (n, dd) int64

    def __post_init__(self):
        cont = np.ascontiguousarray(np.asarray(self.continuous, dtype=np.float64))
        disc = np.ascontiguousarray(np.asarray(self.discrete, dtype=np.int64))
        if cont.ndim != 2 or disc.ndim != 2:
            raise EstimatorError("VariableSet arrays must be 2-D (rows x columns)")
        if cont.shape[0] != disc.shape[0]:
            raise EstimatorError("continuous/discrete row counts differ")
        if not np.isfinite(cont).all():
            raise EstimatorError("continuous columns must be finite with no missing values")
        object.__setattr__(self, "continuous", cont)
        object.__setattr__(self, "discrete", disc)

    @classmethod
    def from_columns(cls, columns) -> VariableSet:
        """Build from [(values, tag), ...] with tag 'continuous' or 'discrete'."""
        cont, disc, n = [], [], None
        for values, tag in columns:
            arr = np.asarray(values)
            if n is None:
                n = len(arr)
            elif len(arr) != n:
                raise EstimatorError("columns differ in length")
            if tag == "continuous":
                cont.append(arr.astype(np.float64))
            elif tag == "discrete":
                disc.append(arr.astype(np.int64))
            else:
                raise EstimatorError(f"unknown tag {tag!r}")
        if n is None or (not cont and not disc):
            raise EstimatorError("at least one column required")
        c = np.column_stack(cont) if cont else np.empty((n, 0))
        d = np.column_stack(disc) if disc else np.empty((n, 0), dtype=np.int64)
        return cls(c, d)

    @property
    def row_count(self) -> int:
        return self.continuous.shape[0]

    @property
    def width(self) -> int:
        return self.continuous.shape[1] + self.discrete.shape[1]

    @property
    def all_discrete(self) -> bool:
        return self.continuous.shape[1] == 0

    def take_rows(self, indices) -> VariableSet:
        idx = np.asarray(indices)
        return VariableSet(self.continuous[idx], self.discrete[idx])

    def joined(self, other: VariableSet) -> VariableSet:
        if other.row_count != self.row_count:
            raise EstimatorError("row counts differ")
        return VariableSet(
            np.hstack([self.continuous, other.continuous]),
            np.hstack([self.discrete, other.discrete]),
        )


@dataclass(frozen=True)
class MIEstimate:
    value: float
    estimator: str
    k: int
    n: int
    detail: dict = field(default_factory=dict)


def _rank_standardize(cont: np.ndarray) -> np.ndarray:
    """Per-column average ranks mapped to (0, 1]; ties share a rank."""
    if cont.shape[1] == 0:
        return cont
    n = cont.shape[0]
    out = np.empty_like(cont)
    for j in range(cont.shape[1]):
        col = cont[:, j]
        order = np.argsort(col, kind="stable")
        ranks = np.empty(n, dtype=np.float64)
        ranks[order] = np.arange(1, n + 1, dtype=np.float64)
        # average the ranks of tied values
        uniq, inverse, counts = np.unique(col, return_inverse=True, return_counts=True)
        if len(uniq) != n:
            sums = np.zeros(len(uniq))
            np.add.at(sums, inverse, ranks)
            ranks = sums[inverse] / counts[inverse]
        out[:, j] = ranks / n
    return np.ascontiguousarray(out)


def _joint_codes(disc: np.ndarray) -> np.ndarray:
    """Collapse a multi-column discrete matrix into one code column."""
    if disc.shape[1] == 1:
        return disc[:, 0]
    _, codes = np.unique(disc, axis=0, return_inverse=True)
    return codes.astype(np.int64)


def _plugin_entropy(disc: np.ndarray) -> float:
    codes = _joint_codes(disc)
    _, counts = np.unique(codes, return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum())


def _plugin_mi(xd: np.ndarray, yd: np.ndarray) -> float:
    x = _joint_codes(xd)
    y = _joint_codes(yd)
    n = len(x)
    joint = x * (int(y.max()) + 1) + y
    _, jc = np.unique(joint, return_counts=True)
    _, xc = np.unique(x, return_counts=True)
    _, yc = np.unique(y, return_counts=True)
    hj = -(jc / n * np.log(jc / n)).sum()
    hx = -(xc / n * np.log(xc / n)).sum()
    hy = -(yc / n * np.log(yc / n)).sum()
    return float(hx + hy - hj)


def _require_rows(n: int, k: int, needs_knn: bool):
    if needs_knn and n < k + 1:
        raise EstimatorError(f"need at least k+1={k + 1} rows, got {n}")
    if n < 1:
        raise EstimatorError("empty variable set")


def _prepared(vs: VariableSet, rank: bool) -> tuple[np.ndarray, np.ndarray]:
    cont = _rank_standardize(vs.continuous) if rank else np.ascontiguousarray(vs.continuous)
    return cont, vs.discrete


def estimate_entropy(X: VariableSet, k: int = DEFAULT_K) -> MIEstimate:
    """Plug-in entropy for all-discrete sets, k-NN estimate otherwise (nats)."""
    n = X.row_count
    _require_rows(n, k, needs_knn=not X.all_discrete)
    if X.all_discrete:
        return MIEstimate(_plugin_entropy(X.discrete), "plugin-entropy", k, n)
    rho, ties = _kernels.knn_radius_stats(X.continuous, X.discrete, k)
    ktilde = np.where(rho == 0.0, ties, k)
    dc = X.continuous.shape[1]
    volume = np.where(rho > 0.0, dc * np.log(2.0 * np.maximum(rho, 1e-300)), 0.0)
    value = float(digamma(n) - np.mean(digamma(ktilde)) + np.mean(volume))
    return MIEstimate(value, "knn-entropy", k, n)


def _knn_mi(x: VariableSet, y: VariableSet, k: int, rank: bool) -> float:
    xc, xd = _prepared(x, rank)
    yc, yd = _prepared(y, rank)
    ktilde, nx, ny = _kernels.mi_counts(xc, xd, yc, yd, k)
    n = x.row_count
    value = np.mean(digamma(ktilde)) + math.log(n) - np.mean(digamma(nx + 1) + digamma(ny + 1))
    return float(value)


def estimate_mi(X: VariableSet, Y: VariableSet, k: int = DEFAULT_K, rank: bool = True) -> MIEstimate:
    """Mutual information I(X;Y) in nats; unclamped (may be slightly negative)."""
    if X.row_count != Y.row_count:
        raise EstimatorError("X and Y row counts differ")
    n = X.row_count
    discrete = X.all_discrete and Y.all_discrete
    _require_rows(n, k, needs_knn=not discrete)
    if discrete:
        return MIEstimate(_plugin_mi(X.discrete, Y.discrete), "plugin-mi", k, n)
    return MIEstimate(_knn_mi(X, Y, k, rank), "mixed-knn-mi", k, n)


def compress_condition_set(
    Z: VariableSet, Y: VariableSet, k: int, limit: int = MAX_CONDITION_COLUMNS, rank: bool = True
) -> tuple[VariableSet, dict]:
    """Keep the ``limit`` columns of Z with the highest marginal MI against Y.

    Ties break toward the lower column index. Column order of the survivors
    is preserved so both CMI terms see an identical conditioning set.
    """
    if Z.width <= limit:
        return Z, {}
    scores = []
    for j in range(Z.continuous.shape[1]):
        col = VariableSet(Z.continuous[:, [j]], np.empty((Z.row_count, 0), dtype=np.int64))
        scores.append(estimate_mi(col, Y, k, rank).value)
    for j in range(Z.discrete.shape[1]):
        col = VariableSet(np.empty((Z.row_count, 0)), Z.discrete[:, [j]])
        scores.append(estimate_mi(col, Y, k, rank).value)
    order = sorted(range(len(scores)), key=lambda j: (-scores[j], j))
    keep = sorted(order[:limit])
    nc = Z.continuous.shape[1]
    cont_keep = [j for j in keep if j < nc]
    disc_keep = [j - nc for j in keep if j >= nc]
    compressed = VariableSet(Z.continuous[:, cont_keep], Z.discrete[:, disc_keep])
    return compressed, {"condition_compressed": True, "kept_columns": keep, "original_width": Z.width}


def estimate_cmi(
    X: VariableSet,
    Y: VariableSet,
    Z: VariableSet | None,
    k: int = DEFAULT_K,
    rank: bool = True,
    max_condition_columns: int = MAX_CONDITION_COLUMNS,
) -> MIEstimate:
    """Conditional mutual information I(X;Y|Z) = I((X,Z);Y) - I(Z;Y).

    Both terms share k and rows, so duplicated information cancels exactly.
    An empty/None Z reduces to plain MI.
    """
    if Z is None or Z.width == 0:
        est = estimate_mi(X, Y, k, rank)
        return replace(est, estimator="cmi/" + est.estimator)
    if X.row_count != Y.row_count or Z.row_count != Y.row_count:
        raise EstimatorError("X, Y, Z row counts differ")
    Z, note = compress_condition_set(Z, Y, k, max_condition_columns, rank)
    a = estimate_mi(X.joined(Z), Y, k, rank)
    b = estimate_mi(Z, Y, k, rank)
    detail = dict(note)
    detail["joint_mi"] = a.value
    detail["condition_mi"] = b.value
    return MIEstimate(a.value - b.value, "cmi/" + a.estimator, k, X.row_count, detail)
