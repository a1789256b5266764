"""Exact max-norm neighbour queries and strict range counts.

Distances are always ``max_c |x_jc - x_ic|`` evaluated in float64 exactly as
an exhaustive scan would evaluate them, so every path here (k-d tree, sweep,
brute force) returns bit-identical results.  Range counts are strict
(``dist < r``) and include the query point itself.
"""

from __future__ import annotations

import numba
import numpy as np
from scipy.spatial import cKDTree

from .errors import KTooLarge, ValidationError

SUBSPACES = ("A", "B", "full")

# brute force beats the tree below this size for D > 2 on correlated data
BRUTE_MAX_N = 6000


def _below(r):
    """Largest float strictly below ``r``: turns ``<=`` queries into ``<``."""
    return np.nextafter(np.asarray(r, dtype=np.float64), -np.inf)


class NeighborIndex:
    """Max-norm index over a data cloud with A/B subspace counting.

    Parameters
    ----------
    points : array_like, shape (N, D)
    n_a : int
        Number of leading columns forming subspace A; the rest form B.
    """

    def __init__(self, points, n_a: int = None):
        if hasattr(points, "points"):
            n_a = points.n_a if n_a is None else n_a
            points = points.points
        self.points = np.ascontiguousarray(np.asarray(points, dtype=np.float64))
        if self.points.ndim != 2:
            raise ValidationError("points must be 2D")
        self.n_a = self.points.shape[1] if n_a is None else int(n_a)
        self._trees = {"full": cKDTree(self.points)}
        if 0 < self.n_a < self.dim:
            self._trees["A"] = cKDTree(self.points[:, : self.n_a])
            self._trees["B"] = cKDTree(self.points[:, self.n_a :])

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def _cols(self, axes: str) -> slice:
        if axes == "A":
            return slice(0, self.n_a)
        if axes == "B":
            return slice(self.n_a, self.dim)
        if axes == "full":
            return slice(0, self.dim)
        raise ValidationError(f"unknown subspace {axes!r}")

    def _check_k(self, k: int):
        if k < 1:
            raise ValidationError(f"k must be >= 1, got {k}")
        if k >= self.n:
            raise KTooLarge(f"k={k} requires at least {k + 1} points, cloud has {self.n}")

    def kth_neighbor_distance(self, i: int, k: int) -> float:
        """k-th smallest max-norm distance from point ``i`` to the other points."""
        self._check_k(k)
        d, _ = self._trees["full"].query(self.points[i], k + 1, p=np.inf)
        return float(d[-1])

    def kth_distances(self, k: int) -> np.ndarray:
        """:meth:`kth_neighbor_distance` for every point."""
        self._check_k(k)
        d, _ = self._trees["full"].query(self.points, k + 1, p=np.inf)
        return d[:, -1]

    def count_within_subspace(self, i: int, radius: float, axes: str = "full") -> int:
        """Points (self included) strictly closer than ``radius`` in the chosen subspace."""
        if not radius > 0:
            raise ValidationError("radius must be positive")
        cols = self._cols(axes)
        tree = self._trees.get(axes, self._trees["full"])
        return int(tree.query_ball_point(self.points[i, cols], _below(radius), p=np.inf, return_length=True))

    def counts(self, radii, axes: str = "full") -> np.ndarray:
        cols = self._cols(axes)
        tree = self._trees.get(axes, self._trees["full"])
        return np.asarray(
            tree.query_ball_point(self.points[:, cols], _below(radii), p=np.inf, return_length=True),
            dtype=np.int64,
        )


def kth_neighbor_distance(index: NeighborIndex, i: int, k: int) -> float:
    return index.kth_neighbor_distance(i, k)


def count_within_subspace(index: NeighborIndex, i: int, radius: float, axes: str = "full") -> int:
    return index.count_within_subspace(i, radius, axes)


def cross_kth_distances(query, reference, k: int) -> np.ndarray:
    """k-th max-norm distance from each query point into a separate reference set."""
    reference = np.asarray(reference, dtype=np.float64)
    if k > len(reference):
        raise KTooLarge(f"k={k} exceeds reference size {len(reference)}")
    d, _ = cKDTree(reference).query(np.asarray(query, dtype=np.float64), k, p=np.inf)
    return d if k == 1 else d[:, -1]


# --- batch kernels for the KSG estimator -----------------------------------------

@numba.njit(cache=True)
def _brute_counts(xt, na, k):
    d, n = xt.shape
    eps = np.empty(n)
    n_a = np.empty(n, np.int64)
    n_b = np.empty(n, np.int64)
    da = np.empty(n)
    db = np.empty(n)
    best = np.empty(k)
    for i in range(n):
        da[:] = 0.0
        db[:] = 0.0
        for c in range(na):
            xi = xt[c, i]
            row = xt[c]
            for j in range(n):
                da[j] = max(da[j], abs(row[j] - xi))
        for c in range(na, d):
            xi = xt[c, i]
            row = xt[c]
            for j in range(n):
                db[j] = max(db[j], abs(row[j] - xi))
        for m in range(k):
            best[m] = np.inf
        for j in range(n):
            if j == i:
                continue
            t = max(da[j], db[j])
            if t < best[k - 1]:
                p = k - 1
                while p > 0 and best[p - 1] > t:
                    best[p] = best[p - 1]
                    p -= 1
                best[p] = t
        e = best[k - 1]
        eps[i] = e
        ca = 0
        cb = 0
        for j in range(n):
            ca += da[j] < e
            cb += db[j] < e
        n_a[i] = ca
        n_b[i] = cb
    return eps, n_a, n_b


@numba.njit(cache=True)
def _sweep_kth(xs, k):
    # rows sorted by column 0
    n, d = xs.shape
    eps = np.empty(n)
    best = np.empty(k)
    for i in range(n):
        for m in range(k):
            best[m] = np.inf
        lo = i - 1
        hi = i + 1
        while True:
            dl = abs(xs[i, 0] - xs[lo, 0]) if lo >= 0 else np.inf
            dh = abs(xs[hi, 0] - xs[i, 0]) if hi < n else np.inf
            if dl <= dh:
                if dl > best[k - 1]:
                    break
                j = lo
                lo -= 1
            else:
                if dh > best[k - 1]:
                    break
                j = hi
                hi += 1
            t = 0.0
            for c in range(d):
                t = max(t, abs(xs[j, c] - xs[i, c]))
            if t < best[k - 1]:
                p = k - 1
                while p > 0 and best[p - 1] > t:
                    best[p] = best[p - 1]
                    p -= 1
                best[p] = t
            if lo < 0 and hi >= n:
                break
        eps[i] = best[k - 1]
    return eps


@numba.njit(cache=True)
def _sweep_count(xs, r):
    # rows sorted by column 0; strict count with self
    n, d = xs.shape
    out = np.empty(n, np.int64)
    for i in range(n):
        e = r[i]
        c = 1 if e > 0.0 else 0
        j = i - 1
        while j >= 0 and abs(xs[i, 0] - xs[j, 0]) < e:
            ok = True
            for q in range(1, d):
                if abs(xs[j, q] - xs[i, q]) >= e:
                    ok = False
                    break
            c += ok
            j -= 1
        j = i + 1
        while j < n and abs(xs[j, 0] - xs[i, 0]) < e:
            ok = True
            for q in range(1, d):
                if abs(xs[j, q] - xs[i, q]) >= e:
                    ok = False
                    break
            c += ok
            j += 1
        out[i] = c
    return out


def _sweep_counts(x, radii):
    order = np.argsort(x[:, 0], kind="stable")
    xs = np.ascontiguousarray(x[order])
    out = np.empty(len(x), np.int64)
    out[order] = _sweep_count(xs, radii[order])
    return out


def ksg_counts(points, n_a: int, k: int, method: str = "auto"):
    """Joint k-th neighbour distance and strict A/B counts for every point.

    Returns
    -------
    eps : ndarray
        k-th neighbour max-norm distance in the joint space (self excluded).
    n_a, n_b : ndarray of int
        Points strictly closer than ``eps`` in subspace A (B), self included.
    """
    x = np.ascontiguousarray(np.asarray(points, dtype=np.float64))
    n, d = x.shape
    if not 0 < n_a < d:
        raise ValidationError(f"both subspaces must be non-empty (n_a={n_a}, D={d})")
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if k >= n:
        raise KTooLarge(f"k={k} requires at least {k + 1} points, cloud has {n}")
    if method == "auto":
        if d <= 2:
            method = "sweep"
        elif n <= BRUTE_MAX_N:
            method = "brute"
        else:
            method = "tree"
    if method == "brute":
        return _brute_counts(np.ascontiguousarray(x.T), n_a, k)
    if method == "sweep":
        order = np.argsort(x[:, 0], kind="stable")
        eps = np.empty(n)
        eps[order] = _sweep_kth(np.ascontiguousarray(x[order]), k)
        return eps, _sweep_counts(x[:, :n_a], eps), _sweep_counts(x[:, n_a:], eps)
    if method == "tree":
        index = NeighborIndex(x, n_a)
        eps = index.kth_distances(k)
        return eps, index.counts(eps, "A"), index.counts(eps, "B")
    raise ValidationError(f"unknown method {method!r}")
