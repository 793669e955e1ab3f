"""Excursion-coded real-tree pseudo-metrics and the finite-metric toolkit.

A non-negative grid function pinned at both ends codes a finite real tree:
the distance between grid times s <= t is
``values[s] + values[t] - 2 * min(values[s..t])``.  For two-sided grids the
minimum is taken over the complement of [s, t] whenever the two times lie
on opposite sides of 0.

The coded tree carries one extra value per grid cell (a "floor"): the
minimum of the underlying piecewise-linear excursion over that cell.  For
freshly sampled grids the floor is just the smaller endpoint, but
re-rooting creates genuine sub-grid branch points, and carrying them is
what makes the deterministic re-rooting identity hold exactly instead of
only approximately.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DataError, InvalidParameterError
from .paths import Path, TwoSidedPath

__all__ = [
    "RangeMin",
    "CodedTree",
    "FiniteMetricSpace",
    "tree_distance",
    "two_sided_distance",
    "two_sided_distance_flagged",
    "reroot_excursion",
    "distance_matrix",
    "four_point_delta",
    "covering_number",
    "covering_number_bracket",
    "correspondence_distortion",
    "gh_lower_bound",
]


class RangeMin:
    """Sparse-table range minimum: O(n log n) build, O(1) closed-interval query."""

    def __init__(self, values: Sequence[float]):
        v = np.asarray(values, dtype=np.float64)
        if v.ndim != 1 or len(v) == 0:
            raise InvalidParameterError("RangeMin needs a non-empty 1-d array")
        n = len(v)
        levels = max(1, n.bit_length())
        table = [v]
        for k in range(1, levels):
            span = 1 << k
            if span > n:
                break
            prev = table[-1]
            table.append(np.minimum(prev[: n - span + 1], prev[span >> 1: n - (span >> 1) + 1]))
        self._table = table
        self._n = n

    def query(self, lo: int, hi: int) -> float:
        """Min over the closed index interval [lo, hi]."""
        if lo > hi:
            lo, hi = hi, lo
        if lo < 0 or hi >= self._n:
            raise InvalidParameterError("range-min query out of bounds")
        k = (hi - lo + 1).bit_length() - 1
        t = self._table[k]
        return float(min(t[lo], t[hi - (1 << k) + 1]))

    def query_arrays(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """Vectorized closed-interval minima; lo <= hi elementwise."""
        lo = np.asarray(lo, dtype=np.int64)
        hi = np.asarray(hi, dtype=np.int64)
        if np.any(lo > hi) or np.any(lo < 0) or np.any(hi >= self._n):
            raise InvalidParameterError("range-min query out of bounds")
        span = hi - lo + 1
        k = np.frexp(span.astype(np.float64))[1] - 1  # floor(log2(span))
        out = np.empty(len(lo))
        for kk in np.unique(k):
            t = self._table[kk]
            m = k == kk
            out[m] = np.minimum(t[lo[m]], t[hi[m] - (1 << int(kk)) + 1])
        return out


def _interleave(values: np.ndarray, floors: np.ndarray) -> np.ndarray:
    out = np.empty(2 * len(values) - 1)
    out[0::2] = values
    out[1::2] = floors
    return out


@dataclass(frozen=True)
class CodedTree:
    """A grid excursion plus range-minimum structure realizing its tree metric.

    ``origin`` is the grid position of time 0 (0 for one-sided excursions,
    the gluing index for two-sided grids).  Signed indices for two-sided
    trees run in [-origin, n_points - 1 - origin].
    """

    times: np.ndarray
    values: np.ndarray
    floors: np.ndarray
    origin: int
    two_sided: bool
    rmq: RangeMin

    @classmethod
    def from_excursion(cls, grid: Union[Path, np.ndarray],
                       times: Optional[np.ndarray] = None) -> "CodedTree":
        if isinstance(grid, Path):
            v, t = grid.values, grid.times
        else:
            v = np.asarray(grid, dtype=np.float64)
            t = np.linspace(0.0, 1.0, len(v)) if times is None else np.asarray(times, float)
        if len(v) < 2:
            raise InvalidParameterError("excursion grid needs at least 2 points")
        if v[0] != 0.0 or v[-1] != 0.0:
            raise InvalidParameterError("excursion grid must be pinned to 0 at both ends")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise DataError("excursion grid must be finite and non-negative")
        floors = np.minimum(v[:-1], v[1:])
        return cls._build(t, v, floors, origin=0, two_sided=False)

    @classmethod
    def from_two_sided(cls, path: TwoSidedPath) -> "CodedTree":
        v = path.values
        t = path.times
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise DataError("two-sided grid must be finite and non-negative")
        floors = np.minimum(v[:-1], v[1:])
        return cls._build(t, v, floors, origin=path.n_left, two_sided=True)

    @classmethod
    def _build(cls, times, values, floors, origin, two_sided) -> "CodedTree":
        values = np.ascontiguousarray(values, dtype=np.float64)
        floors = np.ascontiguousarray(floors, dtype=np.float64)
        rmq = RangeMin(_interleave(values, floors))
        for a in (times, values, floors):
            np.asarray(a).flags.writeable = False
        tree = cls(times=np.asarray(times, float), values=values, floors=floors,
                   origin=int(origin), two_sided=bool(two_sided), rmq=rmq)
        return tree

    @property
    def n_points(self) -> int:
        return len(self.values)

    def _pos(self, i: int) -> int:
        """Map a (possibly signed) grid index to an array position."""
        p = self.origin + i if self.two_sided else i
        if not 0 <= p < self.n_points:
            raise InvalidParameterError(f"grid index {i} out of range")
        return p

    def range_min(self, lo: int, hi: int) -> float:
        """Min of the coded excursion over the closed cell range [lo, hi]."""
        return self.rmq.query(2 * lo, 2 * hi)

    def distance(self, s: int, t: int) -> float:
        """Tree distance between grid indices (one-sided trees)."""
        if self.two_sided:
            return self.signed_distance(s, t)
        a, b = self._pos(s), self._pos(t)
        lo, hi = (a, b) if a <= b else (b, a)
        return self.values[a] + self.values[b] - 2.0 * self.range_min(lo, hi)

    def signed_distance(self, s: int, t: int) -> float:
        return self.signed_distance_flagged(s, t)[0]

    def signed_distance_flagged(self, s: int, t: int) -> Tuple[float, bool]:
        """Distance between signed indices plus a window-truncation flag.

        When s and t straddle 0 the infimum runs over the window complement
        of (s, t); if it is attained at a window edge the true infimum over
        an infinite horizon could be smaller and the flag is raised.
        """
        if not self.two_sided:
            raise InvalidParameterError("signed distances need a two-sided tree")
        a, b = self._pos(s), self._pos(t)
        lo, hi = (a, b) if a <= b else (b, a)
        vs = self.values[a] + self.values[b]
        if s * t >= 0:
            return vs - 2.0 * self.range_min(lo, hi), False
        n = self.n_points
        m = min(self.rmq.query(0, 2 * lo), self.rmq.query(2 * hi, 2 * (n - 1)))
        flagged = m == self.values[0] or m == self.values[-1]
        return vs - 2.0 * m, bool(flagged)


def tree_distance(tree: CodedTree, s: int, t: int) -> float:
    """d(s, t) = v_s + v_t - 2 min over [s, t] for a one-sided coded tree."""
    return tree.distance(s, t)


def two_sided_distance(tree: CodedTree, s: int, t: int) -> float:
    return tree.signed_distance(s, t)


def two_sided_distance_flagged(tree: CodedTree, s: int, t: int) -> Tuple[float, bool]:
    return tree.signed_distance_flagged(s, t)


def reroot_excursion(tree: CodedTree, t: int) -> CodedTree:
    """Re-root a coded excursion at grid index t.

    The output grid value at s is ``tree_distance(tree, t, t (+) s)`` where
    (+) is addition on the time circle, and the output cell floors record
    the branch minima that fall strictly inside cells, so that distances in
    the rerooted tree equal the shifted distances of the input exactly.
    """
    if tree.two_sided:
        raise InvalidParameterError("re-rooting is defined for one-sided excursions")
    dt = np.diff(tree.times)
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=1e-12):
        raise InvalidParameterError("re-rooting requires a uniform grid")
    M = tree.n_points - 1
    t = int(t)
    if not 0 <= t <= M:
        raise InvalidParameterError("root index out of range")
    t = t % M  # index M is the same circle point as 0
    if t == 0:
        return tree

    w = _interleave(tree.values, tree.floors)  # refined circle, size 2M (+ repeated end)
    p = 2 * t
    C = 2 * M
    order = np.concatenate([np.arange(p, C + 1), np.arange(1, p + 1)])
    e = w[order]
    L1 = C - p + 1  # walk positions still on the first leg [t .. end]
    m = np.empty(C + 1)
    m[:L1] = np.minimum.accumulate(e[:L1])
    # second leg: min over w[u .. p], u = 1..p (suffix minima toward the root)
    m[L1:] = np.minimum.accumulate(w[p:0:-1])[::-1]
    root_val = w[p]
    f = root_val + e - 2.0 * m
    f[0] = 0.0
    f[-1] = 0.0
    np.maximum(f, 0.0, out=f)

    # per refined cell: does the linear segment strictly cross the frozen level?
    lam = np.empty(C)
    lam[: L1 - 1] = m[: L1 - 1]
    lam[L1 - 1:] = m[L1:]
    crossing = (e[:-1] - lam) * (e[1:] - lam) < 0.0
    cf = np.where(crossing, root_val - lam, np.minimum(f[:-1], f[1:]))

    new_values = f[0::2]
    new_floors = np.minimum(cf[0::2], cf[1::2])
    return CodedTree._build(tree.times, new_values, new_floors, origin=0, two_sided=False)


# ---------------------------------------------------------------------------
# Finite metric spaces


@dataclass(frozen=True)
class FiniteMetricSpace:
    """Pointed finite metric space: symmetric matrix with a basepoint index."""

    matrix: np.ndarray
    basepoint: int = 0

    def __post_init__(self):
        d = np.asarray(self.matrix)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise InvalidParameterError("matrix must be square")
        n = d.shape[0]
        if not 0 <= self.basepoint < n:
            raise InvalidParameterError("basepoint index out of range")
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise DataError("distances must be finite and non-negative")
        if np.any(np.diagonal(d) != 0):
            raise DataError("diagonal must be exactly zero")
        if not np.array_equal(d, d.T):
            raise DataError("matrix must be exactly symmetric")
        self._check_triangle(d)
        d = np.ascontiguousarray(d)
        d.flags.writeable = False
        object.__setattr__(self, "matrix", d)

    @staticmethod
    def _check_triangle(d: np.ndarray, tol: float = 1e-9) -> None:
        n = d.shape[0]
        # full check up to 512 points, random pivots beyond (cost O(n^2) per pivot)
        pivots = range(n) if n <= 512 else np.random.default_rng(0).choice(n, 64, replace=False)
        df = d.astype(np.float64, copy=False)
        for k in pivots:
            if np.any(df > df[:, k][:, None] + df[k, :][None, :] + tol):
                raise DataError("triangle inequality violated beyond tolerance")

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def diameter(self) -> float:
        return float(self.matrix.max()) if self.size else 0.0

    @property
    def radius(self) -> float:
        return float(self.matrix[self.basepoint].max()) if self.size else 0.0

    def to_csv(self, path) -> None:
        """Rows: n, basepoint, then the lower triangle row by row."""
        with open(path, "w") as fh:
            fh.write(f"{self.size}\n{self.basepoint}\n")
            for i in range(1, self.size):
                fh.write(",".join(repr(float(x)) for x in self.matrix[i, :i]) + "\n")

    @classmethod
    def from_csv(cls, path) -> "FiniteMetricSpace":
        with open(path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
        n = int(lines[0])
        basepoint = int(lines[1])
        d = np.zeros((n, n))
        for i in range(1, n):
            row = [float(x) for x in lines[1 + i].split(",")]
            d[i, :i] = row
            d[:i, i] = row
        return cls(d, basepoint)


MetricSource = Union[CodedTree, Callable[[int, int], float]]


def distance_matrix(source: MetricSource, subsample: Sequence[int],
                    basepoint: int = 0) -> FiniteMetricSpace:
    """Pairwise distance matrix over a list of (time) indices.

    ``source`` is a coded tree (signed indices for two-sided ones) or a
    symmetric metric callback on indices.  ``basepoint`` is the index value
    that becomes the distinguished point; it must appear in the subsample.
    """
    idx = list(subsample)
    if not idx:
        raise InvalidParameterError("subsample must be non-empty")
    if basepoint not in idx:
        raise InvalidParameterError("subsample must include the basepoint index")
    n = len(idx)
    d = np.zeros((n, n))
    if isinstance(source, CodedTree):
        pos = np.asarray([source._pos(i) for i in idx], dtype=np.int64)
        ii, jj = np.triu_indices(n, k=1)
        a, b = pos[ii], pos[jj]
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        if source.two_sided:
            vals = np.empty(len(ii))
            signed = np.asarray(idx, dtype=np.int64)
            straddle = signed[ii] * signed[jj] < 0
            inner = ~straddle
            vals[inner] = source.rmq.query_arrays(2 * lo[inner], 2 * hi[inner])
            if np.any(straddle):
                last = 2 * (source.n_points - 1)
                left = source.rmq.query_arrays(np.zeros(straddle.sum(), np.int64), 2 * lo[straddle])
                right = source.rmq.query_arrays(2 * hi[straddle], np.full(straddle.sum(), last, np.int64))
                vals[straddle] = np.minimum(left, right)
            dv = source.values[a] + source.values[b] - 2.0 * vals
        else:
            dv = source.values[a] + source.values[b] - 2.0 * source.rmq.query_arrays(2 * lo, 2 * hi)
        d[ii, jj] = dv
        d[jj, ii] = dv
    else:
        for i in range(n):
            for j in range(i + 1, n):
                v = float(source(idx[i], idx[j]))
                if not np.isfinite(v) or v < 0:
                    raise DataError(f"metric callback returned {v} for pair {idx[i]},{idx[j]}")
                d[i, j] = d[j, i] = v
    return FiniteMetricSpace(d, basepoint=idx.index(basepoint))


def four_point_delta(space: FiniteMetricSpace, max_quadruples: int = 1_000_000,
                     seed: int = 0) -> float:
    """Four-point hyperbolicity constant of a finite metric space.

    Over every quadruple, half the gap between the largest and the second
    largest of the three pairwise distance sums.  Exhaustive up to 256
    points; beyond that a fixed random sample of quadruples gives a lower
    estimate.  Integer matrices are processed in exact integer arithmetic.
    """
    d = space.matrix
    n = space.size
    if n < 4:
        return 0.0
    exact_int = np.issubdtype(d.dtype, np.integer)
    work = d.astype(np.int64) if exact_int else d
    if n <= 256:
        kk, ll = np.triu_indices(n, k=1)
        dkl = work[kk, ll]
        best = work.dtype.type(0)
        for i in range(n - 1):
            di = work[i]
            for j in range(i + 1, n):
                dj = work[j]
                s1 = work[i, j] + dkl
                s2 = di[kk] + dj[ll]
                s3 = di[ll] + dj[kk]
                mx = np.maximum(np.maximum(s1, s2), s3)
                mn = np.minimum(np.minimum(s1, s2), s3)
                gap = (2 * mx - (s1 + s2 + s3 - mn)).max()
                if gap > best:
                    best = gap
        # degenerate quadruples (repeated indices) contribute 0 by the
        # triangle inequality, so no masking is needed
        return float(best) / 2.0
    rng = np.random.default_rng(seed)
    best = 0.0
    chunk = 200_000
    remaining = max_quadruples
    while remaining > 0:
        b = min(chunk, remaining)
        remaining -= b
        q = rng.integers(0, n, size=(4, b))
        s1 = work[q[0], q[1]] + work[q[2], q[3]]
        s2 = work[q[0], q[2]] + work[q[1], q[3]]
        s3 = work[q[0], q[3]] + work[q[1], q[2]]
        mx = np.maximum(np.maximum(s1, s2), s3)
        mn = np.minimum(np.minimum(s1, s2), s3)
        gap = (2 * mx - (s1 + s2 + s3 - mn)).max()
        best = max(best, float(gap))
    return best / 2.0


def covering_number(space: FiniteMetricSpace, eta: float) -> int:
    """Greedy cover count: balls of radius eta centered at points.

    Each step picks the center covering the most uncovered points, so the
    count is always >= the minimal cover (it is itself a valid cover).
    """
    if eta <= 0:
        raise InvalidParameterError("eta must be positive")
    within = space.matrix <= eta
    n = space.size
    uncovered = np.ones(n, dtype=bool)
    count = 0
    while uncovered.any():
        gains = within[:, uncovered].sum(axis=1)
        c = int(np.argmax(gains))
        uncovered &= ~within[c]
        count += 1
    return count


def covering_number_bracket(space: FiniteMetricSpace, eta: float) -> Tuple[int, int]:
    """Greedy counts at radius eta and eta/2, bracketing the scale dependence."""
    return covering_number(space, eta), covering_number(space, eta / 2.0)


def correspondence_distortion(a: FiniteMetricSpace, b: FiniteMetricSpace) -> float:
    """sup |d_a - d_b| over index pairs; half of it bounds the pointed GH distance."""
    if a.size != b.size:
        raise InvalidParameterError("spaces must be matched by a shared index set")
    return float(np.abs(np.asarray(a.matrix, float) - np.asarray(b.matrix, float)).max())


def gh_lower_bound(a: FiniteMetricSpace, b: FiniteMetricSpace) -> float:
    """Half the larger of the diameter gap and the basepoint-radius gap."""
    return max(abs(a.diameter - b.diameter), abs(a.radius - b.radius)) / 2.0
