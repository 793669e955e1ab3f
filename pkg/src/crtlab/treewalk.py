"""Exact sampling of the loop-conditioned simple random walk on a regular tree.

The conditioning event (return to the origin after 2n steps) is radial
measurable, so the walk factorizes into a radial birth-death bridge plus
uniform angular choices on up-steps.  The radial bridge is sampled exactly
by reweighting transitions with return probabilities computed once in a
log-space dynamic program; angular choices then pick a uniform child
(k at the root, k-1 below), which can revisit previously seen children.

A brute-force enumeration over weighted Dyck paths provides the exact law
for small horizons and is kept deliberately independent of the sampler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidParameterError, ResourceGuardError
from .paths import spawn_rng
from .rtree import RangeMin

__all__ = [
    "TreeWord",
    "WalkBridge",
    "RadialDP",
    "build_radial_dp",
    "sample_conditioned_walk",
    "sample_radial_paths",
    "enumerate_bridges",
    "tree_dist",
    "gap_statistic",
]

_LOG_NEG_INF = float("-inf")


@dataclass(frozen=True)
class TreeWord:
    """A vertex of the k-regular tree as the child indices from the root."""

    indices: Tuple[int, ...]
    k: int

    def __post_init__(self):
        if self.k < 3:
            raise InvalidParameterError("regular tree requires k >= 3")
        for depth, c in enumerate(self.indices):
            bound = self.k if depth == 0 else self.k - 1
            if not 0 <= c < bound:
                raise InvalidParameterError(f"child index {c} out of range at depth {depth}")

    @classmethod
    def origin(cls, k: int) -> "TreeWord":
        return cls((), k)

    @property
    def depth(self) -> int:
        return len(self.indices)

    def child(self, c: int) -> "TreeWord":
        return TreeWord(self.indices + (int(c),), self.k)

    def parent(self) -> "TreeWord":
        if not self.indices:
            raise InvalidParameterError("the origin has no parent")
        return TreeWord(self.indices[:-1], self.k)


def tree_dist(u: TreeWord, v: TreeWord) -> int:
    """Graph distance: depth(u) + depth(v) - 2 * (common prefix length)."""
    if u.k != v.k:
        raise InvalidParameterError("words from different trees")
    lcp = 0
    for a, b in zip(u.indices, v.indices):
        if a != b:
            break
        lcp += 1
    return u.depth + v.depth - 2 * lcp


@dataclass(frozen=True)
class WalkBridge:
    """A conditioned walk: vertex sequence of length 2n+1 plus its depths."""

    vertices: Tuple[TreeWord, ...]
    radial: np.ndarray

    def __post_init__(self):
        v = self.vertices
        r = np.asarray(self.radial, dtype=np.int64)
        if len(v) != len(r) or len(v) % 2 == 0:
            raise InvalidParameterError("need 2n+1 vertices with matching depths")
        if v[0].depth != 0 or v[-1].depth != 0:
            raise InvalidParameterError("bridge must start and end at the origin")
        for i, w in enumerate(v):
            if w.depth != r[i]:
                raise InvalidParameterError("radial sequence inconsistent with vertices")
            if i:
                prev = v[i - 1]
                if w.depth == prev.depth + 1:
                    adjacent = w.indices[:-1] == prev.indices
                elif w.depth == prev.depth - 1:
                    adjacent = prev.indices[:-1] == w.indices
                else:
                    adjacent = False
                if not adjacent:
                    raise InvalidParameterError("consecutive vertices must be adjacent")
        r.flags.writeable = False
        object.__setattr__(self, "radial", r)

    @property
    def n_steps(self) -> int:
        return len(self.vertices) - 1

    def to_csv(self, path) -> None:
        """Columns: step, depth, vertex (child indices dash-joined)."""
        with open(path, "w") as fh:
            fh.write("step,depth,vertex\n")
            for i, w in enumerate(self.vertices):
                fh.write(f"{i},{w.depth},{'-'.join(map(str, w.indices))}\n")


class RadialDP:
    """Return-probability table for the radial chain, horizon 2n.

    ``log_return_prob(m, r)`` is log P(radial chain from r is at 0 after m
    steps), stored for states reachable on a closed 2n-step walk
    (r <= min(m, 2n - m), r = m mod 2).  Up-step probabilities of the
    conditioned chain are precomputed alongside.
    """

    def __init__(self, k: int, n: int, up_rows: List[np.ndarray],
                 h_rows: List[np.ndarray], h_offsets: np.ndarray):
        self.k = k
        self.n = n
        self._up = up_rows
        self._h = h_rows
        self._off = h_offsets

    @property
    def horizon(self) -> int:
        return 2 * self.n

    def _rmax(self, m: int) -> int:
        return min(m, self.horizon - m)

    def log_return_prob(self, m: int, r: int) -> float:
        if not 0 <= m <= self.horizon or r < 0:
            raise InvalidParameterError("state outside the table")
        if r > m or (r - m) % 2 != 0:
            return _LOG_NEG_INF
        if r > self._rmax(m):
            raise InvalidParameterError(
                "state reachable but outside the closed-walk window; "
                "rebuild with a larger horizon")
        return float(self._h[m][(r - (m & 1)) >> 1] + self._off[m])

    def up_prob(self, m: int, r: int) -> float:
        """Conditioned up-step probability with m steps remaining at level r."""
        if not 1 <= m <= self.horizon:
            raise InvalidParameterError("m must be in [1, 2n]")
        if r > self._rmax(m) or (r - m) % 2 != 0:
            raise InvalidParameterError("state not reachable at this remaining time")
        return float(self._up[m][(r - (m & 1)) >> 1])

    def table_bytes(self) -> int:
        return sum(a.nbytes for a in self._up) + sum(a.nbytes for a in self._h)


def estimate_table_bytes(n: int) -> int:
    """Approximate memory for build_radial_dp's two float32 tables."""
    return int((2 * n) ** 2)


def build_radial_dp(k: int, n: int, max_table_bytes: int = 800_000_000) -> RadialDP:
    """Backward dynamic program for the conditioned radial chain.

    Log-space float64 recursion; rows are stored row-normalized in float32
    together with float64 offsets, so ratios of neighboring entries (all
    the sampler needs) keep near machine precision at any horizon.
    """
    if k < 3:
        raise InvalidParameterError("k must be >= 3")
    if n < 1:
        raise InvalidParameterError("n must be >= 1")
    need = estimate_table_bytes(n)
    if need > max_table_bytes:
        raise ResourceGuardError(
            f"radial table for 2n={2*n} needs ~{need/1e6:.0f} MB "
            f"(ceiling {max_table_bytes/1e6:.0f} MB); raise max_table_bytes to proceed")
    H = 2 * n
    log_up_branch = math.log((k - 1) / k)
    log_down = -math.log(k)
    prev = np.full(H + 3, _LOG_NEG_INF)  # index shift: state r at slot r+1
    prev[1] = 0.0
    up_rows: List[np.ndarray] = [np.empty(0, np.float32)]
    h_rows: List[np.ndarray] = [np.zeros(1, np.float32)]
    offsets = np.zeros(H + 1)
    for m in range(1, H + 1):
        rs = np.arange(m & 1, min(m, H - m) + 1, 2)
        logu = np.where(rs == 0, 0.0, log_up_branch)
        up = logu + prev[rs + 2]
        down = log_down + prev[rs]  # rs == 0 reads the -inf pad: no down-step from 0
        cur = np.logaddexp(up, down)
        off = cur.max()
        offsets[m] = off
        h_rows.append((cur - off).astype(np.float32))
        with np.errstate(invalid="ignore"):
            pi = np.exp(up - cur)
        up_rows.append(np.nan_to_num(pi, nan=0.0).astype(np.float32))
        nxt = np.full(H + 3, _LOG_NEG_INF)
        nxt[rs + 1] = cur
        prev = nxt
    return RadialDP(k, n, up_rows, h_rows, offsets)


def sample_radial_paths(dp: RadialDP, n_paths: int, seed: int) -> np.ndarray:
    """Radial bridge paths, shape (n_paths, 2n+1), exact in law."""
    H = dp.horizon
    out = np.zeros((n_paths, H + 1), dtype=np.int32)
    r = np.zeros(n_paths, dtype=np.int64)
    rng = spawn_rng(seed, 0)
    for i in range(H):
        m = H - i
        row = dp._up[m]
        pu = row[(r - (m & 1)) >> 1]
        up = rng.random(n_paths) < pu
        r = r + np.where(up, 1, -1)
        out[:, i + 1] = r
    return out


def _vertex_ids(radial_row: np.ndarray, rng: np.random.Generator, k: int
                ) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Assign vertex identities along one radial path.

    Returns (vid per time, parent/child-index/depth per vertex id).
    Up-steps pick a uniform child and revisit an existing one when the same
    index was drawn before from the same vertex.
    """
    steps = np.diff(radial_row)
    n_up = int((steps > 0).sum())
    draws = rng.random(n_up)
    vids = np.empty(len(radial_row), dtype=np.int64)
    vids[0] = 0
    parent = [0]
    child_of = [0]
    depth = [0]
    children: Dict[Tuple[int, int], int] = {}
    cur = 0
    j = 0
    for i, s in enumerate(steps):
        if s > 0:
            bound = k if radial_row[i] == 0 else k - 1
            c = int(draws[j] * bound)
            j += 1
            key = (cur, c)
            nxt = children.get(key)
            if nxt is None:
                nxt = len(parent)
                parent.append(cur)
                child_of.append(c)
                depth.append(int(radial_row[i + 1]))
                children[key] = nxt
            cur = nxt
        else:
            cur = parent[cur]
        vids[i + 1] = cur
    return (vids, np.asarray(parent, dtype=np.int64),
            np.asarray(child_of, dtype=np.int64), np.asarray(depth, dtype=np.int64))


def sample_conditioned_walk(k: int, n: int, seed: int,
                            dp: Optional[RadialDP] = None) -> WalkBridge:
    """One walk of length 2n on the k-regular tree, conditioned to return.

    Pass a prebuilt ``dp`` (shared read-only) when sampling repeatedly.
    """
    if dp is None:
        dp = build_radial_dp(k, n)
    elif dp.k != k or dp.n != n:
        raise InvalidParameterError("dp table does not match (k, n)")
    radial = sample_radial_paths(dp, 1, seed)[0]
    vids, parent, child_of, _ = _vertex_ids(radial, spawn_rng(seed, 1), k)
    words: List[TreeWord] = [TreeWord.origin(k)] * len(vids)
    cache: Dict[int, TreeWord] = {0: TreeWord.origin(k)}
    for i, v in enumerate(vids):
        w = cache.get(int(v))
        if w is None:
            w = cache[int(parent[v])].child(int(child_of[v]))
            cache[int(v)] = w
        words[i] = w
    return WalkBridge(tuple(words), radial)


def enumerate_bridges(k: int, n: int) -> Dict[Tuple[int, ...], Fraction]:
    """Exact law of the radial path of the conditioned walk, in rationals.

    The weight of a radial Dyck path is the number of tree walks above it
    (product of branch counts over up-steps); probabilities are weights
    over the total.  Refuses n > 8: the Catalan growth makes larger
    horizons pointless as an oracle.
    """
    if k < 3:
        raise InvalidParameterError("k must be >= 3")
    if not 1 <= n <= 8:
        raise ResourceGuardError("enumeration oracle supports 1 <= n <= 8")
    paths: List[Tuple[int, ...]] = []
    weights: List[int] = []

    def rec(level: int, remaining: int, prefix: List[int], weight: int) -> None:
        if remaining == 0:
            if level == 0:
                paths.append(tuple(prefix))
                weights.append(weight)
            return
        if level > remaining:
            return
        branch = k if level == 0 else k - 1
        prefix.append(level + 1)
        rec(level + 1, remaining - 1, prefix, weight * branch)
        prefix.pop()
        if level > 0:
            prefix.append(level - 1)
            rec(level - 1, remaining - 1, prefix, weight)
            prefix.pop()

    rec(0, 2 * n, [0], 1)
    total = sum(weights)
    return {p: Fraction(w, total) for p, w in zip(paths, weights)}


# ---------------------------------------------------------------------------
# LCA machinery and the gap statistic


def _lifting_table(parent: np.ndarray) -> np.ndarray:
    levels = max(1, int(len(parent)).bit_length())
    anc = np.empty((levels, len(parent)), dtype=np.int64)
    anc[0] = parent
    for j in range(1, levels):
        anc[j] = anc[j - 1][anc[j - 1]]
    return anc


def _lca_depth(anc: np.ndarray, depth: np.ndarray, u: np.ndarray,
               v: np.ndarray) -> np.ndarray:
    """Depths of lowest common ancestors for vectors of vertex ids."""
    u = u.copy()
    v = v.copy()
    du = depth[u]
    dv = depth[v]
    swap = du < dv
    u[swap], v[swap] = v[swap], u[swap]
    diff = np.abs(du - dv)
    for j in range(int(diff.max()).bit_length()):
        m = (diff >> j) & 1 > 0
        u[m] = anc[j][u[m]]
    neq = u != v
    for j in range(anc.shape[0] - 1, -1, -1):
        cand_u = anc[j][u]
        cand_v = anc[j][v]
        m = neq & (cand_u != cand_v)
        u[m] = cand_u[m]
        v[m] = cand_v[m]
    lca = np.where(u == v, u, anc[0][u])
    return depth[lca]


def _default_subsample(length: int, count: int = 512) -> np.ndarray:
    return np.unique(np.round(np.linspace(0, length - 1, min(length, count))).astype(np.int64))


def _gap_from_arrays(radial: np.ndarray, vids: np.ndarray, parent: np.ndarray,
                     depth: np.ndarray, sub: np.ndarray) -> float:
    """Max over subsample pairs of the tree-inequality slack, unnormalized."""
    rmq = RangeMin(radial.astype(np.float64))
    anc = _lifting_table(parent)
    ii, jj = np.triu_indices(len(sub), k=1)
    a, b = sub[ii], sub[jj]
    h = _lca_depth(anc, depth, vids[a], vids[b])
    minr = rmq.query_arrays(np.minimum(a, b), np.maximum(a, b))
    slack = 2.0 * (h - minr)
    return float(slack.max()) if len(slack) else 0.0


def gap_statistic(walk: WalkBridge, subsample: Optional[Sequence[int]] = None) -> float:
    """Sup over pairs of (radial-coded distance - true distance) / sqrt(2n).

    The radial formula depth_i + depth_j - 2 min depth over [i, j] always
    dominates the tree distance; the normalized worst slack measures how
    far the range is from its radial coding.
    """
    H = walk.n_steps
    sub = (_default_subsample(H + 1) if subsample is None
           else np.unique(np.asarray(list(subsample), dtype=np.int64)))
    if np.any(sub < 0) or np.any(sub > H):
        raise InvalidParameterError("subsample index out of range")
    ids: Dict[Tuple[int, ...], int] = {}
    vids = np.empty(H + 1, dtype=np.int64)
    parent: List[int] = []
    depth: List[int] = []
    for i, w in enumerate(walk.vertices):
        key = w.indices
        vid = ids.get(key)
        if vid is None:
            vid = len(parent)
            ids[key] = vid
            parent.append(ids[key[:-1]] if key else 0)
            depth.append(len(key))
        vids[i] = vid
    return _gap_from_arrays(walk.radial, vids, np.asarray(parent, dtype=np.int64),
                            np.asarray(depth, dtype=np.int64), sub) / math.sqrt(H)


def _gap_statistics_batch(dp: RadialDP, n_paths: int, seed: int,
                          subsample_count: int = 512) -> np.ndarray:
    """Gap statistics for a batch of fresh walks (fast path for experiments)."""
    radial = sample_radial_paths(dp, n_paths, seed)
    H = dp.horizon
    sub = _default_subsample(H + 1, subsample_count)
    out = np.empty(n_paths)
    for rep in range(n_paths):
        vids, parent, _, depth = _vertex_ids(radial[rep], spawn_rng(seed, 1, rep), dp.k)
        out[rep] = _gap_from_arrays(radial[rep], vids, parent, depth, sub) / math.sqrt(H)
    return out


def _range_matrix(radial_row: np.ndarray, vids: np.ndarray, parent: np.ndarray,
                  depth: np.ndarray, sub: np.ndarray) -> np.ndarray:
    """Integer tree-distance matrix between the visited vertices at ``sub`` times."""
    anc = _lifting_table(parent)
    n = len(sub)
    d = np.zeros((n, n), dtype=np.int64)
    ii, jj = np.triu_indices(n, k=1)
    h = _lca_depth(anc, depth, vids[sub[ii]], vids[sub[jj]])
    vals = radial_row[sub[ii]] + radial_row[sub[jj]] - 2 * h
    d[ii, jj] = vals
    d[jj, ii] = vals
    return d
