"""Hyperboloid-model geometry and exact Brownian-bridge sampling in H3.

Points live on the upper sheet of ``<x,x> = -1`` in Minkowski space with
signature (-,+,+,+); the origin is (1,0,0,0).  The heat kernel is the
closed form for the 3-dimensional space with generator half the
Laplace-Beltrami operator,

    p_t(r) = (2 pi t)^(-3/2) exp(-t/2) * (r / sinh r) * exp(-r^2 / (2 t)),

a density in r = d(x, y) against the volume element 4 pi sinh(r)^2 dr.
The constant conventions are not taken on faith: ``heat_kernel_self_check``
verifies normalization and the semigroup property by quadrature, and the
experiment layer refuses to run anything hyperbolic if that gate fails.

Bridges are sampled exactly in law by recursive midpoint bisection: the
mid-time point given endpoints x, y at time gap 2*delta has density
p_delta(x,z) p_delta(z,y) / p_{2 delta}(x,y).  In bipolar coordinates
(d1, d2, azimuth) around the endpoints the volume element is
sinh(d1) sinh(d2) / sinh(h) dd1 dd2 dphi, which cancels the kernel's
sinh factors exactly: the conditional law of (d1, d2) is a product of
Rayleigh-type densities d e^(-d^2/(2 delta)) restricted to the triangle
region {d1 + d2 >= h, |d1 - d2| <= h}, and the azimuth is uniform.  The
sampler draws the rotated coordinates u = d1 + d2, w = d1 - d2 by exact
inverse-cdf and a bounded thinning step, so the acceptance rate never
degrades, however far apart the endpoints are.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import (EnvelopeFailureError, GateCheckError, InvalidParameterError,
                     ResourceGuardError)
from .paths import spawn_rng, _bessel3_values

__all__ = [
    "HPoint",
    "HIsometry",
    "BridgePath",
    "origin",
    "hdist",
    "geodesic_point",
    "isometry_to_origin",
    "heat_kernel_h3",
    "heat_kernel_self_check",
    "sample_bridge_h3",
    "reroot_bridge",
    "geodesic_avoidance_stat",
    "sample_loop_points",
]

_DIM = 3  # ambient H_3; the heat kernel below is specific to it


def _mink(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Minkowski inner product along the last axis."""
    return -x[..., 0] * y[..., 0] + np.sum(x[..., 1:] * y[..., 1:], axis=-1)


def _resheet(c: np.ndarray) -> np.ndarray:
    """Project coordinates back to the upper sheet (x0 recomputed exactly)."""
    c = np.array(c, dtype=np.float64, copy=True)
    c[..., 0] = np.sqrt(1.0 + np.sum(c[..., 1:] ** 2, axis=-1))
    return c


@dataclass(frozen=True)
class HPoint:
    """A point of the hyperboloid model: <x,x> = -1, x0 >= 1."""

    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        if c.shape != (_DIM + 1,):
            raise InvalidParameterError(f"expected {_DIM + 1} coordinates")
        if not np.all(np.isfinite(c)) or c[0] < 1.0 - 1e-9 or abs(_mink(c, c) + 1.0) > 1e-9:
            raise InvalidParameterError("coordinates do not lie on the upper sheet")
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "coords", c)

    @classmethod
    def from_spatial(cls, spatial: Sequence[float]) -> "HPoint":
        s = np.asarray(spatial, dtype=np.float64)
        return cls(np.concatenate([[math.sqrt(1.0 + float(s @ s))], s]))


def origin() -> HPoint:
    return HPoint(np.array([1.0, 0.0, 0.0, 0.0]))


def _as_coords(x) -> np.ndarray:
    return x.coords if isinstance(x, HPoint) else np.asarray(x, dtype=np.float64)


def hdist(x, y) -> float:
    """Hyperbolic distance arccosh(-<x,y>), with drift-tolerant clamping."""
    cx, cy = _as_coords(x), _as_coords(y)
    g = -_mink(cx, cy)
    if g < 1.0:
        if g < 1.0 - 1e-9:
            cx, cy = _resheet(cx), _resheet(cy)
            g = -_mink(cx, cy)
            if g < 1.0 - 1e-9:
                raise InvalidParameterError("points too far off the hyperboloid to renormalize")
        g = 1.0
    return float(np.arccosh(g))


def _hdist_arrays(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.arccosh(np.maximum(-_mink(x, y), 1.0))


def geodesic_point(x, y, fraction: float) -> HPoint:
    """The point at the given fraction along the geodesic from x to y."""
    if not 0.0 <= fraction <= 1.0:
        raise InvalidParameterError("fraction must lie in [0, 1]")
    cx, cy = _as_coords(x), _as_coords(y)
    u = hdist(cx, cy)
    if u < 1e-12:
        return HPoint(_resheet(cx))
    c = (math.sinh((1.0 - fraction) * u) * cx + math.sinh(fraction * u) * cy) / math.sinh(u)
    return HPoint(_resheet(c))


def _geodesic_points_arrays(x: np.ndarray, y: np.ndarray, fractions: np.ndarray) -> np.ndarray:
    """(n_fractions, 4) points along one geodesic; degenerate pairs return x."""
    u = _hdist_arrays(x, y)
    if u < 1e-12:
        return np.broadcast_to(x, (len(fractions), 4)).copy()
    w1 = np.sinh((1.0 - fractions) * u)[:, None]
    w2 = np.sinh(fractions * u)[:, None]
    return _resheet((w1 * x[None, :] + w2 * y[None, :]) / math.sinh(u))


@dataclass(frozen=True)
class HIsometry:
    """A Minkowski-form-preserving matrix mapping the upper sheet to itself."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (_DIM + 1, _DIM + 1):
            raise InvalidParameterError("isometry matrix has wrong shape")
        eta = np.diag([-1.0] + [1.0] * _DIM)
        if not np.allclose(m.T @ eta @ m, eta, atol=1e-9):
            raise InvalidParameterError("matrix does not preserve the Minkowski form")
        if m[0, 0] < 0:
            raise InvalidParameterError("matrix swaps the sheets")
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    def apply(self, x: HPoint) -> HPoint:
        return HPoint(_resheet(self.matrix @ x.coords))

    def compose(self, other: "HIsometry") -> "HIsometry":
        return HIsometry(self.matrix @ other.matrix)


def _boost_matrix(spatial: np.ndarray, x0: float) -> np.ndarray:
    b = np.empty((_DIM + 1, _DIM + 1))
    b[0, 0] = x0
    b[0, 1:] = spatial
    b[1:, 0] = spatial
    b[1:, 1:] = np.eye(_DIM) + np.outer(spatial, spatial) / (1.0 + x0)
    return b


def isometry_to_origin(x: HPoint) -> HIsometry:
    """The pure hyperbolic translation along the o-x geodesic sending x to o."""
    return HIsometry(_boost_matrix(-x.coords[1:], x.coords[0]))


def _boosts_from_origin(points: np.ndarray) -> np.ndarray:
    """Batch of boosts sending o to each row of ``points``; shape (n, 4, 4)."""
    n = len(points)
    b = np.empty((n, _DIM + 1, _DIM + 1))
    s = points[:, 1:]
    b[:, 0, 0] = points[:, 0]
    b[:, 0, 1:] = s
    b[:, 1:, 0] = s
    b[:, 1:, 1:] = np.eye(_DIM)[None] + s[:, :, None] * s[:, None, :] / (1.0 + points[:, 0])[:, None, None]
    return b


# ---------------------------------------------------------------------------
# Heat kernel


def _log_sinh(d: np.ndarray) -> np.ndarray:
    # log sinh without overflow: d + log1p(-exp(-2d)) - log 2
    return d + np.log1p(-np.exp(-2.0 * np.minimum(d, 400.0))) - math.log(2.0)


def _log_ratio(d: np.ndarray) -> np.ndarray:
    """log(d / sinh d), finite at 0."""
    d = np.asarray(d, dtype=np.float64)
    small = d < 1e-6
    safe = np.where(small, 1.0, d)
    out = np.where(small, -d * d / 6.0, np.log(safe) - _log_sinh(safe))
    return out


def _log_heat_kernel_h3(t: float, d: np.ndarray) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    return (-1.5 * math.log(2.0 * math.pi * t) - 0.5 * t + _log_ratio(d)
            - d * d / (2.0 * t))


def heat_kernel_h3(t: float, r) -> np.ndarray:
    """Transition density p_t at distance r, against the volume measure.

    Normalized so that the integral of p_t(r) 4 pi sinh(r)^2 dr over r >= 0
    is 1; see ``heat_kernel_self_check``.
    """
    if t <= 0:
        raise InvalidParameterError("t must be positive")
    r = np.asarray(r, dtype=np.float64)
    if np.any(r < 0):
        raise InvalidParameterError("r must be non-negative")
    return np.exp(_log_heat_kernel_h3(t, r))


def _gauss_legendre(a: float, b: float, n: int) -> Tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


@functools.lru_cache(maxsize=1)
def heat_kernel_self_check(tol: float = 1e-3) -> Dict[str, float]:
    """Quadrature gate for the kernel conventions; raises GateCheckError.

    Checks total mass 1 for t in {0.1, 1, 10} and the semigroup identity
    at (s, t) = (0.5, 0.5), r in {0.5, 1, 2}, both within ``tol`` relative.
    """
    report: Dict[str, float] = {}
    for t in (0.1, 1.0, 10.0):
        u, w = _gauss_legendre(0.0, 12.0 * math.sqrt(t) + 20.0, 800)
        mass = float(np.sum(w * heat_kernel_h3(t, u) * 4.0 * math.pi * np.sinh(u) ** 2))
        report[f"mass_t={t}"] = mass
        if abs(mass - 1.0) > tol:
            raise GateCheckError(f"heat kernel mass at t={t} is {mass}, off by {abs(mass-1):.2e}")
    s = t = 0.5
    for r0 in (0.5, 1.0, 2.0):
        u, wu = _gauss_legendre(0.0, r0 + 12.0 * math.sqrt(s + t) + 10.0, 600)
        th, wt = _gauss_legendre(0.0, math.pi, 200)
        uu, tt = np.meshgrid(u, th, indexing="ij")
        cw = np.cosh(uu) * math.cosh(r0) - np.sinh(uu) * math.sinh(r0) * np.cos(tt)
        conv = 2.0 * math.pi * np.einsum(
            "i,j,ij->", wu, wt,
            heat_kernel_h3(s, uu) * heat_kernel_h3(t, np.arccosh(np.maximum(cw, 1.0)))
            * np.sinh(uu) ** 2 * np.sin(tt))
        target = float(heat_kernel_h3(s + t, r0))
        rel = abs(conv - target) / target
        report[f"chapman_r={r0}"] = rel
        if rel > tol:
            raise GateCheckError(f"semigroup identity off by {rel:.2e} at r={r0}")
    return report


# ---------------------------------------------------------------------------
# Exact bridge sampling by recursive midpoints


_MAX_REJECTION_ITERS = 10_000
_TAIL_START = 8.0  # switch from inverse-cdf to a Rayleigh-tail proposal


def _sample_dist_sum(h_scaled: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw s with density ~ s^2 exp(-s^2/2) conditioned on s >= h_scaled."""
    from scipy.stats import chi

    n = len(h_scaled)
    out = np.empty(n)
    body = h_scaled < _TAIL_START
    if np.any(body):
        lo = chi.cdf(h_scaled[body], 3)
        out[body] = chi.ppf(lo + rng.random(body.sum()) * (1.0 - lo), 3)
    pending = np.flatnonzero(~body)
    # deep tail: Rayleigh-tail proposal sqrt(s0^2 - 2 ln U) thinned by s/c
    iters = 0
    while len(pending):
        iters += 1
        if iters > _MAX_REJECTION_ITERS:
            raise EnvelopeFailureError("distance-sum tail sampling stalled",
                                       {"pending": len(pending)})
        s0 = h_scaled[pending]
        c = s0 + 45.0 / s0
        s = np.sqrt(s0 * s0 - 2.0 * np.log(rng.random(len(pending))))
        ok = rng.random(len(pending)) * c < s
        out[pending[ok]] = s[ok]
        pending = pending[~ok]
    return out


def _sample_dist_diff(h_scaled: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw t with density ~ exp(-t^2/2) restricted to |t| <= h_scaled."""
    from scipy.stats import norm

    lo = norm.cdf(-h_scaled)
    hi = norm.cdf(h_scaled)
    t = norm.ppf(lo + rng.random(len(h_scaled)) * (hi - lo))
    return np.clip(t, -h_scaled, h_scaled)


def _unit_rows(v: np.ndarray) -> np.ndarray:
    return v / np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-300)


def _orthonormal_transverse(axis: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Two unit vectors completing each row of ``axis`` to a basis of R^3."""
    pick = np.argmin(np.abs(axis), axis=1)
    helper = np.eye(3)[pick]
    t1 = _unit_rows(np.cross(axis, helper))
    t2 = np.cross(axis, t1)
    return t1, t2


def _sample_midpoints(x: np.ndarray, y: np.ndarray, delta: float,
                      rng: np.random.Generator,
                      h: Optional[np.ndarray] = None
                      ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact midpoints z ~ p_delta(x,.) p_delta(.,y) for each endpoint pair.

    Exact in law via the bipolar factorization: u = d(x,z) + d(z,y) and
    w = d(x,z) - d(z,y) have density ~ (u^2 - w^2) exp(-(u^2+w^2)/(4 delta))
    on {u >= h, |w| <= h}, sampled by inverse-cdf proposals thinned with
    probability (u^2 - w^2)/u^2 (at least ~0.4, uniformly in h).

    Returns (z, d1, d2).  Pass the endpoint distances ``h`` when they are
    known exactly (the recursion chains them); recomputing them from inner
    products of far-away coordinates loses precision.
    """
    n = len(x)
    if h is None:
        h = _hdist_arrays(x, y)
    scale = math.sqrt(2.0 * delta)
    hs = h / scale
    u = np.empty(n)
    w = np.empty(n)
    pending = np.arange(n)
    iters = 0
    while len(pending):
        iters += 1
        if iters > _MAX_REJECTION_ITERS:
            raise EnvelopeFailureError(
                "midpoint thinning stalled", {"delta": delta, "pending": len(pending)})
        uu = scale * _sample_dist_sum(hs[pending], rng)
        ww = scale * _sample_dist_diff(hs[pending], rng)
        ok = rng.random(len(pending)) * uu * uu < uu * uu - ww * ww
        u[pending[ok]] = uu[ok]
        w[pending[ok]] = ww[ok]
        pending = pending[~ok]
    d1 = 0.5 * (u + w)
    d2 = 0.5 * (u - w)

    boosts = _boosts_from_origin(x)
    inv = np.concatenate([x[:, :1], -x[:, 1:]], axis=1)
    y_at_o = np.einsum("nij,nj->ni", _boosts_from_origin(inv), y)
    axis = _unit_rows(y_at_o[:, 1:])
    with np.errstate(invalid="ignore", over="ignore"):
        cos_a = ((np.cosh(d1) * np.cosh(h) - np.cosh(d2))
                 / np.maximum(np.sinh(d1) * np.sinh(h), 1e-300))
    np.clip(cos_a, -1.0, 1.0, out=cos_a)
    sin_a = np.sqrt(1.0 - cos_a * cos_a)
    phi = rng.uniform(0.0, 2.0 * math.pi, n)
    t1, t2 = _orthonormal_transverse(axis)
    direction = (cos_a[:, None] * axis
                 + (sin_a * np.cos(phi))[:, None] * t1
                 + (sin_a * np.sin(phi))[:, None] * t2)
    degenerate = h < 1e-6  # x == y: the direction is exactly uniform
    if np.any(degenerate):
        g = rng.standard_normal((int(degenerate.sum()), 3))
        direction[degenerate] = _unit_rows(g)
    z_at_o = np.empty((n, 4))
    z_at_o[:, 0] = np.cosh(d1)
    z_at_o[:, 1:] = np.sinh(d1)[:, None] * direction
    z = np.einsum("nij,nj->ni", boosts, z_at_o)
    return _resheet(z), d1, d2


@dataclass(frozen=True)
class BridgePath:
    """A sampled bridge: uniform time grid plus hyperboloid points."""

    times: np.ndarray
    points: np.ndarray  # (n_points, 4)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        p = np.asarray(self.points, dtype=np.float64)
        if p.ndim != 2 or p.shape != (len(t), _DIM + 1):
            raise InvalidParameterError("points must be (n_times, 4)")
        o = origin().coords
        if not (np.array_equal(p[0], o) and np.array_equal(p[-1], o)):
            raise InvalidParameterError("bridge endpoints must be exactly the origin")
        for a in (t, p):
            a.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "points", p)

    @property
    def n_points(self) -> int:
        return len(self.times)

    @property
    def radial(self) -> np.ndarray:
        """Distances from the origin: arccosh of the time coordinate."""
        return np.arccosh(np.maximum(self.points[:, 0], 1.0))

    def point(self, i: int) -> HPoint:
        return HPoint(_resheet(self.points[i]))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("time," + ",".join(f"x{i}" for i in range(_DIM + 1)) + ",radial\n")
            rad = self.radial
            for i in range(self.n_points):
                coords = ",".join(repr(float(c)) for c in self.points[i])
                fh.write(f"{self.times[i]!r},{coords},{rad[i]!r}\n")


_MAX_BRIDGE_DURATION = 64.0


def _bridge_points_batch(T: float, levels: int, n_paths: int, seed: int,
                         chunk: int = 4096) -> np.ndarray:
    """Bridge point arrays (n_paths, 2^levels + 1, 4), endpoints at origin.

    Segment endpoint distances are chained through the recursion (they are
    byproducts of the exact midpoint sampler), never recomputed from inner
    products, so the conditional law stays exact at every level.  The
    transverse resolution of far-apart pairs is limited by the coordinate
    representation (relative error ~ 1e-16 exp(2 Gromov product)), which is
    why durations beyond 64 are refused.
    """
    if levels < 1:
        raise InvalidParameterError("levels must be >= 1")
    if T <= 0:
        raise InvalidParameterError("duration must be positive")
    if T > _MAX_BRIDGE_DURATION:
        raise ResourceGuardError(
            f"bridge duration {T} exceeds the supported ceiling "
            f"{_MAX_BRIDGE_DURATION}: hyperboloid float coordinates cannot "
            "carry the transverse structure of longer loops")
    N = (1 << levels) + 1
    o = origin().coords
    out = np.empty((n_paths, N, 4))
    out[:, 0] = o
    out[:, -1] = o
    rng = spawn_rng(seed)
    for start in range(0, n_paths, chunk):
        block = out[start: start + chunk]
        nb = len(block)
        seg_h = np.zeros((nb, 1))  # d(o, o) at the root segment
        for lev in range(levels):
            span = (N - 1) >> lev
            half = span >> 1
            left = np.arange(0, N - 1, span)
            delta = T * half / (N - 1)
            xs = block[:, left].reshape(-1, 4)
            ys = block[:, left + span].reshape(-1, 4)
            mids, d1, d2 = _sample_midpoints(xs, ys, delta, rng,
                                             h=seg_h.reshape(-1))
            block[:, left + half] = mids.reshape(nb, len(left), 4)
            nxt = np.empty((nb, 2 * len(left)))
            nxt[:, 0::2] = d1.reshape(nb, len(left))
            nxt[:, 1::2] = d2.reshape(nb, len(left))
            seg_h = nxt
    return out


def sample_bridge_h3(T: float, levels: int, seed: int) -> BridgePath:
    """Exact-in-law bridge from o to o of duration T on 2^levels + 1 grid points."""
    pts = _bridge_points_batch(T, levels, 1, seed)[0]
    pts[0] = origin().coords
    pts[-1] = origin().coords
    times = np.linspace(0.0, T, len(pts))
    return BridgePath(times, pts)


def _reroot_points_batch(points: np.ndarray, t_idx: np.ndarray) -> np.ndarray:
    """Cyclic shift + origin-sending translation, vectorized over paths."""
    n_paths, N, _ = points.shape
    base = points[np.arange(n_paths), t_idx]
    iso = np.empty((n_paths, 4, 4))
    s = -base[:, 1:]
    iso[:, 0, 0] = base[:, 0]
    iso[:, 0, 1:] = s
    iso[:, 1:, 0] = s
    iso[:, 1:, 1:] = np.eye(3)[None] + s[:, :, None] * s[:, None, :] / (1.0 + base[:, 0])[:, None, None]
    cols = (t_idx[:, None] + np.arange(N)[None, :]) % (N - 1)
    shifted = np.take_along_axis(points, cols[:, :, None], axis=1)
    rerooted = np.einsum("nij,ntj->nti", iso, shifted)
    rerooted = _resheet(rerooted)
    rerooted[:, 0] = origin().coords
    rerooted[:, -1] = origin().coords
    return rerooted


def reroot_bridge(path: BridgePath, t: float) -> BridgePath:
    """Shift time by t cyclically and translate the visited point to o."""
    dt = np.diff(path.times)
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=1e-12):
        raise InvalidParameterError("re-rooting requires a uniform grid")
    j = int(np.argmin(np.abs(path.times - t)))
    if not math.isclose(float(path.times[j]), float(t), rel_tol=1e-9, abs_tol=1e-12):
        raise InvalidParameterError("t must be a grid time")
    pts = _reroot_points_batch(path.points[None], np.array([j]))[0]
    return BridgePath(path.times, pts)


def geodesic_avoidance_stat(path: BridgePath, pair_grid: Sequence[Tuple[int, int]],
                            probe_count: int = 16) -> float:
    """How far geodesics between visited points stray from the range piece.

    For each index pair (s, t), probe points on the geodesic between
    path(s) and path(t) and measure their distance to the sampled range
    over [s, t]; returns the max over pairs and probes.
    """
    if probe_count < 1:
        raise InvalidParameterError("probe_count must be >= 1")
    fracs = np.linspace(0.0, 1.0, probe_count)
    eta = np.diag([-1.0, 1.0, 1.0, 1.0])
    best = 0.0
    for s, t in pair_grid:
        if not 0 <= s <= t < path.n_points:
            raise InvalidParameterError("pair indices out of range")
        if s == t:
            continue
        probes = _geodesic_points_arrays(path.points[s], path.points[t], fracs)
        window = path.points[s: t + 1]
        inner = probes @ eta @ window.T
        dist = np.arccosh(np.maximum(-inner, 1.0))
        best = max(best, float(dist.min(axis=1).max()))
    return best


# ---------------------------------------------------------------------------
# The infinite-loop model: exact Bessel(3) radial parts plus angular
# spherical motion run at the accumulated sinh^(-2)(radial) clock.  The two
# time halves share one uniform escape direction (the limit of the bridge's
# far turning point), and each half's angular path is built backward from
# it: spherical Brownian motion pinned at the shared direction at clock
# infinity.  Near time 0 the residual clock diverges, so the halves leave
# the origin in almost independent directions, while at long range they
# glue along a common spine.


def _sphere_steps(dirs: np.ndarray, tau: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Advance unit vectors by spherical Brownian increments of clock tau."""
    n = len(dirs)
    out = dirs.copy()
    big = tau > 6.0  # past the mixing time: redraw uniformly
    nb = int(big.sum())
    if nb:
        g = rng.standard_normal((nb, 3))
        out[big] = g / np.linalg.norm(g, axis=1, keepdims=True)
    small = ~big
    if small.any():
        d = out[small]
        xi = rng.standard_normal((small.sum(), 3)) * np.sqrt(tau[small])[:, None]
        xi -= np.sum(xi * d, axis=1, keepdims=True) * d  # tangent projection
        ang = np.linalg.norm(xi, axis=1)
        safe = np.maximum(ang, 1e-300)
        out[small] = np.cos(ang)[:, None] * d + np.sin(ang)[:, None] * (xi / safe[:, None])
        out[small] /= np.linalg.norm(out[small], axis=1, keepdims=True)
    return out


def _loop_half_points(n_steps: int, horizon: float, theta: np.ndarray,
                      rng: np.random.Generator, n_paths: int) -> np.ndarray:
    """One time half of the infinite loop, shape (n_paths, n_steps+1, 4).

    ``theta`` is the escape direction each angular path is pinned to at
    clock infinity; the directions are generated backward from it.  The
    radial path continues past the horizon on a coarser grid just to
    accumulate the remaining angular clock, which is far from negligible
    at desk-scale horizons.
    """
    dt = horizon / n_steps
    incr = rng.standard_normal((n_paths, n_steps, 3)) * math.sqrt(dt)
    w = np.cumsum(incr, axis=1)
    rad = np.concatenate([np.zeros((n_paths, 1)), np.linalg.norm(w, axis=2)], axis=1)
    inv = 1.0 / np.sinh(np.maximum(rad, 1e-12)) ** 2
    # residual clock: continue the same Brownian motion on a coarse grid
    # until sinh^(-2) of the radius is truly negligible
    coarse = 16.0 * dt
    n_ext = int(math.ceil(max(4.0 * horizon, 64.0) / coarse))
    pos = w[:, -1].copy()
    tail = np.zeros(n_paths)
    prev_inv = inv[:, -1].copy()
    for _ in range(n_ext):
        pos += rng.standard_normal((n_paths, 3)) * math.sqrt(coarse)
        cur_inv = 1.0 / np.sinh(np.maximum(np.linalg.norm(pos, axis=1), 1e-12)) ** 2
        tail += 0.5 * (prev_inv + cur_inv) * coarse
        prev_inv = cur_inv
    dirs = np.empty((n_paths, n_steps + 1, 3))
    dirs[:, n_steps] = _sphere_steps(theta, tail, rng)
    for i in range(n_steps, 1, -1):
        tau = 0.5 * (inv[:, i - 1] + inv[:, i]) * dt
        dirs[:, i - 1] = _sphere_steps(dirs[:, i], tau, rng)
    out = np.empty((n_paths, n_steps + 1, 4))
    out[:, 0] = origin().coords
    out[:, 1:, 0] = np.cosh(rad[:, 1:])
    out[:, 1:, 1:] = np.sinh(rad[:, 1:])[..., None] * dirs[:, 1:]
    return out


def sample_loop_points(n_steps_per_side: int, horizon: float, seed: int,
                       n_paths: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """Two-sided infinite-loop positions on a uniform grid.

    Returns (times, points) with times in [-horizon, horizon] and points of
    shape (n_paths, 2*n_steps_per_side + 1, 4).  The radial part of each
    half is an exact Bessel(3) path; the halves are coupled only through
    the shared escape direction.
    """
    g = spawn_rng(seed, 2).standard_normal((n_paths, 3))
    theta = g / np.linalg.norm(g, axis=1, keepdims=True)
    left = _loop_half_points(n_steps_per_side, horizon, theta, spawn_rng(seed, 0), n_paths)
    right = _loop_half_points(n_steps_per_side, horizon, theta, spawn_rng(seed, 1), n_paths)
    pts = np.concatenate([left[:, ::-1], right[:, 1:]], axis=1)
    times = np.concatenate([-np.linspace(0.0, horizon, n_steps_per_side + 1)[::-1],
                            np.linspace(0.0, horizon, n_steps_per_side + 1)[1:]])
    return times, pts
