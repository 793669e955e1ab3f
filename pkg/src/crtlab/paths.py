"""Samplers for the one-dimensional processes behind every experiment.

Covers the Gaussian bridge, the normalized excursion (cyclic shift of the
bridge at its minimum), Bessel(3) paths sampled exactly as the norm of a
3-d Brownian motion, the two-sided process glued from two independent
Bessel(3) halves, and Euler integrators for squared-Bessel-type equations
with a caller-supplied extra drift.

Everything is a pure function of (parameters, seed).  Replica k of an
experiment derives its stream from ``spawn_rng(seed, k)`` so replicas are
independent without coordination.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import InvalidParameterError

__all__ = [
    "Path",
    "TwoSidedPath",
    "spawn_rng",
    "sample_brownian_bridge",
    "sample_excursion",
    "sample_bessel3",
    "sample_two_sided_X",
    "sample_squared_bessel",
    "integrate_sde_Y",
    "coupled_Y_vs_squared_bessel",
]


def spawn_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for stream ``key`` of the experiment seeded by ``seed``.

    Distinct keys give statistically independent streams (SeedSequence
    spawn keys), and the mapping is reproducible bit for bit.
    """
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    )


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Path:
    """A time-gridded sample path.

    Invariants: times strictly increasing and non-negative, equal lengths,
    all values finite.  Arrays are frozen after construction.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = _frozen(self.times)
        v = _frozen(self.values)
        if t.ndim != 1 or v.ndim != 1 or len(t) != len(v):
            raise InvalidParameterError("times and values must be 1-d of equal length")
        if len(t) == 0:
            raise InvalidParameterError("empty path")
        if t[0] < 0 or (len(t) > 1 and not np.all(np.diff(t) > 0)):
            raise InvalidParameterError("times must be non-negative and strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise InvalidParameterError("non-finite entries in path")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class TwoSidedPath:
    """Two one-sided paths sharing value 0 at time 0.

    ``left`` stores the reflected negative half: ``left.values[i]`` is the
    process at time ``-left.times[i]``.  Both halves must start at 0.
    """

    left: Path
    right: Path

    def __post_init__(self):
        for half in (self.left, self.right):
            if half.times[0] != 0.0 or half.values[0] != 0.0:
                raise InvalidParameterError("both halves must be pinned to 0 at time 0")

    @property
    def times(self) -> np.ndarray:
        """Full signed time grid, negative to positive, 0 included once."""
        return np.concatenate([-self.left.times[:0:-1], self.right.times])

    @property
    def values(self) -> np.ndarray:
        return np.concatenate([self.left.values[:0:-1], self.right.values])

    @property
    def n_left(self) -> int:
        return len(self.left) - 1

    @property
    def n_right(self) -> int:
        return len(self.right) - 1

    def value(self, i: int) -> float:
        """Value at signed grid index i in [-n_left, n_right]."""
        if not -self.n_left <= i <= self.n_right:
            raise InvalidParameterError(f"signed index {i} outside window")
        return float(self.right.values[i] if i >= 0 else self.left.values[-i])


# ---------------------------------------------------------------------------
# Gaussian bridge and excursion


def _bridge_values(n_points: int, duration: float, rng: np.random.Generator,
                   n_paths: Optional[int] = None) -> np.ndarray:
    """Bridge values on the uniform grid, shape (n_paths, n_points).

    Exact in law: a Brownian path W is tilted by its endpoint,
    B(t) = W(t) - (t/T) W(T).
    """
    squeeze = n_paths is None
    rows = 1 if squeeze else n_paths
    dt = duration / (n_points - 1)
    incr = rng.standard_normal((rows, n_points - 1)) * math.sqrt(dt)
    w = np.concatenate([np.zeros((rows, 1)), np.cumsum(incr, axis=1)], axis=1)
    frac = np.arange(n_points) / (n_points - 1)
    b = w - frac[None, :] * w[:, -1:]
    b[:, 0] = 0.0
    b[:, -1] = 0.0
    return b[0] if squeeze else b


def sample_brownian_bridge(n_steps: int, duration: float, seed: int) -> Path:
    """Brownian bridge pinned to 0 at both ends of [0, duration].

    ``n_steps`` counts grid points including both endpoints (minimum 2).
    """
    if n_steps < 2:
        raise InvalidParameterError("n_steps must be >= 2")
    if duration <= 0:
        raise InvalidParameterError("duration must be positive")
    rng = spawn_rng(seed)
    times = np.linspace(0.0, duration, n_steps)
    return Path(times, _bridge_values(n_steps, duration, rng))


def _excursion_from_bridge(b: np.ndarray) -> np.ndarray:
    """Cyclic shift of a bridge at its minimum (first index on ties)."""
    m = int(np.argmin(b[:-1]))
    shifted = np.concatenate([b[m:-1], b[: m + 1]]) - b[m]
    shifted[0] = 0.0
    shifted[-1] = 0.0
    return np.maximum(shifted, 0.0)


def sample_excursion(n_steps: int, seed: int) -> Path:
    """Normalized excursion on [0, 1]: non-negative, pinned at both ends."""
    if n_steps < 2:
        raise InvalidParameterError("n_steps must be >= 2")
    rng = spawn_rng(seed)
    b = _bridge_values(n_steps, 1.0, rng)
    return Path(np.linspace(0.0, 1.0, n_steps), _excursion_from_bridge(b))


def _excursion_batch(n_points: int, n_paths: int, rng: np.random.Generator) -> np.ndarray:
    b = _bridge_values(n_points, 1.0, rng, n_paths)
    m = np.argmin(b[:, :-1], axis=1)
    out = np.empty_like(b)
    cols = np.arange(n_points - 1)
    idx = (m[:, None] + cols[None, :]) % (n_points - 1)
    out[:, :-1] = np.take_along_axis(b[:, :-1], idx, axis=1)
    out -= b[np.arange(len(b)), m][:, None]
    out[:, -1] = 0.0
    out[:, 0] = 0.0
    return np.maximum(out, 0.0)


# ---------------------------------------------------------------------------
# Bessel(3) and the two-sided process


def _bessel3_values(n_steps: int, horizon: float, rng: np.random.Generator,
                    n_paths: Optional[int] = None) -> np.ndarray:
    """Norm of a 3-d Brownian motion on the grid; exact in law, no scheme bias."""
    squeeze = n_paths is None
    rows = 1 if squeeze else n_paths
    dt = horizon / n_steps
    incr = rng.standard_normal((rows, n_steps, 3)) * math.sqrt(dt)
    w = np.cumsum(incr, axis=1)
    r = np.concatenate([np.zeros((rows, 1)), np.linalg.norm(w, axis=2)], axis=1)
    return r[0] if squeeze else r


def sample_bessel3(n_steps: int, horizon: float, seed: int) -> Path:
    """Bessel(3) path from 0 on [0, horizon]; ``n_steps`` increments."""
    if n_steps < 1:
        raise InvalidParameterError("n_steps must be >= 1")
    if horizon <= 0:
        raise InvalidParameterError("horizon must be positive")
    rng = spawn_rng(seed)
    times = np.linspace(0.0, horizon, n_steps + 1)
    return Path(times, _bessel3_values(n_steps, horizon, rng))


def sample_two_sided_X(n_steps_per_side: int, horizon: float, seed: int) -> TwoSidedPath:
    """Two independent Bessel(3) halves glued at 0."""
    if n_steps_per_side < 1:
        raise InvalidParameterError("n_steps_per_side must be >= 1")
    left = sample_bessel3(n_steps_per_side, horizon, seed)
    # independent stream for the second half
    rng = spawn_rng(seed, 1)
    times = np.linspace(0.0, horizon, n_steps_per_side + 1)
    right = Path(times, _bessel3_values(n_steps_per_side, horizon, rng))
    # left half of the glued process is the first stream
    return TwoSidedPath(left=left, right=right)


# ---------------------------------------------------------------------------
# Euler integrators (full truncation: state clipped to 0 after every update)


def _euler_paths(drift: Callable[[np.ndarray], np.ndarray], z0: float, n_sub: int,
                 step: float, noise: np.ndarray) -> np.ndarray:
    """Full-truncation Euler for dZ = 2 sqrt(Z) dW + drift(Z) dt.

    ``noise`` has shape (rows, n_sub); returns (rows, n_sub + 1).
    """
    rows = noise.shape[0]
    out = np.empty((rows, n_sub + 1))
    z = np.full(rows, float(z0))
    out[:, 0] = z
    sq = math.sqrt(step)
    for i in range(n_sub):
        d = np.asarray(drift(z), dtype=float)
        if np.any(d < -1e-12):
            raise InvalidParameterError("drift became negative; g must be nonnegative")
        z = z + 2.0 * np.sqrt(z) * noise[:, i] * sq + d * step
        np.maximum(z, 0.0, out=z)
        out[:, i + 1] = z
    return out


def _grid_count(horizon: float, step: float) -> int:
    if step <= 0:
        raise InvalidParameterError("step must be positive")
    if horizon <= 0:
        raise InvalidParameterError("horizon must be positive")
    n = int(round(horizon / step))
    if n < 1 or abs(n * step - horizon) > 1e-9 * max(1.0, horizon):
        raise InvalidParameterError("horizon must be an integer multiple of step")
    return n


def sample_squared_bessel(dim: float, z0: float, n_steps: Optional[int] = None,
                          horizon: float = 1.0, step: float = 1e-3,
                          seed: int = 0) -> Path:
    """Squared Bessel path of dimension ``dim`` by full-truncation Euler.

    The integrator advances on the fine grid of spacing ``step``; the
    returned path is recorded at ``n_steps``+1 evenly spaced times (every
    Euler point when ``n_steps`` is None).  Identical seeds consume noise
    identically across the integrators in this module, so paths can be
    compared pathwise.
    """
    if dim <= 0:
        raise InvalidParameterError("dim must be positive")
    if z0 < 0:
        raise InvalidParameterError("z0 must be nonnegative")
    n_sub = _grid_count(horizon, step)
    rng = spawn_rng(seed)
    noise = rng.standard_normal((1, n_sub))
    z = _euler_paths(lambda x: np.full_like(x, float(dim)), z0, n_sub, step, noise)[0]
    times = np.linspace(0.0, horizon, n_sub + 1)
    if n_steps is None or n_steps == n_sub:
        return Path(times, z)
    if not 1 <= n_steps <= n_sub:
        raise InvalidParameterError("n_steps must be between 1 and horizon/step")
    keep = np.unique(np.round(np.linspace(0, n_sub, n_steps + 1)).astype(int))
    return Path(times[keep], z[keep])


def integrate_sde_Y(g: Callable[[float], float], y0: float, horizon: float,
                    step: float, seed: int) -> Path:
    """Euler path of dY = 2 sqrt(Y) dW + (1 + 2 g(Y)) dt from y0.

    ``g`` must be nonnegative on [0, inf); it is probed pointwise and a
    negative return raises.  With g == 0 this is the dim-1 squared Bessel
    equation; with g == 1 the dim-3 one, pathwise under a shared seed.
    """
    if y0 < 0:
        raise InvalidParameterError("y0 must be nonnegative")
    n_sub = _grid_count(horizon, step)
    rng = spawn_rng(seed)
    noise = rng.standard_normal((1, n_sub))

    def drift(z: np.ndarray) -> np.ndarray:
        gz = np.asarray([g(float(v)) for v in z], dtype=float)
        return 1.0 + 2.0 * gz

    y = _euler_paths(drift, y0, n_sub, step, noise)[0]
    return Path(np.linspace(0.0, horizon, n_sub + 1), y)


def coupled_Y_vs_squared_bessel(g: Callable[[float], float], dim: float, y0: float,
                                z0: float, horizon: float, step: float,
                                seed: int) -> Tuple[Path, Path]:
    """Couple Y (extra drift g) with a squared Bessel of dimension ``dim``.

    Both paths consume the identical Brownian increments derived from the
    seed, which is what makes the comparison-theorem checks meaningful.
    Requires y0 >= z0.
    """
    if y0 < z0:
        raise InvalidParameterError("comparison coupling requires y0 >= z0")
    if dim <= 0:
        raise InvalidParameterError("dim must be positive")
    if y0 < 0 or z0 < 0:
        raise InvalidParameterError("initial values must be nonnegative")
    n_sub = _grid_count(horizon, step)
    rng = spawn_rng(seed)
    noise = rng.standard_normal((1, n_sub))
    times = np.linspace(0.0, horizon, n_sub + 1)

    def drift_y(z: np.ndarray) -> np.ndarray:
        gz = np.asarray([g(float(v)) for v in z], dtype=float)
        return 1.0 + 2.0 * gz

    y = _euler_paths(drift_y, y0, n_sub, step, noise)[0]
    z = _euler_paths(lambda x: np.full_like(x, float(dim)), z0, n_sub, step, noise)[0]
    return Path(times, y), Path(times, z)


def _coupled_batch(g_vec: Callable[[np.ndarray], np.ndarray], dim: float,
                   n_paths: int, horizon: float, step: float,
                   seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized coupled pair (Y, Z) from y0 = z0 = 0; g applied to arrays."""
    n_sub = _grid_count(horizon, step)
    rng = spawn_rng(seed)
    noise = rng.standard_normal((n_paths, n_sub))
    y = _euler_paths(lambda x: 1.0 + 2.0 * np.asarray(g_vec(x), dtype=float),
                     0.0, n_sub, step, noise)
    z = _euler_paths(lambda x: np.full_like(x, float(dim)), 0.0, n_sub, step, noise)
    return y, z
