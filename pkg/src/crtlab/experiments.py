"""Registered experiment suites binding samplers, metrics, and statistics.

Every experiment is a pure function of its configuration: replica streams
derive from (seed, replica) spawn keys, report rows are emitted in a fixed
order, and reruns with the same config are byte-identical.  Hyperbolic
experiments first pass the heat-kernel self-check gate; the loop model
additionally cross-checks its construction against long-bridge windows
before it is trusted.
"""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import hyperbolic as hyp
from . import paths, rtree, stats, treewalk
from .errors import GateCheckError, InvalidParameterError, ResourceGuardError
from .paths import spawn_rng
from .reporting import ReportRow, write_report

__all__ = ["ExperimentConfig", "run", "EXPERIMENTS", "covering_tail_bound"]


@dataclass
class ExperimentConfig:
    """Configuration of one experiment run."""

    experiment: str
    model: Optional[str] = None
    replicas: Optional[int] = None
    seed: int = 0
    outdir: Path = Path("crtlab-out")
    jobs: int = 1
    max_table_bytes: int = 800_000_000
    params: Dict[str, object] = field(default_factory=dict)

    def get(self, key: str, default):
        return self.params.get(key, default)

    def sweep(self, default: Sequence[float]) -> List[float]:
        raw = self.params.get("sweep", default)
        if isinstance(raw, str):
            raw = [float(x) for x in raw.split(",") if x.strip()]
        values = [float(x) for x in raw]
        if not values or any(v <= 0 for v in values):
            raise InvalidParameterError("sweep values must be positive")
        return values


def _row(cfg: ExperimentConfig, model: str, params: Dict[str, object], statistic: str,
         value: float, ci=None, replicas: int = 0) -> ReportRow:
    lo, hi = (None, None) if ci is None else ci
    return ReportRow(experiment=cfg.experiment, model=model, params=params,
                     statistic=statistic, value=float(value), ci_low=lo, ci_high=hi,
                     replicas=replicas, seed=cfg.seed)


def covering_tail_bound(eta: float, n_balls: int) -> float:
    """Closed-form tail bound 12/eta * sqrt(N/pi) * exp(-eta^2 (N-1)/18)."""
    return 12.0 / eta * math.sqrt(n_balls / math.pi) * math.exp(-eta * eta * (n_balls - 1) / 18.0)


# ---------------------------------------------------------------------------
# tree-walk experiments


def _enum_mid_cdf(k: int, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Support and cumulative law of the rescaled mid-time depth, exact."""
    law = treewalk.enumerate_bridges(k, n)
    mass: Dict[int, float] = {}
    for path, p in law.items():
        mass[path[n]] = mass.get(path[n], 0.0) + float(p)
    keys = sorted(mass)
    support = np.asarray(keys, dtype=np.float64) / math.sqrt(2 * n)
    cum = np.cumsum([mass[key] for key in keys])
    return support, cum


def _exp_radial_vs_excursion(cfg: ExperimentConfig) -> List[ReportRow]:
    k = int(cfg.get("k", 3))
    replicas = cfg.replicas if cfg.replicas is not None else 2000
    rows: List[ReportRow] = []
    exc_marginal: Optional[np.ndarray] = None
    for i, steps in enumerate(cfg.sweep([64, 256, 1024, 4096])):
        steps = int(steps)
        if steps % 2 or steps < 2:
            raise InvalidParameterError("steps (the walk length 2n) must be even and >= 2")
        n = steps // 2
        dp = treewalk.build_radial_dp(k, n, cfg.max_table_bytes)
        mid = treewalk.sample_radial_paths(dp, replicas, cfg.seed + i)[:, n] / math.sqrt(steps)
        params = {"k": k, "steps": steps}
        if n <= 8:
            support, cum = _enum_mid_cdf(k, n)
            ks = stats.ks_vs_discrete(mid, support, cum)
            rows.append(_row(cfg, "tree-walk", params, "ks_mid_vs_enum", ks,
                             replicas=replicas))
        else:
            if exc_marginal is None or len(exc_marginal) != replicas:
                exc_marginal = paths._excursion_batch(
                    2049, replicas, spawn_rng(cfg.seed, 10**6))[:, 1024]
            ks = stats.ks_two_sample(mid, exc_marginal)
            rows.append(_row(cfg, "tree-walk", params, "ks_mid_vs_excursion", ks,
                             replicas=replicas))
    return rows


def _exp_gap_distortion(cfg: ExperimentConfig) -> List[ReportRow]:
    k = int(cfg.get("k", 3))
    sub = int(cfg.get("subsample", 512))
    replicas = cfg.replicas if cfg.replicas is not None else 1000
    rows = []
    for i, steps in enumerate(cfg.sweep([256, 1024, 4096, 16384])):
        steps = int(steps)
        dp = treewalk.build_radial_dp(k, steps // 2, cfg.max_table_bytes)
        gaps = treewalk._gap_statistics_batch(dp, replicas, cfg.seed + i, sub)
        ci = stats.bootstrap_ci(gaps, np.median, replicas=1000, seed=cfg.seed + i)
        rows.append(_row(cfg, "tree-walk", {"k": k, "steps": steps, "subsample": sub},
                         "gap_median", float(np.median(gaps)), ci, replicas))
    return rows


def _exp_covering_tail(cfg: ExperimentConfig) -> List[ReportRow]:
    k = int(cfg.get("k", 3))
    steps = int(cfg.get("steps", 4096))
    eta = float(cfg.get("eta", 1.0))
    n_balls = int(cfg.get("cover_n", 100))
    sub_count = int(cfg.get("subsample", 512))
    replicas = cfg.replicas if cfg.replicas is not None else 200
    dp = treewalk.build_radial_dp(k, steps // 2, cfg.max_table_bytes)
    radial = treewalk.sample_radial_paths(dp, replicas, cfg.seed)
    sub = treewalk._default_subsample(steps + 1, sub_count)
    counts = np.empty(replicas, dtype=np.int64)
    for rep in range(replicas):
        vids, parent, _, depth = treewalk._vertex_ids(
            radial[rep], spawn_rng(cfg.seed, 1, rep), k)
        d = treewalk._range_matrix(radial[rep], vids, parent, depth, sub)
        space = rtree.FiniteMetricSpace(d)
        counts[rep] = rtree.covering_number(space, eta * math.sqrt(steps))
    exceed = (counts > n_balls).astype(np.float64)
    params = {"k": k, "steps": steps, "eta": eta, "cover_n": n_balls}
    ci = stats.bootstrap_ci(exceed, np.mean, replicas=1000, seed=cfg.seed)
    return [
        _row(cfg, "tree-walk", params, "freq_cover_gt_n", float(exceed.mean()), ci, replicas),
        _row(cfg, "tree-walk", params, "cover_count_median", float(np.median(counts)),
             replicas=replicas),
        _row(cfg, "tree-walk", params, "bound", covering_tail_bound(eta, n_balls)),
    ]


def _shifted_radial_law(k: int, n: int, replicas: int, seed: int) -> Counter:
    """Law of the radial path after a uniform cyclic shift plus relabeling."""
    dp = treewalk.build_radial_dp(k, n)
    radial = treewalk.sample_radial_paths(dp, replicas, seed)
    shift_rng = spawn_rng(seed, 2)
    shifts = shift_rng.integers(0, 2 * n, size=replicas)
    law: Counter = Counter()
    for rep in range(replicas):
        vids, parent, _, depth = treewalk._vertex_ids(radial[rep], spawn_rng(seed, 1, rep), k)
        s = int(shifts[rep])
        anc = treewalk._lifting_table(parent)
        order = (s + np.arange(2 * n + 1)) % (2 * n)
        h = treewalk._lca_depth(anc, depth, np.full(2 * n + 1, vids[s]), vids[order])
        new_radial = depth[vids[s]] + depth[vids[order]] - 2 * h
        law[tuple(int(x) for x in new_radial)] += 1
    return law


def _exp_reroot_law(cfg: ExperimentConfig) -> List[ReportRow]:
    model = cfg.model or "hyperbolic-3"
    if model == "tree-walk":
        k = int(cfg.get("k", 3))
        steps = int(cfg.get("steps", 8))
        replicas = cfg.replicas if cfg.replicas is not None else 20000
        n = steps // 2
        law = _shifted_radial_law(k, n, replicas, cfg.seed)
        exact = treewalk.enumerate_bridges(k, n)
        support = set(law) | set(exact)
        tv = 0.5 * sum(abs(law.get(p, 0) / replicas - float(exact.get(p, 0)))
                       for p in support)
        return [_row(cfg, model, {"k": k, "steps": steps}, "tv_shifted_vs_exact",
                     tv, replicas=replicas)]
    if model != "hyperbolic-3":
        raise InvalidParameterError(f"reroot-law supports tree-walk or hyperbolic-3, not {model}")
    hyp.heat_kernel_self_check()
    T = float(cfg.get("duration", 16.0))
    levels = int(cfg.get("levels", 6))
    replicas = cfg.replicas if cfg.replicas is not None else 2000
    base = hyp._bridge_points_batch(T, levels, replicas, cfg.seed)
    other = hyp._bridge_points_batch(T, levels, replicas, cfg.seed + 1)
    t_idx = spawn_rng(cfg.seed, 3).integers(0, other.shape[1] - 1, size=replicas)
    rerooted = hyp._reroot_points_batch(other, t_idx)
    f_base = np.arccosh(np.maximum(base[..., 0], 1.0)).max(axis=1)
    f_reroot = np.arccosh(np.maximum(rerooted[..., 0], 1.0)).max(axis=1)
    ks = stats.ks_two_sample(f_base, f_reroot)
    return [_row(cfg, model, {"duration": T, "levels": levels}, "ks_max_radial",
                 ks, replicas=replicas)]


# ---------------------------------------------------------------------------
# hyperbolic experiments


def _avoidance_chunk(args) -> List[float]:
    points, T, n_pairs, probes, seed = args
    n_grid = points.shape[1]
    out = []
    for rep in range(len(points)):
        rng = spawn_rng(seed, 4, rep)
        a = rng.integers(0, n_grid, size=n_pairs)
        b = rng.integers(0, n_grid, size=n_pairs)
        pairs = list(zip(np.minimum(a, b).tolist(), np.maximum(a, b).tolist()))
        path = hyp.BridgePath(np.linspace(0.0, T, n_grid), points[rep])
        out.append(hyp.geodesic_avoidance_stat(path, pairs, probes))
    return out


def _exp_geodesic_avoidance(cfg: ExperimentConfig) -> List[ReportRow]:
    hyp.heat_kernel_self_check()
    levels = int(cfg.get("levels", 8))
    n_pairs = int(cfg.get("pairs", 48))
    probes = int(cfg.get("probes", 8))
    replicas = cfg.replicas if cfg.replicas is not None else 200
    rows = []
    for i, T in enumerate(cfg.sweep([4.0, 16.0, 64.0])):
        pts = hyp._bridge_points_batch(T, levels, replicas, cfg.seed + i)
        # endpoints exactly at the origin for BridgePath construction
        pts[:, 0] = hyp.origin().coords
        pts[:, -1] = hyp.origin().coords
        chunks = [pts[j: j + 32] for j in range(0, replicas, 32)]
        args = [(c, T, n_pairs, probes, cfg.seed + i) for c in chunks]
        if cfg.jobs > 1:
            with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
                results = list(pool.map(_avoidance_chunk, args))
        else:
            results = [_avoidance_chunk(a) for a in args]
        vals = np.concatenate([np.asarray(r) for r in results]) / math.sqrt(T)
        ci = stats.bootstrap_ci(vals, np.median, replicas=1000, seed=cfg.seed + i)
        rows.append(_row(cfg, "hyperbolic-3", {"duration": T, "levels": levels,
                                               "pairs": n_pairs, "probes": probes},
                         "avoidance_median", float(np.median(vals)), ci, replicas))
    return rows


# ---------------------------------------------------------------------------
# loop experiments


def _loop_cross_check(seed: int, tol: float = 0.05, n: int = 4000) -> float:
    """Gate: long-bridge restriction matches the loop construction in law.

    Compares the radial marginal at time 1 of a duration-64 bridge with the
    loop model's radial marginal at time 1; raises GateCheckError beyond tol.
    """
    pts = hyp._bridge_points_batch(64.0, 6, n, seed + 17)  # grid spacing 1
    bridge_radial = np.arccosh(np.maximum(pts[:, 1, 0], 1.0))
    _, loop_pts = hyp.sample_loop_points(64, 1.0, seed + 18, n_paths=n)
    loop_radial = np.arccosh(np.maximum(loop_pts[:, -1, 0], 1.0))
    ks = stats.ks_two_sample(bridge_radial, loop_radial)
    if ks > tol:
        raise GateCheckError(f"loop model failed the long-bridge cross-check: KS={ks:.4f}")
    return ks


def _exp_loop_radial(cfg: ExperimentConfig) -> List[ReportRow]:
    from scipy.stats import chi

    hyp.heat_kernel_self_check()
    step = float(cfg.get("step", 4e-3))
    replicas = cfg.replicas if cfg.replicas is not None else 2000
    rows = []
    for i, a in enumerate(cfg.sweep([1.0, 0.5, 0.25])):
        horizon = round(1.0 / (a * a) / step) * step
        n_sub = int(round(horizon / step))
        noise = spawn_rng(cfg.seed, i).standard_normal((replicas, n_sub))
        y = paths._euler_paths(lambda z: np.full_like(z, 3.0), 0.0, n_sub, step, noise)
        marginal = a * np.sqrt(y[:, -1])
        ks = stats.ks_vs_cdf(marginal, lambda x: chi.cdf(x, 3))
        rows.append(_row(cfg, "loop", {"scale": a, "step": step}, "ks_rescaled_radial",
                         ks, replicas=replicas))
    return rows


def _exp_loop_dx(cfg: ExperimentConfig) -> List[ReportRow]:
    hyp.heat_kernel_self_check()
    _loop_cross_check(cfg.seed)
    window = float(cfg.get("window", 4.0))
    n_sub_side = int(cfg.get("subsample", 64))
    grid_step = float(cfg.get("step", 2e-3))
    replicas = cfg.replicas if cfg.replicas is not None else 100
    rows = []
    for i, a in enumerate(cfg.sweep([1.0, 0.7, 0.5])):
        horizon = window / (a * a)
        n_steps = int(round(horizon / grid_step))
        if n_steps > 250_000:
            raise ResourceGuardError("loop grid too fine for the configured window/scale")
        times, pts = hyp.sample_loop_points(n_steps, horizon, cfg.seed + i, n_paths=replicas)
        sub = np.unique(np.round(np.linspace(0, n_steps, n_sub_side)).astype(int))
        sub_pos = np.concatenate([n_steps - sub[::-1], n_steps + sub[1:]])
        signed = np.concatenate([-sub[::-1], sub[1:]]).astype(int)
        eta = np.diag([-1.0, 1.0, 1.0, 1.0])
        dist_vals = np.empty(replicas)
        flag_fracs = np.empty(replicas)
        for rep in range(replicas):
            p = pts[rep][sub_pos]
            inner = p @ eta @ p.T
            d_a = a * np.arccosh(np.maximum(-inner, 1.0))
            rad = np.arccosh(np.maximum(pts[rep][:, 0], 1.0))
            half_t = np.linspace(0.0, horizon, n_steps + 1) * a * a
            left = paths.Path(half_t, a * rad[n_steps::-1])
            right = paths.Path(half_t, a * rad[n_steps:])
            tree = rtree.CodedTree.from_two_sided(paths.TwoSidedPath(left, right))
            m = len(signed)
            d_x = np.zeros((m, m))
            flagged = np.zeros((m, m), dtype=bool)
            for ii in range(m):
                for jj in range(ii + 1, m):
                    v, fl = tree.signed_distance_flagged(int(signed[ii]), int(signed[jj]))
                    d_x[ii, jj] = d_x[jj, ii] = v
                    flagged[ii, jj] = flagged[jj, ii] = fl
            keep = ~flagged
            dist_vals[rep] = np.abs(d_a - d_x)[keep].max()
            flag_fracs[rep] = flagged[np.triu_indices(m, 1)].mean()
        ci = stats.bootstrap_ci(dist_vals, np.median, replicas=1000, seed=cfg.seed + i)
        params = {"scale": a, "window": window, "subsample": n_sub_side}
        rows.append(_row(cfg, "loop", params, "dx_distortion_median",
                         float(np.median(dist_vals)), ci, replicas))
        rows.append(_row(cfg, "loop", params, "flagged_pair_fraction",
                         float(flag_fracs.mean()), replicas=replicas))
    return rows


def _exp_bessel_coupling(cfg: ExperimentConfig) -> List[ReportRow]:
    step = float(cfg.get("step", 1e-4))
    horizon = float(cfg.get("horizon", 1.0))
    dim = float(cfg.get("dim", 1.0))
    replicas = cfg.replicas if cfg.replicas is not None else 1000
    y, z = paths._coupled_batch(lambda v: np.ones_like(v), dim, replicas, horizon,
                                step, cfg.seed)
    slack = 10.0 * math.sqrt(step)
    bad = float(np.mean(y < z - slack))
    gap_limit = y[:, -1] - z[:, -1]
    ci = stats.bootstrap_ci(gap_limit, np.mean, replicas=1000, seed=cfg.seed)
    params = {"step": step, "horizon": horizon, "dim": dim}
    return [
        _row(cfg, "loop", params, "coupling_violation_fraction", bad, replicas=replicas),
        _row(cfg, "loop", params, "terminal_gap_mean", float(gap_limit.mean()), ci, replicas),
    ]


def _exp_ball_containment(cfg: ExperimentConfig) -> List[ReportRow]:
    radius = float(cfg.get("radius", 0.5))
    horizon = float(cfg.get("horizon", 128.0))
    grid = int(cfg.get("grid", 8192))
    replicas = cfg.replicas if cfg.replicas is not None else 10000
    windows = cfg.sweep([1.0, 2.0, 4.0, 8.0])
    if max(windows) >= horizon:
        raise InvalidParameterError("every window A must be below the simulated horizon")
    times = np.linspace(0.0, horizon, grid + 1)
    hits = {a: np.zeros(replicas, dtype=bool) for a in windows}
    chunk = max(1, int(4e7 // (grid + 1)))
    rng_l = spawn_rng(cfg.seed, 0)
    rng_r = spawn_rng(cfg.seed, 1)
    done = 0
    while done < replicas:
        b = min(chunk, replicas - done)
        left = paths._bessel3_values(grid, horizon, rng_l, b)
        right = paths._bessel3_values(grid, horizon, rng_r, b)
        for a in windows:
            beyond = times > a
            inf_two_sided = np.minimum(left[:, beyond].min(axis=1),
                                       right[:, beyond].min(axis=1))
            hits[a][done: done + b] = inf_two_sided <= radius
        done += b
    rows = []
    for a in windows:
        ind = hits[a].astype(np.float64)
        ci = stats.bootstrap_ci(ind, np.mean, replicas=1000, seed=cfg.seed)
        rows.append(_row(cfg, "loop", {"window": a, "radius": radius, "horizon": horizon},
                         "freq_low_dip_beyond_window", float(ind.mean()), ci, replicas))
    return rows


# ---------------------------------------------------------------------------
# registry and runner


EXPERIMENTS: Dict[str, Tuple[Callable[[ExperimentConfig], List[ReportRow]], str]] = {
    "radial-vs-excursion": (_exp_radial_vs_excursion, "tree-walk"),
    "gap-distortion": (_exp_gap_distortion, "tree-walk"),
    "covering-tail": (_exp_covering_tail, "tree-walk"),
    "reroot-law": (_exp_reroot_law, "hyperbolic-3"),
    "geodesic-avoidance": (_exp_geodesic_avoidance, "hyperbolic-3"),
    "loop-radial": (_exp_loop_radial, "loop"),
    "loop-dx": (_exp_loop_dx, "loop"),
    "bessel-coupling": (_exp_bessel_coupling, "loop"),
    "ball-containment": (_exp_ball_containment, "loop"),
}


def run(cfg: ExperimentConfig) -> List[ReportRow]:
    """Run one experiment and write report.csv / report.json to cfg.outdir."""
    if cfg.experiment not in EXPERIMENTS:
        known = ", ".join(sorted(EXPERIMENTS))
        raise InvalidParameterError(f"unknown experiment {cfg.experiment!r}; known: {known}")
    if cfg.replicas is not None and cfg.replicas < 0:
        raise InvalidParameterError("replicas must be non-negative")
    fn, default_model = EXPERIMENTS[cfg.experiment]
    if cfg.model is None:
        cfg.model = default_model
    rows: List[ReportRow] = [] if cfg.replicas == 0 else fn(cfg)
    write_report(rows, cfg.outdir)
    return rows
