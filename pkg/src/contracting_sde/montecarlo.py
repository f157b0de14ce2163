"""Ensemble statistics: empirical second moments of errors in the weighted
norm, standard errors, tail averages, and envelope-domination verdicts.

Paths are independent work items keyed by (master_seed, path_index); each
path's Gaussian draws are bulk-generated from its own counter-based stream
in exactly the order the per-path integrators consume them, so an ensemble
path is bit-identical to the corresponding single-path run. Ensembles are
processed in fixed-size chunks whose partial sums are merged in chunk
order, which makes results independent of the worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .bounds import Envelope, optimize_alpha
from .core import EquilibriumMap, InputSignal, SystemSpec, TimeGrid
from .errors import DivergenceError, InputError
from .integrate import CouplingMode, _warn_step_size
from .noise import JDParams, OUParams, RngLineage, jd_step_with_flag, ou_exact_step

CHUNK_SIZE = 512  # paths per chunk; fixed so results do not depend on n_workers


@dataclass(frozen=True)
class MomentSeries:
    """Empirical mean of a squared error over an ensemble, per grid time."""

    grid: TimeGrid
    mean_sq: np.ndarray  # (steps+1,)
    std_err: np.ndarray  # (steps+1,)
    n_paths: int

    def times(self) -> np.ndarray:
        return self.grid.times()


@dataclass(frozen=True)
class Verdict:
    """Outcome of an envelope-domination check with its slack rule."""

    holds: bool
    worst_margin: float
    worst_t: float
    slack_rule: str


@dataclass(frozen=True)
class PairScenario:
    """Two coupled systems driven by possibly different inputs."""

    sys_x: SystemSpec
    sys_y: SystemSpec
    x0: np.ndarray
    y0: np.ndarray
    u_x: InputSignal
    u_y: InputSignal
    mode: CouplingMode
    grid: TimeGrid


@dataclass(frozen=True)
class CascadeScenario:
    """Input-noise process (OU or JD) feeding a contracting system.

    For OU noise ``xi0`` is the initial input-noise state; for JD it is the
    initial input u_0 in (0, a).
    """

    noise: Union[OUParams, JDParams]
    theta: InputSignal
    sys: SystemSpec
    x0: np.ndarray
    xi0: np.ndarray
    grid: TimeGrid
    unsafe: bool = False


def _bulk_increments(lineage: RngLineage, steps: int, width: int) -> np.ndarray:
    """All standard-normal draws of one path, in integrator consumption order."""
    return lineage.stream().standard_normal((steps, width))


def _stack_chunk(master_seed, start, count, steps, width):
    return np.stack([
        _bulk_increments(RngLineage(master_seed, start + i), steps, width)
        for i in range(count)
    ])


def _check_chunk_finite(x, step, chunk_start):
    bad = ~np.all(np.isfinite(x), axis=1)
    if np.any(bad):
        idx = chunk_start + int(np.flatnonzero(bad)[0])
        raise DivergenceError(
            f"non-finite state at step {step} on path {idx}",
            step=step, path_index=idx,
        )


def _drift_batch(sys: SystemSpec, x, u):
    return np.asarray(sys.drift(x, u), dtype=float)


def _diffuse_batch(sys: SystemSpec, x, u, dB):
    """Noise increment Sigma(x, u) dB for an (N, r) block of increments."""
    if sys.dispersion_matrix is not None:
        return dB @ sys.dispersion_matrix.T
    S = np.asarray(sys.dispersion(x, u), dtype=float)
    if S.ndim == 2:
        return dB @ S.T
    return np.einsum("bnr,br->bn", S, dB)


def _finalize(grid, total, total_sq, n_paths):
    mean = total / n_paths
    # SE of the mean from streamed sums; equals the jackknife SE for a mean
    var = np.clip(total_sq - n_paths * mean**2, 0.0, None) / max(n_paths - 1, 1)
    se = np.sqrt(var / n_paths)
    return MomentSeries(grid=grid, mean_sq=mean, std_err=se, n_paths=n_paths)


def _run_chunks(worker, n_paths, n_workers, steps):
    """Execute chunk workers and merge (sum, sumsq) partials in chunk order."""
    starts = list(range(0, n_paths, CHUNK_SIZE))
    jobs = [(s, min(CHUNK_SIZE, n_paths - s)) for s in starts]
    if n_workers <= 1:
        partials = [worker(s, c) for s, c in jobs]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as ex:
            futures = [ex.submit(worker, s, c) for s, c in jobs]
            partials = [f.result() for f in futures]
    total = np.zeros(steps + 1)
    total_sq = np.zeros(steps + 1)
    for ps, pq in partials:
        total += ps
        total_sq += pq
    return total, total_sq


def pair_error_moment(
    scenario: PairScenario,
    n_paths: int,
    master_seed: int,
    n_workers: int = 1,
    debug_guard: Optional[Callable[[float], float]] = None,
) -> MomentSeries:
    """Per-time mean and standard error of ||x_t - y_t||_P^2 over the ensemble."""
    if n_paths < 100:
        raise InputError("n_paths must be >= 100")
    sc = scenario
    _warn_step_size(sc.sys_x, sc.grid)
    if sc.mode is CouplingMode.COMMON and sc.sys_x.noise_dim != sc.sys_y.noise_dim:
        raise InputError("common coupling requires equal dispersion column counts")
    grid = sc.grid
    r_x, r_y = sc.sys_x.noise_dim, sc.sys_y.noise_dim
    width = r_x if sc.mode is CouplingMode.COMMON else r_x + r_y
    metric = sc.sys_x.metric
    x0 = np.asarray(sc.x0, dtype=float).reshape(sc.sys_x.state_dim)
    y0 = np.asarray(sc.y0, dtype=float).reshape(sc.sys_y.state_dim)
    times = grid.times()
    ux_path = sc.u_x.values(times)
    uy_path = sc.u_y.values(times)
    sq_dt = math.sqrt(grid.dt)

    def worker(start, count):
        Z = _stack_chunk(master_seed, start, count, grid.steps, width)
        x = np.broadcast_to(x0, (count, x0.shape[0])).copy()
        y = np.broadcast_to(y0, (count, y0.shape[0])).copy()
        ps = np.zeros(grid.steps + 1)
        pq = np.zeros(grid.steps + 1)
        e0 = metric.batch_norm_sq(x - y)
        ps[0], pq[0] = e0.sum(), (e0**2).sum()
        for k in range(grid.steps):
            z = Z[:, k, :] * sq_dt
            if sc.mode is CouplingMode.COMMON:
                dBx = dBy = z
            else:
                dBx, dBy = z[:, :r_x], z[:, r_x:]
            uxk, uyk = ux_path[k], uy_path[k]
            x = x + _drift_batch(sc.sys_x, x, uxk) * grid.dt + _diffuse_batch(sc.sys_x, x, uxk, dBx)
            y = y + _drift_batch(sc.sys_y, y, uyk) * grid.dt + _diffuse_batch(sc.sys_y, y, uyk, dBy)
            _check_chunk_finite(x, k + 1, start)
            _check_chunk_finite(y, k + 1, start)
            if debug_guard is not None:
                _apply_guard(x, times[k + 1], debug_guard, start, k + 1)
            e = metric.batch_norm_sq(x - y)
            ps[k + 1], pq[k + 1] = e.sum(), (e**2).sum()
        return ps, pq

    total, total_sq = _run_chunks(worker, n_paths, n_workers, grid.steps)
    return _finalize(grid, total, total_sq, n_paths)


def _apply_guard(x, t, guard, chunk_start, step):
    sq = np.einsum("bi,bi->b", x, x)
    bad = sq > guard(t)
    if np.any(bad):
        idx = chunk_start + int(np.flatnonzero(bad)[0])
        raise DivergenceError(
            f"path {idx} escaped the moment guard at step {step}",
            step=step, path_index=idx,
        )


def _x_star_batch(eq_map: EquilibriumMap, U: np.ndarray, n: int) -> np.ndarray:
    try:
        out = np.asarray(eq_map._x_star(U), dtype=float)
        if out.shape == (U.shape[0], n):
            return out
    except Exception:
        pass
    return np.stack([np.atleast_1d(eq_map.x_star(u)) for u in U])


def tracking_error_moment(
    scenario: CascadeScenario,
    eq_map: EquilibriumMap,
    target: str,
    n_paths: int,
    master_seed: int,
    n_workers: int = 1,
) -> MomentSeries:
    """Mean squared tracking error ||x_t - x*(v_t)||_P^2 over the ensemble.

    ``target`` selects v_t: "deterministic_curve" uses theta(t); and
    "stochastic_curve" uses the realized input u_t of each path.
    """
    if target not in ("deterministic_curve", "stochastic_curve"):
        raise InputError(f"unknown target '{target}'")
    if n_paths < 100:
        raise InputError("n_paths must be >= 100")
    sc = scenario
    _warn_step_size(sc.sys, sc.grid)
    grid, sys, noise = sc.grid, sc.sys, sc.noise
    is_jd = isinstance(noise, JDParams)
    m, r, n = noise.dim, sys.noise_dim, sys.state_dim
    if m != sys.input_dim:
        raise InputError("noise dimension does not match system input dimension")
    if is_jd and not (noise.feller_holds or noise.unsafe or sc.unsafe):
        from .errors import ConfigError
        raise ConfigError(
            "JD parameters violate the boundary-nonattainment (Feller) "
            f"condition (margin {noise.feller_margin:.3g})"
        )
    metric = sys.metric
    x0 = np.asarray(sc.x0, dtype=float).reshape(n)
    xi0 = np.asarray(sc.xi0, dtype=float).reshape(m)
    times = grid.times()
    theta_path = sc.theta.values(times)
    xstar_det = _x_star_batch(eq_map, theta_path, n)  # (steps+1, n)
    sq_dt = math.sqrt(grid.dt)

    def worker(start, count):
        Z = _stack_chunk(master_seed, start, count, grid.steps, m + r)
        x = np.broadcast_to(x0, (count, n)).copy()
        if is_jd:
            u = np.broadcast_to(xi0, (count, m)).copy()
        else:
            xi = np.broadcast_to(xi0, (count, m)).copy()
            u = theta_path[0] + xi
        ps = np.zeros(grid.steps + 1)
        pq = np.zeros(grid.steps + 1)

        def accumulate(k, xk, uk):
            if target == "deterministic_curve":
                e = metric.batch_norm_sq(xk - xstar_det[k])
            else:
                e = metric.batch_norm_sq(xk - _x_star_batch(eq_map, uk, n))
            ps[k], pq[k] = e.sum(), (e**2).sum()

        accumulate(0, x, u)
        for k in range(grid.steps):
            z_u, z_x = Z[:, k, :m], Z[:, k, m:]
            dBx = z_x * sq_dt
            uk = u
            x = x + _drift_batch(sys, x, uk) * grid.dt + _diffuse_batch(sys, x, uk, dBx)
            _check_chunk_finite(x, k + 1, start)
            if is_jd:
                u, _ = jd_step_with_flag(u, noise, times[k], grid.dt, z_u)
            else:
                xi = ou_exact_step(xi, noise, grid.dt, z_u)
                u = theta_path[k + 1] + xi
            accumulate(k + 1, x, u)
        return ps, pq

    total, total_sq = _run_chunks(worker, n_paths, n_workers, grid.steps)
    return _finalize(grid, total, total_sq, n_paths)


def ou_moment(
    p: OUParams,
    x0,
    grid: TimeGrid,
    n_paths: int,
    master_seed: int,
    method: str = "exact",
    n_workers: int = 1,
) -> MomentSeries:
    """E||x_t||_2^2 of the zero-mean OU process, exact-transition or Euler paths."""
    if method not in ("exact", "euler"):
        raise InputError(f"unknown method '{method}'")
    if n_paths < 100:
        raise InputError("n_paths must be >= 100")
    x0 = np.asarray(x0, dtype=float).reshape(p.dim)
    sq_dt = math.sqrt(grid.dt)

    def worker(start, count):
        Z = _stack_chunk(master_seed, start, count, grid.steps, p.dim)
        x = np.broadcast_to(x0, (count, p.dim)).copy()
        ps = np.zeros(grid.steps + 1)
        pq = np.zeros(grid.steps + 1)
        sq = np.einsum("bi,bi->b", x, x)
        ps[0], pq[0] = sq.sum(), (sq**2).sum()
        scale = p.sigma / math.sqrt(p.dim)
        for k in range(grid.steps):
            z = Z[:, k, :]
            if method == "exact":
                x = ou_exact_step(x, p, grid.dt, z)
            else:
                x = x - p.c * x * grid.dt + scale * z * sq_dt
            sq = np.einsum("bi,bi->b", x, x)
            ps[k + 1], pq[k + 1] = sq.sum(), (sq**2).sum()
        return ps, pq

    total, total_sq = _run_chunks(worker, n_paths, n_workers, grid.steps)
    return _finalize(grid, total, total_sq, n_paths)


def check_envelope(series: MomentSeries, env: Envelope, alpha_policy) -> Verdict:
    """Compare an empirical moment series against a bound with 3-SE slack.

    ``alpha_policy`` is ("fixed", alpha) or "optimized"; the optimized policy
    minimizes the tail form of the envelope (falling back to the final time
    when no tail form exists) and evaluates the resulting alpha everywhere.
    """
    alpha = _resolve_alpha(env, alpha_policy, series.grid)
    times = series.times()
    if env.eval_grid is not None and times.shape[0] > 1 and times[0] == 0.0:
        bound = env.eval_grid(times, alpha)
    else:
        bound = np.array([env.eval(t, alpha) for t in times])
    return compare_to_bound(series, bound)


def _resolve_alpha(env: Envelope, alpha_policy, grid: TimeGrid) -> float:
    if alpha_policy == "optimized":
        target = "limsup" if env.limsup is not None else grid.t0 + grid.horizon
        alpha, _ = optimize_alpha(env, target)
        return alpha
    try:
        tag, alpha = alpha_policy
    except (TypeError, ValueError):
        raise InputError(f"unknown alpha policy {alpha_policy!r}")
    if tag != "fixed":
        raise InputError(f"unknown alpha policy tag '{tag}'")
    return float(alpha)


def compare_to_bound(series: MomentSeries, bound: np.ndarray) -> Verdict:
    """Verdict for a precomputed bound array aligned with the series grid."""
    bound = np.asarray(bound, dtype=float)
    if bound.shape != series.mean_sq.shape:
        raise InputError("bound array does not match the series grid")
    slack = 3.0 * series.std_err
    ok = series.mean_sq <= bound + slack
    margins = (bound - series.mean_sq) / np.maximum(bound, 1e-12)
    i = int(np.argmin(margins))
    return Verdict(
        holds=bool(np.all(ok)),
        worst_margin=float(margins[i]),
        worst_t=float(series.times()[i]),
        slack_rule="mean_sq <= bound + 3*std_err at every grid point",
    )


def tail_average(series, fraction: float):
    """(mean, max) of the series over the final ``fraction`` of the horizon."""
    if not (0.0 < fraction <= 1.0):
        raise InputError("fraction must lie in (0, 1]")
    if isinstance(series, MomentSeries):
        vals = series.mean_sq
        steps = series.grid.steps
    else:
        vals = np.asarray(series, dtype=float)
        steps = vals.shape[0] - 1
    start = steps - int(math.floor(fraction * steps))
    if steps - start < 10:
        raise InputError("tail window must contain at least 10 steps")
    tail = vals[start:]
    return float(tail.mean()), float(tail.max())


def tail_standard_error(series: MomentSeries, fraction: float) -> float:
    """Conservative SE for the tail-averaged moment: max SE over the window."""
    if not (0.0 < fraction <= 1.0):
        raise InputError("fraction must lie in (0, 1]")
    steps = series.grid.steps
    start = steps - int(math.floor(fraction * steps))
    if steps - start < 10:
        raise InputError("tail window must contain at least 10 steps")
    return float(series.std_err[start:].max())


def moment_growth_guard(L: float, x0) -> Callable[[float], float]:
    """Coarse a-priori second-moment envelope (1 + ||x0||^2) e^{(1+L) t} used
    as a hard per-path guard in debug runs."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    base = 1.0 + float(x0 @ x0)
    # per-path guard: allow a generous multiple of the mean bound
    return lambda t: 400.0 * base * math.exp((1.0 + L) * t)
