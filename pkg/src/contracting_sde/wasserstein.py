"""Empirical p-Wasserstein distances between sampled marginals, the
contraction envelope for distributional convergence, and Gibbs-stationarity
checks for gradient drifts.

Distances between equal-weight empirical measures are computed exactly: by
the sorted-order formula in one dimension and by an optimal-assignment
solve in general (bottleneck assignment for p = infinity). Problem size is
capped at k = 2048 samples per measure.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.optimize
import scipy.sparse
import scipy.sparse.csgraph

from .bounds import decay_convolution
from .core import InputSignal, Metric, SystemSpec, TimeGrid
from .errors import CapabilityError, CapacityError, DomainError, InputError
from .montecarlo import (
    CHUNK_SIZE,
    Verdict,
    _check_chunk_finite,
    _stack_chunk,
)

MAX_SAMPLES = 2048


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniformly weighted empirical measure on k >= 2 sample points."""

    samples: np.ndarray  # (k, n)

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if s.shape[0] < 2:
            raise InputError("empirical measure needs at least 2 samples")
        if not np.all(np.isfinite(s)):
            raise InputError("empirical measure samples must be finite")
        object.__setattr__(self, "samples", s)

    @property
    def k(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


def wasserstein_1d(xs, ys, p) -> float:
    """Exact W_p between equal-weight scalar empirical measures (sorted order)."""
    xs = np.asarray(xs, dtype=float).ravel()
    ys = np.asarray(ys, dtype=float).ravel()
    if xs.size == 0 or ys.size == 0:
        raise InputError("empty sample set")
    if xs.size != ys.size:
        raise InputError("sample counts must match")
    d = np.abs(np.sort(xs) - np.sort(ys))
    if p == math.inf:
        return float(d.max())
    if p < 1:
        raise InputError("p must be >= 1 or inf")
    return float(np.mean(d**p) ** (1.0 / p))


def _pairwise_norms(X: np.ndarray, Y: np.ndarray, norm) -> np.ndarray:
    if isinstance(norm, Metric):
        X, Y = X @ norm.chol, Y @ norm.chol
        norm = "l2"
    diff = X[:, None, :] - Y[None, :, :]
    if norm == "l2":
        return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    if norm == "l1":
        return np.abs(diff).sum(axis=2)
    if norm == "linf":
        return np.abs(diff).max(axis=2)
    raise InputError(f"unknown norm '{norm}'")


def wasserstein_assignment(mx: EmpiricalMeasure, my: EmpiricalMeasure, p, norm="l2") -> float:
    """Exact W_p between equal-size empirical measures via optimal assignment.

    Finite p minimizes the mean p-th power cost; p = infinity solves the
    bottleneck assignment (minimize the largest matched distance).
    """
    if mx.k != my.k:
        raise InputError("sample counts must match")
    if mx.k > MAX_SAMPLES:
        raise CapacityError(
            f"{mx.k} samples exceed the cap of {MAX_SAMPLES}; subsample first"
        )
    D = _pairwise_norms(mx.samples, my.samples, norm)
    if p == math.inf:
        return _bottleneck_assignment(D)
    if p < 1:
        raise InputError("p must be >= 1 or inf")
    rows, cols = scipy.optimize.linear_sum_assignment(D**p)
    return float(np.mean(D[rows, cols] ** p) ** (1.0 / p))


def _bottleneck_assignment(D: np.ndarray) -> float:
    """Smallest threshold tau such that edges {D <= tau} admit a perfect matching."""
    k = D.shape[0]
    cands = np.unique(D)
    lo, hi = 0, cands.shape[0] - 1

    def feasible(tau):
        graph = scipy.sparse.csr_matrix(D <= tau)
        match = scipy.sparse.csgraph.maximum_bipartite_matching(graph, perm_type="column")
        return int(np.count_nonzero(match >= 0)) == k

    if not feasible(cands[hi]):
        raise InputError("bottleneck assignment infeasible")
    while lo < hi:
        mid = (lo + hi) // 2
        if feasible(cands[mid]):
            hi = mid
        else:
            lo = mid + 1
    return float(cands[lo])


def wasserstein_envelope(W0: float, c: float, ell: float, input_gap, t: float) -> float:
    """e^{-ct} W0 + ell * integral_0^t e^{-c(t-tau)} gap(tau) dtau."""
    if W0 < 0 or c < 0 or ell < 0:
        raise InputError("W0, c, ell must be nonnegative")
    return math.exp(-c * t) * W0 + ell * decay_convolution(input_gap, c, t)


@dataclass(frozen=True)
class WassersteinScenario:
    """Common-noise coupled pair started from two initial sample clouds."""

    sys_x: SystemSpec
    sys_y: SystemSpec
    x0_samples: np.ndarray  # (k, n)
    y0_samples: np.ndarray  # (k, n)
    u_x: InputSignal
    u_y: InputSignal
    grid: TimeGrid

    def __post_init__(self):
        xs = np.atleast_2d(np.asarray(self.x0_samples, dtype=float))
        ys = np.atleast_2d(np.asarray(self.y0_samples, dtype=float))
        if xs.shape != ys.shape:
            raise InputError("initial clouds must have equal shape")
        if xs.shape[0] > MAX_SAMPLES:
            raise CapacityError(
                f"{xs.shape[0]} samples exceed the cap of {MAX_SAMPLES}"
            )
        object.__setattr__(self, "x0_samples", xs)
        object.__setattr__(self, "y0_samples", ys)

    @property
    def k(self) -> int:
        return self.x0_samples.shape[0]


def _require_state_independent(sys: SystemSpec, name: str):
    if sys.dispersion_matrix is None:
        raise CapabilityError(
            f"{name} has state-dependent dispersion; the distributional "
            "contraction result requires Sigma(t) independent of the state"
        )


def wasserstein_series(
    scenario: WassersteinScenario,
    p,
    master_seed: int,
    checkpoints=None,
    norm="l2",
    n_workers: int = 1,
):
    """Empirical W_p between the coupled clouds at checkpoint times.

    Returns (times, w_empirical, envelope) arrays. Both systems must have
    state-independent dispersion and share the common Brownian source; each
    path pair i is driven by the stream keyed (master_seed, i).
    """
    sc = scenario
    _require_state_independent(sc.sys_x, "first system")
    _require_state_independent(sc.sys_y, "second system")
    if sc.sys_x.noise_dim != sc.sys_y.noise_dim:
        raise InputError("common coupling requires equal dispersion column counts")
    grid = sc.grid
    times = grid.times()
    if checkpoints is None:
        idx = np.unique(np.linspace(0, grid.steps, 21).astype(int))
    else:
        idx = np.unique([int(round((t - grid.t0) / grid.dt)) for t in checkpoints])
        if np.any(idx < 0) or np.any(idx > grid.steps):
            raise InputError("checkpoint outside the time grid")
    r = sc.sys_x.noise_dim
    n = sc.sys_x.state_dim
    k = sc.k
    ux_path = sc.u_x.values(times)
    uy_path = sc.u_y.values(times)
    Sx = sc.sys_x.dispersion_matrix
    Sy = sc.sys_y.dispersion_matrix
    sq_dt = math.sqrt(grid.dt)

    def worker(start, count):
        Z = _stack_chunk(master_seed, start, count, grid.steps, r)
        x = sc.x0_samples[start:start + count].copy()
        y = sc.y0_samples[start:start + count].copy()
        xs_ck = np.empty((idx.shape[0], count, n))
        ys_ck = np.empty((idx.shape[0], count, n))
        pos = {int(j): a for a, j in enumerate(idx)}
        if 0 in pos:
            xs_ck[pos[0]], ys_ck[pos[0]] = x, y
        for kk in range(grid.steps):
            dB = Z[:, kk, :] * sq_dt
            x = x + np.asarray(sc.sys_x.drift(x, ux_path[kk])) * grid.dt + dB @ Sx.T
            y = y + np.asarray(sc.sys_y.drift(y, uy_path[kk])) * grid.dt + dB @ Sy.T
            _check_chunk_finite(x, kk + 1, start)
            _check_chunk_finite(y, kk + 1, start)
            if kk + 1 in pos:
                xs_ck[pos[kk + 1]], ys_ck[pos[kk + 1]] = x, y
        return xs_ck, ys_ck

    starts = list(range(0, k, CHUNK_SIZE))
    jobs = [(s, min(CHUNK_SIZE, k - s)) for s in starts]
    if n_workers <= 1:
        parts = [worker(s, c) for s, c in jobs]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as ex:
            futures = [ex.submit(worker, s, c) for s, c in jobs]
            parts = [f.result() for f in futures]
    clouds_x = np.concatenate([px for px, _ in parts], axis=1)
    clouds_y = np.concatenate([py for _, py in parts], axis=1)

    c = sc.sys_x.constants["c"]
    ell = sc.sys_x.constants.get("ell", 0.0)
    W0 = _cloud_distance(clouds_x[0] if 0 in set(idx) else sc.x0_samples,
                         clouds_y[0] if 0 in set(idx) else sc.y0_samples, p, norm)
    gap = lambda ts: np.array([
        float(np.linalg.norm(sc.u_x.value(t) - sc.u_y.value(t))) for t in np.atleast_1d(ts)
    ])
    w_emp = np.array([
        _cloud_distance(clouds_x[a], clouds_y[a], p, norm) for a in range(idx.shape[0])
    ])
    env = np.array([
        wasserstein_envelope(W0, c, ell, gap, times[j] - grid.t0) for j in idx
    ])
    return times[idx], w_emp, env


def _cloud_distance(X, Y, p, norm):
    if X.shape[1] == 1 and norm in ("l1", "l2", "linf"):
        return wasserstein_1d(X[:, 0], Y[:, 0], p)
    return wasserstein_assignment(EmpiricalMeasure(X), EmpiricalMeasure(Y), p, norm)


def verify_wasserstein_contraction(
    scenario: WassersteinScenario,
    p,
    master_seed: int,
    checkpoints=None,
    norm="l2",
    n_workers: int = 1,
) -> Verdict:
    """Check empirical W_p <= envelope * (1 + 2/sqrt(k)) at every checkpoint."""
    times, w_emp, env = wasserstein_series(
        scenario, p, master_seed, checkpoints=checkpoints, norm=norm,
        n_workers=n_workers,
    )
    slack = 2.0 / math.sqrt(scenario.k)
    allowed = env * (1.0 + slack)
    margins = (allowed - w_emp) / np.maximum(allowed, 1e-12)
    i = int(np.argmin(margins))
    return Verdict(
        holds=bool(np.all(w_emp <= allowed)),
        worst_margin=float(margins[i]),
        worst_t=float(times[i]),
        slack_rule=f"w_p <= envelope * (1 + 2/sqrt(k)), k={scenario.k}",
    )


def gibbs_density(f, sigma: float, grid1d: np.ndarray) -> np.ndarray:
    """Normalized stationary density proportional to e^{-2 f(x) / sigma^2}."""
    xs = np.asarray(grid1d, dtype=float)
    if xs.ndim != 1 or xs.shape[0] < 3:
        raise InputError("grid must be one-dimensional with >= 3 points")
    logw = np.array([-2.0 * float(f(x)) / sigma**2 for x in xs])
    logw -= logw.max()  # stabilize before exponentiating
    w = np.exp(logw)
    Z = np.trapezoid(w, xs)
    if not np.isfinite(Z) or Z <= 0.0:
        raise DomainError("density is not normalizable on the grid")
    return w / Z


def stationarity_residual(f, grad_f, sigma: float, grid1d: np.ndarray) -> float:
    """Sup-norm of the discrete stationarity defect of the probability flux.

    For drift -grad f the stationary density satisfies
    d/dx(mu* f') + (sigma^2/2) mu*'' = 0 exactly; central differences leave
    an O(h^2) residual, so refinement should shrink it quadratically.
    """
    xs = np.asarray(grid1d, dtype=float)
    mu = gibbs_density(f, sigma, xs)
    flux = mu * np.array([float(grad_f(x)) for x in xs])
    term1 = np.gradient(flux, xs)
    term2 = 0.5 * sigma**2 * np.gradient(np.gradient(mu, xs), xs)
    interior = slice(2, -2)  # one-sided boundary stencils are only O(h)
    return float(np.abs(term1[interior] + term2[interior]).max())


def gibbs_check(f, grad_f, sigma: float, samples, grid1d) -> dict:
    """KS distance of a sampled marginal to the Gibbs law plus the
    Fokker-Planck stationarity residual on the grid.

    ``samples`` is a 1D array of (burned-in, subsampled) state values.
    """
    if sigma <= 0:
        raise InputError("sigma must be positive")
    xs = np.asarray(grid1d, dtype=float)
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.shape[0] < 2:
        raise InputError("need at least 2 samples")
    mu = gibbs_density(f, sigma, xs)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (mu[1:] + mu[:-1]) * np.diff(xs))])
    cdf = np.clip(cdf / cdf[-1], 0.0, 1.0)
    sorted_s = np.sort(samples)
    model = np.interp(sorted_s, xs, cdf)
    k = sorted_s.shape[0]
    emp_hi = np.arange(1, k + 1) / k
    emp_lo = np.arange(0, k) / k
    ks = float(np.maximum(np.abs(emp_hi - model), np.abs(model - emp_lo)).max())
    residual = stationarity_residual(f, grad_f, sigma, xs)
    return {"ks_stat": ks, "residual": residual}
