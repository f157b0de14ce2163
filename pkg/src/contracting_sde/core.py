"""Shared domain types: weighted metrics, system specifications, time grids,
input signals and equilibrium maps.

All types are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import CapabilityError, CertificationError, InputError

_SYM_RTOL = 1e-12


@dataclass(frozen=True)
class Metric:
    """Positive-definite weight matrix P defining the norm sqrt(x^T P x).

    ``chol`` is the lower-triangular Cholesky factor, P = chol @ chol.T.
    """

    dim: int
    P: np.ndarray
    chol: np.ndarray

    @property
    def spectral_norm(self) -> float:
        return float(np.linalg.eigvalsh(self.P)[-1])

    def normalized(self) -> "Metric":
        """Rescale to unit spectral norm. Idempotent."""
        s = self.spectral_norm
        if abs(s - 1.0) < 1e-14:
            return self
        return validate_metric(self.P / s)

    def norm_sq(self, x: np.ndarray) -> float:
        return weighted_norm_sq(x, self)

    def norm(self, x: np.ndarray) -> float:
        return float(np.sqrt(weighted_norm_sq(x, self)))

    def batch_norm_sq(self, X: np.ndarray) -> np.ndarray:
        """x^T P x for each row of an (N, dim) array."""
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.dim:
            raise InputError(
                f"state dimension {X.shape[-1]} != metric dimension {self.dim}"
            )
        Y = X @ self.chol
        return np.einsum("...i,...i->...", Y, Y)


def weighted_norm_sq(x: np.ndarray, metric: Metric) -> float:
    """Squared weighted norm x^T P x, evaluated as ||chol^T x||_2^2."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != metric.dim:
        raise InputError(
            f"vector of shape {x.shape} incompatible with metric dimension {metric.dim}"
        )
    y = metric.chol.T @ x
    return float(y @ y)


def validate_metric(P: np.ndarray, normalize: bool = False) -> Metric:
    """Check symmetry and positive definiteness of P and factorize it.

    Asymmetry up to 1e-12 relative is symmetrized away; larger asymmetry is an
    input error. Non-SPD matrices raise a certification error naming the
    offending eigenvalue. With ``normalize=True`` the matrix is rescaled to
    unit spectral norm first.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise InputError(f"metric matrix must be square, got shape {P.shape}")
    scale = max(1.0, float(np.abs(P).max()))
    asym = float(np.abs(P - P.T).max())
    if asym > _SYM_RTOL * scale:
        raise InputError(f"matrix asymmetry {asym:.3e} exceeds tolerance")
    P = 0.5 * (P + P.T)
    eigvals = np.linalg.eigvalsh(P)
    if eigvals[0] <= 0.0:
        raise CertificationError(
            f"matrix is not positive definite: smallest eigenvalue {eigvals[0]:.6e}"
        )
    if normalize:
        P = P / eigvals[-1]
    chol = np.linalg.cholesky(P)
    return Metric(dim=P.shape[0], P=P, chol=chol)


def identity_metric(dim: int) -> Metric:
    return validate_metric(np.eye(dim))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid t_k = t0 + k * dt, k = 0..steps."""

    t0: float
    dt: float
    steps: int

    def __post_init__(self):
        if self.dt <= 0.0:
            raise InputError("dt must be positive")
        if self.steps < 0:
            raise InputError("steps must be nonnegative")

    def times(self) -> np.ndarray:
        # accumulation-free: k * dt, not repeated addition
        return self.t0 + self.dt * np.arange(self.steps + 1)

    @property
    def horizon(self) -> float:
        return self.dt * self.steps


class InputSignal:
    """Deterministic input u(t) in R^m with optional derivative and box domain.

    Kinds: constant, sinusoid, piecewise_linear, callable. The derivative is
    defined for differentiable kinds; piecewise-linear signals return the
    slope of the active segment.
    """

    def __init__(self, kind, dim, value_fn, derivative_fn=None, box=None):
        self.kind = kind
        self.dim = int(dim)
        self._value = value_fn
        self._derivative = derivative_fn
        self.box = box  # (lo, hi) arrays or None

    def value(self, t: float) -> np.ndarray:
        return np.asarray(self._value(t), dtype=float).reshape(self.dim)

    def derivative(self, t: float) -> np.ndarray:
        if self._derivative is None:
            raise CapabilityError(f"input signal of kind '{self.kind}' has no derivative")
        return np.asarray(self._derivative(t), dtype=float).reshape(self.dim)

    @property
    def differentiable(self) -> bool:
        return self._derivative is not None

    def values(self, ts: np.ndarray) -> np.ndarray:
        """Signal evaluated at an array of times, shape (len(ts), dim)."""
        return np.stack([self.value(t) for t in np.asarray(ts, dtype=float)])

    def sup_norm(self, ts: np.ndarray) -> float:
        """sup over the sampled times of ||u(t)||_2 (cacheable by the caller)."""
        return float(np.sqrt((self.values(ts) ** 2).sum(axis=1)).max())

    def check_in_box(self, ts: np.ndarray) -> bool:
        if self.box is None:
            return True
        lo, hi = self.box
        vals = self.values(ts)
        return bool(np.all(vals >= lo) and np.all(vals <= hi))

    @staticmethod
    def constant(value, box=None) -> "InputSignal":
        v = np.atleast_1d(np.asarray(value, dtype=float))
        zero = np.zeros_like(v)
        return InputSignal("constant", v.shape[0], lambda t: v, lambda t: zero, box=box)

    @staticmethod
    def sinusoid(amplitude, omega=1.0, phase=0.0, offset=None, box=None) -> "InputSignal":
        """u(t) = offset + amplitude * sin(omega t + phase), componentwise."""
        amp = np.atleast_1d(np.asarray(amplitude, dtype=float))
        off = np.zeros_like(amp) if offset is None else np.atleast_1d(np.asarray(offset, dtype=float))

        def val(t):
            return off + amp * np.sin(omega * t + phase)

        def der(t):
            return amp * omega * np.cos(omega * t + phase)

        return InputSignal("sinusoid", amp.shape[0], val, der, box=box)

    @staticmethod
    def piecewise_linear(times, values, box=None) -> "InputSignal":
        ts = np.asarray(times, dtype=float)
        vals = np.atleast_2d(np.asarray(values, dtype=float))
        if vals.shape[0] != ts.shape[0]:
            raise InputError("piecewise-linear signal needs one value row per knot")
        if ts.shape[0] < 2 or np.any(np.diff(ts) <= 0):
            raise InputError("knot times must be strictly increasing, at least two")
        dim = vals.shape[1]
        slopes = np.diff(vals, axis=0) / np.diff(ts)[:, None]

        def seg(t):
            i = int(np.searchsorted(ts, t, side="right")) - 1
            return min(max(i, 0), ts.shape[0] - 2)

        def val(t):
            i = seg(t)
            return vals[i] + slopes[i] * (t - ts[i])

        def der(t):
            return slopes[seg(t)]

        return InputSignal("piecewise_linear", dim, val, der, box=box)

    @staticmethod
    def from_callable(value_fn, dim, derivative_fn=None, box=None) -> "InputSignal":
        return InputSignal("callable", dim, value_fn, derivative_fn, box=box)


def check_derivative(signal: InputSignal, ts, rtol: float = 1e-6, h: float = 1e-6) -> float:
    """Max relative mismatch between declared derivative and central differences."""
    worst = 0.0
    for t in np.asarray(ts, dtype=float):
        fd = (signal.value(t + h) - signal.value(t - h)) / (2.0 * h)
        d = signal.derivative(t)
        scale = max(1.0, float(np.abs(d).max()))
        worst = max(worst, float(np.abs(fd - d).max()) / scale)
    return worst


@dataclass(frozen=True)
class SystemSpec:
    """Input-driven SDE dx = drift(x, u) dt + dispersion(x, u) dB.

    ``drift`` and ``dispersion`` must broadcast over a leading batch axis
    (an (N, n) state block maps to (N, n) drifts); all built-in affine
    systems do. ``constants`` carries the certified contraction rate c,
    input Lipschitz constant ell and dispersion bound sigma_x_sq.
    """

    state_dim: int
    input_dim: int
    drift: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dispersion: Callable[[np.ndarray, np.ndarray], np.ndarray]
    metric: Metric
    constants: dict
    noise_dim: int = 1
    dispersion_matrix: Optional[np.ndarray] = None  # set when constant in (x, u)
    lipschitz_budget: Optional[float] = None

    def __post_init__(self):
        c = self.constants.get("c")
        if c is None or c <= 0:
            raise InputError("constants.c must be a positive contraction rate")
        if self.constants.get("sigma_x_sq", 0.0) < 0:
            raise InputError("constants.sigma_x_sq must be nonnegative")
        if self.constants.get("ell", 0.0) < 0:
            raise InputError("constants.ell must be nonnegative")


def affine_system(A, B, Sigma, metric: Metric, lipschitz_budget=None) -> SystemSpec:
    """System with drift A x + B u and constant dispersion Sigma.

    The certified constants are exact for affine systems: c from the
    generalized eigenvalue problem on (PA + A^T P)/2, ell as the induced
    norm of chol^T B, sigma_x_sq as trace(Sigma^T P Sigma).
    """
    from .contraction import dispersion_bound, input_lipschitz, oslip_affine

    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise InputError("A must be square")
    if B.ndim != 2 or B.shape[0] != n:
        raise InputError("B must have one row per state")
    if Sigma.ndim != 2 or Sigma.shape[0] != n:
        raise InputError("Sigma must have one row per state")
    if metric.dim != n:
        raise InputError("metric dimension does not match A")
    m = B.shape[1]
    r = Sigma.shape[1]

    b = oslip_affine(A, metric)
    if b >= 0.0:
        raise CertificationError(
            f"affine drift is not contracting in the given metric (osLip={b:.6e})"
        )
    constants = {
        "c": -b,
        "ell": input_lipschitz(B, metric),
        "sigma_x_sq": dispersion_bound(Sigma, metric),
    }

    def drift(x, u):
        return x @ A.T + u @ B.T

    def dispersion(x, u):
        return Sigma

    if lipschitz_budget is None:
        lipschitz_budget = float(
            np.linalg.norm(A, 2) + np.linalg.norm(Sigma, "fro")
        )
    return SystemSpec(
        state_dim=n,
        input_dim=m,
        drift=drift,
        dispersion=dispersion,
        metric=metric,
        constants=constants,
        noise_dim=r,
        dispersion_matrix=Sigma,
        lipschitz_budget=lipschitz_budget,
    )


def scalar_tracker(c: float, sigma: float, metric: Optional[Metric] = None) -> SystemSpec:
    """dx = -c (x - u) dt + sigma dB, the workhorse certified test system."""
    if metric is None:
        metric = identity_metric(1)
    return affine_system([[-c]], [[c]], [[sigma]], metric)


class EquilibriumMap:
    """Input-indexed zero of the drift: F(x_star(u), u) = 0.

    ``hessians(u)`` returns one m x m matrix per output component; it is
    optional and only needed for the Ito drift-correction constants.
    """

    def __init__(self, x_star, jacobian=None, hessians=None, state_dim=None, input_dim=None):
        self._x_star = x_star
        self._jacobian = jacobian
        self._hessians = hessians
        self.state_dim = state_dim
        self.input_dim = input_dim

    def x_star(self, u):
        return np.asarray(self._x_star(np.asarray(u, dtype=float)), dtype=float)

    def jacobian(self, u):
        if self._jacobian is not None:
            return np.asarray(self._jacobian(np.asarray(u, dtype=float)), dtype=float)
        return _fd_jacobian(self._x_star, np.asarray(u, dtype=float))

    @property
    def has_hessians(self) -> bool:
        return self._hessians is not None

    def hessians(self, u):
        if self._hessians is None:
            raise CapabilityError("equilibrium map has no Hessians")
        return [np.asarray(H, dtype=float) for H in self._hessians(np.asarray(u, dtype=float))]

    @staticmethod
    def affine(M, b=None) -> "EquilibriumMap":
        """x_star(u) = M u + b; Jacobian constant, Hessians zero."""
        M = np.atleast_2d(np.asarray(M, dtype=float))
        n, m = M.shape
        bvec = np.zeros(n) if b is None else np.asarray(b, dtype=float).reshape(n)
        zeros = [np.zeros((m, m)) for _ in range(n)]
        return EquilibriumMap(
            x_star=lambda u: u @ M.T + bvec,
            jacobian=lambda u: M,
            hessians=lambda u: zeros,
            state_dim=n,
            input_dim=m,
        )


def _fd_jacobian(f, u, h=1e-6):
    u = np.asarray(u, dtype=float)
    f0 = np.atleast_1d(np.asarray(f(u), dtype=float))
    J = np.empty((f0.shape[0], u.shape[0]))
    for j in range(u.shape[0]):
        e = np.zeros_like(u)
        e[j] = h
        J[:, j] = (np.atleast_1d(f(u + e)) - np.atleast_1d(f(u - e))) / (2.0 * h)
    return J


def check_equilibrium_residual(drift, eq_map: EquilibriumMap, u_samples, atol: float = 1e-9) -> float:
    """Max ||F(x_star(u), u)||_2 over the sampled inputs; raises if above atol."""
    worst = 0.0
    for u in np.atleast_2d(np.asarray(u_samples, dtype=float)):
        xs = eq_map.x_star(u)
        res = float(np.linalg.norm(np.atleast_1d(drift(xs, u))))
        worst = max(worst, res)
    if worst > atol:
        raise CertificationError(
            f"equilibrium residual {worst:.3e} exceeds tolerance {atol:.1e}"
        )
    return worst
