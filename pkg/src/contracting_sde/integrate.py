"""Trajectory generation: Euler-Maruyama for single SDEs, coupled pairs
(independent or common noise), input-noise cascades, and classical RK4 for
deterministic comparisons.

Inputs are sampled at the left endpoint of each step (explicit scheme, Ito
convention). Divergence is detected at every step so mis-specified systems
fail fast.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .core import InputSignal, SystemSpec, TimeGrid
from .errors import ConfigError, DivergenceError, InputError
from .noise import JDParams, OUParams, RngLineage, jd_step_with_flag, ou_exact_step


class CouplingMode(enum.Enum):
    INDEPENDENT = "independent"
    COMMON = "common"


@dataclass(frozen=True)
class Trajectory:
    """Time grid plus sampled states and inputs; states[0] is the exact x0."""

    grid: TimeGrid
    states: np.ndarray  # (steps+1, n)
    input_record: np.ndarray  # (steps+1, m)
    lineage: Optional[RngLineage] = None

    def times(self) -> np.ndarray:
        return self.grid.times()


def _check_finite(x, step, lineage):
    if not np.all(np.isfinite(x)):
        raise DivergenceError(
            f"non-finite state at step {step}", step=step,
            path_index=None if lineage is None else lineage.path_index,
        )


def _warn_step_size(sys: SystemSpec, grid: TimeGrid):
    if sys.lipschitz_budget is not None and grid.dt * sys.lipschitz_budget > 0.1:
        warnings.warn(
            f"dt * L = {grid.dt * sys.lipschitz_budget:.3g} > 0.1; "
            "Euler-Maruyama may be inaccurate",
            RuntimeWarning,
            stacklevel=3,
        )


def default_dt(c: float) -> float:
    """Step-size guidance: min(1e-3, 0.05 / c)."""
    return min(1e-3, 0.05 / c)


def euler_maruyama(
    sys: SystemSpec,
    x0,
    u: InputSignal,
    grid: TimeGrid,
    lineage: RngLineage,
) -> Trajectory:
    """x_{k+1} = x_k + F(x_k, u(t_k)) dt + Sigma(x_k, u(t_k)) dB_k."""
    _warn_step_size(sys, grid)
    x = np.asarray(x0, dtype=float).reshape(sys.state_dim).copy()
    rng = lineage.stream()
    sq_dt = math.sqrt(grid.dt)
    states = np.empty((grid.steps + 1, sys.state_dim))
    inputs = np.empty((grid.steps + 1, sys.input_dim))
    states[0] = x
    times = grid.times()
    for k in range(grid.steps):
        uk = u.value(times[k])
        inputs[k] = uk
        dB = rng.standard_normal(sys.noise_dim) * sq_dt
        x = x + sys.drift(x, uk) * grid.dt + np.atleast_2d(sys.dispersion(x, uk)) @ dB
        _check_finite(x, k + 1, lineage)
        states[k + 1] = x
    inputs[grid.steps] = u.value(times[grid.steps])
    return Trajectory(grid=grid, states=states, input_record=inputs, lineage=lineage)


def integrate_pair(
    sys_x: SystemSpec,
    sys_y: SystemSpec,
    x0,
    y0,
    u_x: InputSignal,
    u_y: InputSignal,
    mode: CouplingMode,
    grid: TimeGrid,
    lineage: RngLineage,
):
    """Couple two Euler-Maruyama recursions on one noise source.

    Independent mode draws 2r Gaussians per step (x block first); common
    mode reuses a single r block for both systems and requires equal noise
    dimension.
    """
    if mode is CouplingMode.COMMON and sys_x.noise_dim != sys_y.noise_dim:
        raise InputError("common coupling requires equal dispersion column counts")
    _warn_step_size(sys_x, grid)
    r_x, r_y = sys_x.noise_dim, sys_y.noise_dim
    x = np.asarray(x0, dtype=float).reshape(sys_x.state_dim).copy()
    y = np.asarray(y0, dtype=float).reshape(sys_y.state_dim).copy()
    rng = lineage.stream()
    sq_dt = math.sqrt(grid.dt)
    xs = np.empty((grid.steps + 1, sys_x.state_dim))
    ys = np.empty((grid.steps + 1, sys_y.state_dim))
    ux_rec = np.empty((grid.steps + 1, sys_x.input_dim))
    uy_rec = np.empty((grid.steps + 1, sys_y.input_dim))
    xs[0], ys[0] = x, y
    times = grid.times()
    for k in range(grid.steps):
        uxk, uyk = u_x.value(times[k]), u_y.value(times[k])
        ux_rec[k], uy_rec[k] = uxk, uyk
        if mode is CouplingMode.INDEPENDENT:
            z = rng.standard_normal(r_x + r_y) * sq_dt
            dBx, dBy = z[:r_x], z[r_x:]
        else:
            dBx = rng.standard_normal(r_x) * sq_dt
            dBy = dBx
        x = x + sys_x.drift(x, uxk) * grid.dt + np.atleast_2d(sys_x.dispersion(x, uxk)) @ dBx
        y = y + sys_y.drift(y, uyk) * grid.dt + np.atleast_2d(sys_y.dispersion(y, uyk)) @ dBy
        _check_finite(x, k + 1, lineage)
        _check_finite(y, k + 1, lineage)
        xs[k + 1], ys[k + 1] = x, y
    ux_rec[grid.steps] = u_x.value(times[grid.steps])
    uy_rec[grid.steps] = u_y.value(times[grid.steps])
    return (
        Trajectory(grid=grid, states=xs, input_record=ux_rec, lineage=lineage),
        Trajectory(grid=grid, states=ys, input_record=uy_rec, lineage=lineage),
    )


def integrate_cascade(
    noise: Union[OUParams, JDParams],
    theta: InputSignal,
    sys: SystemSpec,
    x0,
    xi0,
    grid: TimeGrid,
    lineage: RngLineage,
    unsafe: bool = False,
):
    """Simulate the input-noise cascade u_t -> x_t.

    OU branch: u_t = theta(t) + xi_t with xi stepped by the exact Gaussian
    transition. JD branch: u_t stepped by the boundary-safe Euler scheme
    (xi0 is then the initial u_0, required inside (0, a)). The state is
    stepped by Euler-Maruyama against the realized u.

    Returns (input trajectory, state trajectory).
    """
    _warn_step_size(sys, grid)
    is_jd = isinstance(noise, JDParams)
    m = noise.dim
    if m != sys.input_dim:
        raise InputError("noise dimension does not match system input dimension")
    if is_jd:
        u = np.asarray(xi0, dtype=float).reshape(m).copy()
        if np.any(u <= 0.0) or np.any(u >= noise.a):
            raise ConfigError("JD initial input must lie inside (0, a)")
        if not (noise.feller_holds or noise.unsafe or unsafe):
            raise ConfigError(
                "JD parameters violate the boundary-nonattainment (Feller) "
                f"condition (margin {noise.feller_margin:.3g}); pass unsafe=True to override"
            )
    else:
        xi = np.asarray(xi0, dtype=float).reshape(m).copy()
    x = np.asarray(x0, dtype=float).reshape(sys.state_dim).copy()
    rng = lineage.stream()
    sq_dt = math.sqrt(grid.dt)
    r = sys.noise_dim
    us = np.empty((grid.steps + 1, m))
    xs = np.empty((grid.steps + 1, sys.state_dim))
    theta_rec = np.empty((grid.steps + 1, m))
    times = grid.times()
    xs[0] = x
    us[0] = u if is_jd else theta.value(times[0]) + xi
    theta_rec[0] = theta.value(times[0])
    for k in range(grid.steps):
        uk = us[k]
        z = rng.standard_normal(m + r)
        z_u, z_x = z[:m], z[m:]
        dBx = z_x * sq_dt
        x = x + sys.drift(x, uk) * grid.dt + np.atleast_2d(sys.dispersion(x, uk)) @ dBx
        _check_finite(x, k + 1, lineage)
        if is_jd:
            u, _ = jd_step_with_flag(u, noise, times[k], grid.dt, z_u)
            us[k + 1] = u
        else:
            xi = ou_exact_step(xi, noise, grid.dt, z_u)
            us[k + 1] = theta.value(times[k + 1]) + xi
        xs[k + 1] = x
        theta_rec[k + 1] = theta.value(times[k + 1])
    u_traj = Trajectory(grid=grid, states=us, input_record=theta_rec, lineage=lineage)
    x_traj = Trajectory(grid=grid, states=xs, input_record=us, lineage=lineage)
    return u_traj, x_traj


def ode_rk4(F_closed, x0, grid: TimeGrid) -> Trajectory:
    """Classical fourth-order Runge-Kutta for dx/dt = F(t, x)."""
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    n = x.shape[0]
    states = np.empty((grid.steps + 1, n))
    states[0] = x
    dt = grid.dt
    times = grid.times()
    for k in range(grid.steps):
        t = times[k]
        k1 = np.atleast_1d(F_closed(t, x))
        k2 = np.atleast_1d(F_closed(t + dt / 2, x + dt / 2 * k1))
        k3 = np.atleast_1d(F_closed(t + dt / 2, x + dt / 2 * k2))
        k4 = np.atleast_1d(F_closed(t + dt, x + dt * k3))
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        _check_finite(x, k + 1, None)
        states[k + 1] = x
    return Trajectory(grid=grid, states=states, input_record=np.zeros((grid.steps + 1, 0)))
