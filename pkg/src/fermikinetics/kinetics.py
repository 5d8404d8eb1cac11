"""Time integration of the kinetic equation with conservation and relaxation monitors."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .collision import CollisionTable, collision_rhs
from .errors import ContractError, ConvergenceError, DomainError, NumericalError
from .lattice import (MomentumGrid, Occupation, _as_values, density_energy,
                      entropy_density, fermi_dirac_from_params, match_equilibrium)

__all__ = [
    "TrajectoryPoint",
    "Trajectory",
    "step_rk4",
    "evolve",
    "relaxation_distance",
    "BOUND_TOL",
    "MAX_REJECTIONS",
]

BOUND_TOL = 1e-12
MAX_REJECTIONS = 40


@dataclass(frozen=True, eq=False)
class TrajectoryPoint:
    t: float
    w: np.ndarray
    rho: float
    e: float
    s: float
    dist_fd: float


@dataclass(eq=False)
class Trajectory:
    """Monitored points of a run plus per-step bookkeeping.

    Behaves like the list of :class:`TrajectoryPoint` for iteration and
    indexing. ``step_t`` and ``step_s`` record time and entropy after every
    accepted step, which is what the H-theorem check needs.
    """

    points: list = field(default_factory=list)
    step_t: np.ndarray = None
    step_s: np.ndarray = None
    step_rho: np.ndarray = None
    step_e: np.ndarray = None
    accepted: int = 0
    rejected: int = 0
    wall_time: float = 0.0

    def __iter__(self):
        return iter(self.points)

    def __len__(self):
        return len(self.points)

    def __getitem__(self, i):
        return self.points[i]

    def column(self, name) -> np.ndarray:
        return np.array([getattr(pt, name) for pt in self.points])


def step_rk4(w, rhs, dt: float):
    """One classical Runge-Kutta step.

    Returns ``(w_new, accepted)``. A step is rejected when any component leaves
    ``[-1e-12, 1 + 1e-12]``; the caller then retries with ``dt/2``. Accepted
    states are clamped to [0, 1], which moves components by at most 1e-12.

    :raises NumericalError: if ``rhs`` produces non-finite values.
    """
    if not dt > 0:
        raise ContractError(f"time step must be positive, got {dt}")
    w = np.asarray(w, dtype=float)
    k1 = rhs(w)
    k2 = rhs(w + 0.5 * dt * k1)
    k3 = rhs(w + 0.5 * dt * k2)
    k4 = rhs(w + dt * k3)
    for k in (k1, k2, k3, k4):
        if not np.all(np.isfinite(k)):
            raise NumericalError("collision operator returned non-finite values")
    w_new = w + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if w_new.min() < -BOUND_TOL or w_new.max() > 1.0 + BOUND_TOL:
        return w, False
    return np.clip(w_new, 0.0, 1.0), True


def relaxation_distance(w, grid: MomentumGrid, eps) -> float:
    """Sup-norm distance from ``w`` to the Fermi-Dirac state with the same density and energy."""
    wv = _as_values(w)
    rho, e = density_energy(wv, eps)
    params = match_equilibrium(rho, e, grid, eps)
    return float(np.max(np.abs(wv - fermi_dirac_from_params(grid, eps, params).w)))


def _monitor(t, w, grid, eps):
    rho, e = density_energy(w, eps)
    try:
        dist = relaxation_distance(w, grid, eps)
    except DomainError:
        # (rho, e) on the boundary of the attainable set, e.g. a filled band
        dist = float("nan")
    return TrajectoryPoint(t=t, w=w.copy(), rho=rho, e=e, s=entropy_density(w), dist_fd=dist)


def evolve(w0, table: CollisionTable, T: float, dt: float, monitor_every: int = 100,
           eps=None, callback=None) -> Trajectory:
    """Integrate ``dw/dt = C[w]`` from 0 to ``T`` with RK4 and step rejection.

    A rejected step is retried with half the step; after the step succeeds
    the nominal ``dt`` is restored. Monitor points are recorded every
    ``monitor_every`` accepted steps and at ``T``.

    :raises ConvergenceError: after 40 consecutive rejections, carrying the
        trajectory recorded so far in ``last``.
    :raises NumericalError: on non-finite derivatives.
    """
    if not T > 0 or not dt > 0:
        raise ContractError("T and dt must be positive")
    if monitor_every < 1:
        raise ContractError("monitor_every must be at least 1")
    grid = table.grid
    if eps is None:
        eps = table.eps
    if eps is None:
        raise ContractError("a dispersion is required for the monitors")
    ev = _as_values(eps)
    w = Occupation(grid, _as_values(w0)).w.copy()

    def rhs(x):
        return collision_rhs(table, x)

    start = time.perf_counter()
    traj = Trajectory()
    traj.points.append(_monitor(0.0, w, grid, ev))
    st_t = [0.0]
    st_s = [traj.points[0].s]
    st_rho = [traj.points[0].rho]
    st_e = [traj.points[0].e]
    t = 0.0
    since_monitor = 0
    snap = 1e-9 * dt
    while T - t > snap:
        h = min(dt, T - t)
        rejections = 0
        while True:
            w_new, ok = step_rk4(w, rhs, h)
            if ok:
                break
            traj.rejected += 1
            rejections += 1
            h *= 0.5
            if rejections >= MAX_REJECTIONS or t + h == t:
                traj.wall_time = time.perf_counter() - start
                traj.points.append(_monitor(t, w, grid, ev))
                _finish(traj, st_t, st_s, st_rho, st_e)
                raise ConvergenceError(
                    f"step size collapsed at t={t:.6g} after {rejections} rejections", last=traj)
        w = w_new
        t = T if T - (t + h) <= snap else t + h
        traj.accepted += 1
        since_monitor += 1
        rho, e = density_energy(w, ev)
        st_t.append(t)
        st_s.append(entropy_density(w))
        st_rho.append(rho)
        st_e.append(e)
        if callback is not None:
            callback(t, w)
        if since_monitor >= monitor_every or t == T:
            traj.points.append(_monitor(t, w, grid, ev))
            since_monitor = 0
    if traj.points[-1].t != t:
        traj.points.append(_monitor(t, w, grid, ev))
    traj.wall_time = time.perf_counter() - start
    _finish(traj, st_t, st_s, st_rho, st_e)
    return traj


def _finish(traj, st_t, st_s, st_rho, st_e):
    traj.step_t = np.array(st_t)
    traj.step_s = np.array(st_s)
    traj.step_rho = np.array(st_rho)
    traj.step_e = np.array(st_e)
