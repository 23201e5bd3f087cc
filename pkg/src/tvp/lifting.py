"""Lifting of the boundary heat flux.

The free heat flow ``w_t - lap w = 0`` with ``dw/dn = g_theta`` and
``w(0) = theta0`` carries all inhomogeneous temperature data. The coupled
solver then works with the shifted temperature ``theta = theta_hat - w``,
which has homogeneous Neumann data and starts from zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.sparse.linalg import splu

from tvp.mesh import Operators, boundary_loads


@dataclass(frozen=True)
class LiftingSeries:
    """Lifted temperature at every time level.

    Attributes
    ----------
    times : (N+1,) array
    theta : (N+1, n_nodes) array
        Nodal lifting values; ``theta[0]`` is the initial temperature.
    theta_t : (N+1, n_nodes) array
        Backward differences ``(theta[n] - theta[n-1]) / dt``; row 0 is zero.
    max_h1 : float
        ``max_n ||theta[n]||_H1``.
    sum_dt_theta_t_sq : float
        ``sum_n dt ||theta_t[n]||^2_L2``.
    """

    times: np.ndarray
    theta: np.ndarray
    theta_t: np.ndarray
    max_h1: float
    sum_dt_theta_t_sq: float

    def at(self, n: int) -> np.ndarray:
        return self.theta[n]


def solve_lifting(
    ops: Operators,
    g_theta: Callable[[float], np.ndarray],
    theta0: np.ndarray,
    times: np.ndarray,
) -> LiftingSeries:
    """Implicit Euler for the lifting problem on the given time grid.

    ``g_theta(t)`` returns nodal flux values (only boundary nodes are read).
    Each level solves ``(M + dt A) w_{n+1} = M w_n + dt l(g_theta(t_{n+1}))``.
    """
    times = np.asarray(times, dtype=float)
    n_levels = times.size
    theta = np.empty((n_levels, ops.mesh.n_nodes))
    theta_t = np.zeros_like(theta)
    theta[0] = theta0
    factors = {}
    for n in range(n_levels - 1):
        dt = times[n + 1] - times[n]
        lu = factors.get(dt)
        if lu is None:
            lu = factors[dt] = splu((ops.M + dt * ops.A).tocsc())
        rhs = ops.M @ theta[n] + dt * boundary_loads(ops.mesh, g_theta(times[n + 1]))
        theta[n + 1] = lu.solve(rhs)
        if not np.all(np.isfinite(theta[n + 1])):
            raise np.linalg.LinAlgError("lifting solve produced non-finite values")
        theta_t[n + 1] = (theta[n + 1] - theta[n]) / dt

    max_h1 = max(ops.h1_norm_nodal(th) for th in theta)
    sum_sq = sum(
        (times[n] - times[n - 1]) * ops.l2_norm_nodal(theta_t[n]) ** 2 for n in range(1, n_levels)
    )
    return LiftingSeries(times, theta, theta_t, float(max_h1), float(sum_sq))


def recombine(theta: np.ndarray, lifting: LiftingSeries, n: int) -> np.ndarray:
    """Physical temperature ``theta_hat = theta + lifting`` at level ``n``."""
    return np.asarray(theta) + lifting.theta[n]
