"""Time stepping of the Yosida-regularized thermo-visco-plastic system.

Each step from level ``n-1`` to ``n`` runs two nested fixed-point loops:

* the inner loop (``picard_P``) freezes the shifted temperature ``theta*``
  and iterates ``eps* -> eps_p -> u -> eps(u)``: the inelastic strain is
  integrated element by element with ``eps*`` frozen, then the damped
  equilibrium is solved for ``u``;
* the outer loop (``picard_R``) iterates ``theta* -> theta`` through the
  heat equation fed by the converged mechanical fields.

Time discretization is backward Euler for the damping, the heat equation and
the coupling; the element ODE is sub-stepped with the explicit trapezoid
(Heun) rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from scipy.sparse.linalg import splu

from tvp import diagnostics
from tvp.constitutive import MaterialParams, flow_rule, truncate, yosida_grad
from tvp.lifting import LiftingSeries, solve_lifting
from tvp.mesh import (
    DirichletSolver,
    Mesh2D,
    Operators,
    body_load,
    divergence_of,
    element_load,
    strain_of,
    tensor_load,
)
from tvp.tensor import SymTensor3, dev, identity, inner, trace

if TYPE_CHECKING:
    from tvp.scenario import Scenario


class StabilityError(ValueError):
    """Sub-step too long for the explicit element integrator."""


class PicardError(RuntimeError):
    """A fixed-point loop hit its iteration cap."""


class StepFailure(RuntimeError):
    """A time step failed; carries everything accepted before it."""

    def __init__(self, message: str, step: int, trajectory: list, report):
        super().__init__(message)
        self.step = step
        self.trajectory = trajectory
        self.report = report


@dataclass(frozen=True)
class SolverParams:
    dt: float
    picard_tol: float = 1e-10
    picard_max: int = 50
    substeps: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 < self.picard_tol < 1:
            raise ValueError("picard_tol must lie in (0, 1)")
        if self.picard_max < 1:
            raise ValueError("picard_max must be at least 1")
        if self.substeps < 1:
            raise ValueError("substeps must be at least 1")


@dataclass
class SimState:
    """Fields at one time level.

    ``theta`` is the shifted temperature (physical temperature minus the
    lifting); ``T = C(eps(u) - eps_p)`` is kept consistent with ``u`` and
    ``eps_p``.
    """

    t: float
    u: np.ndarray
    u_t: np.ndarray
    theta: np.ndarray
    eps_p: SymTensor3
    T: SymTensor3


@dataclass
class InnerResult:
    u: np.ndarray
    u_t: np.ndarray
    eps_p: SymTensor3
    T: SymTensor3
    eps_p_rate: SymTensor3
    iterations: int
    residual: float
    ratios: list = field(default_factory=list)


@dataclass
class StepReport:
    """Fixed-point statistics of one accepted step."""

    r_iterations: int
    p_iterations: list
    r_residual: float
    p_residuals: list
    r_ratios: list
    p_ratios: list
    eps_p_rate: SymTensor3
    source: np.ndarray

    @property
    def contraction_R(self) -> float:
        return max(self.r_ratios, default=0.0)

    @property
    def contraction_P(self) -> float:
        return max(self.p_ratios, default=0.0)


def _ratios(increments: list) -> list:
    return [b / a for a, b in zip(increments, increments[1:]) if a > 0.0]


def min_substeps(material: MaterialParams, dt: float) -> int:
    """Fewest sub-steps meeting the explicit stability guard."""
    lipschitz = 2.0 * material.elasticity.lame_mu / material.yosida_lambda
    return max(1, math.ceil(dt * lipschitz * (1.0 - 1e-12)))


def epsilon_p_update(
    eps_p_n: SymTensor3,
    strain_star: SymTensor3,
    material: MaterialParams,
    dt: float,
    substeps: int,
) -> SymTensor3:
    """Integrate ``eps_p' = grad M_lam(dev C(strain_star - eps_p))`` over one step.

    ``strain_star`` is frozen over the step. The right-hand side is
    ``2 mu / lam``-Lipschitz in ``eps_p``; sub-steps longer than the inverse
    of that constant are rejected.
    """
    lam = material.yosida_lambda
    if not lam > 0.0:
        raise ValueError("epsilon_p_update needs yosida_lambda > 0")
    C = material.elasticity
    h = dt / substeps
    if h * 2.0 * C.lame_mu / lam > 1.0 + 1e-12:
        raise StabilityError(
            f"sub-step dt/substeps = {h:.3e} exceeds yosida_lambda/(2 mu) = {lam / (2 * C.lame_mu):.3e}; "
            f"use solver.substeps >= {min_substeps(material, dt)} or a larger yosida_lambda"
        )

    def rate(ep):
        return yosida_grad(dev(C.apply(strain_star - ep)), lam, material.p)

    ep = np.array(eps_p_n, dtype=float, copy=True)
    for _ in range(substeps):
        k1 = rate(ep)
        k2 = rate(ep + h * k1)
        ep = ep + 0.5 * h * (k1 + k2)
    return ep


class Stepper:
    """Discretized problem of one scenario: mesh, operators, lifting, solvers.

    Everything held here is fixed after construction; the per-step methods
    take the previous state and return new arrays.
    """

    def __init__(self, scenario: "Scenario", mesh: Mesh2D | None = None, lifting: LiftingSeries | None = None):
        self.scenario = scenario
        self.material = scenario.material
        self.params = scenario.solver
        self.mesh = mesh if mesh is not None else scenario.build_mesh()
        self.ops = Operators.build(self.mesh, self.material.elasticity)
        self.times = scenario.times()
        if lifting is None:
            nodes = self.mesh.nodes
            lifting = solve_lifting(
                self.ops,
                lambda t: scenario.g_theta.at(nodes, t),
                scenario.initial_temperature(self.mesh),
                self.times,
            )
        self.lifting = lifting
        dt = self.params.dt
        self._bnd = self.mesh.boundary_nodes
        self._elastic = DirichletSolver(self.ops.K * (1.0 + 1.0 / dt), self.mesh.boundary_dofs)
        self._heat = splu((self.ops.M + dt * self.ops.A).tocsc())
        self._static = None

    # ---- data on the mesh
    def boundary_displacement(self, t: float) -> np.ndarray:
        return self.scenario.g_D.at(self.mesh.nodes[self._bnd], t).reshape(-1)

    def boundary_velocity(self, t: float) -> np.ndarray:
        return self.scenario.g_D.rate_at(self.mesh.nodes[self._bnd], t).reshape(-1)

    def body_force(self, t: float) -> np.ndarray:
        return self.scenario.F.at(self.mesh.nodes, t)

    def thermal_coefficient(self, theta_shifted: np.ndarray, level: int) -> np.ndarray:
        """Element values of ``f(T(theta + lifting))`` at the centroids."""
        theta_hat = theta_shifted + self.lifting.theta[level]
        return self.material.f(self.mesh.centroid_values(theta_hat))

    @property
    def static_solver(self) -> DirichletSolver:
        if self._static is None:
            self._static = DirichletSolver(self.ops.K, self.mesh.boundary_dofs)
        return self._static

    # ---- initial data
    def initial_velocity_solve(self):
        """Initial velocity from the elliptic problem at ``t = 0``.

        Solves ``int C eps(w) : eps(v) = int F(0) v - int (C(eps(u0) - eps_p0) - f I) : eps(v)``
        with ``w = d g_D / dt (0)`` on the boundary. Returns ``(u_t0, bound)`` where
        ``bound`` holds the squared norms entering the a-priori estimate of ``u_t0``.
        """
        sc, mesh, C = self.scenario, self.mesh, self.material.elasticity
        u0 = sc.initial_displacement(mesh)
        eps_p0 = sc.initial_inelastic_strain(mesh)
        f0 = self.thermal_coefficient(np.zeros(mesh.n_nodes), 0)
        X = C.apply(strain_of(mesh, u0) - eps_p0) - f0[:, None] * identity((mesh.n_elems,))
        rhs = body_load(mesh, self.body_force(0.0)) - tensor_load(mesh, X)
        w = self.static_solver.solve(rhs, self.boundary_velocity(0.0))
        u_t0 = w.reshape(-1, 2)

        ops = self.ops
        gdt = sc.g_D.rate_at(mesh.nodes, 0.0)
        bnd_sq = float(np.sum(
            0.5 * mesh.edge_lengths
            * (np.sum(gdt[mesh.boundary_edges[:, 0]] ** 2, axis=1) + np.sum(gdt[mesh.boundary_edges[:, 1]] ** 2, axis=1))
        ))
        bound = {
            "u_t0_h1_sq": sum(ops.h1_norm_nodal(u_t0[:, k]) ** 2 for k in range(2)),
            "u0_h1_sq": sum(ops.h1_norm_nodal(u0[:, k]) ** 2 for k in range(2)),
            "F0_l2_sq": sum(ops.l2_norm_nodal(self.body_force(0.0)[:, k]) ** 2 for k in range(2)),
            "eps_p0_l2_sq": ops.l2_norm_elem(eps_p0) ** 2,
            "f_theta0_l2_sq": ops.l2_norm_elem(f0) ** 2,
            "g_Dt0_boundary_l2_sq": bnd_sq,
            "residual": self.static_solver.residual(w, rhs),
        }
        data = sum(v for k, v in bound.items() if k not in ("u_t0_h1_sq", "residual"))
        bound["ratio"] = bound["u_t0_h1_sq"] / data if data > 0 else 0.0
        return u_t0, bound

    def initial_state(self) -> tuple[SimState, dict]:
        sc, mesh, C = self.scenario, self.mesh, self.material.elasticity
        u0 = sc.initial_displacement(mesh)
        eps_p0 = sc.initial_inelastic_strain(mesh)
        T0 = C.apply(strain_of(mesh, u0) - eps_p0)
        if not np.all(np.isfinite(flow_rule(dev(T0), self.material.p))):
            raise ValueError("initial data inadmissible: flow rule of the initial stress deviator is not finite")
        u_t0, bound = self.initial_velocity_solve()
        state = SimState(0.0, u0, u_t0, np.zeros(mesh.n_nodes), eps_p0, T0)
        return state, bound

    # ---- one step, level-1 -> level
    def elastic_solve(self, eps_p: SymTensor3, theta_star: np.ndarray, u_n: np.ndarray, level: int):
        """Damped equilibrium at ``t_level`` with ``u_t = (u - u_n) / dt``.

        ``(1 + 1/dt) K u = l(C eps_p) + l(f I) + l(F) + K u_n / dt`` with
        ``u = g_D`` on the boundary. Returns ``(u, u_t)`` as nodal arrays.
        """
        dt, mesh, C = self.params.dt, self.mesh, self.material.elasticity
        t = self.times[level]
        f_e = self.thermal_coefficient(theta_star, level)
        X = C.apply(eps_p) + f_e[:, None] * identity((mesh.n_elems,))
        u_n_flat = np.asarray(u_n).reshape(-1)
        rhs = tensor_load(mesh, X) + body_load(mesh, self.body_force(t)) + (self.ops.K @ u_n_flat) / dt
        u = self._elastic.solve(rhs, self.boundary_displacement(t))
        u = u.reshape(-1, 2)
        return u, (u - u_n) / dt

    def elastic_residual(self, u: np.ndarray, eps_p: SymTensor3, theta_star: np.ndarray, u_n: np.ndarray, level: int) -> float:
        dt, mesh, C = self.params.dt, self.mesh, self.material.elasticity
        t = self.times[level]
        f_e = self.thermal_coefficient(theta_star, level)
        X = C.apply(eps_p) + f_e[:, None] * identity((mesh.n_elems,))
        rhs = tensor_load(mesh, X) + body_load(mesh, self.body_force(t)) + (self.ops.K @ np.asarray(u_n).reshape(-1)) / dt
        return self._elastic.residual(np.asarray(u).reshape(-1), rhs)

    def heat_source(self, T: SymTensor3, eps_p_rate: SymTensor3) -> np.ndarray:
        """Truncated dissipation ``T(dev(T) : eps_p_rate)`` per element."""
        return truncate(inner(dev(T), eps_p_rate), self.material.eps_trunc)

    def heat_solve(self, theta_n, theta_star, T, eps_p_rate, u_t, level: int):
        """Implicit Euler for the shifted temperature with ``f`` frozen at ``theta*``.

        ``(M + dt A) theta = M theta_n + dt (l(source) - l(f div u_t))``.
        Returns ``(theta, source)``.
        """
        dt, mesh = self.params.dt, self.mesh
        source = self.heat_source(T, eps_p_rate)
        f_e = self.thermal_coefficient(theta_star, level)
        rhs = self.ops.M @ theta_n + dt * (
            element_load(mesh, source) - element_load(mesh, f_e * divergence_of(mesh, u_t))
        )
        theta = self._heat.solve(rhs)
        if not np.all(np.isfinite(theta)):
            raise np.linalg.LinAlgError("heat solve produced non-finite values")
        return theta, source

    def picard_P(self, theta_star, state_n: SimState, level: int, eps_star0=None) -> InnerResult:
        """Inner fixed point ``eps* -> eps(u)`` at frozen ``theta*``."""
        prm, mesh, C = self.params, self.mesh, self.material.elasticity
        ops = self.ops
        eps_star = strain_of(mesh, state_n.u) if eps_star0 is None else np.asarray(eps_star0, dtype=float)
        increments = []
        rel = math.inf
        for k in range(1, prm.picard_max + 1):
            eps_p = epsilon_p_update(state_n.eps_p, eps_star, self.material, prm.dt, prm.substeps)
            u, u_t = self.elastic_solve(eps_p, theta_star, state_n.u, level)
            eps_new = strain_of(mesh, u)
            diff = ops.l2_norm_elem(eps_new - eps_star)
            rel = diff / (1.0 + ops.l2_norm_elem(eps_star))
            increments.append(diff)
            eps_star = eps_new
            if rel < prm.picard_tol:
                break
        else:
            raise PicardError(
                f"inner fixed point did not converge in {prm.picard_max} iterations "
                f"(last relative increment {rel:.3e}); reduce time.dt"
            )
        # final pass makes eps_p consistent with the accepted strain
        eps_p = epsilon_p_update(state_n.eps_p, eps_star, self.material, prm.dt, prm.substeps)
        T = C.apply(eps_star - eps_p)
        rate = (eps_p - state_n.eps_p) / prm.dt
        return InnerResult(u, u_t, eps_p, T, rate, k, rel, _ratios(increments))

    def picard_R(self, state_n: SimState, level: int, theta_star0=None) -> tuple[SimState, StepReport]:
        """Outer fixed point ``theta* -> theta`` through the heat equation."""
        prm, ops = self.params, self.ops
        theta_star = np.array(state_n.theta if theta_star0 is None else theta_star0, dtype=float)
        increments, p_iters, p_res, p_ratios = [], [], [], []
        rel = math.inf
        for j in range(1, prm.picard_max + 1):
            inner_res = self.picard_P(theta_star, state_n, level)
            p_iters.append(inner_res.iterations)
            p_res.append(inner_res.residual)
            p_ratios.append(max(inner_res.ratios, default=0.0))
            theta_new, source = self.heat_solve(
                state_n.theta, theta_star, inner_res.T, inner_res.eps_p_rate, inner_res.u_t, level
            )
            diff = ops.l2_norm_nodal(theta_new - theta_star)
            rel = diff / (1.0 + ops.l2_norm_nodal(theta_star))
            increments.append(diff)
            theta_star = theta_new
            if rel < prm.picard_tol:
                break
        else:
            raise PicardError(
                f"outer fixed point did not converge in {prm.picard_max} iterations "
                f"(last relative increment {rel:.3e}); reduce time.dt"
            )
        state = SimState(
            float(self.times[level]), inner_res.u, inner_res.u_t, theta_new, inner_res.eps_p, inner_res.T
        )
        report = StepReport(j, p_iters, rel, p_res, _ratios(increments), p_ratios, inner_res.eps_p_rate, source)
        return state, report

    def check_state(self, state: SimState) -> list[str]:
        """Violations of the state invariants (traceless eps_p, consistent T)."""
        problems = []
        tr = np.max(np.abs(trace(state.eps_p)), initial=0.0)
        if tr > 1e-10:
            problems.append(f"eps_p trace {tr:.3e} exceeds 1e-10")
        T = self.material.elasticity.apply(strain_of(self.mesh, state.u) - state.eps_p)
        err = np.max(np.abs(T - state.T), initial=0.0)
        if err > 1e-10 * (1.0 + np.max(np.abs(T), initial=0.0)):
            problems.append(f"stress cache inconsistent by {err:.3e}")
        for name in ("u", "u_t", "theta", "eps_p", "T"):
            if not np.all(np.isfinite(getattr(state, name))):
                problems.append(f"non-finite values in {name}")
        return problems


def run(scenario: "Scenario", stepper: Stepper | None = None):
    """March the scenario to its final time.

    Returns ``(trajectory, report)``: the list of accepted ``SimState`` (level
    0 included) and a ``DiagnosticsReport``. A failing step raises
    ``StepFailure`` carrying the states accepted so far.
    """
    if not scenario.material.yosida_lambda > 0.0:
        raise ValueError("the field solver needs material.yosida_lambda > 0")
    stepper = stepper if stepper is not None else Stepper(scenario)
    state, bound = stepper.initial_state()
    report = diagnostics.DiagnosticsReport.start(stepper, state, bound)
    trajectory = [state]
    for level in range(1, len(stepper.times)):
        try:
            new_state, step_report = stepper.picard_R(trajectory[-1], level)
        except (PicardError, StabilityError, np.linalg.LinAlgError) as exc:
            report.failure = f"step {level} (t={stepper.times[level]:.6g}): {exc}"
            raise StepFailure(report.failure, level, trajectory, report) from exc
        problems = stepper.check_state(new_state)
        if problems:
            report.failure = f"step {level} (t={stepper.times[level]:.6g}): " + "; ".join(problems)
            raise StepFailure(report.failure, level, trajectory, report)
        report.record(stepper, trajectory[-1], new_state, step_report, level)
        trajectory.append(new_state)
    return trajectory, report
