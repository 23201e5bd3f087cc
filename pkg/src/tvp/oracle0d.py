"""Material-point reference: the spatially homogeneous system under a prescribed strain.

With all fields constant in space the divergence and Laplacian terms drop and
the system becomes an ODE for ``(eps_p, theta)``::

    eps_p' = G(dev T),            T = C(eps(t) - eps_p)
    theta' = T(dev T : eps_p') - f(T(theta)) tr(eps'(t))

with ``G`` the exact flow rule (``lam = 0``) or its Yosida approximation.
It is integrated with classical RK4 in plain Python floats, sharing no
numerical code with the field solver so that it can serve as an independent
check of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from tvp.constitutive import MaterialParams

HISTORY_KINDS = ("ramp", "sinusoid", "hold")
_W = (1.0, 1.0, 1.0, 2.0, 2.0, 2.0)


class OracleError(ValueError):
    """Scenario outside the reach of the point reduction."""


@dataclass(frozen=True)
class StrainHistory:
    """Named strain history ``eps(t) = profile(t) * E``.

    ``ramp``: ``profile = rate * t``; ``sinusoid``: ``sin(omega t)``;
    ``hold``: ``1``.
    """

    kind: str
    E: tuple
    rate: float = 1.0
    omega: float = 1.0

    def __post_init__(self):
        if self.kind not in HISTORY_KINDS:
            raise ValueError(f"unknown strain history {self.kind!r}; expected one of {HISTORY_KINDS}")
        if len(self.E) != 6:
            raise ValueError("E needs 6 components (xx yy zz xy yz xz)")

    def profile(self, t: float) -> float:
        if self.kind == "ramp":
            return self.rate * t
        if self.kind == "sinusoid":
            return math.sin(self.omega * t)
        return 1.0

    def profile_dt(self, t: float) -> float:
        if self.kind == "ramp":
            return self.rate
        if self.kind == "sinusoid":
            return self.omega * math.cos(self.omega * t)
        return 0.0

    def value(self, t: float) -> list:
        c = self.profile(t)
        return [c * e for e in self.E]

    def rate_at(self, t: float) -> list:
        c = self.profile_dt(t)
        return [c * e for e in self.E]


@dataclass(frozen=True)
class PointTrajectory:
    """Samples of one material point; arrays are indexed by sample."""

    times: np.ndarray
    strain: np.ndarray
    eps_p: np.ndarray
    T: np.ndarray
    theta: np.ndarray


# ---- scalar tensor helpers on 6-lists

def _dev(a):
    m = (a[0] + a[1] + a[2]) / 3.0
    return [a[0] - m, a[1] - m, a[2] - m, a[3], a[4], a[5]]


def _dot(a, b):
    return sum(w * x * y for w, x, y in zip(_W, a, b))


def _stress(material: MaterialParams, strain, eps_p):
    lam_e = material.elasticity.lame_lambda
    mu2 = 2.0 * material.elasticity.lame_mu
    e = [s - q for s, q in zip(strain, eps_p)]
    tr = e[0] + e[1] + e[2]
    out = [mu2 * x for x in e]
    for k in range(3):
        out[k] += lam_e * tr
    return out


def _yosida_magnitude(r: float, lam: float, p: float) -> float:
    """``d / lam`` where ``s + d = r`` and ``d = lam s^p``, by bisection-guarded Newton on ``s``."""
    if r == 0.0:
        return 0.0
    lo, hi = 0.0, r
    s = min(r, (r / lam) ** (1.0 / p))
    for _ in range(200):
        g = s + lam * s**p - r
        if g > 0.0:
            hi = s
        else:
            lo = s
        s_new = s - g / (1.0 + lam * p * s ** (p - 1.0))
        if not lo <= s_new <= hi:
            s_new = 0.5 * (lo + hi)
        if abs(s_new - s) <= 4e-16 * s_new or hi - lo <= 4e-16 * r:
            s = s_new
            break
        s = s_new
    # d is recovered from the equation rather than by r - s to avoid cancellation
    return s**p if lam * r ** (p - 1.0) <= 1.0 else (r - s) / lam


def _rate(material: MaterialParams, tdev):
    r = math.sqrt(max(_dot(tdev, tdev), 0.0))
    if r == 0.0:
        return [0.0] * 6
    lam, p = material.yosida_lambda, material.p
    mag = r**p if lam == 0.0 else _yosida_magnitude(r, lam, p)
    c = mag / r
    return [c * x for x in tdev]


def _truncate(x: float, eps_trunc: float) -> float:
    h = 1.0 / eps_trunc
    return min(max(x, -h), h)


def _rhs(material: MaterialParams, history: StrainHistory, t: float, eps_p, theta: float):
    strain = history.value(t)
    tdev = _dev(_stress(material, strain, eps_p))
    rate = _rate(material, tdev)
    source = _truncate(_dot(tdev, rate), material.eps_trunc)
    sr = history.rate_at(t)
    f = float(material.f(theta))
    return rate, source - f * (sr[0] + sr[1] + sr[2])


def integrate_point(
    material: MaterialParams,
    history: StrainHistory,
    theta0: float,
    t_final: float,
    n_steps: int,
    eps_p0=None,
    record_every: int = 1,
) -> PointTrajectory:
    """Classical RK4 with ``n_steps`` uniform steps.

    The flow rule is exact when ``material.yosida_lambda == 0`` and the Yosida
    approximation otherwise. Samples are kept every ``record_every`` steps.
    """
    if n_steps < 1 or n_steps % record_every:
        raise ValueError("n_steps must be a positive multiple of record_every")
    h = t_final / n_steps
    ep = [0.0] * 6 if eps_p0 is None else [float(x) for x in eps_p0]
    th = float(theta0)
    times, eps_s, theta_s = [0.0], [list(ep)], [th]
    for n in range(n_steps):
        t = n * h
        k1, q1 = _rhs(material, history, t, ep, th)
        k2, q2 = _rhs(material, history, t + 0.5 * h, [a + 0.5 * h * b for a, b in zip(ep, k1)], th + 0.5 * h * q1)
        k3, q3 = _rhs(material, history, t + 0.5 * h, [a + 0.5 * h * b for a, b in zip(ep, k2)], th + 0.5 * h * q2)
        k4, q4 = _rhs(material, history, t + h, [a + h * b for a, b in zip(ep, k3)], th + h * q3)
        ep = [a + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4) for a, b1, b2, b3, b4 in zip(ep, k1, k2, k3, k4)]
        th = th + h / 6.0 * (q1 + 2.0 * q2 + 2.0 * q3 + q4)
        if (n + 1) % record_every == 0:
            times.append((n + 1) * h)
            eps_s.append(list(ep))
            theta_s.append(th)
    times = np.array(times)
    strain = np.array([history.value(t) for t in times])
    eps_p = np.array(eps_s)
    T = np.array([_stress(material, s, e) for s, e in zip(strain, eps_p)])
    return PointTrajectory(times, strain, eps_p, T, np.array(theta_s))


def richardson_gap(material, history, theta0, t_final, n_steps, eps_p0=None) -> float:
    """Largest end-state difference between runs with ``n`` and ``2n`` steps."""
    a = integrate_point(material, history, theta0, t_final, n_steps, eps_p0, record_every=n_steps)
    b = integrate_point(material, history, theta0, t_final, 2 * n_steps, eps_p0, record_every=2 * n_steps)
    return float(max(np.max(np.abs(a.eps_p[-1] - b.eps_p[-1])), abs(a.theta[-1] - b.theta[-1])))


def energy_ledger_gap(material: MaterialParams, history: StrainHistory, traj: PointTrajectory) -> float:
    """Largest deviation of ``theta + C^-1 T : T / 2`` from its integrated balance.

    For ``f = 0`` and the exact flow rule the energy rate is
    ``T : eps' - (|dev T|^(p+1) - T(|dev T|^(p+1)))``. The rate is integrated
    over the samples by the trapezoid rule, which stays second order across
    the kink of the truncation.
    """
    C = material.elasticity
    energy = traj.theta + 0.5 * np.einsum("nk,k,nk->n", C.apply_inv(traj.T), np.array(_W), traj.T)
    balance = np.empty(len(traj.times))
    for i, t in enumerate(traj.times):
        T = list(traj.T[i])
        tdev = _dev(T)
        exact = _dot(tdev, tdev) ** (0.5 * (material.p + 1.0))
        balance[i] = _dot(T, history.rate_at(t)) - (exact - _truncate(exact, material.eps_trunc))
    steps = 0.5 * np.diff(traj.times) * (balance[1:] + balance[:-1])
    integrated = np.concatenate([[0.0], np.cumsum(steps)])
    return float(np.max(np.abs(energy - energy[0] - integrated)))


# ---- bridge to the field solver

def history_from_scenario(scenario) -> StrainHistory:
    """Strain history of an affine-in-space ``g_D``: ``profile(t) * sym(grad g_D)``."""
    g = scenario.g_D
    A = g.gradient()
    E = (A[0, 0], A[1, 1], 0.0, 0.5 * (A[0, 1] + A[1, 0]), 0.0, 0.0)
    if g.kind == "ramp":
        return StrainHistory("ramp", E, rate=g.rate)
    if g.kind == "sinusoid":
        return StrainHistory("sinusoid", E, omega=g.omega)
    return StrainHistory("hold", E)


def _check_homogeneous(scenario) -> None:
    problems = []
    if scenario.mesh.nx != 1 or scenario.mesh.ny != 1:
        problems.append("needs a single-cell mesh (mesh.nx = mesh.ny = 1)")
    if not scenario.g_theta.vanishes:
        problems.append("needs boundary.g_theta = zero")
    if scenario.theta0.kind not in ("zero", "constant"):
        problems.append("needs a spatially constant initial.theta0")
    if scenario.u0_bubble:
        problems.append("needs initial.u0.bubble = 0")
    if problems:
        raise OracleError("scenario is not a homogeneous affine problem: " + "; ".join(problems))


@dataclass(frozen=True)
class ComparisonRow:
    dt: float
    error: float
    ratio: float  # error(2 dt) / error(dt); NaN on the first row


def compare_with_stepper(scenario, halvings: int = 3, oracle_steps: int = 100_000) -> list[ComparisonRow]:
    """Sup-norm gap between the field solver and the matched-λ point oracle.

    The scenario is run at ``dt, dt/2, ..., dt/2^halvings``; the oracle is run
    once on a grid that contains all of those time levels. The error is the
    largest of ``|T_h - T|`` and ``|theta_h - theta|`` over the coarse-grid
    levels.
    """
    from tvp.stepper import run

    _check_homogeneous(scenario)
    history = history_from_scenario(scenario)
    n_coarse = scenario.n_steps
    n_fine = n_coarse * 2**halvings
    k = max(1, math.ceil(oracle_steps / n_fine))
    theta0 = float(scenario.theta0.at(np.zeros((1, 2)), 0.0)[0])
    ref = integrate_point(
        scenario.material, history, theta0, scenario.t_final, n_fine * k,
        eps_p0=scenario.eps_p0, record_every=k * 2**halvings,
    )
    rows = []
    for j in range(halvings + 1):
        sc = scenario.with_dt(scenario.dt / 2**j)
        traj, _ = run(sc)
        stride = 2**j
        err = 0.0
        for n in range(n_coarse + 1):
            st = traj[n * stride]
            T_h = st.T.mean(axis=0)
            theta_h = float(np.mean(st.theta)) + theta0
            dT = T_h - ref.T[n]
            err = max(err, math.sqrt(_dot(list(dT), list(dT))), abs(theta_h - ref.theta[n]))
        ratio = rows[-1].error / err if rows and err > 0 else float("nan")
        rows.append(ComparisonRow(sc.dt, err, ratio))
    return rows
