"""Per-step diagnostics, λ-sweeps and pass/fail evaluation.

All integrals use the one-point-per-element rule of the assembly, so the
discrete energy balance is measured for the scheme that was actually run.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import TYPE_CHECKING

import numpy as np

from tvp.constitutive import flow_rule, resolvent, truncate, yosida_grad
from tvp.mesh import Operators, strain_of
from tvp.tensor import dev, inner, norm

if TYPE_CHECKING:
    from tvp.scenario import Scenario

CSV_COLUMNS = (
    "t",
    "E_total",
    "E_thermal",
    "E_elastic",
    "min_dissipation",
    "norm_T",
    "norm_eps_ut_sq",
    "picard_R_iters",
    "picard_P_iters_total",
    "contraction_R",
    "contraction_P",
)

DISSIPATION_TOL = 1e-12
ENERGY_TOL = 1e-8
FLOW_RESIDUAL_TOL = 1e-10
SPREAD_TOL = 0.2
STATE_TOL = 1e-10


def total_energy(ops: Operators, T, theta_hat) -> tuple[float, float, float]:
    """``(E_total, E_thermal, E_elastic)`` with ``E_thermal = int theta_hat``
    and ``E_elastic = 1/2 int C^-1 T : T``."""
    areas = ops.mesh.areas
    E_th = float(np.sum(areas * ops.mesh.centroid_values(np.asarray(theta_hat, dtype=float))))
    T = np.asarray(T, dtype=float)
    E_el = float(0.5 * np.sum(areas * inner(ops.C.apply_inv(T), T)))
    return E_th + E_el, E_th, E_el


def dissipation_min(T, eps_p_rate) -> float:
    """Smallest element value of ``dev(T) : eps_p_rate``."""
    d = inner(dev(np.asarray(T, dtype=float)), np.asarray(eps_p_rate, dtype=float))
    return float(np.min(d, initial=np.inf)) if d.size else 0.0


def relative_spread(values) -> float:
    v = np.asarray(values, dtype=float)
    top = np.max(np.abs(v))
    return float((np.max(v) - np.min(v)) / top) if top > 0 else 0.0


@dataclass
class StepRow:
    t: float
    E_total: float
    E_thermal: float
    E_elastic: float
    min_dissipation: float
    norm_T: float
    norm_eps_ut_sq: float
    picard_R_iters: int
    picard_P_iters_total: int
    contraction_R: float
    contraction_P: float
    # not written to diagnostics.csv
    norm_T_t_sq: float = 0.0
    yosida_sq: float = 0.0
    flow_residual: float = 0.0
    source_used: float = 0.0
    source_exact: float = 0.0

    def csv_values(self) -> tuple:
        return tuple(getattr(self, c) for c in CSV_COLUMNS)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def _instantaneous(material, T):
    """Yosida rate of ``dev T`` and its distance to ``G(J_lam(dev T))``."""
    lam, p = material.yosida_lambda, material.p
    z = dev(T)
    g = yosida_grad(z, lam, p)
    gj = flow_rule(resolvent(z, lam, p), p)
    scale = max(1.0, float(np.max(norm(g), initial=0.0)))
    return g, float(np.max(norm(g - gj), initial=0.0)) / scale


@dataclass
class DiagnosticsReport:
    """Rows in time order plus run-level data.

    ``T_history`` keeps the element stresses of every level for λ-sweeps.
    """

    name: str
    lam: float
    dt: float
    closed: bool
    rows: list = field(default_factory=list)
    initial_bound: dict = field(default_factory=dict)
    lifting_max_h1: float = 0.0
    lifting_sum_dt_theta_t_sq: float = 0.0
    T_history: list = field(default_factory=list)
    failure: str | None = None

    @classmethod
    def start(cls, stepper, state, bound) -> "DiagnosticsReport":
        sc = stepper.scenario
        rep = cls(
            sc.name,
            sc.material.yosida_lambda,
            sc.dt,
            sc.closed,
            initial_bound=dict(bound),
            lifting_max_h1=stepper.lifting.max_h1,
            lifting_sum_dt_theta_t_sq=stepper.lifting.sum_dt_theta_t_sq,
        )
        material, ops = stepper.material, stepper.ops
        E = total_energy(ops, state.T, state.theta + stepper.lifting.theta[0])
        g, resid = _instantaneous(material, state.T)
        eut = strain_of(stepper.mesh, state.u_t)
        rep.rows.append(StepRow(
            0.0, *E,
            min_dissipation=dissipation_min(state.T, g),
            norm_T=ops.l2_norm_elem(state.T),
            norm_eps_ut_sq=ops.l2_norm_elem(eut) ** 2,
            picard_R_iters=0,
            picard_P_iters_total=0,
            contraction_R=0.0,
            contraction_P=0.0,
            yosida_sq=ops.l2_norm_elem(g) ** 2,
            flow_residual=resid,
        ))
        rep.T_history.append(np.array(state.T))
        return rep

    def record(self, stepper, prev, state, step_report, level: int) -> None:
        material, ops, mesh = stepper.material, stepper.ops, stepper.mesh
        E = total_energy(ops, state.T, state.theta + stepper.lifting.theta[level])
        g, resid = _instantaneous(material, state.T)
        eut = strain_of(mesh, state.u_t)
        exact = truncate(norm(dev(state.T)) ** (material.p + 1.0), material.eps_trunc)
        self.rows.append(StepRow(
            float(state.t), *E,
            min_dissipation=dissipation_min(state.T, step_report.eps_p_rate),
            norm_T=ops.l2_norm_elem(state.T),
            norm_eps_ut_sq=ops.l2_norm_elem(eut) ** 2,
            picard_R_iters=step_report.r_iterations,
            picard_P_iters_total=int(sum(step_report.p_iterations)),
            contraction_R=step_report.contraction_R,
            contraction_P=step_report.contraction_P,
            norm_T_t_sq=ops.l2_norm_elem((state.T - prev.T) / self.dt) ** 2,
            yosida_sq=ops.l2_norm_elem(g) ** 2,
            flow_residual=resid,
            source_used=float(np.sum(mesh.areas * step_report.source)),
            source_exact=float(np.sum(mesh.areas * exact)),
        ))
        self.T_history.append(np.array(state.T))

    # ---- run-level summaries
    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    @property
    def sup_norm_T(self) -> float:
        return float(np.max(self.column("norm_T")))

    @property
    def sum_dt_T_t_sq(self) -> float:
        return float(self.dt * np.sum(self.column("norm_T_t_sq")[1:]))

    @property
    def sum_dt_eps_ut_sq(self) -> float:
        return float(self.dt * np.sum(self.column("norm_eps_ut_sq")[1:]))

    @property
    def lambda_yosida_sum(self) -> float:
        """``lam * sum_n dt ||grad M_lam(dev T_n)||^2`` over the stepped levels."""
        return float(self.lam * self.dt * np.sum(self.column("yosida_sq")[1:]))

    def energy_increments(self) -> np.ndarray:
        return np.diff(self.column("E_total"))

    def evaluate(self) -> list[Check]:
        """Per-run invariants; energy decay only applies to closed scenarios."""
        checks = []
        if self.failure is not None:
            checks.append(Check("completed", False, self.failure))
        rows = self.rows[1:]
        if not rows:
            return checks
        finite = all(np.all(np.isfinite(r.csv_values())) for r in self.rows)
        checks.append(Check("finite", finite, "all diagnostics finite" if finite else "non-finite diagnostics"))
        dmin = min(r.min_dissipation for r in rows)
        checks.append(Check("dissipation", dmin >= -DISSIPATION_TOL, f"min dev(T):rate = {dmin:.3e}"))
        cr = max(r.contraction_R for r in rows)
        cp = max(r.contraction_P for r in rows)
        checks.append(Check("contraction_R", cr < 1.0, f"max ratio {cr:.3e}"))
        checks.append(Check("contraction_P", cp < 1.0, f"max ratio {cp:.3e}"))
        fr = max(r.flow_residual for r in self.rows)
        checks.append(Check("flow_residual", fr < FLOW_RESIDUAL_TOL, f"max {fr:.3e}"))
        if self.closed:
            E0 = self.rows[0].E_total
            worst = float(np.max(self.energy_increments()))
            tol = ENERGY_TOL * abs(E0)
            checks.append(Check("energy", worst <= tol, f"max increment {worst:.3e} vs {tol:.3e}"))
        return checks


# ----------------------------------------------------------------------------
# λ sweeps

@dataclass
class SweepRow:
    lam: float
    ok: bool
    error: str = ""
    sup_norm_T: float = float("nan")
    sum_dt_T_t_sq: float = float("nan")
    sum_dt_eps_ut_sq: float = float("nan")
    lambda_yosida_sum: float = float("nan")
    max_flow_residual: float = float("nan")


SWEEP_COLUMNS = tuple(f.name for f in fields(SweepRow))


@dataclass
class SweepTable:
    rows: list
    pairwise: np.ndarray  # sup_n ||T^a_n - T^b_n||, NaN where a run failed
    checks_per_run: list

    @property
    def lambdas(self) -> list:
        return [r.lam for r in self.rows]

    def cauchy_column(self) -> np.ndarray:
        """``sup_n ||T^{lam_k} - T^{lam_k+1}||`` along the ladder."""
        n = len(self.rows)
        return np.array([self.pairwise[k, k + 1] for k in range(n - 1)])

    def evaluate(self) -> list[Check]:
        checks = []
        failed = [r for r in self.rows if not r.ok]
        for r in failed:
            checks.append(Check(f"run lam={r.lam:g}", False, r.error))
        for r, run_checks in zip(self.rows, self.checks_per_run):
            for c in run_checks:
                checks.append(Check(f"{c.name} lam={r.lam:g}", c.passed, c.detail))
        ok = [r for r in self.rows if r.ok]
        if failed or len(ok) < 2:
            return checks
        for attr in ("sup_norm_T", "sum_dt_T_t_sq", "sum_dt_eps_ut_sq"):
            spread = relative_spread([getattr(r, attr) for r in ok])
            checks.append(Check(f"spread {attr}", spread < SPREAD_TOL, f"relative spread {spread:.3%}"))
        cauchy = self.cauchy_column()
        dec = bool(np.all(np.diff(cauchy) < 0.0))
        checks.append(Check("cauchy", dec, "sup|T^a - T^b| along ladder: " + ", ".join(f"{c:.3e}" for c in cauchy)))
        ys = np.array([r.lambda_yosida_sum for r in ok])
        ladder = np.array([r.lam for r in ok])
        order = np.argsort(-ladder)
        ydec = bool(np.all(np.diff(ys[order]) < 0.0))
        checks.append(Check("yosida", ydec, "lam*sum dt|grad M_lam|^2: " + ", ".join(f"{y:.3e}" for y in ys[order])))
        return checks


def sweep_lambda(scenario: "Scenario", ladder) -> SweepTable:
    """Run the scenario once per λ and compare stress histories pairwise.

    A failing run marks its row failed; the other runs still complete.
    """
    from tvp.stepper import StepFailure, Stepper, run

    mesh = scenario.build_mesh()
    lifting = None
    rows, histories, run_checks = [], [], []
    for lam in ladder:
        sc = scenario.with_lambda(float(lam))
        try:
            stepper = Stepper(sc, mesh=mesh, lifting=lifting)
            lifting = stepper.lifting
            _, rep = run(sc, stepper)
        except (StepFailure, ValueError) as exc:
            rows.append(SweepRow(float(lam), False, str(exc)))
            histories.append(None)
            run_checks.append([])
            continue
        rows.append(SweepRow(
            float(lam), True, "",
            rep.sup_norm_T, rep.sum_dt_T_t_sq, rep.sum_dt_eps_ut_sq, rep.lambda_yosida_sum,
            float(np.max(rep.column("flow_residual"))),
        ))
        histories.append(rep.T_history)
        run_checks.append(rep.evaluate())

    ops_areas = mesh.areas
    n = len(rows)
    pair = np.full((n, n), np.nan)
    for a in range(n):
        for b in range(n):
            if histories[a] is None or histories[b] is None:
                continue
            diffs = [
                np.sqrt(np.sum(ops_areas * inner(Ta - Tb, Ta - Tb)))
                for Ta, Tb in zip(histories[a], histories[b])
            ]
            pair[a, b] = float(max(diffs))
    return SweepTable(rows, pair, run_checks)

