"""Scenario files: flat ``section.key = value`` text, data presets, validation.

Every data field (boundary displacement ``g_D``, boundary heat flux
``g_theta``, body force ``F``, initial displacement ``u0``, initial
temperature ``theta0``) is a preset of the form ``profile(t) * (A x + b)``:

=========  ======================  ==========================
kind       profile(t)              spatial part
=========  ======================  ==========================
zero       0                       -
constant   1                       ``b`` (``value``/``offset``)
affine     1                       ``A x + b``
ramp       ``rate * t``            ``A x + b``
sinusoid   ``sin(omega * t)``      ``A x + b``
=========  ======================  ==========================

For vector fields ``A`` is ``matrix = a11 a12 a21 a22``; for scalar fields it
is ``gradient = gx gy``. The initial inelastic strain is ``zero`` or a
``constant`` traceless tensor given by six components ``xx yy zz xy yz xz``.
The full key list is in ``docs/scenario_format.md``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from tvp.constitutive import COUPLING_KINDS, MaterialParams, ThermalCoupling, flow_rule
from tvp.mesh import Mesh2D, strain_of
from tvp.stepper import SolverParams
from tvp.tensor import ElasticityTensor, dev, trace

PRESET_KINDS = ("zero", "constant", "affine", "ramp", "sinusoid")
TIME_CONSTANT_KINDS = ("zero", "constant", "affine")


class ScenarioError(ValueError):
    """Base class of scenario loading failures."""


class ScenarioParseError(ScenarioError):
    pass


class UnknownPresetError(ScenarioError):
    pass


class ScenarioValidationError(ScenarioError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class FieldPreset:
    """Separable data field ``profile(t) * (matrix @ x + offset)``."""

    kind: str = "zero"
    dim: int = 1
    matrix: tuple = ()
    offset: tuple = ()
    rate: float = 1.0
    omega: float = 1.0

    def __post_init__(self):
        if self.kind not in PRESET_KINDS:
            raise UnknownPresetError(f"unknown preset {self.kind!r}")
        if not self.matrix:
            object.__setattr__(self, "matrix", (0.0,) * (2 * self.dim))
        if not self.offset:
            object.__setattr__(self, "offset", (0.0,) * self.dim)

    @property
    def time_constant(self) -> bool:
        return self.kind in TIME_CONSTANT_KINDS

    @property
    def vanishes(self) -> bool:
        return self.kind == "zero" or (not any(self.matrix) and not any(self.offset))

    def profile(self, t: float) -> float:
        if self.kind == "zero":
            return 0.0
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

    def spatial(self, points: np.ndarray) -> np.ndarray:
        A = np.asarray(self.matrix, dtype=float).reshape(self.dim, 2)
        b = np.asarray(self.offset, dtype=float)
        if self.kind == "constant":
            A = np.zeros_like(A)
        out = np.asarray(points, dtype=float) @ A.T + b
        return out[:, 0] if self.dim == 1 else out

    def at(self, points: np.ndarray, t: float) -> np.ndarray:
        return self.profile(t) * self.spatial(points)

    def rate_at(self, points: np.ndarray, t: float) -> np.ndarray:
        return self.profile_dt(t) * self.spatial(points)

    def gradient(self) -> np.ndarray:
        """Spatial Jacobian of the spatial part, shape ``(dim, 2)``."""
        if self.kind in ("zero", "constant"):
            return np.zeros((self.dim, 2))
        return np.asarray(self.matrix, dtype=float).reshape(self.dim, 2)


@dataclass(frozen=True)
class MeshSpec:
    nx: int = 8
    ny: int = 8
    lx: float = 1.0
    ly: float = 1.0

    def build(self) -> Mesh2D:
        return Mesh2D(self.nx, self.ny, self.lx, self.ly)


@dataclass(frozen=True)
class Scenario:
    """Everything one simulation needs; immutable and shareable."""

    name: str
    mesh: MeshSpec
    t_final: float
    material: MaterialParams
    solver: SolverParams
    g_D: FieldPreset = field(default_factory=lambda: FieldPreset("zero", 2))
    g_theta: FieldPreset = field(default_factory=lambda: FieldPreset("zero", 1))
    F: FieldPreset = field(default_factory=lambda: FieldPreset("zero", 2))
    u0: FieldPreset = field(default_factory=lambda: FieldPreset("zero", 2))
    u0_bubble: float = 0.0
    eps_p0: tuple = (0.0,) * 6
    theta0: FieldPreset = field(default_factory=lambda: FieldPreset("zero", 1))
    check_lambdas: tuple = ()

    @property
    def dt(self) -> float:
        return self.solver.dt

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.solver.dt))

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.solver.dt

    def build_mesh(self) -> Mesh2D:
        return self.mesh.build()

    def with_lambda(self, lam: float) -> "Scenario":
        return replace(self, material=replace(self.material, yosida_lambda=float(lam)))

    def with_dt(self, dt: float) -> "Scenario":
        return replace(self, solver=replace(self.solver, dt=float(dt)))

    @property
    def closed(self) -> bool:
        """No external power: ``F = 0``, ``g_D`` constant in time, ``g_theta = 0``, ``f = 0``."""
        return (
            self.F.vanishes
            and self.g_D.time_constant
            and self.g_theta.vanishes
            and (self.material.coupling.kind == "zero" or self.material.coupling.alpha == 0.0)
        )

    # nodal / element initial data
    def initial_displacement(self, mesh: Mesh2D) -> np.ndarray:
        u = self.u0.at(mesh.nodes, 0.0)
        if self.u0_bubble:
            x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
            bump = self.u0_bubble * np.sin(np.pi * x / mesh.lx) * np.sin(np.pi * y / mesh.ly)
            u = u + bump[:, None]
        return u

    def initial_temperature(self, mesh: Mesh2D) -> np.ndarray:
        return self.theta0.at(mesh.nodes, 0.0)

    def initial_inelastic_strain(self, mesh: Mesh2D) -> np.ndarray:
        return np.tile(np.asarray(self.eps_p0, dtype=float), (mesh.n_elems, 1))

    def validate(self) -> None:
        """Cross-field checks that need the mesh; raises ``ScenarioValidationError``."""
        problems = []
        mesh = self.build_mesh()
        u0 = self.initial_displacement(mesh)
        bnd = mesh.boundary_nodes
        gap = np.max(np.abs(u0[bnd] - self.g_D.at(mesh.nodes[bnd], 0.0)), initial=0.0)
        if gap > 1e-12 * (1.0 + np.max(np.abs(u0), initial=0.0)):
            problems.append(f"initial.u0 does not match boundary.g_D at t=0 on the boundary (gap {gap:.3e})")
        T0 = self.material.elasticity.apply(strain_of(mesh, u0) - self.initial_inelastic_strain(mesh))
        if not np.all(np.isfinite(flow_rule(dev(T0), self.material.p))):
            problems.append("initial data inadmissible: flow rule of the initial stress deviator is not finite")
        if problems:
            raise ScenarioValidationError(problems)


# ----------------------------------------------------------------------------
# parsing

_KEY_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)+$")

_SCALAR_KEYS = {
    "mesh.nx", "mesh.ny", "mesh.lx", "mesh.ly",
    "time.t_final", "time.dt",
    "material.p", "material.eps_trunc", "material.yosida_lambda",
    "material.lame_lambda", "material.lame_mu", "material.coupling",
    "material.alpha", "material.beta",
    "solver.picard_tol", "solver.picard_max", "solver.substeps",
    "initial.u0.bubble", "initial.eps_p0", "initial.eps_p0.value",
    "check.lambdas",
}
_PRESET_FIELDS = {
    "boundary.g_D": 2,
    "boundary.g_theta": 1,
    "body.F": 2,
    "initial.u0": 2,
    "initial.theta0": 1,
}
_PRESET_PARAMS = ("matrix", "gradient", "offset", "value", "rate", "omega")


def parse_flat(text: str) -> dict[str, str]:
    """Parse ``section.key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioParseError(f"line {lineno}: expected 'section.key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not _KEY_RE.match(key):
            raise ScenarioParseError(f"line {lineno}: malformed key {key!r}")
        if key in out:
            raise ScenarioParseError(f"line {lineno}: duplicate key {key!r}")
        if not value:
            raise ScenarioParseError(f"line {lineno}: empty value for {key!r}")
        out[key] = value
    return out


class _Reader:
    """Typed access to the flat key map, collecting problems by field path."""

    def __init__(self, raw: dict[str, str]):
        self.raw = raw
        self.used: set[str] = set()
        self.problems: list[str] = []

    def get(self, key, conv, default=None):
        if key not in self.raw:
            return default
        self.used.add(key)
        try:
            return conv(self.raw[key])
        except ValueError:
            self.problems.append(f"{key}: cannot read {self.raw[key]!r}")
            return default

    def require(self, key, conv):
        if key not in self.raw:
            self.problems.append(f"{key} is required")
            return None
        return self.get(key, conv)


def _floats(text: str) -> tuple:
    parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
    return tuple(float(p) for p in parts)


def _int(text: str) -> int:
    v = float(text)
    if v != int(v):
        raise ValueError(text)
    return int(v)


def _preset(rd: _Reader, base: str, dim: int) -> FieldPreset:
    kind = rd.get(base, str, "zero")
    if kind not in PRESET_KINDS:
        raise UnknownPresetError(f"{base}: unknown preset {kind!r}; expected one of {PRESET_KINDS}")
    matrix = rd.get(f"{base}.matrix", _floats) or rd.get(f"{base}.gradient", _floats) or ()
    offset = rd.get(f"{base}.offset", _floats) or rd.get(f"{base}.value", _floats) or ()
    if matrix and len(matrix) != 2 * dim:
        rd.problems.append(f"{base}.matrix needs {2 * dim} numbers, got {len(matrix)}")
        matrix = ()
    if offset and len(offset) != dim:
        rd.problems.append(f"{base}.offset needs {dim} numbers, got {len(offset)}")
        offset = ()
    return FieldPreset(
        kind=kind,
        dim=dim,
        matrix=matrix,
        offset=offset,
        rate=rd.get(f"{base}.rate", float, 1.0),
        omega=rd.get(f"{base}.omega", float, 1.0),
    )


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    """Build and validate a ``Scenario`` from scenario-file text."""
    raw = parse_flat(text)
    rd = _Reader(raw)
    problems = rd.problems

    unknown = [
        k for k in raw
        if k not in _SCALAR_KEYS
        and k not in _PRESET_FIELDS
        and not any(k == f"{b}.{p}" for b in _PRESET_FIELDS for p in _PRESET_PARAMS)
    ]
    for k in unknown:
        problems.append(f"{k}: unknown key")

    mesh = MeshSpec(
        nx=rd.get("mesh.nx", _int, 8),
        ny=rd.get("mesh.ny", _int, 8),
        lx=rd.get("mesh.lx", float, 1.0),
        ly=rd.get("mesh.ly", float, 1.0),
    )
    if mesh.nx < 1:
        problems.append("mesh.nx must be at least 1")
    if mesh.ny < 1:
        problems.append("mesh.ny must be at least 1")
    if not mesh.lx > 0:
        problems.append("mesh.lx must be positive")
    if not mesh.ly > 0:
        problems.append("mesh.ly must be positive")

    t_final = rd.require("time.t_final", float)
    dt = rd.require("time.dt", float)
    if t_final is not None and not t_final > 0:
        problems.append("time.t_final must be positive")
    if dt is not None and not dt > 0:
        problems.append("time.dt must be positive")
    elif dt is not None and t_final is not None and t_final > 0:
        n = round(t_final / dt)
        if n < 1 or abs(n * dt - t_final) > 1e-9 * t_final:
            problems.append("time.dt must divide time.t_final")

    p = rd.require("material.p", float)
    if p is not None and not p > 1:
        problems.append("material.p must exceed 1")
    eps_trunc = rd.get("material.eps_trunc", float, 1.0)
    if not eps_trunc > 0:
        problems.append("material.eps_trunc must be positive")
    lam = rd.require("material.yosida_lambda", float)
    if lam is not None and not lam > 0:
        problems.append("material.yosida_lambda must be positive")
    lame_lambda = rd.get("material.lame_lambda", float, 1.0)
    lame_mu = rd.get("material.lame_mu", float, 1.0)
    if not lame_mu > 0:
        problems.append("material.lame_mu must be positive")
    elif not 3 * lame_lambda + 2 * lame_mu > 0:
        problems.append("material.lame_lambda: 3*lame_lambda + 2*lame_mu must be positive")
    kind = rd.get("material.coupling", str, "zero")
    if kind not in COUPLING_KINDS:
        raise UnknownPresetError(f"material.coupling: unknown preset {kind!r}; expected one of {COUPLING_KINDS}")
    alpha = rd.get("material.alpha", float, 0.0)
    beta = rd.get("material.beta", float, 1.0)
    if kind == "saturating" and not beta > 0:
        problems.append("material.beta must be positive for saturating coupling")

    tol = rd.get("solver.picard_tol", float, 1e-10)
    pmax = rd.get("solver.picard_max", _int, 50)
    substeps = rd.get("solver.substeps", _int, 1)
    if not 0 < tol < 1:
        problems.append("solver.picard_tol must lie in (0, 1)")
    if pmax < 1:
        problems.append("solver.picard_max must be at least 1")
    if substeps < 1:
        problems.append("solver.substeps must be at least 1")

    presets = {base: _preset(rd, base, dim) for base, dim in _PRESET_FIELDS.items()}

    eps_kind = rd.get("initial.eps_p0", str, "zero")
    if eps_kind not in ("zero", "constant"):
        raise UnknownPresetError(f"initial.eps_p0: unknown preset {eps_kind!r}; expected 'zero' or 'constant'")
    eps_p0 = (0.0,) * 6
    if eps_kind == "constant":
        vals = rd.require("initial.eps_p0.value", _floats)
        if vals is not None:
            if len(vals) != 6:
                problems.append("initial.eps_p0.value needs 6 numbers (xx yy zz xy yz xz)")
            elif abs(trace(np.array(vals))) > 1e-12 * (1 + max(abs(v) for v in vals)):
                problems.append("initial.eps_p0.value must be traceless")
            else:
                eps_p0 = tuple(vals)

    lambdas = rd.get("check.lambdas", _floats, ())
    if any(not v > 0 for v in lambdas):
        problems.append("check.lambdas must be positive")

    if problems:
        raise ScenarioValidationError(problems)

    material = MaterialParams(
        p=p,
        eps_trunc=eps_trunc,
        yosida_lambda=lam,
        elasticity=ElasticityTensor(lame_lambda, lame_mu),
        coupling=ThermalCoupling(kind, alpha, beta),
    )
    scenario = Scenario(
        name=name,
        mesh=mesh,
        t_final=t_final,
        material=material,
        solver=SolverParams(dt=dt, picard_tol=tol, picard_max=pmax, substeps=substeps),
        g_D=presets["boundary.g_D"],
        g_theta=presets["boundary.g_theta"],
        F=presets["body.F"],
        u0=presets["initial.u0"],
        u0_bubble=rd.get("initial.u0.bubble", float, 0.0),
        eps_p0=eps_p0,
        theta0=presets["initial.theta0"],
        check_lambdas=lambdas,
    )
    scenario.validate()
    return scenario


def load_scenario(path) -> Scenario:
    """Load a scenario from a file path or the name of a shipped scenario."""
    path = Path(path)
    if not path.exists() and path.suffix == "" and path.name in shipped_scenarios():
        return load_shipped(path.name)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioParseError(f"cannot read scenario {path}: {exc}") from exc
    return parse_scenario(text, name=path.stem)


def shipped_scenarios() -> list[str]:
    root = resources.files("tvp") / "scenarios"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".scn"))


def load_shipped(name: str) -> Scenario:
    text = (resources.files("tvp") / "scenarios" / f"{name}.scn").read_text()
    return parse_scenario(text, name=name)
