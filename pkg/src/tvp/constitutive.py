"""Norton-Hoff flow rule, truncation, thermal coupling and Moreau-Yosida tools.

The flow rule ``G(z) = |z|^(p-1) z`` is the gradient of the radial convex
potential ``M(z) = |z|^(p+1) / (p+1)``. Because ``M`` is radial, its resolvent
``J = (I + lam G)^-1`` maps ``z`` to ``s * z/|z|`` where ``s`` solves the scalar
equation ``s + lam s^p = |z|``. Every quantity here is evaluated through that
scalar root, batched over the leading axes of the tensor arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tvp.tensor import ElasticityTensor, SymTensor3, norm

COUPLING_KINDS = ("zero", "linear", "saturating")

_NEWTON_MAXITER = 100
_NEWTON_RTOL = 8.0 * np.finfo(float).eps


class ResolventError(RuntimeError):
    """Scalar root-finder failed to converge."""


@dataclass(frozen=True)
class ThermalCoupling:
    """Thermal stress function ``f``; the stress carries ``-f(theta) I``.

    ``zero``: ``f = 0``; ``linear``: ``f = alpha theta``;
    ``saturating``: ``f = alpha theta / (1 + |theta / beta|)``.
    """

    kind: str = "zero"
    alpha: float = 0.0
    beta: float = 1.0

    def __post_init__(self):
        if self.kind not in COUPLING_KINDS:
            raise ValueError(f"unknown coupling kind {self.kind!r}; expected one of {COUPLING_KINDS}")
        if self.kind == "saturating" and not self.beta > 0.0:
            raise ValueError("saturating coupling needs beta > 0")

    def f(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(theta)
        if self.kind == "linear":
            return self.alpha * theta
        return self.alpha * theta / (1.0 + np.abs(theta / self.beta))

    def f_prime(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(theta)
        if self.kind == "linear":
            return np.full_like(theta, self.alpha)
        return self.alpha / (1.0 + np.abs(theta / self.beta)) ** 2


@dataclass(frozen=True)
class MaterialParams:
    """Constitutive data of one simulation.

    ``yosida_lambda = 0`` selects the exact flow rule; only the point oracle
    accepts it, the field solver needs a positive value.
    """

    p: float
    eps_trunc: float
    yosida_lambda: float
    elasticity: ElasticityTensor
    coupling: ThermalCoupling = ThermalCoupling()

    def __post_init__(self):
        if not self.p > 1.0:
            raise ValueError(f"p must exceed 1, got {self.p}")
        if not self.eps_trunc > 0.0:
            raise ValueError(f"eps_trunc must be positive, got {self.eps_trunc}")
        if not self.yosida_lambda >= 0.0:
            raise ValueError(f"yosida_lambda must be non-negative, got {self.yosida_lambda}")

    @property
    def height(self) -> float:
        return 1.0 / self.eps_trunc

    def f(self, theta):
        """``f(T(theta))``: coupling evaluated at the truncated temperature."""
        return self.coupling.f(truncate(theta, self.eps_trunc))


def flow_rule(tdev: SymTensor3, p: float) -> SymTensor3:
    """``|tdev|^(p-1) tdev`` for traceless ``tdev``; zero maps to zero."""
    tdev = np.asarray(tdev, dtype=float)
    r = norm(tdev)
    return (r ** (p - 1.0))[..., None] * tdev


def potential(w: SymTensor3, p: float):
    """``|w|^(p+1) / (p+1)``, whose gradient is ``flow_rule``."""
    return norm(w) ** (p + 1.0) / (p + 1.0)


def truncate(r, eps_trunc: float):
    h = 1.0 / eps_trunc
    return np.clip(r, -h, h)


def truncate_deriv(r, eps_trunc: float):
    """1 strictly inside ``(-1/eps, 1/eps)``, 0 on or beyond the corners."""
    h = 1.0 / eps_trunc
    return np.where(np.abs(r) < h, 1.0, 0.0)


def _newton(x, lo, hi, residual, slope):
    """Safeguarded Newton on a bracket; falls back to bisection off-bracket."""
    for _ in range(_NEWTON_MAXITER):
        g = residual(x)
        hi = np.where(g > 0.0, x, hi)
        lo = np.where(g <= 0.0, x, lo)
        step = g / slope(x)
        x_new = x - step
        outside = (x_new < lo) | (x_new > hi)
        x_new = np.where(outside, 0.5 * (lo + hi), x_new)
        done = (np.abs(x_new - x) <= _NEWTON_RTOL * np.abs(x_new)) | (g == 0.0) | (hi - lo <= 0.0)
        x = x_new
        if np.all(done):
            return x
    raise ResolventError("resolvent root did not converge")


def radial_split(r, lam: float, p: float):
    """Solve ``s + d = r`` with ``d = lam s^p`` for ``s, d >= 0``.

    ``s`` is the magnitude of the resolvent and ``d / lam`` the magnitude of
    the Yosida gradient. Whichever of the two is the small one is found by
    Newton iteration directly, so neither is obtained by cancellation.
    """
    r = np.asarray(r, dtype=float)
    s = r.copy()
    d = np.zeros_like(r)
    if lam == 0.0:
        return s, d
    pos = r > 0.0
    stiff = pos & (lam * np.where(pos, r, 0.0) ** (p - 1.0) > 1.0)
    soft = pos & ~stiff

    if np.any(stiff):
        rs = r[stiff]
        # g(s) = s + lam s^p - r is convex increasing: Newton from the right is monotone
        s0 = np.minimum(rs, (rs / lam) ** (1.0 / p))
        ss = _newton(
            s0,
            np.zeros_like(rs),
            rs.copy(),
            lambda x: x + lam * x**p - rs,
            lambda x: 1.0 + lam * p * x ** (p - 1.0),
        )
        s[stiff] = ss
        d[stiff] = rs - ss
    if np.any(soft):
        rs = r[soft]
        # h(d) = d - lam (r - d)^p is concave increasing: Newton from d = 0 is monotone
        dd = _newton(
            np.zeros_like(rs),
            np.zeros_like(rs),
            rs.copy(),
            lambda x: x - lam * (rs - x) ** p,
            lambda x: 1.0 + lam * p * (rs - x) ** (p - 1.0),
        )
        d[soft] = dd
        s[soft] = rs - dd
    return s, d


def _direction(z):
    r = norm(z)
    safe = np.where(r > 0.0, r, 1.0)
    return r, z / safe[..., None]


def resolvent(z: SymTensor3, lam: float, p: float) -> SymTensor3:
    """``J_lam(z) = (I + lam G)^-1 z``; the identity when ``lam == 0``."""
    if lam < 0.0:
        raise ValueError("lambda must be non-negative")
    z = np.asarray(z, dtype=float)
    if lam == 0.0:
        return z.copy()
    r, zhat = _direction(z)
    s, _ = radial_split(r, lam, p)
    return s[..., None] * zhat


def yosida_grad(z: SymTensor3, lam: float, p: float) -> SymTensor3:
    """Yosida approximation ``(z - J_lam z) / lam`` of the flow rule.

    Globally ``1/lam``-Lipschitz and monotone.
    """
    if not lam > 0.0:
        raise ValueError("yosida_grad needs lambda > 0; use flow_rule for the exact rule")
    z = np.asarray(z, dtype=float)
    r, zhat = _direction(z)
    _, d = radial_split(r, lam, p)
    return (d / lam)[..., None] * zhat


def moreau_env(z: SymTensor3, lam: float, p: float):
    """Moreau envelope ``min_w |z - w|^2 / (2 lam) + M(w)``, attained at ``J_lam z``."""
    if not lam > 0.0:
        raise ValueError("moreau_env needs lambda > 0")
    r = norm(np.asarray(z, dtype=float))
    s, d = radial_split(r, lam, p)
    return d * d / (2.0 * lam) + s ** (p + 1.0) / (p + 1.0)


def f_eval(theta, coupling: ThermalCoupling):
    return coupling.f(theta)


def f_prime(theta, coupling: ThermalCoupling):
    return coupling.f_prime(theta)
