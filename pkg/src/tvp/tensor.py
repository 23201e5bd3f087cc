"""Symmetric 3x3 tensors stored in six-component form, plus isotropic elasticity.

A symmetric tensor is an array whose last axis has length 6, ordered
``(xx, yy, zz, xy, yz, xz)``. Leading axes are batch axes (one tensor per
element, per time sample, ...). Off-diagonal entries are stored once, so the
Frobenius product weights them twice; ``inner`` and ``norm`` therefore agree
with the full 3x3 matrix quantities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SymTensor3 = np.ndarray
"""Alias for arrays of shape ``(..., 6)`` holding symmetric 3x3 tensors."""

WEIGHTS = np.array([1.0, 1.0, 1.0, 2.0, 2.0, 2.0])
_DIAG = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])

# (row, col) of each stored component in the full matrix
_INDEX = ((0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (0, 2))


def identity(shape: tuple[int, ...] = ()) -> SymTensor3:
    return np.broadcast_to(_DIAG, shape + (6,)).copy()


def zeros(shape: tuple[int, ...] = ()) -> SymTensor3:
    return np.zeros(shape + (6,))


def diag(a: float, b: float, c: float) -> SymTensor3:
    return np.array([a, b, c, 0.0, 0.0, 0.0])


def from_matrix(m) -> SymTensor3:
    """Symmetric part of ``m`` (shape ``(..., 3, 3)``) in six-component form."""
    m = np.asarray(m, dtype=float)
    s = 0.5 * (m + np.swapaxes(m, -1, -2))
    return np.stack([s[..., i, j] for i, j in _INDEX], axis=-1)


def to_matrix(a: SymTensor3) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    m = np.empty(a.shape[:-1] + (3, 3))
    for k, (i, j) in enumerate(_INDEX):
        m[..., i, j] = a[..., k]
        m[..., j, i] = a[..., k]
    return m


def trace(a: SymTensor3) -> np.ndarray:
    return a[..., 0] + a[..., 1] + a[..., 2]


def dev(a: SymTensor3) -> SymTensor3:
    """Deviatoric part ``a - tr(a)/3 * I``."""
    a = np.asarray(a, dtype=float)
    out = a.copy()
    mean = trace(a) / 3.0
    out[..., :3] -= mean[..., None]
    return out


def inner(a: SymTensor3, b: SymTensor3) -> np.ndarray:
    """Frobenius product of the full matrices, batched over leading axes."""
    return np.einsum("...k,k,...k->...", a, WEIGHTS, b)


def norm(a: SymTensor3) -> np.ndarray:
    return np.sqrt(inner(a, a))


@dataclass(frozen=True)
class ElasticityTensor:
    """Isotropic elasticity ``C A = lame_lambda tr(A) I + 2 lame_mu A``.

    Parameters
    ----------
    lame_lambda, lame_mu : float
        Lame constants. ``lame_mu > 0`` and ``3 lame_lambda + 2 lame_mu > 0``
        make ``C`` positive definite on symmetric matrices.
    """

    lame_lambda: float
    lame_mu: float

    def __post_init__(self):
        if not self.lame_mu > 0.0:
            raise ValueError(f"lame_mu must be positive, got {self.lame_mu}")
        if not 3.0 * self.lame_lambda + 2.0 * self.lame_mu > 0.0:
            raise ValueError(
                "3*lame_lambda + 2*lame_mu must be positive, got "
                f"{3.0 * self.lame_lambda + 2.0 * self.lame_mu}"
            )

    @property
    def bulk(self) -> float:
        """Bulk modulus ``lame_lambda + 2 lame_mu / 3``; ``C I = 3 bulk I``."""
        return self.lame_lambda + 2.0 * self.lame_mu / 3.0

    def apply(self, a: SymTensor3) -> SymTensor3:
        a = np.asarray(a, dtype=float)
        out = 2.0 * self.lame_mu * a
        out[..., :3] += (self.lame_lambda * trace(a))[..., None]
        return out

    def apply_inv(self, s: SymTensor3) -> SymTensor3:
        # deviator scales by 1/(2 mu), spherical part by 1/(3 lambda + 2 mu)
        s = np.asarray(s, dtype=float)
        out = dev(s) / (2.0 * self.lame_mu)
        out[..., :3] += (trace(s) / (9.0 * self.bulk))[..., None]
        return out

    def quadratic_form(self) -> np.ndarray:
        """6x6 matrix ``Q`` with ``inner(C A, B) = A @ Q @ B`` in stored components."""
        return self.lame_lambda * np.outer(_DIAG, _DIAG) + 2.0 * self.lame_mu * np.diag(WEIGHTS)


def apply_C(C: ElasticityTensor, a: SymTensor3) -> SymTensor3:
    return C.apply(a)


def apply_C_inv(C: ElasticityTensor, s: SymTensor3) -> SymTensor3:
    return C.apply_inv(s)
