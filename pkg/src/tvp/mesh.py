"""Structured P1 triangulation of a rectangle and the finite-element operators.

Plane strain: displacements are 2-vectors at the nodes, strains are embedded
in 3x3 tensors with ``e_zz = e_xz = e_yz = 0`` and stresses keep all six
components. Element quantities (strain, inelastic strain, stress) are one
value per triangle, and every element integral uses the one-point centroid
rule, which is exact for the P1 products assembled here.

Displacement degrees of freedom are interleaved: ``dof = 2 * node + comp``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from tvp.tensor import WEIGHTS, ElasticityTensor, SymTensor3


class MeshError(ValueError):
    pass


class Mesh2D:
    """Rectangle ``[0, lx] x [0, ly]`` split into ``nx * ny`` cells of two triangles.

    Attributes
    ----------
    nodes : (n_nodes, 2) array
    triangles : (n_elems, 3) int array, counter-clockwise
    areas : (n_elems,) array
    boundary_edges : (n_edges, 2) int array, traversed counter-clockwise
    edge_normals : (n_edges, 2) outward unit normals
    edge_lengths : (n_edges,) array
    boundary_nodes : sorted int array of nodes on the boundary
    """

    def __init__(self, nx: int, ny: int, lx: float = 1.0, ly: float = 1.0):
        if nx < 1 or ny < 1:
            raise MeshError("nx and ny must be at least 1")
        if not (lx > 0.0 and ly > 0.0):
            raise MeshError("lx and ly must be positive")
        self.nx, self.ny = int(nx), int(ny)
        self.lx, self.ly = float(lx), float(ly)

        xs = np.linspace(0.0, self.lx, self.nx + 1)
        ys = np.linspace(0.0, self.ly, self.ny + 1)
        X, Y = np.meshgrid(xs, ys)
        self.nodes = np.column_stack([X.ravel(), Y.ravel()])

        def nid(i, j):
            return j * (self.nx + 1) + i

        tris = []
        for j in range(self.ny):
            for i in range(self.nx):
                n0, n1, n2, n3 = nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)
                tris.append((n0, n1, n2))
                tris.append((n0, n2, n3))
        self.triangles = np.array(tris, dtype=np.int64)

        edges, normals = [], []
        for i in range(self.nx):
            edges.append((nid(i, 0), nid(i + 1, 0)))
            normals.append((0.0, -1.0))
        for j in range(self.ny):
            edges.append((nid(self.nx, j), nid(self.nx, j + 1)))
            normals.append((1.0, 0.0))
        for i in range(self.nx, 0, -1):
            edges.append((nid(i, self.ny), nid(i - 1, self.ny)))
            normals.append((0.0, 1.0))
        for j in range(self.ny, 0, -1):
            edges.append((nid(0, j), nid(0, j - 1)))
            normals.append((-1.0, 0.0))
        self.boundary_edges = np.array(edges, dtype=np.int64)
        self.edge_normals = np.array(normals)
        seg = self.nodes[self.boundary_edges[:, 1]] - self.nodes[self.boundary_edges[:, 0]]
        self.edge_lengths = np.hypot(seg[:, 0], seg[:, 1])
        self.boundary_nodes = np.unique(self.boundary_edges)

        p = self.nodes[self.triangles]
        twice_area = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (
            p[:, 2, 0] - p[:, 0, 0]
        ) * (p[:, 1, 1] - p[:, 0, 1])
        if np.any(twice_area <= 0.0):
            raise MeshError("degenerate or inverted triangle")
        self.areas = 0.5 * twice_area
        # gradients of the three barycentric shape functions: d/dx = b, d/dy = c
        self.grad_b = np.empty((self.n_elems, 3))
        self.grad_c = np.empty((self.n_elems, 3))
        for a in range(3):
            j, k = (a + 1) % 3, (a + 2) % 3
            self.grad_b[:, a] = (p[:, j, 1] - p[:, k, 1]) / twice_area
            self.grad_c[:, a] = (p[:, k, 0] - p[:, j, 0]) / twice_area

        for arr in (self.nodes, self.triangles, self.boundary_edges, self.edge_normals,
                    self.edge_lengths, self.boundary_nodes, self.areas, self.grad_b, self.grad_c):
            arr.flags.writeable = False

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elems(self) -> int:
        return self.triangles.shape[0]

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    @property
    def measure(self) -> float:
        return self.lx * self.ly

    @cached_property
    def boundary_dofs(self) -> np.ndarray:
        return np.sort(np.concatenate([2 * self.boundary_nodes, 2 * self.boundary_nodes + 1]))

    @cached_property
    def strain_operator(self) -> sp.csr_matrix:
        """Sparse map from nodal displacements to stacked element strains.

        Shape ``(6 * n_elems, n_dofs)``; row ``6 e + k`` is stored component
        ``k`` of the strain on element ``e``.
        """
        rows, cols, vals = [], [], []
        e = np.arange(self.n_elems)
        for a in range(3):
            n = self.triangles[:, a]
            b, c = self.grad_b[:, a], self.grad_c[:, a]
            rows += [6 * e, 6 * e + 1, 6 * e + 3, 6 * e + 3]
            cols += [2 * n, 2 * n + 1, 2 * n, 2 * n + 1]
            vals += [b, c, 0.5 * c, 0.5 * b]
        S = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(6 * self.n_elems, self.n_dofs),
        )
        return S.tocsr()

    def centroid_values(self, nodal: np.ndarray) -> np.ndarray:
        """Element averages of a nodal P1 field (its value at the centroid)."""
        return np.asarray(nodal)[self.triangles].mean(axis=1)

    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)


def strain_of(mesh: Mesh2D, u: np.ndarray) -> SymTensor3:
    """Element strains ``sym(grad u)`` of nodal displacements ``u`` (shape ``(n_nodes, 2)``)."""
    flat = np.asarray(u, dtype=float).reshape(-1)
    return (mesh.strain_operator @ flat).reshape(mesh.n_elems, 6)


def divergence_of(mesh: Mesh2D, u: np.ndarray) -> np.ndarray:
    eps = strain_of(mesh, u)
    return eps[:, 0] + eps[:, 1] + eps[:, 2]


def tensor_load(mesh: Mesh2D, X: SymTensor3) -> np.ndarray:
    """Nodal vector of ``v -> int X : eps(v) dx`` for element-constant ``X``.

    Returned with shape ``(n_dofs,)``.
    """
    X = np.asarray(X, dtype=float)
    weighted = (mesh.areas[:, None] * WEIGHTS[None, :] * X).reshape(-1)
    return mesh.strain_operator.T @ weighted


def element_load(mesh: Mesh2D, s: np.ndarray) -> np.ndarray:
    """Nodal vector of ``v -> int s v dx`` for element-constant scalar ``s``."""
    out = np.zeros(mesh.n_nodes)
    share = np.asarray(s, dtype=float) * mesh.areas / 3.0
    for a in range(3):
        np.add.at(out, mesh.triangles[:, a], share)
    return out


def body_load(mesh: Mesh2D, F: np.ndarray) -> np.ndarray:
    """Nodal vector of ``v -> int F . v dx``, ``F`` nodal, centroid rule."""
    Fc = mesh.centroid_values(np.asarray(F, dtype=float))
    out = np.zeros((mesh.n_nodes, 2))
    share = Fc * (mesh.areas / 3.0)[:, None]
    for a in range(3):
        np.add.at(out, mesh.triangles[:, a], share)
    return out.reshape(-1)


def assemble_elasticity(mesh: Mesh2D, C: ElasticityTensor) -> sp.csr_matrix:
    """Stiffness ``K[u, v] = int C eps(u) : eps(v) dx`` (no boundary conditions)."""
    S = mesh.strain_operator
    D = sp.kron(sp.diags(mesh.areas), sp.csr_matrix(C.quadratic_form()), format="csr")
    K = (S.T @ D @ S).tocsr()
    # symmetrize away the round-off of the triple product
    return ((K + K.T) * 0.5).tocsr()


def assemble_heat(mesh: Mesh2D) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """P1 mass and Laplacian stiffness matrices (homogeneous Neumann)."""
    tri = mesh.triangles
    local_mass = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    rows = np.repeat(tri, 3, axis=1).reshape(-1)
    cols = np.tile(tri, (1, 3)).reshape(-1)
    m_vals = (mesh.areas[:, None, None] * local_mass[None]).reshape(-1)
    gb, gc = mesh.grad_b, mesh.grad_c
    a_vals = (
        mesh.areas[:, None, None] * (gb[:, :, None] * gb[:, None, :] + gc[:, :, None] * gc[:, None, :])
    ).reshape(-1)
    n = mesh.n_nodes
    M = sp.coo_matrix((m_vals, (rows, cols)), shape=(n, n)).tocsr()
    A = sp.coo_matrix((a_vals, (rows, cols)), shape=(n, n)).tocsr()
    return M, A


def boundary_loads(mesh: Mesh2D, g_values: np.ndarray) -> np.ndarray:
    """Nodal vector of ``v -> int_{boundary} g v dS`` by the edge trapezoid rule.

    ``g_values`` holds one value per node (only boundary entries are read).
    """
    g = np.asarray(g_values, dtype=float)
    out = np.zeros(mesh.n_nodes)
    e0, e1 = mesh.boundary_edges[:, 0], mesh.boundary_edges[:, 1]
    half = 0.5 * mesh.edge_lengths
    np.add.at(out, e0, half * g[e0])
    np.add.at(out, e1, half * g[e1])
    return out


def boundary_flux(mesh: Mesh2D, u: np.ndarray) -> float:
    """``int_{boundary} u . n dS`` for a nodal P1 vector field (exact)."""
    u = np.asarray(u, dtype=float)
    mid = 0.5 * (u[mesh.boundary_edges[:, 0]] + u[mesh.boundary_edges[:, 1]])
    return float(np.sum(mesh.edge_lengths * np.einsum("ij,ij->i", mid, mesh.edge_normals)))


def apply_dirichlet(K: sp.spmatrix, rhs: np.ndarray, fixed: np.ndarray, values: np.ndarray):
    """Eliminate prescribed dofs, lifting their values into the right-hand side.

    Returns ``(K_ff, rhs_f, free)`` where the reduced system ``K_ff x = rhs_f``
    determines the free dofs ``free``.
    """
    K = sp.csr_matrix(K)
    n = K.shape[0]
    mask = np.ones(n, dtype=bool)
    mask[fixed] = False
    free = np.flatnonzero(mask)
    K_ff = K[free][:, free]
    K_fc = K[free][:, fixed]
    rhs_f = np.asarray(rhs, dtype=float)[free] - K_fc @ np.asarray(values, dtype=float)
    return K_ff.tocsc(), rhs_f, free


class DirichletSolver:
    """Cached factorization of ``K`` restricted to the free dofs.

    Parameters
    ----------
    K : sparse matrix
        Full symmetric positive semidefinite operator.
    fixed : int array
        Dofs carrying prescribed values.
    """

    def __init__(self, K: sp.spmatrix, fixed: np.ndarray):
        self.K = sp.csr_matrix(K)
        self.fixed = np.asarray(fixed, dtype=np.int64)
        n = self.K.shape[0]
        mask = np.ones(n, dtype=bool)
        mask[self.fixed] = False
        self.free = np.flatnonzero(mask)
        self._K_fc = self.K[self.free][:, self.fixed]
        self.K_ff = self.K[self.free][:, self.free].tocsc()
        self._lu = splu(self.K_ff) if self.free.size else None

    def solve(self, rhs: np.ndarray, values: np.ndarray) -> np.ndarray:
        x = np.empty(self.K.shape[0])
        x[self.fixed] = values
        if self._lu is not None:
            b = np.asarray(rhs, dtype=float)[self.free] - self._K_fc @ np.asarray(values, dtype=float)
            x[self.free] = self._lu.solve(b)
            if not np.all(np.isfinite(x)):
                raise np.linalg.LinAlgError("Dirichlet-constrained solve produced non-finite values")
        return x

    def residual(self, x: np.ndarray, rhs: np.ndarray) -> float:
        """Relative residual of the reduced equations at ``x``."""
        x = np.asarray(x, dtype=float)
        rhs_f = np.asarray(rhs, dtype=float)[self.free]
        a = self.K_ff @ x[self.free]
        b = self._K_fc @ x[self.fixed]
        # scale by the terms that cancel; each may vanish on its own
        scale = max(np.linalg.norm(rhs_f) + np.linalg.norm(a) + np.linalg.norm(b), 1e-300)
        return float(np.linalg.norm(a + b - rhs_f) / scale)


@dataclass(frozen=True)
class Operators:
    """Assembled, state-independent operators of one mesh and elasticity tensor."""

    mesh: Mesh2D
    C: ElasticityTensor
    K: sp.csr_matrix
    M: sp.csr_matrix
    A: sp.csr_matrix

    @classmethod
    def build(cls, mesh: Mesh2D, C: ElasticityTensor) -> "Operators":
        M, A = assemble_heat(mesh)
        return cls(mesh, C, assemble_elasticity(mesh, C), M, A)

    @cached_property
    def total_mass(self) -> np.ndarray:
        """Row sums of ``M``: ``int phi_i dx``."""
        return np.asarray(self.M.sum(axis=1)).ravel()

    def l2_norm_nodal(self, theta: np.ndarray) -> float:
        return float(np.sqrt(max(theta @ (self.M @ theta), 0.0)))

    def h1_norm_nodal(self, theta: np.ndarray) -> float:
        return float(np.sqrt(max(theta @ (self.M @ theta) + theta @ (self.A @ theta), 0.0)))

    def l2_norm_elem(self, X: np.ndarray) -> float:
        """L2 norm of an element-constant tensor (..., 6) or scalar field."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 2:
            sq = np.einsum("ek,k,ek->e", X, WEIGHTS, X)
        else:
            sq = X * X
        return float(np.sqrt(np.sum(self.mesh.areas * sq)))
