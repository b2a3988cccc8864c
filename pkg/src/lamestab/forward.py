"""P1 finite elements for ``div(C sym(grad u)) = 0`` with Dirichlet data.

Degree of freedom ``3 * v + c`` is component ``c`` of vertex ``v``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InputError, NumericalError
from .geometry import Mesh
from .material import LameParams

TOL_CG = 1e-10


def shape_gradients(mesh: Mesh):
    """Constant barycentric gradients ``(ne, 4, 3)`` and volumes ``(ne,)``."""
    P = mesh.vertices[mesh.tets]
    X = np.concatenate([np.ones((len(P), 4, 1)), P], axis=2)
    inv = np.linalg.inv(X)
    grads = np.transpose(inv[:, 1:, :], (0, 2, 1))
    vol = np.abs(np.linalg.det(X)) / 6.0
    return grads, vol


class ElementCache:
    """Per-element unit stiffness blocks for ``lam`` and ``mu``.

    ``K = sum_e lam_e * Klam_e + mu_e * Kmu_e``, so assembly for new moduli
    is a weighted sum followed by one sparse conversion.
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        g, vol = shape_gradients(mesh)
        self.grads, self.vol = g, vol
        ne = len(g)
        # Klam[a i, b j] = g_ai g_bj ; Kmu[a i, b j] = delta_ij (g_a . g_b) + g_aj g_bi
        Klam = np.einsum("eai,ebj->eaibj", g, g)
        dots = np.einsum("eak,ebk->eab", g, g)
        Kmu = np.einsum("eab,ij->eaibj", dots, np.eye(3)) + np.einsum("eaj,ebi->eaibj", g, g)
        self.Klam = (Klam * vol[:, None, None, None, None]).reshape(ne, 12, 12)
        self.Kmu = (Kmu * vol[:, None, None, None, None]).reshape(ne, 12, 12)
        dofs = (3 * mesh.tets[:, :, None] + np.arange(3)).reshape(ne, 12)
        self.rows = np.repeat(dofs, 12, axis=1).ravel()
        self.cols = np.tile(dofs, (1, 12)).ravel()

    def element_moduli(self, p: LameParams):
        labels = self.mesh.elem_label
        if labels.min() < 0 or labels.max() > p.n:
            raise InputError("LABEL_OUT_OF_RANGE", f"labels span {labels.min()}..{labels.max()}, params cover 0..{p.n}")
        lam = np.asarray(p.lam)[labels]
        mu = np.asarray(p.mu)[labels]
        return lam, mu

    def matrix(self, lam_e, mu_e):
        n = self.mesh.n_dofs
        data = (lam_e[:, None, None] * self.Klam + mu_e[:, None, None] * self.Kmu).ravel()
        K = sp.csr_matrix((data, (self.rows, self.cols)), shape=(n, n))
        K.sum_duplicates()
        # exact symmetry regardless of duplicate summation order
        return ((K + K.T) * 0.5).tocsr()


@dataclass
class StiffnessSystem:
    K: sp.csr_matrix
    mesh: Mesh
    boundary_dofs: np.ndarray
    interior_dofs: np.ndarray
    r0: float = 1.0

    def __post_init__(self):
        self.K_II = self.K[self.interior_dofs][:, self.interior_dofs].tocsr()
        self.K_IB = self.K[self.interior_dofs][:, self.boundary_dofs].tocsr()
        d = self.K_II.diagonal()
        self.precond = np.where(d > 0, 1.0 / np.where(d > 0, d, 1.0), 1.0)

    @staticmethod
    def dof(vertex, component):
        return 3 * vertex + component

    def to_coo_text(self):
        """Coordinate triplets ``i j value`` of K, one per line."""
        C = self.K.tocoo()
        return "".join(f"{i} {j} {v:.17g}\n" for i, j, v in zip(C.row, C.col, C.data))


def dirichlet_split(mesh: Mesh):
    bv = mesh.boundary_vertices()
    bd = (3 * bv[:, None] + np.arange(3)).ravel()
    mask = np.zeros(mesh.n_dofs, dtype=bool)
    mask[bd] = True
    return np.flatnonzero(mask), np.flatnonzero(~mask)


def assemble_stiffness(mesh: Mesh, p: LameParams, r0=1.0, cache: ElementCache | None = None):
    cache = cache or ElementCache(mesh)
    lam, mu = cache.element_moduli(p)
    K = cache.matrix(lam, mu)
    b, i = dirichlet_split(mesh)
    return StiffnessSystem(K, mesh, b, i, r0)


def pcg(A, B, precond, tol=TOL_CG, max_iter=None, restarts=3):
    """Jacobi-preconditioned CG run in lockstep on every column of ``B``.

    Column ``k`` stops once ``|B_k - A X_k| <= tol |B_k|`` (true residual,
    checked after the recurrence converges). Columns are independent: the
    arithmetic for one column does not depend on the others.
    """
    B = np.asarray(B, dtype=float)
    vec = B.ndim == 1
    if vec:
        B = B[:, None]
    n, m = B.shape
    max_iter = max_iter or 10 * n
    X = np.zeros((n, m))
    bnorm = np.linalg.norm(B, axis=0)
    target = tol * bnorm
    M = precond[:, None]
    iters = 0
    for _ in range(restarts + 1):
        R = B - A @ X
        rn = np.linalg.norm(R, axis=0)
        todo = np.flatnonzero(rn > target)
        if todo.size == 0:
            break
        Rr = R[:, todo]
        Z = M * Rr
        P = Z.copy()
        rz = np.einsum("ij,ij->j", Rr, Z)
        act = np.arange(todo.size)
        while act.size and iters < max_iter:
            iters += 1
            cols = todo[act]
            AP = A @ P[:, act]
            alpha = rz[act] / np.einsum("ij,ij->j", P[:, act], AP)
            X[:, cols] += alpha * P[:, act]
            Rr[:, act] -= alpha * AP
            # stop the recurrence a little below target; the true residual is re-checked
            done = np.linalg.norm(Rr[:, act], axis=0) <= 0.1 * target[cols]
            Z = M * Rr[:, act]
            rz_new = np.einsum("ij,ij->j", Rr[:, act], Z)
            beta = rz_new / rz[act]
            P[:, act] = Z + beta * P[:, act]
            rz[act] = rz_new
            act = act[~done]
        if iters >= max_iter:
            break
    R = B - A @ X
    bad = np.linalg.norm(R, axis=0) > target
    if bad.any():
        raise NumericalError("CG_NO_CONVERGENCE",
                             f"{int(bad.sum())} of {m} right-hand sides above tolerance after {iters} iterations",
                             iterations=iters)
    return X[:, 0] if vec else X


def solve_dirichlet(sys: StiffnessSystem, psi, tol=TOL_CG, max_iter=None):
    """Solve with ``u = psi`` on boundary dofs; ``psi`` is full length (or several columns).

    Boundary dofs are eliminated; interior dofs come from PCG on ``K_II``.
    """
    psi = np.asarray(psi, dtype=float)
    vec = psi.ndim == 1
    U = psi.reshape(sys.mesh.n_dofs, -1).copy()
    UB = U[sys.boundary_dofs]
    rhs = -(sys.K_IB @ UB)
    U[sys.interior_dofs] = 0.0
    if sys.interior_dofs.size:
        nz = np.linalg.norm(rhs, axis=0) > 0
        if nz.any():
            U[np.ix_(sys.interior_dofs, np.flatnonzero(nz))] = pcg(sys.K_II, rhs[:, nz], sys.precond, tol, max_iter)
    return U[:, 0] if vec else U


def energy(u, mesh: Mesh, p: LameParams, r0=1.0, cache: ElementCache | None = None):
    """``r0^-2 * integral of C sym(grad u) : sym(grad u)`` by elementwise exact quadrature."""
    cache = cache or ElementCache(mesh)
    lam, mu = cache.element_moduli(p)
    E = strains(u, mesh, cache.grads)
    tr = np.trace(E, axis1=-2, axis2=-1)
    dens = lam * tr ** 2 + 2.0 * mu * np.einsum("eij,eij->e", E, E)
    return float(np.sum(dens * cache.vol)) / r0 ** 2


def strains(U, mesh: Mesh, grads):
    """Elementwise ``sym(grad u)``: ``(ne, 3, 3)`` for one field, ``(ne, m, 3, 3)`` for m columns."""
    U = np.asarray(U, dtype=float)
    single = U.ndim == 1
    U3 = U.reshape(mesh.n_vertices, 3, -1)
    Ue = U3[mesh.tets]                                 # (ne, 4, 3, m)
    G = np.einsum("eaim,eaj->emij", Ue, grads)
    E = 0.5 * (G + np.swapaxes(G, -1, -2))
    return E[:, 0] if single else E


def rigid_motions(vertices):
    """The six rigid displacements (3 translations, 3 rotations) as ``(ndof, 6)``."""
    n = len(vertices)
    R = np.zeros((n, 3, 6))
    for c in range(3):
        R[:, c, c] = 1.0
    x, y, z = vertices.T
    R[:, 0, 3], R[:, 1, 3] = -y, x
    R[:, 1, 4], R[:, 2, 4] = -z, y
    R[:, 0, 5], R[:, 2, 5] = z, -x
    return R.reshape(3 * n, 6)


def affine_field(vertices, M, offset=(0.0, 0.0, 0.0)):
    return (vertices @ np.asarray(M, dtype=float).T + np.asarray(offset)).ravel()
