"""Discrete local Dirichlet-to-Neumann map on the patch Sigma.

The trial/test space is spanned by nodal hat functions of vertices strictly
inside Sigma (so their support stays in the closed patch), one per
displacement component.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import InputError, NumericalError
from .forward import TOL_CG, ElementCache, StiffnessSystem, assemble_stiffness, solve_dirichlet
from .geometry import Mesh
from .material import LameParams
from .msh import mesh_hash


@dataclass(frozen=True, eq=False)
class SigmaBasis:
    vertices: np.ndarray     # vertex ids strictly inside Sigma
    dofs: np.ndarray         # 3 * vertex + component, vertex-major

    @property
    def m(self):
        return len(self.dofs)


def build_sigma_basis(mesh: Mesh, sigma=None) -> SigmaBasis:
    """Vertices on SIGMA facets that are not on the patch's relative boundary.

    The relative boundary is found combinatorially: edges used by exactly one
    SIGMA triangle. If ``sigma`` (a rectangle) is given, vertices must also
    lie strictly inside it.
    """
    tris = mesh.sigma_facets()
    if len(tris) == 0:
        raise InputError("EMPTY_BASIS", "mesh has no SIGMA facets")
    edges = np.sort(np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    rim = np.unique(uniq[counts == 1])
    verts = np.setdiff1d(np.unique(tris), rim)
    if sigma is not None and len(verts):
        (xl, xh), (yl, yh) = sigma
        x, y = mesh.vertices[verts, 0], mesh.vertices[verts, 1]
        verts = verts[(x > xl) & (x < xh) & (y > yl) & (y < yh)]
    if len(verts) == 0:
        raise InputError("EMPTY_BASIS", "no vertex lies strictly inside Sigma at this resolution")
    dofs = (3 * verts[:, None] + np.arange(3)).ravel()
    return SigmaBasis(verts, dofs)


def _surface_matrices(mesh: Mesh, basis: SigmaBasis):
    """Scalar P1 mass and stiffness on the SIGMA triangles, restricted to basis vertices."""
    tris = mesh.sigma_facets()
    P = mesh.vertices[tris]
    e1, e2 = P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
    nrm = np.cross(e1, e2)
    area = 0.5 * np.linalg.norm(nrm, axis=1)
    # surface gradients of the three hat functions
    n_hat = nrm / (2.0 * area[:, None])
    g = np.stack([np.cross(n_hat, P[:, 2] - P[:, 1]),
                  np.cross(n_hat, P[:, 0] - P[:, 2]),
                  np.cross(n_hat, P[:, 1] - P[:, 0])], axis=1) / (2.0 * area[:, None, None])
    Me = area[:, None, None] / 12.0 * (np.ones((3, 3)) + np.eye(3))
    Se = area[:, None, None] * np.einsum("tak,tbk->tab", g, g)
    index = -np.ones(mesh.n_vertices, dtype=np.int64)
    index[basis.vertices] = np.arange(len(basis.vertices))
    loc = index[tris]
    nb = len(basis.vertices)
    M = np.zeros((nb, nb))
    S = np.zeros((nb, nb))
    for a in range(3):
        for b in range(3):
            ok = (loc[:, a] >= 0) & (loc[:, b] >= 0)
            np.add.at(M, (loc[ok, a], loc[ok, b]), Me[ok, a, b])
            np.add.at(S, (loc[ok, a], loc[ok, b]), Se[ok, a, b])
    return M, S


def surface_pencil(mesh: Mesh, basis: SigmaBasis, r0=1.0):
    """Vector mass ``M_b`` (weight ``r0^-2``) and stiffness ``S_b`` (weight 1) on basis dofs."""
    M, S = _surface_matrices(mesh, basis)
    I3 = np.eye(3)
    return np.kron(M, I3) / r0 ** 2, np.kron(S, I3)


def assemble_h_half_gram(mesh: Mesh, basis: SigmaBasis, r0=1.0, return_pencil=False):
    """Gram matrix of the discrete H^{1/2}(Sigma) norm by spectral interpolation.

    With ``S V = M V Theta`` and ``V^T M V = I`` the Gram matrix is
    ``M V (I + Theta)^{1/2} V^T M``.
    """
    if basis.m == 0:
        raise InputError("EMPTY_BASIS")
    Mb, Sb = surface_pencil(mesh, basis, r0)
    try:
        theta, V = sla.eigh(Sb, Mb)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError("EIG_FAIL", str(exc)) from None
    if not np.all(np.isfinite(theta)) or theta.min() < -1e-8 * max(1.0, abs(theta).max()):
        raise NumericalError("EIG_FAIL", "boundary pencil is numerically degenerate")
    theta = np.maximum(theta, 0.0)
    MV = Mb @ V
    G = (MV * np.sqrt(1.0 + theta)) @ MV.T
    G = 0.5 * (G + G.T)
    if return_pencil:
        return G, (Mb, Sb, theta, V)
    return G


SYMMETRY_TOL = 1e-8


@dataclass(eq=False)
class DtnMatrix:
    L: np.ndarray
    gram_half: np.ndarray
    r0: float
    basis_dofs: np.ndarray
    mesh_hash: str = ""
    params: dict = field(default_factory=dict)
    solutions: np.ndarray | None = None  # forward solutions per column, not persisted

    @property
    def m(self):
        return self.L.shape[0]

    def asymmetry(self):
        return float(np.linalg.norm(self.L - self.L.T) / np.linalg.norm(self.L))

    def save(self, stem):
        """Write ``<stem>.bin`` (L then gram_half, row-major float64) and ``<stem>.json``."""
        stem = str(stem)
        with open(stem + ".bin", "wb") as fh:
            fh.write(np.ascontiguousarray(self.L, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.gram_half, dtype="<f8").tobytes())
        header = {"schema_version": 1, "m": int(self.m), "r0": self.r0,
                  "blocks": ["L", "gram_half"], "dtype": "<f8", "order": "row-major",
                  "mesh_hash": self.mesh_hash, "basis_dofs": [int(d) for d in self.basis_dofs],
                  "params": self.params}
        with open(stem + ".json", "w") as fh:
            json.dump(header, fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, stem):
        stem = str(stem)
        if stem.endswith((".json", ".bin")):
            stem = stem.rsplit(".", 1)[0]
        try:
            with open(stem + ".json") as fh:
                header = json.load(fh)
            m = int(header["m"])
            raw = np.fromfile(stem + ".bin", dtype="<f8")
        except (OSError, ValueError, KeyError) as exc:
            raise InputError("BAD_DTN_FILE", str(exc)) from None
        if raw.size != 2 * m * m:
            raise InputError("BAD_DTN_FILE", f"expected {2 * m * m} doubles, found {raw.size}")
        out = cls(raw[:m * m].reshape(m, m).copy(), raw[m * m:].reshape(m, m).copy(),
                  float(header["r0"]), np.array(header["basis_dofs"]), header.get("mesh_hash", ""),
                  header.get("params", {}))
        if not out.asymmetry() < SYMMETRY_TOL:
            raise InputError("BAD_DTN_FILE", f"stored matrix not symmetric ({out.asymmetry():.3g})")
        return out


def solve_columns(sys: StiffnessSystem, basis: SigmaBasis, cols=None, tol=TOL_CG):
    """Dirichlet solutions for the selected basis functions, zero elsewhere on the boundary."""
    cols = np.arange(basis.m) if cols is None else np.atleast_1d(cols)
    psi = np.zeros((sys.mesh.n_dofs, len(cols)))
    psi[basis.dofs[cols], np.arange(len(cols))] = 1.0
    return solve_dirichlet(sys, psi, tol=tol)


def dtn_columns(sys: StiffnessSystem, basis: SigmaBasis, U):
    """``L[:, cols] = r0^-2 w_a^T K u_b`` with the zero-interior lifting ``w_a``."""
    return (sys.K[basis.dofs] @ U) / sys.r0 ** 2


def assemble_dtn(mesh: Mesh, p: LameParams, basis: SigmaBasis, gram_half=None, r0=1.0,
                 tol=TOL_CG, cache: ElementCache | None = None, keep_solutions=False) -> DtnMatrix:
    """Discrete local DtN matrix: one Dirichlet solve per basis function."""
    sys = assemble_stiffness(mesh, p, r0, cache)
    if gram_half is None:
        gram_half = assemble_h_half_gram(mesh, basis, r0)
    U = solve_columns(sys, basis, tol=tol)
    L = dtn_columns(sys, basis, U)
    return DtnMatrix(L, gram_half, r0, basis.dofs.copy(), mesh_hash(mesh), p.to_dict(),
                     U if keep_solutions else None)


_whiten_cache: dict = {}


def whitener(G):
    """Symmetric inverse square root ``G^{-1/2}`` (cached on the array bytes)."""
    G = np.asarray(G, dtype=float)
    key = (G.shape, hash(G.tobytes()))
    hit = _whiten_cache.get(key)
    if hit is not None and np.array_equal(hit[0], G):
        return hit[1]
    w, Q = np.linalg.eigh(G)
    if w.min() <= 0:
        raise NumericalError("EIG_FAIL", "Gram matrix is not positive definite")
    W = (Q / np.sqrt(w)) @ Q.T
    if len(_whiten_cache) > 16:
        _whiten_cache.clear()
    _whiten_cache[key] = (G.copy(), W)
    return W


def _as_matrix(x):
    return x.L if isinstance(x, DtnMatrix) else np.asarray(x, dtype=float)


def star_norm(L1, L2, gram_half=None):
    """Operator norm of ``L1 - L2`` from discrete H^{1/2}_co to its dual."""
    if isinstance(L1, DtnMatrix) and isinstance(L2, DtnMatrix):
        if (L1.gram_half.shape != L2.gram_half.shape or not np.array_equal(L1.gram_half, L2.gram_half)
                or not np.array_equal(L1.basis_dofs, L2.basis_dofs)):
            raise InputError("GRAM_MISMATCH", "DtN matrices live on different bases")
        gram_half = L1.gram_half if gram_half is None else gram_half
    if gram_half is None:
        for x in (L1, L2):
            if isinstance(x, DtnMatrix):
                gram_half = x.gram_half
    if gram_half is None:
        raise InputError("GRAM_MISMATCH", "no Gram matrix supplied")
    D = _as_matrix(L1) - _as_matrix(L2)
    if D.shape != gram_half.shape:
        raise InputError("GRAM_MISMATCH", f"{D.shape} vs Gram {gram_half.shape}")
    W = whitener(np.asarray(gram_half))
    return float(np.linalg.norm(W @ D @ W, 2))
