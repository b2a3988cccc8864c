"""Alessandrini's identity as a discrete check and as the DtN sensitivity.

For solutions ``u1`` (tensor C1) and ``u2`` (tensor C2) with Sigma data
``psi_a`` and ``psi_b``::

    integral (C1 - C2) sym(grad u1) : sym(grad u2) = r0^2 <(L1 - L2) psi_b, psi_a>

The left side is evaluated by element quadrature of the strains, the right
side from two DtN matrices; the two share no code beyond the forward solver.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boundary import SigmaBasis, dtn_columns, solve_columns
from .forward import TOL_CG, ElementCache, assemble_stiffness, strains
from .geometry import Mesh
from .material import LameParams

# forward solves for identity checks; the default CG tolerance leaves first-order
# residual terms visible on the smallest DtN entries
TOL_IDENTITY = 1e-14


@dataclass
class IdentityResidual:
    lhs: float
    rhs: float
    rel_residual: float


def _voigt(E):
    """Orthonormal 6-vector form: ``e_a . e_b = E_a : E_b``."""
    s = np.sqrt(2.0)
    return np.stack([E[..., 0, 0], E[..., 1, 1], E[..., 2, 2],
                     s * E[..., 0, 1], s * E[..., 0, 2], s * E[..., 1, 2]], axis=-1)


def volume_pairing(mesh: Mesh, lam_e, mu_e, U1, U2, cache: ElementCache):
    """``integral C sym(grad u1) : sym(grad u2)`` for elementwise moduli, all column pairs."""
    E1 = strains(U1, mesh, cache.grads)
    E2 = strains(U2, mesh, cache.grads)
    t1 = np.trace(E1, axis1=-2, axis2=-1)
    t2 = np.trace(E2, axis1=-2, axis2=-1)
    w = cache.vol
    out = np.einsum("e,ea,eb->ab", w * lam_e, t1, t2)
    out += 2.0 * np.einsum("e,eaij,ebij->ab", w * mu_e, E1, E2)
    return out


def alessandrini_residual(mesh: Mesh, p: LameParams, q: LameParams, a: int, b: int,
                          basis: SigmaBasis, r0=1.0, tol=TOL_IDENTITY, floor=None,
                          cache: ElementCache | None = None) -> IdentityResidual:
    cache = cache or ElementCache(mesh)
    sp_ = assemble_stiffness(mesh, p, r0, cache)
    sq_ = assemble_stiffness(mesh, q, r0, cache)
    U1 = solve_columns(sp_, basis, [a, b], tol=tol)      # u1_a, u1_b
    U2 = solve_columns(sq_, basis, [b], tol=tol)         # u2_b
    lp, mp = cache.element_moduli(p)
    lq, mq = cache.element_moduli(q)
    lhs = float(volume_pairing(mesh, lp - lq, mp - mq, U1[:, :1], U2, cache)[0, 0])
    L1 = dtn_columns(sp_, basis, U1[:, 1:])[:, 0]
    L2 = dtn_columns(sq_, basis, U2)[:, 0]
    rhs = float(r0 ** 2 * (L1[a] - L2[a]))
    if floor is None:
        floor = 1e-14 * r0 ** 2 * max(np.abs(L1).max(), np.abs(L2).max())
    rel = abs(lhs - rhs) / max(abs(lhs), abs(rhs), floor)
    return IdentityResidual(lhs, rhs, rel)


def sensitivity_from_solutions(mesh: Mesh, U, n_sub, r0=1.0, cache: ElementCache | None = None):
    """Jacobian ``(m, m, 2N)`` of the DtN matrix from forward solutions at the current moduli.

    Parameter axis ordering is ``(lam_1, mu_1, lam_2, mu_2, ...)``; the frozen
    D0 entry is not a parameter.
    """
    cache = cache or ElementCache(mesh)
    E = _voigt(strains(U, mesh, cache.grads))          # (ne, m, 6)
    tr = E[..., 0] + E[..., 1] + E[..., 2]             # (ne, m)
    m = E.shape[1]
    J = np.empty((m, m, 2 * n_sub))
    labels = mesh.elem_label
    for j in range(1, n_sub + 1):
        sel = labels == j
        sw = np.sqrt(cache.vol[sel])
        T = tr[sel] * sw[:, None]
        J[:, :, 2 * (j - 1)] = T.T @ T
        X = (E[sel] * sw[:, None, None]).transpose(1, 0, 2).reshape(m, -1)
        J[:, :, 2 * (j - 1) + 1] = 2.0 * (X @ X.T)
    return J / r0 ** 2


def sensitivity_jacobian(mesh: Mesh, p: LameParams, basis: SigmaBasis, r0=1.0, tol=None,
                         cache: ElementCache | None = None):
    """Derivative of the discrete DtN matrix with respect to each modulus.

    Because the Dirichlet data are fixed and ``K u`` vanishes on interior rows,
    the first variation of ``u_a^T K u_b`` reduces to ``u_a^T (dK) u_b``.
    """
    cache = cache or ElementCache(mesh)
    sys = assemble_stiffness(mesh, p, r0, cache)
    U = solve_columns(sys, basis, tol=tol or TOL_CG)
    return sensitivity_from_solutions(mesh, U, p.n, r0, cache)
