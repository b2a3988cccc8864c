"""Box-constrained Levenberg-Marquardt reconstruction of the Lamé moduli.

Unknowns are ``x = (lam_1, mu_1, ..., lam_N, mu_N)``. Every iterate is
projected onto the admissible polytope of each subdomain (box bounds plus the
half-plane ``2 mu + 3 lam >= beta0``), which is exact in these variables.
Constraints that are active and blocking are removed from the damped
Gauss-Newton system before the step is taken, so iterates slide along the
faces of the polytope instead of being clipped back onto them.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .boundary import DtnMatrix, SigmaBasis, assemble_dtn, assemble_h_half_gram, star_norm, whitener
from .errors import InputError
from .forward import TOL_CG, ElementCache
from .geometry import Mesh
from .identity import sensitivity_from_solutions
from .material import LameParams, check_admissible, project_admissible, sup_distance
from .msh import mesh_hash

log = logging.getLogger(__name__)

FROBENIUS = "FROBENIUS"
STAR = "STAR"


@dataclass
class ReconstructionProblem:
    L_obs: DtnMatrix
    mesh: Mesh
    basis: SigmaBasis
    init: LameParams
    weights: str = FROBENIUS
    noise_level: float | None = None
    tol_fit: float | None = None
    tol_step: float = 1e-10
    max_iter: int = 100
    tol_cg: float = TOL_CG

    def __post_init__(self):
        if self.weights not in (FROBENIUS, STAR):
            raise InputError("BAD_METRIC", self.weights)
        if not check_admissible(self.init).passed:
            raise InputError("INADMISSIBLE_INIT", str(check_admissible(self.init).violations))
        if self.L_obs.m != self.basis.m or not np.array_equal(self.L_obs.basis_dofs, self.basis.dofs):
            raise InputError("GRAM_MISMATCH", "observed DtN matrix does not match the Sigma basis")
        if self.tol_fit is None:
            self.tol_fit = 1e-12 * self.L_obs.r0 * np.linalg.norm(self.L_obs.L)
        self._cache = ElementCache(self.mesh)

    @property
    def r0(self):
        return self.L_obs.r0

    def forward(self, p: LameParams, keep_solutions=False):
        return assemble_dtn(self.mesh, p, self.basis, self.L_obs.gram_half, self.r0,
                            tol=self.tol_cg, cache=self._cache, keep_solutions=keep_solutions)


def misfit(p: LameParams, prob: ReconstructionProblem, dtn: DtnMatrix | None = None):
    """``r0 ||L(p) - L_obs||`` in the Frobenius or the star norm."""
    dtn = dtn or prob.forward(p)
    if prob.weights == STAR:
        return prob.r0 * star_norm(dtn.L, prob.L_obs.L, prob.L_obs.gram_half)
    return prob.r0 * float(np.linalg.norm(dtn.L - prob.L_obs.L))


@dataclass
class ReconstructionResult:
    params: LameParams
    trace: list = field(default_factory=list)
    converged: bool = False
    reason: str = ""
    misfit: float = float("nan")

    def to_dict(self):
        return {"params": self.params.to_dict(), "converged": self.converged,
                "reason": self.reason, "misfit": self.misfit,
                "trace": self.trace}


def _constraint_rows(x, alpha0, beta0, tol=1e-12):
    """Outward normals ``g`` (``g . x <= h``) of constraints active at ``x``."""
    rows = []
    n = len(x)
    for j in range(0, n, 2):
        lam, mu = x[j], x[j + 1]
        for (gl, gm), h in (((0.0, -1.0), -alpha0), ((0.0, 1.0), 1.0 / alpha0),
                            ((1.0, 0.0), 1.0 / alpha0), ((-3.0, -2.0), -beta0)):
            if gl * lam + gm * mu >= h - tol * max(1.0, abs(h)):
                g = np.zeros(n)
                g[j], g[j + 1] = gl, gm
                rows.append(g)
    return np.array(rows).reshape(-1, n)


def _damped_step(H, g, tau, x, alpha0, beta0):
    """Levenberg step, restricted to the face of the constraints that block it."""
    n = len(x)
    delta = np.linalg.solve(H + tau * np.eye(n), -g)
    A = _constraint_rows(x, alpha0, beta0)
    blocked = np.zeros(len(A), dtype=bool)
    while len(A):
        new = (A @ delta > 1e-14 * np.linalg.norm(delta)) & ~blocked
        if not new.any():
            break
        blocked |= new
        Z = sla.null_space(A[blocked])
        if Z.shape[1] == 0:
            return np.zeros(n)
        delta = Z @ np.linalg.solve(Z.T @ H @ Z + tau * np.eye(Z.shape[1]), -(Z.T @ g))
    return delta


def reconstruct(prob: ReconstructionProblem) -> ReconstructionResult:
    """Damped Gauss-Newton with gain-ratio control of the Levenberg parameter.

    Stops when the projected step is below ``tol_step (1 + |x|)``, the misfit
    drops below ``tol_fit`` (or ``noise_level`` when given), or after
    ``max_iter`` iterations. Non-convergence is reported via the flag; the
    best iterate is returned either way.
    """
    a0, b0 = prob.init.alpha0, prob.init.beta0
    r0 = prob.r0
    W = whitener(prob.L_obs.gram_half) if prob.weights == STAR else None

    def residual(dtn):
        D = dtn.L - prob.L_obs.L
        if W is not None:
            D = W @ D @ W
        return r0 * D.ravel()

    def jacobian(dtn, p):
        J = sensitivity_from_solutions(prob.mesh, dtn.solutions, p.n, r0, prob._cache)
        if W is not None:
            J = np.einsum("ia,abk,bj->ijk", W, J, W)
        return r0 * J.reshape(-1, J.shape[-1])

    p = prob.init
    x = p.vector()
    dtn = prob.forward(p, keep_solutions=True)
    r = residual(dtn)
    f = misfit(p, prob, dtn)
    stop_fit = prob.noise_level if prob.noise_level is not None else prob.tol_fit
    trace = [{"iteration": 0, "misfit": f, "step": 0.0, "accepted": True}]
    if f <= stop_fit:
        return ReconstructionResult(p, trace, True, "misfit", f)
    J = jacobian(dtn, p)
    tau = 1e-3 * float(np.max(np.sum(J * J, axis=0)))
    nu = 2.0
    converged, reason = False, "max_iter"
    for it in range(1, prob.max_iter + 1):
        H = J.T @ J
        g = J.T @ r
        delta = _damped_step(H, g, tau, x, a0, b0)
        p_try = project_admissible(p.with_vector(x + delta))
        x_try = p_try.vector()
        s = x_try - x
        step = float(np.linalg.norm(s))
        if step <= prob.tol_step * (1.0 + np.linalg.norm(x)):
            trace.append({"iteration": it, "misfit": f, "step": step, "accepted": False})
            converged, reason = True, "step"
            break
        dtn_try = prob.forward(p_try, keep_solutions=True)
        r_try = residual(dtn_try)
        pred = float(r @ r - (r + J @ s) @ (r + J @ s))
        actual = float(r @ r - r_try @ r_try)
        rho = actual / pred if pred > 0 else -1.0
        accepted = rho > 0.0
        if accepted:
            p, x, dtn, r = p_try, x_try, dtn_try, r_try
            f = misfit(p, prob, dtn)
            J = jacobian(dtn, p)
            tau *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
        else:
            tau *= nu
            nu *= 2.0
        trace.append({"iteration": it, "misfit": f, "step": step, "accepted": accepted})
        log.debug("iter %d misfit %.3e step %.3e tau %.2e %s", it, f, step, tau, accepted)
        if f <= stop_fit:
            converged, reason = True, "misfit"
            break
    return ReconstructionResult(p, trace, converged, reason, f)


def synthetic_observation(mesh, truth, basis, gram_half=None, r0=1.0, tol=TOL_CG):
    return assemble_dtn(mesh, truth, basis, gram_half, r0, tol=tol)


def perturb_observation(obs: DtnMatrix, level, rng):
    """Add symmetric noise with Frobenius norm ``level * |L_obs|_F``."""
    N = rng.standard_normal(obs.L.shape)
    N = 0.5 * (N + N.T)
    N *= level * np.linalg.norm(obs.L) / np.linalg.norm(N)
    return DtnMatrix(obs.L + N, obs.gram_half, obs.r0, obs.basis_dofs, obs.mesh_hash, obs.params)


def _coarse_hats(points, coarse: Mesh, coarse_basis: SigmaBasis):
    """Values of the coarse Sigma hat functions at points ``(n, 2)`` of the flat top face."""
    tris = coarse.sigma_facets()
    col = {int(v): j for j, v in enumerate(coarse_basis.vertices)}
    T = coarse.vertices[tris][:, :, :2]                   # (t, 3, 2)
    Ainv = np.linalg.inv(np.stack([T[:, 1] - T[:, 0], T[:, 2] - T[:, 0]], axis=2))
    P = np.zeros((len(points), len(coarse_basis.vertices)))
    for i, x in enumerate(points):
        b12 = np.einsum("tij,tj->ti", Ainv, x - T[:, 0])
        bary = np.column_stack([1.0 - b12.sum(axis=1), b12])
        hit = np.flatnonzero(bary.min(axis=1) >= -1e-10)
        if len(hit) == 0:
            continue                                      # outside the coarse patch: every hat vanishes
        for k in range(3):
            j = col.get(int(tris[hit[0], k]))
            if j is not None:
                P[i, j] = bary[hit[0], k]
    return P


def restrict_observation(obs: DtnMatrix, fine: Mesh, fine_basis: SigmaBasis, coarse: Mesh,
                         coarse_basis: SigmaBasis, gram_half=None):
    """Express a fine-mesh DtN matrix in the basis of a coarser nested mesh.

    Coarse hat functions are P1 on the fine Sigma triangulation when the
    meshes are nested, so ``L_c = P^T L_f P`` with ``P`` their values at the
    fine basis vertices. Raises INCOMPATIBLE_MESH if a coarse hat is nonzero
    on the fine patch rim or is not linear on some fine triangle.
    """
    tris = fine.sigma_facets()
    patch = np.unique(tris)
    Pall = _coarse_hats(fine.vertices[patch, :2], coarse, coarse_basis)
    rim = ~np.isin(patch, fine_basis.vertices)
    if np.abs(Pall[rim]).max(initial=0.0) > 1e-10:
        raise InputError("INCOMPATIBLE_MESH", "coarse hat functions do not vanish on the fine patch rim")
    # linear on a fine triangle iff the centroid value is the mean of the vertex values
    at_mid = _coarse_hats(fine.vertices[tris][:, :, :2].mean(axis=1), coarse, coarse_basis)
    mean = Pall[np.searchsorted(patch, tris)].mean(axis=1)
    if np.abs(at_mid - mean).max(initial=0.0) > 1e-10:
        raise InputError("INCOMPATIBLE_MESH", "meshes are not nested on Sigma")
    P = np.kron(Pall[np.searchsorted(patch, fine_basis.vertices)], np.eye(3))
    if gram_half is None:
        gram_half = assemble_h_half_gram(coarse, coarse_basis, obs.r0)
    return DtnMatrix(P.T @ obs.L @ P, gram_half, obs.r0, coarse_basis.dofs.copy(), mesh_hash(coarse),
                     obs.params)


def recovery_error(result: ReconstructionResult, truth: LameParams):
    return sup_distance(result.params, truth)
