"""Isotropic elasticity tensors, admissibility and the sup-distance.

Index 0 of every parameter list is reserved for the extension region above
the measurement patch; it is frozen at ``(lam, mu) = (0, 1)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

LAM0 = 0.0
MU0 = 1.0


@dataclass(frozen=True)
class LameParams:
    """Piecewise constant Lamé moduli with their a priori bounds.

    ``lam`` and ``mu`` have length ``N + 1``; entry 0 belongs to the
    extension slab and entries ``1..N`` to the subdomains.
    """

    lam: tuple
    mu: tuple
    alpha0: float = 0.5
    beta0: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "lam", tuple(float(v) for v in self.lam))
        object.__setattr__(self, "mu", tuple(float(v) for v in self.mu))
        if len(self.lam) != len(self.mu):
            raise InputError("DIM_MISMATCH", "lam and mu differ in length")
        if len(self.lam) < 2:
            raise InputError("DIM_MISMATCH", "need at least one subdomain")

    @classmethod
    def from_layers(cls, lam, mu, alpha0=0.5, beta0=1.0):
        """Build from per-subdomain lists, prepending the frozen extension entry."""
        return cls((LAM0, *lam), (MU0, *mu), alpha0, beta0)

    @classmethod
    def from_vector(cls, x, alpha0=0.5, beta0=1.0):
        """Inverse of :meth:`vector`: ``x = (lam_1, mu_1, lam_2, mu_2, ...)``."""
        x = np.asarray(x, dtype=float)
        return cls.from_layers(x[0::2], x[1::2], alpha0, beta0)

    @property
    def n(self):
        return len(self.lam) - 1

    def vector(self):
        """Free parameters interleaved per subdomain, D0 excluded."""
        x = np.empty(2 * self.n)
        x[0::2] = self.lam[1:]
        x[1::2] = self.mu[1:]
        return x

    def with_vector(self, x):
        return LameParams.from_vector(x, self.alpha0, self.beta0)

    def to_dict(self):
        return {"lam": list(self.lam[1:]), "mu": list(self.mu[1:]),
                "alpha0": self.alpha0, "beta0": self.beta0}


def apply_isotropic(lam, mu, A):
    """Return ``lam tr(A) I + 2 mu sym(A)``."""
    A = np.asarray(A, dtype=float)
    sym = 0.5 * (A + np.swapaxes(A, -1, -2))
    tr = np.trace(A, axis1=-2, axis2=-1)
    return lam * tr[..., None, None] * np.eye(3) + 2.0 * mu * sym


def poisson_ratio(lam, mu):
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    return lam / (2.0 * (lam + mu))


@dataclass
class AdmissibilityReport:
    passed: bool
    xi0: float
    nu: list
    violations: list = field(default_factory=list)

    def to_dict(self):
        return {"pass": self.passed, "xi0": self.xi0, "nu": self.nu,
                "violations": self.violations}


def admissible_mask(lam, mu, alpha0, beta0):
    """Vectorized strong-convexity test for arrays of ``(lam, mu)`` pairs."""
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    ok = (mu >= alpha0) & (mu <= 1.0 / alpha0) & (lam <= 1.0 / alpha0)
    ok &= 2.0 * mu + 3.0 * lam >= beta0
    with np.errstate(divide="ignore", invalid="ignore"):
        nu = poisson_ratio(lam, mu)
    ok &= (nu >= -1.0 + alpha0 * beta0 / 4.0) & (nu <= 0.5 - alpha0 ** 2 / 4.0)
    return ok & np.isfinite(lam) & np.isfinite(mu)


def check_admissible(p: LameParams) -> AdmissibilityReport:
    a0, b0 = p.alpha0, p.beta0
    violations = []
    if not (0.0 < a0 <= 1.0):
        violations.append("alpha0 outside (0, 1]")
    if not (0.0 < b0 <= 2.0):
        violations.append("beta0 outside (0, 2]")
    nus = []
    for j, (lam, mu) in enumerate(zip(p.lam, p.mu)):
        nu = float(poisson_ratio(lam, mu)) if lam + mu != 0 else float("nan")
        nus.append(nu)
        if not admissible_mask(lam, mu, a0, b0):
            violations.append(f"subdomain {j}: (lam, mu) = ({lam}, {mu})")
    return AdmissibilityReport(not violations, min(2.0 * a0, b0), nus, violations)


def sup_distance(p: LameParams, q: LameParams) -> float:
    """``max_j max(|lam_j - lam'_j|, |mu_j - mu'_j|)`` over subdomains ``j >= 1``."""
    if p.n != q.n:
        raise InputError("DIM_MISMATCH", f"{p.n} vs {q.n} subdomains")
    dl = np.abs(np.subtract(p.lam[1:], q.lam[1:]))
    dm = np.abs(np.subtract(p.mu[1:], q.mu[1:]))
    return float(max(dl.max(), dm.max()))


def polytope_vertices(alpha0, beta0):
    """Corners of the admissible ``(lam, mu)`` quadrilateral, counter-clockwise."""
    a, b = alpha0, beta0
    return np.array([
        [(b - 2.0 * a) / 3.0, a],
        [1.0 / a, a],
        [1.0 / a, 1.0 / a],
        [(b - 2.0 / a) / 3.0, 1.0 / a],
    ])


def _inside(lam, mu, alpha0, beta0):
    return alpha0 <= mu <= 1.0 / alpha0 and lam <= 1.0 / alpha0 and 2.0 * mu + 3.0 * lam >= beta0


def project_pair(lam, mu, alpha0, beta0):
    """Euclidean projection of one ``(lam, mu)`` pair onto the admissible polytope."""
    verts = polytope_vertices(alpha0, beta0)
    pt = np.array([lam, mu], dtype=float)
    if _inside(pt[0], pt[1], alpha0, beta0):
        return float(lam), float(mu)
    best, best_d = None, np.inf
    for k in range(len(verts)):
        a, b = verts[k], verts[(k + 1) % len(verts)]
        e = b - a
        ee = np.dot(e, e)
        t = np.clip(np.dot(pt - a, e) / ee, 0.0, 1.0) if ee > 0 else 0.0
        c = a + t * e
        d = np.dot(pt - c, pt - c)
        if d < best_d:
            best, best_d = c, d
    return float(best[0]), float(best[1])


def project_admissible(p: LameParams) -> LameParams:
    lam, mu = list(p.lam), list(p.mu)
    for j in range(1, len(lam)):
        lam[j], mu[j] = project_pair(lam[j], mu[j], p.alpha0, p.beta0)
    return LameParams(lam, mu, p.alpha0, p.beta0)
