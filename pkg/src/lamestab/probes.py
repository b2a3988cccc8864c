"""Desk-scale probes of the stability estimate and of the tools behind it.

* :func:`lipschitz_probe` samples admissible pairs and reports
  ``E / eps`` with ``E = |C - C'|_inf`` and ``eps = r0 |L - L'|_star``.
* :func:`three_spheres_check` fits the exponent and constant of the
  three-spheres inequality on random solutions in a ball.
* :func:`kelvin_eval` and friends evaluate the free-space fundamental solution.
* :func:`green_reciprocity_check` tests symmetry of the discrete Green matrix.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
import numpy as np

from .boundary import assemble_dtn, assemble_h_half_gram, build_sigma_basis, star_norm
from .errors import InputError, NumericalError
from .forward import TOL_CG, ElementCache, assemble_stiffness, pcg, solve_dirichlet
from .geometry import Mesh, PartitionedDomain, generate_ball_mesh, generate_mesh
from .material import LameParams, admissible_mask, sup_distance

log = logging.getLogger(__name__)


def sub_rng(seed, index):
    """Generator for sample ``index`` derived deterministically from the global seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


# ----------------------------------------------------------------------------- sampling

def sample_admissible(rng, n_sub, alpha0, beta0, max_reject=0.999, batch=256):
    """Uniform draw from the admissible polytope of each subdomain, by rejection."""
    lo_lam = (beta0 - 2.0 / alpha0) / 3.0
    lam, mu = [], []
    tries = accepted = 0
    while len(lam) < n_sub:
        cand_l = rng.uniform(lo_lam, 1.0 / alpha0, batch)
        cand_m = rng.uniform(alpha0, 1.0 / alpha0, batch)
        ok = admissible_mask(cand_l, cand_m, alpha0, beta0)
        tries += batch
        accepted += int(ok.sum())
        take = np.flatnonzero(ok)[: n_sub - len(lam)]
        lam.extend(cand_l[take])
        mu.extend(cand_m[take])
        if tries >= 10 * batch and accepted < (1.0 - max_reject) * tries:
            raise NumericalError("SAMPLER_EXHAUSTED", f"acceptance {accepted}/{tries}")
    return LameParams.from_layers(lam, mu, alpha0, beta0)


def sample_pairs(n_samples, n_sub, alpha0, beta0, seed, mode="independent", scale=0.2):
    """Admissible ``(p, q)`` pairs.

    ``independent`` draws both members uniformly, ``identical`` sets ``q = p``,
    ``perturb`` moves ``p`` by at most ``scale`` and redraws until admissible.
    """
    pairs = []
    for i in range(n_samples):
        rng = sub_rng(seed, i)
        p = sample_admissible(rng, n_sub, alpha0, beta0)
        if mode == "identical":
            q = p
        elif mode == "independent":
            q = sample_admissible(rng, n_sub, alpha0, beta0)
        elif mode == "perturb":
            for _ in range(10000):
                x = p.vector() + rng.uniform(-scale, scale, 2 * n_sub)
                if admissible_mask(x[0::2], x[1::2], alpha0, beta0).all():
                    break
            else:
                raise NumericalError("SAMPLER_EXHAUSTED", "no admissible perturbation found")
            q = p.with_vector(x)
        else:
            raise InputError("BAD_SAMPLER", mode)
        pairs.append((p, q))
    return pairs


# ----------------------------------------------------------------------------- Lipschitz

@dataclass
class StabilityReport:
    samples: list
    empirical_constant: float
    constants_by_level: dict
    levels: list
    geometry: dict
    refined: list = field(default_factory=list)
    degenerate: bool = False
    injectivity_violations: list = field(default_factory=list)

    def rows(self):
        cols = ["index", "level", "E", "eps", "ratio"]
        out = []
        for s in self.samples:
            for lvl, (eps, ratio) in sorted(s["by_level"].items()):
                out.append({"index": s["index"], "level": lvl, "E": s["E"], "eps": eps, "ratio": ratio})
        return cols, out

    def summary(self):
        return {"empirical_constant": self.empirical_constant,
                "constants_by_level": {str(k): v for k, v in self.constants_by_level.items()},
                "levels": self.levels, "n_samples": len(self.samples),
                "degenerate": self.degenerate,
                "injectivity_violations": self.injectivity_violations,
                "refined": self.refined, "geometry": self.geometry}


class _LevelContext:
    def __init__(self, dom, n, tol):
        self.mesh = generate_mesh(dom, n)
        self.basis = build_sigma_basis(self.mesh)
        self.gram = assemble_h_half_gram(self.mesh, self.basis, dom.r0)
        self.cache = ElementCache(self.mesh)
        self.r0 = dom.r0
        self.tol = tol

    def dtn(self, p):
        return assemble_dtn(self.mesh, p, self.basis, self.gram, self.r0, self.tol, self.cache)

    def eps(self, p, q):
        return self.r0 * star_norm(self.dtn(p), self.dtn(q))


def _ratio(E, eps):
    if eps > 0:
        return E / eps
    return float("nan") if E == 0 else float("inf")


def lipschitz_probe(dom: PartitionedDomain, pairs=None, n_samples=50, levels=(6, 8),
                    alpha0=0.5, beta0=1.0, seed=0, mode="independent",
                    refine_top=5, full_levels=False, tol=TOL_CG) -> StabilityReport:
    """Empirical Lipschitz constant ``max E / eps`` over sampled admissible pairs.

    All pairs are evaluated on ``levels[0]``. The ``refine_top`` largest
    ratios are recomputed on ``levels[1]``; with ``full_levels`` every
    sample is evaluated on every level.
    """
    if pairs is None:
        pairs = sample_pairs(n_samples, dom.n_sub, alpha0, beta0, seed, mode)
    for p, q in pairs:
        for x in (p, q):
            if not admissible_mask(np.array(x.lam), np.array(x.mu), x.alpha0, x.beta0).all():
                raise InputError("INADMISSIBLE_SAMPLE", str(x))
    levels = list(levels)
    samples = [{"index": i, "p": p.to_dict(), "q": q.to_dict(), "E": sup_distance(p, q), "by_level": {}}
               for i, (p, q) in enumerate(pairs)]
    constants = {}
    refined = []
    for li, n in enumerate(levels):
        ctx = _LevelContext(dom, n, tol)
        if li == 0 or full_levels:
            todo = range(len(pairs))
        else:
            base = levels[0]
            order = sorted(range(len(pairs)), key=lambda i: -np.nan_to_num(samples[i]["by_level"][base][1], nan=-1.0))
            todo = order[:refine_top]
        for i in todo:
            p, q = pairs[i]
            E = samples[i]["E"]
            eps = ctx.eps(p, q) if E > 0 else 0.0
            samples[i]["by_level"][n] = (eps, _ratio(E, eps))
        vals = [samples[i]["by_level"][n][1] for i in todo if samples[i]["E"] > 0]
        constants[n] = float(max(vals)) if vals else float("nan")
        if li > 0 and not full_levels:
            base = levels[0]
            refined += [{"index": i, "level": n, "ratio": samples[i]["by_level"][n][1],
                         "base_ratio": samples[i]["by_level"][base][1]} for i in todo]
    degenerate = all(s["E"] == 0 for s in samples)
    bad = [s["index"] for s in samples if s["E"] > 0 and not all(e > 0 for e, _ in s["by_level"].values())]
    if degenerate:
        log.warning("all sampled pairs coincide: Lipschitz ratio undefined")
    return StabilityReport(samples, constants[levels[0]], constants, levels, dom.to_dict(),
                           refined, degenerate, bad)


# ----------------------------------------------------------------------------- three spheres

@dataclass
class ThreeSpheresRecord:
    center: tuple
    radii: tuple
    norms: tuple           # sup |u| on B_r1, B_r2, B_r3


@dataclass
class ThreeSpheresFit:
    records: list
    delta: float
    C: float
    violations: int
    curve: list            # (delta, C fitted on the fit half, held-out violations)


def _harmonic_terms(rng, n_terms):
    """Complex isotropic vectors ``a`` (``a . a = 0``) and coefficients."""
    Q, _ = np.linalg.qr(rng.standard_normal((3, 2)))
    a = [Q[:, 0] + 1j * Q[:, 1]]
    for _ in range(n_terms - 1):
        Q, _ = np.linalg.qr(rng.standard_normal((3, 2)))
        a.append(Q[:, 0] + 1j * Q[:, 1])
    c = rng.standard_normal(n_terms) + 1j * rng.standard_normal(n_terms)
    return np.array(a), c


def _harmonic(x, a, c, degree):
    """Value and gradient of ``Re sum_t c_t (a_t . x)^degree`` (harmonic since a_t . a_t = 0)."""
    ax = x @ a.T                                        # (n, T)
    val = np.real((ax ** degree) @ c)
    if degree == 0:
        return val, np.zeros_like(x)
    grad = np.real(((degree * ax ** (degree - 1)) * c) @ a)
    return val, grad


def random_lame_solution(rng, x, degree, nu, n_terms=3):
    """Random homogeneous solution of degree ``degree`` of the constant-moduli Lamé system.

    Papkovich-Neuber form ``u = 4 (1 - nu) B - grad(x . B + beta)`` with
    harmonic ``B`` (degree ``degree``) and ``beta`` (degree ``degree + 1``).
    Returns ``(n, 3)``.
    """
    B = np.zeros_like(x)
    dB = np.zeros(x.shape + (3,))                       # dB[:, k, i] = d_i B_k
    for k in range(3):
        a, c = _harmonic_terms(rng, n_terms)
        B[:, k], dB[:, k, :] = _harmonic(x, a, c, degree)
    a, c = _harmonic_terms(rng, n_terms)
    _, dbeta = _harmonic(x, a, c, degree + 1)
    return (3.0 - 4.0 * nu) * B - np.einsum("nk,nki->ni", x, dB) - dbeta


def ball_norms(mesh, u, radii, center=(0.0, 0.0, 0.0)):
    """Vertex maxima of the Euclidean norm of ``u`` on each closed ball."""
    d = np.linalg.norm(mesh.vertices - np.asarray(center), axis=1)
    mag = np.linalg.norm(np.asarray(u).reshape(-1, 3), axis=1)
    out = []
    for r in radii:
        inside = d <= r * (1.0 + 1e-12)
        if not inside.any():
            raise InputError("EMPTY_BALL", f"no vertex within radius {r}")
        out.append(float(mag[inside].max()))
    return tuple(out)


def fit_three_spheres(norms, deltas=None, fit_idx=None, check_idx=None):
    """Fit ``|u|_2 <= C |u|_1^delta |u|_3^(1 - delta)`` on a grid of ``delta``.

    For each ``delta`` the smallest ``C`` is fitted on ``fit_idx`` and
    violations are counted on ``check_idx``. By default the fit set is the
    less oscillatory half of the samples (larger ``|u|_1 / |u|_3``) and the
    check set the rest, so a feasible pair must extrapolate to faster decaying
    solutions. The reported exponent is the largest ``delta`` with no
    violation; its ``C`` is refitted on all samples.
    """
    N = np.asarray(norms, dtype=float)
    keep = N[:, 0] > 0
    N = N[keep]
    n = len(N)
    if deltas is None:
        deltas = np.round(np.arange(0.01, 1.0, 0.01), 2)
    lx = np.log(N[:, 0]) - np.log(N[:, 2])
    ly = np.log(N[:, 1]) - np.log(N[:, 2])
    if fit_idx is None:
        order = np.argsort(-lx, kind="stable")
        fit_idx, check_idx = order[: (n + 1) // 2], order[(n + 1) // 2:]
    curve = []
    best = None
    for d in deltas:
        g = ly - d * lx                      # log(n2 / (n1^d n3^(1-d)))
        logc = g[fit_idx].max()
        viol = int(np.sum(g[check_idx] > logc + 1e-12)) if len(check_idx) else 0
        curve.append((float(d), float(np.exp(logc)), viol))
        if viol == 0:
            best = d
    if best is None:
        raise NumericalError("NO_FEASIBLE_DELTA", "every exponent on the grid is violated")
    C = float(np.exp((ly - best * lx).max()))
    return float(best), C, curve


def three_spheres_check(radius=1.0, fractions=(0.25, 0.5, 1.0), n_solutions=50, cells=16,
                        lam=1.0, mu=1.0, max_degree=4, seed=0, tol=TOL_CG, mesh=None, fields=None):
    """Random Lamé solutions in a ball and the fitted three-spheres constants.

    Boundary data are traces of random homogeneous solutions of degree
    ``0..max_degree`` (``sub_rng(seed, i)`` drives sample ``i``), scaled to
    unit maximum on the sphere; the interior field is the discrete Dirichlet
    solution with constant moduli.
    """
    mesh = mesh or generate_ball_mesh(radius, cells)
    p = LameParams.from_layers([lam], [mu])
    nu = lam / (2.0 * (lam + mu))
    sys = assemble_stiffness(mesh, p)
    radii = tuple(f * radius for f in fractions)
    if fields is None:
        psis = []
        for i in range(n_solutions):
            rng = sub_rng(seed, i)
            deg = int(rng.integers(0, max_degree + 1))
            u = random_lame_solution(rng, mesh.vertices / radius, deg, nu)
            psis.append((u / np.linalg.norm(u, axis=1).max()).ravel())
        U = solve_dirichlet(sys, np.stack(psis, axis=1), tol=tol)
        fields = [U[:, i] for i in range(U.shape[1])]
    records = [ThreeSpheresRecord((0.0, 0.0, 0.0), radii, ball_norms(mesh, u, radii)) for u in fields]
    delta, C, curve = fit_three_spheres([r.norms for r in records])
    return ThreeSpheresFit(records, delta, C, 0, curve)


# ----------------------------------------------------------------------------- Kelvin

def _check_nu(mu, nu):
    if not (mu > 0 and -1.0 < nu < 0.5):
        raise InputError("BAD_MODULI", f"mu={mu}, nu={nu}")


def kelvin_eval(mu, nu, x):
    """Kelvin matrix ``[(3 - 4 nu) I + xh xh^T] / (16 pi mu (1 - nu) |x|)``; x may be ``(..., 3)``."""
    _check_nu(mu, nu)
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    if np.any(r < 1e-12):
        raise InputError("AT_SINGULARITY", "|x| < 1e-12")
    xh = x / r[..., None]
    G = (3.0 - 4.0 * nu) * np.eye(3) + xh[..., :, None] * xh[..., None, :]
    return G / (16.0 * np.pi * mu * (1.0 - nu) * r[..., None, None])


def kelvin_gradient_fd(mu, nu, x, h=None):
    """``dG_ij / dx_k`` by central differences, shape ``(..., 3, 3, 3)``."""
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    h = 1e-5 * r if h is None else h
    out = []
    for k in range(3):
        e = np.zeros(3)
        e[k] = 1.0
        out.append((kelvin_eval(mu, nu, x + h * e) - kelvin_eval(mu, nu, x - h * e)) / (2.0 * h[..., None]))
    return np.stack(out, axis=-1)


_D1 = np.array([-1.0 / 60, 3.0 / 20, -3.0 / 4, 0.0, 3.0 / 4, -3.0 / 20, 1.0 / 60])
_D2 = np.array([1.0 / 90, -3.0 / 20, 3.0 / 2, -49.0 / 18, 3.0 / 2, -3.0 / 20, 1.0 / 90])


def kelvin_pde_residual(mu, nu, x, h=None):
    """``|div(C sym grad G)|`` at ``x`` (max over the three columns) by sixth-order differences.

    For constant moduli the operator is ``mu Lap u + (lam + mu) grad div u``.
    """
    x = np.asarray(x, dtype=float)
    lam = 2.0 * mu * nu / (1.0 - 2.0 * nu)
    h = 1e-2 * np.linalg.norm(x) if h is None else h
    off = np.arange(-3, 4)
    E = np.eye(3)
    # second derivatives H[i][j] = d_i d_j G, each (3, 3)
    H = [[None] * 3 for _ in range(3)]
    for i in range(3):
        pts = x + h * off[:, None] * E[i]
        H[i][i] = np.tensordot(_D2, kelvin_eval(mu, nu, pts), axes=1) / h ** 2
        for j in range(i + 1, 3):
            pts = x + h * (off[:, None, None] * E[i] + off[None, :, None] * E[j])
            vals = kelvin_eval(mu, nu, pts)
            H[i][j] = H[j][i] = np.einsum("a,b,abmn->mn", _D1, _D1, vals) / h ** 2
    lap = H[0][0] + H[1][1] + H[2][2]
    # (grad div u)_m for column n: sum_i d_m d_i G_in
    gdiv = np.stack([sum(H[m][i][i] for i in range(3)) for m in range(3)])
    res = mu * lap + (lam + mu) * gdiv
    return float(np.abs(res).max())


def kelvin_shell_residual(mu, nu, shell=(1.0, 2.0), n_points=20, seed=0):
    """Residual ``|div(C sym grad G)| |x|^3`` at random points with ``|x|`` in ``shell``.

    Returns ``(points, scaled residuals)``.
    """
    rng = sub_rng(seed, 1)
    d = rng.standard_normal((n_points, 3))
    r = rng.uniform(shell[0], shell[1], n_points)
    X = r[:, None] * d / np.linalg.norm(d, axis=1, keepdims=True)
    return X, np.array([kelvin_pde_residual(mu, nu, x) * ri ** 3 for x, ri in zip(X, r)])


def kelvin_decay_fit(mu, nu, radii=None, directions=None, seed=0):
    """Log-log slopes of ``|G|`` and ``|grad G|`` over ``|x|`` in [1, 100]."""
    if radii is None:
        radii = np.logspace(0.0, 2.0, 25)
    if directions is None:
        d = sub_rng(seed, 0).standard_normal((8, 3))
        directions = d / np.linalg.norm(d, axis=1, keepdims=True)
    R, D = np.meshgrid(radii, np.arange(len(directions)), indexing="ij")
    X = R[..., None] * np.asarray(directions)[D]
    g = np.linalg.norm(kelvin_eval(mu, nu, X), axis=(-2, -1))
    dg = np.sqrt((kelvin_gradient_fd(mu, nu, X) ** 2).sum(axis=(-3, -2, -1)))
    lr = np.log(R).ravel()
    s0 = np.polyfit(lr, np.log(g).ravel(), 1)[0]
    s1 = np.polyfit(lr, np.log(dg).ravel(), 1)[0]
    return {"value_slope": float(s0), "gradient_slope": float(s1)}


# ----------------------------------------------------------------------------- reciprocity

def green_reciprocity_check(mesh: Mesh, p: LameParams, n_pairs=20, seed=0, tol=TOL_CG, system=None):
    """Largest ``|g_ab - g_ba| / sqrt(g_aa g_bb)`` for ``g = K_II^{-1}`` on random interior dofs.

    Each pair costs two CG solves (with ``e_a`` and ``e_b``); ``system`` may
    override the assembled stiffness.
    """
    sys = system or assemble_stiffness(mesh, p)
    A = sys.K_II
    rng = sub_rng(seed, 0)
    n = A.shape[0]
    worst = 0.0
    for _ in range(n_pairs):
        a, b = rng.choice(n, 2, replace=False)
        B = np.zeros((n, 2))
        B[a, 0] = B[b, 1] = 1.0
        X = pcg(A, B, sys.precond, tol)
        gab, gba = X[a, 1], X[b, 0]
        scale = np.sqrt(abs(X[a, 0] * X[b, 1]))
        worst = max(worst, abs(gab - gba) / scale)
    return float(worst)
