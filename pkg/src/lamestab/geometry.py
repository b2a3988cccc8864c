"""Layered partitions of a box, structured tetrahedral meshes and the D0 slab.

Subdomains are stacked along ``x3``: ``D_1`` is the top layer (it carries the
measurement patch ``Sigma`` on the top face), ``D_j`` lies between the graphs
``phi_{j-1}`` and ``phi_j``, and ``D_N`` touches the bottom face.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np
import sympy

from .errors import InputError, NumericalError

log = logging.getLogger(__name__)

SIGMA = 1
REST = 2
TOL_REG = 1e-3
REG_GRID = 200

X1, X2 = sympy.symbols("x1 x2", real=True)


class Interface:
    """A graph ``x3 = phi(x1, x2)`` with its gradient.

    ``func`` and ``grad`` must accept numpy arrays; when ``grad`` is omitted
    a central finite difference is used.
    """

    def __init__(self, func, grad=None, source=None):
        self.func = func
        self._grad = grad
        self.source = source

    @classmethod
    def from_formula(cls, text):
        expr = sympy.sympify(text, locals={"x1": X1, "x2": X2, "pi": sympy.pi})
        extra = expr.free_symbols - {X1, X2}
        if extra:
            raise InputError("BAD_FORMULA", f"unknown symbols {sorted(map(str, extra))} in {text!r}")
        f = sympy.lambdify((X1, X2), expr, "numpy")
        gx = sympy.lambdify((X1, X2), sympy.diff(expr, X1), "numpy")
        gy = sympy.lambdify((X1, X2), sympy.diff(expr, X2), "numpy")

        def func(x, y):
            return np.broadcast_to(f(x, y), np.broadcast(x, y).shape).astype(float)

        def grad(x, y):
            shape = np.broadcast(x, y).shape
            return np.stack([np.broadcast_to(gx(x, y), shape),
                             np.broadcast_to(gy(x, y), shape)], axis=-1).astype(float)

        return cls(func, grad, source=str(text))

    @classmethod
    def constant(cls, c):
        return cls.from_formula(repr(float(c)))

    def __call__(self, x, y):
        return self.func(x, y)

    def grad(self, x, y):
        if self._grad is not None:
            return self._grad(x, y)
        h = 1e-6
        gx = (self.func(x + h, y) - self.func(x - h, y)) / (2 * h)
        gy = (self.func(x, y + h) - self.func(x, y - h)) / (2 * h)
        return np.stack([gx, gy], axis=-1)

    def shifted(self, c):
        """The same graph translated vertically by ``-c``."""
        grad = self._grad if self._grad is not None else None
        source = f"({self.source}) - {c!r}" if self.source else None
        return Interface(lambda x, y: self.func(x, y) - c, grad, source=source)


@dataclass(frozen=True)
class PartitionedDomain:
    box: tuple
    r0: float
    interfaces: tuple
    sigma: tuple          # ((x1_lo, x1_hi), (x2_lo, x2_hi)) on the top face
    L: float
    alpha: float
    A: float
    d0_thickness: float | None = None  # set once the D0 slab is attached

    @property
    def n_sub(self):
        return len(self.interfaces) + 1

    def level(self, k, x, y):
        """Height of the k-th boundary surface: 0 is the top face, N the bottom."""
        if k == 0:
            return np.full(np.broadcast(x, y).shape, float(self.box[2]))
        if k == self.n_sub:
            return np.zeros(np.broadcast(x, y).shape)
        return self.interfaces[k - 1](x, y)

    def subdomain_volumes(self, order=64):
        """Volumes ``|D_j|``, j = 1..N, by tensor Gauss-Legendre quadrature."""
        t, w = np.polynomial.legendre.leggauss(order)
        a1, a2 = self.box[0], self.box[1]
        x = 0.5 * a1 * (t + 1.0)
        y = 0.5 * a2 * (t + 1.0)
        X, Y = np.meshgrid(x, y, indexing="ij")
        W = np.outer(w, w) * 0.25 * a1 * a2
        return np.array([np.sum(W * (self.level(j - 1, X, Y) - self.level(j, X, Y)))
                         for j in range(1, self.n_sub + 1)])

    def in_sigma(self, x, y):
        (xl, xh), (yl, yh) = self.sigma
        return (x > xl) & (x < xh) & (y > yl) & (y < yh)

    def to_dict(self):
        return {"box": list(self.box), "r0": self.r0,
                "interfaces": [i.source for i in self.interfaces],
                "sigma": [list(s) for s in self.sigma], "L": self.L,
                "alpha": self.alpha, "A": self.A}


@dataclass
class RegularityReport:
    c1alpha_norm_estimate: float
    sup: float
    grad_sup: float
    holder: float
    passed: bool


def _holder_seminorm(G, hx, hy, alpha):
    """Largest ``|G(p) - G(q)| / |p - q|^alpha`` over dyadic lattice offsets."""
    nx, ny = G.shape[:2]
    best = 0.0
    steps = [1]
    while steps[-1] * 2 < max(nx, ny):
        steps.append(steps[-1] * 2)
    for s in steps:
        for di, dj in ((s, 0), (0, s), (s, s), (s, -s)):
            if di >= nx or abs(dj) >= ny:
                continue
            a = G[di:, max(dj, 0):ny + min(dj, 0)]
            b = G[:nx - di, max(-dj, 0):ny - max(dj, 0)]
            dist = np.hypot(di * hx, dj * hy)
            q = np.linalg.norm(a - b, axis=-1).max() / dist ** alpha
            best = max(best, float(q))
    return best


def validate_regularity(phi, r0, L, alpha, extent=(1.0, 1.0), grid=REG_GRID, tol=TOL_REG):
    """Sampled estimate of the scaled C^{1,alpha} norm of a graph function.

    The norm is ``sup|phi| + r0 sup|grad phi| + r0^(1+alpha) [grad phi]_alpha``
    taken over the rectangle ``[0, extent[0]] x [0, extent[1]]``; the check
    passes when the estimate is at most ``L r0 (1 + tol)``.
    """
    if not isinstance(phi, Interface):
        phi = Interface(phi)
    x = np.linspace(0.0, extent[0], grid)
    y = np.linspace(0.0, extent[1], grid)
    X, Y = np.meshgrid(x, y, indexing="ij")
    with np.errstate(all="ignore"):   # non-finite samples are reported below
        F = np.asarray(phi(X, Y), dtype=float)
        G = np.asarray(phi.grad(X, Y), dtype=float)
    if not (np.all(np.isfinite(F)) and np.all(np.isfinite(G))):
        raise InputError("NONFINITE_SAMPLE", "phi or its gradient is not finite on the grid")
    sup = float(np.abs(F).max())
    gsup = float(np.linalg.norm(G, axis=-1).max())
    hold = _holder_seminorm(G, x[1] - x[0], y[1] - y[0], alpha)
    est = sup + r0 * gsup + r0 ** (1.0 + alpha) * hold
    return RegularityReport(est, sup, gsup, hold, est <= L * r0 * (1.0 + tol))


def build_layered_partition(box=(1.0, 1.0, 1.0), r0=1.0, interfaces=(), sigma=None,
                            L=1.0, alpha=1.0, A=None, grid=REG_GRID):
    """Validated layered partition of ``[0,a1] x [0,a2] x [0,a3]``.

    ``interfaces`` are formulas in ``x1, x2`` (or :class:`Interface`), listed
    from the top down. ``sigma`` is a rectangle on the top face; ``None`` means
    the whole face. ``A=None`` sets the volume constant to ``|Omega| / r0^3``.
    """
    box = tuple(float(a) for a in box)
    if len(box) != 3 or min(box) <= 0:
        raise InputError("BAD_BOX", f"box {box}")
    ifs = tuple(i if isinstance(i, Interface) else Interface.from_formula(i) for i in interfaces)
    if sigma is None:
        sigma = ((0.0, box[0]), (0.0, box[1]))
    sigma = tuple((float(lo), float(hi)) for lo, hi in sigma)
    (xl, xh), (yl, yh) = sigma
    xl, xh = max(xl, 0.0), min(xh, box[0])
    yl, yh = max(yl, 0.0), min(yh, box[1])
    if xh <= xl or yh <= yl:
        raise InputError("EMPTY_SIGMA", f"patch {sigma} has no area on the top face")
    if A is None:
        A = box[0] * box[1] * box[2] / r0 ** 3
    dom = PartitionedDomain(box, float(r0), ifs, ((xl, xh), (yl, yh)), float(L), float(alpha), float(A))

    x = np.linspace(0.0, box[0], grid)
    y = np.linspace(0.0, box[1], grid)
    X, Y = np.meshgrid(x, y, indexing="ij")
    for k in range(dom.n_sub):
        upper, lower = dom.level(k, X, Y), dom.level(k + 1, X, Y)
        if not (np.all(np.isfinite(upper)) and np.all(np.isfinite(lower))):
            raise InputError("NONFINITE_SAMPLE", f"interface {k} not finite on the footprint")
        if np.any(lower >= upper):
            i, j = np.unravel_index(np.argmax(lower - upper), X.shape)
            raise InputError("INTERFACES_CROSS",
                             f"surfaces {k} and {k + 1} meet near x'=({X[i, j]:.4g}, {Y[i, j]:.4g})")
    vols = dom.subdomain_volumes()
    for j, v in enumerate(vols, start=1):
        if v > A * r0 ** 3 * (1.0 + 1e-12):
            raise InputError("VOLUME_BOUND", f"|D_{j}| = {v:.6g} > A r0^3 = {A * r0 ** 3:.6g}")
    # regularity is measured in the local frame: graph translated to vanish at the footprint centre
    cx, cy = 0.5 * box[0], 0.5 * box[1]
    for k, phi in enumerate(ifs, start=1):
        local = phi.shifted(float(phi(np.array(cx), np.array(cy))))
        rep = validate_regularity(local, r0, L, alpha, extent=box[:2], grid=grid)
        if not rep.passed:
            raise InputError("REGULARITY",
                             f"interface {k}: C^1,alpha estimate {rep.c1alpha_norm_estimate:.6g} > L r0 = {L * r0:.6g}")
    return dom


# ----------------------------------------------------------------------------- meshes

@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    tets: np.ndarray
    elem_label: np.ndarray
    facets: np.ndarray
    facet_tag: np.ndarray
    repaired: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, dt in (("vertices", float), ("tets", np.int64), ("elem_label", np.int64),
                         ("facets", np.int64), ("facet_tag", np.int64)):
            arr = np.ascontiguousarray(getattr(self, name), dtype=dt)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_dofs(self):
        return 3 * len(self.vertices)

    def signed_volumes(self):
        return signed_volumes(self.vertices, self.tets)

    @property
    def h(self):
        P = self.vertices[self.tets]
        d = P[:, :, None, :] - P[:, None, :, :]
        return float(np.sqrt((d ** 2).sum(-1)).max())

    def boundary_vertices(self):
        return np.unique(self.facets)

    def sigma_facets(self):
        return self.facets[self.facet_tag == SIGMA]


def signed_volumes(vertices, tets):
    P = vertices[tets]
    return np.einsum("ij,ij->i", np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]), P[:, 3] - P[:, 0]) / 6.0


def _kuhn_cells(shape):
    """Six tets per cube of an ``(nx, ny, nz)`` cell grid, as vertex grid indices."""
    nx, ny, nz = shape
    I, J, K = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    base = np.stack([I.ravel(), J.ravel(), K.ravel()], axis=1)
    tets = []
    for perm in permutations(range(3)):
        path = [np.zeros(3, dtype=int)]
        for ax in perm:
            nxt = path[-1].copy()
            nxt[ax] = 1
            path.append(nxt)
        tets.append(np.stack([base + p for p in path], axis=1))
    return np.concatenate(tets, axis=0)  # (6 * ncells, 4, 3)


def _grid_tets(shape):
    nx, ny, nz = shape
    idx = _kuhn_cells(shape)
    return (idx[..., 0] * (ny + 1) + idx[..., 1]) * (nz + 1) + idx[..., 2]


def _orient(vertices, tets):
    tets = tets.copy()
    neg = signed_volumes(vertices, tets) < 0
    tets[neg, 2], tets[neg, 3] = tets[neg, 3].copy(), tets[neg, 2].copy()
    return tets, int(neg.sum())


def boundary_faces(tets):
    """Faces that belong to exactly one tet, oriented outward."""
    local = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])
    faces = tets[:, local].reshape(-1, 3)
    key = np.sort(faces, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return faces[counts[inv.ravel()] == 1]


def _tag_facets(vertices, facets, top, in_sigma):
    c = vertices[facets].mean(axis=1)
    on_top = np.all(np.abs(vertices[facets][:, :, 2] - top) < 1e-12 * max(1.0, abs(top)), axis=1)
    return np.where(on_top & in_sigma(c[:, 0], c[:, 1]), SIGMA, REST)


def _interface_planes(dom, nz, xs, ys):
    """Grid plane index assigned to each interface, strictly decreasing from the top."""
    a3 = dom.box[2]
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    planes = []
    for k, phi in enumerate(dom.interfaces):
        planes.append(int(round(float(np.mean(phi(X, Y))) / a3 * nz)))
    # keep planes distinct and strictly inside (0, nz)
    for k in range(len(planes)):
        hi = nz - 1 - k if k == 0 else planes[k - 1] - 1
        planes[k] = min(max(planes[k], len(planes) - k), hi)
    if any(p <= 0 or p >= nz for p in planes) or len(set(planes)) != len(planes):
        raise InputError("MESH_TOO_COARSE", "not enough grid planes to separate the interfaces")
    return planes


def generate_mesh(dom: PartitionedDomain, n: int) -> Mesh:
    """Structured Kuhn mesh with interface planes warped onto ``phi_k``.

    ``n`` is the number of subdivisions per ``r0``. Between the fixed surfaces
    (bottom, interfaces, top) the grid planes are spread linearly along each
    vertical line, so each interface is matched by the piecewise-linear
    interpolant of ``phi_k`` on the grid.
    """
    if n < 1:
        raise InputError("BAD_MESH_LEVEL", f"n = {n}")
    a1, a2, a3 = dom.box
    shape = tuple(max(1, int(round(a * n / dom.r0))) for a in dom.box)
    nx, ny, nz = shape
    xs = np.linspace(0.0, a1, nx + 1)
    ys = np.linspace(0.0, a2, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    planes = _interface_planes(dom, nz, xs, ys) if dom.interfaces else []
    # anchors: (plane index, height field) from bottom to top
    anchors = [(0, np.zeros_like(X))]
    for k in reversed(range(len(planes))):
        anchors.append((planes[k], dom.interfaces[k](X, Y)))
    anchors.append((nz, np.full_like(X, a3)))
    Z = np.empty((nx + 1, ny + 1, nz + 1))
    for (l0, z0), (l1, z1) in zip(anchors[:-1], anchors[1:]):
        for l in range(l0, l1 + 1):
            t = (l - l0) / (l1 - l0)
            Z[:, :, l] = (1.0 - t) * z0 + t * z1
    V = np.stack([np.broadcast_to(X[:, :, None], Z.shape), np.broadcast_to(Y[:, :, None], Z.shape), Z], axis=-1)
    vertices = V.reshape(-1, 3)
    tets, _ = _orient(vertices, _grid_tets(shape))
    vol = signed_volumes(vertices, tets)
    hmax = max(a1 / nx, a2 / ny, a3 / nz) * np.sqrt(3.0)
    if np.any(np.abs(vol) < 1e-12 * hmax ** 3):
        raise NumericalError("DEGENERATE_TET", "interface warping collapsed an element")
    labels = label_by_centroid(dom, vertices, tets)
    facets = boundary_faces(tets)
    tags = _tag_facets(vertices, facets, a3, dom.in_sigma)
    return Mesh(vertices, tets, labels, facets, tags, meta={"grid": shape, "n": n})


def label_by_centroid(dom, vertices, tets):
    """Subdomain index of each tet; ties within ``1e-12 r0`` go to the lower layer."""
    c = vertices[tets].mean(axis=1)
    labels = np.ones(len(tets), dtype=np.int64)
    for k, phi in enumerate(dom.interfaces, start=1):
        below = c[:, 2] - phi(c[:, 0], c[:, 1]) < 1e-12 * dom.r0
        labels[below] = k + 1
    return labels


def extend_with_D0(dom: PartitionedDomain, mesh: Mesh):
    """Attach the slab ``D0`` of thickness ``(2/3) r0 L`` above the patch.

    The slab footprint is the bounding box of ``Sigma`` and must coincide
    with top-face grid lines. Slab tets carry label 0; top-face vertices are
    shared, not duplicated.
    """
    thick = 2.0 / 3.0 * dom.r0 * dom.L
    a3 = dom.box[2]
    (xl, xh), (yl, yh) = dom.sigma
    V = mesh.vertices
    top = np.abs(V[:, 2] - a3) < 1e-12 * max(1.0, a3)
    tx = np.unique(np.round(V[top, 0], 12))
    ty = np.unique(np.round(V[top, 1], 12))
    gx = tx[(tx >= xl - 1e-12) & (tx <= xh + 1e-12)]
    gy = ty[(ty >= yl - 1e-12) & (ty <= yh + 1e-12)]
    if (len(gx) < 2 or len(gy) < 2 or abs(gx[0] - xl) > 1e-9 or abs(gx[-1] - xh) > 1e-9
            or abs(gy[0] - yl) > 1e-9 or abs(gy[-1] - yh) > 1e-9):
        raise InputError("INCOMPATIBLE_MESH", "slab footprint does not match top-face grid lines")
    sig = mesh.sigma_facets()
    if len(sig) == 0:
        raise InputError("INCOMPATIBLE_MESH", "mesh has no SIGMA facets")
    h_top = np.diff(gx).mean()
    layers = max(1, int(round(thick / h_top)))
    nxs, nys = len(gx) - 1, len(gy) - 1
    # index of existing top vertices by rounded (x, y)
    lookup = {(round(V[i, 0], 12), round(V[i, 1], 12)): i for i in np.flatnonzero(top)}
    ids = np.empty((nxs + 1, nys + 1, layers + 1), dtype=np.int64)
    new = []
    nv = len(V)
    for i, x in enumerate(gx):
        for j, y in enumerate(gy):
            try:
                ids[i, j, 0] = lookup[(round(x, 12), round(y, 12))]
            except KeyError:
                raise InputError("INCOMPATIBLE_MESH", f"no top vertex at ({x}, {y})") from None
            for l in range(1, layers + 1):
                ids[i, j, l] = nv + len(new)
                new.append((x, y, a3 + thick * l / layers))
    vertices = np.vstack([V, np.array(new)])
    cells = _kuhn_cells((nxs, nys, layers))
    slab = ids[cells[..., 0], cells[..., 1], cells[..., 2]]
    slab, _ = _orient(vertices, slab)
    tets = np.vstack([mesh.tets, slab])
    labels = np.concatenate([mesh.elem_label, np.zeros(len(slab), dtype=np.int64)])
    facets = boundary_faces(tets)
    tags = np.full(len(facets), REST)
    dom2 = PartitionedDomain(dom.box, dom.r0, dom.interfaces, dom.sigma, dom.L, dom.alpha, dom.A,
                             d0_thickness=thick)
    meta = dict(mesh.meta, d0_layers=layers, d0_thickness=thick)
    return dom2, Mesh(vertices, tets, labels, facets, tags, meta=meta)


def generate_ball_mesh(radius=1.0, cells=12):
    """Tetrahedral mesh of the ball ``B_radius`` centred at the origin.

    A Kuhn mesh of the cube ``[-R, R]^3`` is pushed onto the ball by the
    radial map ``x -> x |x|_inf / |x|_2``. All tets carry label 1 and all
    boundary facets are tagged REST.
    """
    shape = (cells, cells, cells)
    g = np.linspace(-radius, radius, cells + 1)
    X, Y, Z = np.meshgrid(g, g, g, indexing="ij")
    P = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    r2 = np.linalg.norm(P, axis=1)
    rinf = np.abs(P).max(axis=1)
    scale = np.divide(rinf, r2, out=np.ones_like(r2), where=r2 > 0)
    P = P * scale[:, None]
    tets, _ = _orient(P, _grid_tets(shape))
    vol = signed_volumes(P, tets)
    if np.any(vol < 1e-12 * (2 * radius / cells) ** 3):
        raise NumericalError("DEGENERATE_TET", "ball map collapsed an element")
    facets = boundary_faces(tets)
    return Mesh(P, tets, np.ones(len(tets)), facets, np.full(len(facets), REST),
                meta={"ball_radius": radius, "cells": cells})
