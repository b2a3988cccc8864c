"""Config-driven experiment runner.

Usage::

    lamestab run config.json [--out DIR] [--seed S] [--mesh-level n]

The config is a JSON object with a ``task`` and the sections the task needs
(see ``REQUIRED``). Exit status is 0 on success, 1 for configuration or input
errors and 2 for numerical failures. ``LAMESTAB_THREADS`` caps the BLAS
thread pool.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import traceback

import numpy as np

from .boundary import DtnMatrix, assemble_dtn, assemble_h_half_gram, build_sigma_basis
from .errors import InputError, LameError, NumericalError
from .forward import TOL_CG, affine_field, assemble_stiffness, energy, solve_dirichlet
from .geometry import build_layered_partition, extend_with_D0, generate_mesh
from .inverse import FROBENIUS, ReconstructionProblem, perturb_observation, reconstruct
from .material import LameParams, check_admissible, sup_distance
from .msh import file_hash, ingest_mesh, mesh_hash, write_msh
from .probes import (green_reciprocity_check, kelvin_decay_fit, kelvin_shell_residual,
                     lipschitz_probe, sub_rng, three_spheres_check)
from .report import export_report

log = logging.getLogger(__name__)

THREADS_ENV = "LAMESTAB_THREADS"

REQUIRED = {
    "FORWARD": ("geometry", "material", "mesh"),
    "DTN": ("geometry", "material", "mesh"),
    "RECONSTRUCT": ("material", "inverse"),
    "PROBE_LIPSCHITZ": ("geometry", "material", "mesh"),
    "PROBE_3SPHERES": ("material",),
    "PROBE_KELVIN": ("material",),
    "PROBE_RECIPROCITY": ("geometry", "material", "mesh"),
}


# ----------------------------------------------------------------------------- config

def load_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise InputError("CONFIG_UNREADABLE", str(exc)) from None
    except json.JSONDecodeError as exc:
        raise InputError("CONFIG_PARSE", str(exc)) from None
    if not isinstance(cfg, dict):
        raise InputError("CONFIG_PARSE", "top level must be an object")
    task = cfg.get("task")
    if task not in REQUIRED:
        raise InputError("CONFIG_BAD_TASK", f"task {task!r} not in {sorted(REQUIRED)}")
    for sec in REQUIRED[task]:
        if not isinstance(cfg.get(sec), dict):
            raise InputError("CONFIG_MISSING_SECTION", f"task {task} needs a {sec!r} section")
    return cfg


def _domain(cfg):
    g = cfg["geometry"]
    try:
        return build_layered_partition(box=g.get("box", (1.0, 1.0, 1.0)), r0=g.get("r0", 1.0),
                                       interfaces=g.get("interfaces", []), sigma=g.get("sigma"),
                                       L=g.get("L", 1.0), alpha=g.get("alpha", 1.0), A=g.get("A"))
    except (TypeError, ValueError) as exc:
        raise InputError("CONFIG_BAD_VALUE", f"geometry: {exc}") from None


def _params(section, key_lam="lambda", key_mu="mu"):
    try:
        return LameParams.from_layers(section[key_lam], section[key_mu],
                                      section.get("alpha0", 0.5), section.get("beta0", 1.0))
    except KeyError as exc:
        raise InputError("CONFIG_BAD_VALUE", f"material entry {exc} missing") from None
    except (TypeError, ValueError) as exc:
        raise InputError("CONFIG_BAD_VALUE", f"material: {exc}") from None


def _mesh(cfg, dom):
    sec = cfg.get("mesh", {})
    if sec.get("path"):
        mesh = ingest_mesh(sec["path"])
    else:
        mesh = generate_mesh(dom, int(sec.get("n", 6)))
    if sec.get("extend_d0"):
        dom, mesh = extend_with_D0(dom, mesh)
    return dom, mesh


def _tol(cfg):
    return float(cfg.get("solver", {}).get("tol_cg", TOL_CG))


# ----------------------------------------------------------------------------- tasks

def task_forward(cfg, out):
    dom, mesh = _mesh(cfg, _domain(cfg))
    p = _params(cfg["material"])
    sec = cfg.get("forward", {})
    sys_ = assemble_stiffness(mesh, p, dom.r0)
    if "basis_index" in sec:
        basis = build_sigma_basis(mesh)
        psi = np.zeros(mesh.n_dofs)
        psi[basis.dofs[int(sec["basis_index"])]] = 1.0
    else:
        psi = affine_field(mesh.vertices, sec.get("matrix", np.eye(3)), sec.get("offset", (0.0, 0.0, 0.0)))
    u = solve_dirichlet(sys_, psi, _tol(cfg))
    e = energy(u, mesh, p, dom.r0)
    write_msh(mesh, os.path.join(out, "mesh.msh"))
    U = u.reshape(-1, 3)
    cols = ["vertex", "x1", "x2", "x3", "u1", "u2", "u3"]
    rows = [dict(zip(cols, (i, *map(float, mesh.vertices[i]), *map(float, U[i]))))
            for i in range(mesh.n_vertices)]
    export_report(out, "forward", {"energy": e, "n_vertices": mesh.n_vertices, "n_tets": len(mesh.tets),
                                   "max_displacement": float(np.linalg.norm(U, axis=1).max()),
                                   "mesh_hash": mesh_hash(mesh)}, cols, rows)
    return f"FORWARD: {mesh.n_vertices} vertices, energy={e:.6g}"


def task_dtn(cfg, out):
    dom, mesh = _mesh(cfg, _domain(cfg))
    p = _params(cfg["material"])
    rep = check_admissible(p)
    if not rep.passed:
        raise InputError("INADMISSIBLE", str(rep.violations))
    basis = build_sigma_basis(mesh)
    dtn = assemble_dtn(mesh, p, basis, r0=dom.r0, tol=_tol(cfg))
    write_msh(mesh, os.path.join(out, "mesh.msh"))
    dtn.save(os.path.join(out, "dtn"))
    export_report(out, "admissibility", rep.to_dict())
    return f"DTN: m={dtn.m}, asymmetry={dtn.asymmetry():.3g}, ||L||_F={np.linalg.norm(dtn.L):.6g}"


def task_reconstruct(cfg, out):
    sec = cfg["inverse"]
    if "obs" not in sec or "init" not in sec:
        raise InputError("CONFIG_BAD_VALUE", "inverse section needs 'obs' and 'init'")
    obs = DtnMatrix.load(sec["obs"])
    stem = str(sec["obs"]).rsplit(".", 1)[0] if str(sec["obs"]).endswith((".bin", ".json")) else str(sec["obs"])
    mesh_path = sec.get("mesh", os.path.join(os.path.dirname(stem), "mesh.msh"))
    mesh = ingest_mesh(mesh_path)
    if file_hash(mesh_path) != obs.mesh_hash:
        raise InputError("MESH_HASH_MISMATCH", f"{mesh_path} does not match the observation header")
    basis = build_sigma_basis(mesh)
    mat = cfg["material"]
    init = _params(dict(sec["init"], alpha0=mat.get("alpha0", 0.5), beta0=mat.get("beta0", 1.0)))
    noise = sec.get("noise")
    if noise:
        obs = perturb_observation(obs, float(noise), sub_rng(cfg.get("seed", 0), 0))
    prob = ReconstructionProblem(obs, mesh, basis, init, weights=sec.get("metric", FROBENIUS),
                                 noise_level=sec.get("noise_level"), max_iter=int(sec.get("max_iter", 100)),
                                 tol_cg=_tol(cfg))
    res = reconstruct(prob)
    doc = res.to_dict()
    doc["iterations"] = len(res.trace) - 1
    err = ""
    if "lambda" in mat and "mu" in mat:
        truth = _params(mat)
        doc["truth"] = truth.to_dict()
        doc["error_sup"] = sup_distance(res.params, truth)
        err = f", error={doc['error_sup']:.3g}"
    cols = ["iteration", "misfit", "step", "accepted"]
    export_report(out, "reconstruction", doc, cols, res.trace)
    return (f"RECONSTRUCT: converged={res.converged} ({res.reason}), "
            f"{doc['iterations']} iterations, misfit={res.misfit:.3g}{err}")


def task_lipschitz(cfg, out):
    dom = _domain(cfg)
    mat = cfg["material"]
    sec = cfg.get("probe", {})
    levels = sec.get("levels", [cfg.get("mesh", {}).get("n", 6), cfg.get("mesh", {}).get("n", 6) + 2])
    rep = lipschitz_probe(dom, n_samples=int(sec.get("n_samples", 50)), levels=levels,
                          alpha0=mat.get("alpha0", 0.5), beta0=mat.get("beta0", 1.0),
                          seed=cfg.get("seed", 0), mode=sec.get("mode", "independent"),
                          refine_top=int(sec.get("refine_top", 5)),
                          full_levels=bool(sec.get("full_levels", False)), tol=_tol(cfg))
    cols, rows = rep.rows()
    export_report(out, "lipschitz", rep.summary(), cols, rows)
    by = ", ".join(f"n={k}: {v:.4g}" for k, v in rep.constants_by_level.items())
    return f"PROBE_LIPSCHITZ: {len(rep.samples)} pairs, C_emp={rep.empirical_constant:.4g} ({by})"


def task_three_spheres(cfg, out):
    mat = cfg["material"]
    sec = cfg.get("probe", {})
    lam = mat.get("lambda", [1.0])[0]
    mu = mat.get("mu", [1.0])[0]
    fit = three_spheres_check(radius=float(sec.get("radius", 1.0)),
                              fractions=tuple(sec.get("fractions", (0.25, 0.5, 1.0))),
                              n_solutions=int(sec.get("n_solutions", 50)), cells=int(sec.get("cells", 16)),
                              lam=lam, mu=mu, max_degree=int(sec.get("max_degree", 4)),
                              seed=cfg.get("seed", 0), tol=_tol(cfg))
    cols = ["index", "r1", "r2", "r3", "n1", "n2", "n3"]
    rows = [dict(zip(cols, (i, *map(float, r.radii), *map(float, r.norms)))) for i, r in enumerate(fit.records)]
    doc = {"delta": fit.delta, "C": fit.C, "violations": fit.violations,
           "curve": [list(c) for c in fit.curve], "n_solutions": len(fit.records)}
    export_report(out, "three_spheres", doc, cols, rows)
    return f"PROBE_3SPHERES: delta={fit.delta:.3g}, C={fit.C:.6g}, violations={fit.violations}"


def task_kelvin(cfg, out):
    mat = cfg["material"]
    lam = float(mat.get("lambda", [1.0])[0])
    mu = float(mat.get("mu", [1.0])[0])
    nu = lam / (2.0 * (lam + mu))
    fit = kelvin_decay_fit(mu, nu, seed=cfg.get("seed", 0))
    shell, res = kelvin_shell_residual(mu, nu, tuple(cfg.get("probe", {}).get("shell", (1.0, 2.0))),
                                       seed=cfg.get("seed", 0))
    cols = ["index", "x1", "x2", "x3", "scaled_residual"]
    rows = [dict(zip(cols, (i, *map(float, x), float(r)))) for i, (x, r) in enumerate(zip(shell, res))]
    doc = dict(fit, mu=mu, nu=nu, max_scaled_residual=float(max(res)))
    export_report(out, "kelvin", doc, cols, rows)
    return (f"PROBE_KELVIN: slopes {fit['value_slope']:.5f} / {fit['gradient_slope']:.5f}, "
            f"residual={max(res):.3g}")


def task_reciprocity(cfg, out):
    dom, mesh = _mesh(cfg, _domain(cfg))
    p = _params(cfg["material"])
    n_pairs = int(cfg.get("probe", {}).get("n_pairs", 20))
    worst = green_reciprocity_check(mesh, p, n_pairs=n_pairs, seed=cfg.get("seed", 0), tol=_tol(cfg))
    export_report(out, "reciprocity", {"max_asymmetry": worst, "n_pairs": n_pairs,
                                       "mesh_hash": mesh_hash(mesh)})
    return f"PROBE_RECIPROCITY: {n_pairs} pairs, max asymmetry={worst:.3g}"


TASKS = {
    "FORWARD": task_forward,
    "DTN": task_dtn,
    "RECONSTRUCT": task_reconstruct,
    "PROBE_LIPSCHITZ": task_lipschitz,
    "PROBE_3SPHERES": task_three_spheres,
    "PROBE_KELVIN": task_kelvin,
    "PROBE_RECIPROCITY": task_reciprocity,
}


# ----------------------------------------------------------------------------- entry points

def _origin(exc):
    """Module name where an error was raised, for the error line."""
    tb = traceback.extract_tb(exc.__traceback__)
    for fr in reversed(tb):
        if os.path.basename(os.path.dirname(fr.filename)) == "lamestab":
            return os.path.splitext(os.path.basename(fr.filename))[0]
    return "cli"


def run(config_path, out=None, seed=None, mesh_level=None):
    """Run one task; returns the exit code."""
    try:
        cfg = load_config(config_path)
        if seed is not None:
            cfg["seed"] = int(seed)
        if mesh_level is not None:
            cfg.setdefault("mesh", {})["n"] = int(mesh_level)
        out = out or cfg.get("output", "out")
        try:
            os.makedirs(out, exist_ok=True)
        except OSError as exc:
            raise InputError("IO_ERROR", str(exc)) from None
        line = TASKS[cfg["task"]](cfg, out)
    except InputError as exc:
        print(f"error [{_origin(exc)}] {exc}", file=sys.stderr)
        return 1
    except (NumericalError, np.linalg.LinAlgError) as exc:
        code = exc if isinstance(exc, LameError) else f"LINALG: {exc}"
        print(f"error [{_origin(exc)}] {code}", file=sys.stderr)
        return 2
    print(line)
    return 0


def main(argv=None):
    ap = argparse.ArgumentParser(prog="lamestab", description="Lipschitz stability experiments for layered Lamé media")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run the task described by a JSON config")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides the config)")
    r.add_argument("--seed", type=int)
    r.add_argument("--mesh-level", type=int, dest="mesh_level")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get(THREADS_ENV)
    if threads:
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=int(threads)):
            return run(args.config, args.out, args.seed, args.mesh_level)
    return run(args.config, args.out, args.seed, args.mesh_level)


if __name__ == "__main__":
    sys.exit(main())
