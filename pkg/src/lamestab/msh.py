"""ASCII Gmsh MSH 2.2 reader and writer for labelled tetrahedral meshes.

Tets (element type 4) carry their subdomain label as physical tag.
Triangles (type 2) carry physical tag 1 (SIGMA) or 2 (REST), declared in
``$PhysicalNames``.
"""
from __future__ import annotations

import hashlib
import logging

import numpy as np

from .errors import InputError
from .geometry import REST, SIGMA, Mesh, signed_volumes

log = logging.getLogger(__name__)

_TAG_NAMES = {SIGMA: "SIGMA", REST: "REST"}


def to_msh_string(mesh: Mesh) -> str:
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$PhysicalNames", "2"]
    out += [f'2 {tag} "{name}"' for tag, name in _TAG_NAMES.items()]
    out += ["$EndPhysicalNames", "$Nodes", str(mesh.n_vertices)]
    out += [f"{i + 1} {x:.17g} {y:.17g} {z:.17g}" for i, (x, y, z) in enumerate(mesh.vertices)]
    out += ["$EndNodes", "$Elements", str(len(mesh.facets) + len(mesh.tets))]
    k = 1
    for tri, tag in zip(mesh.facets + 1, mesh.facet_tag):
        out.append(f"{k} 2 2 {tag} {tag} {tri[0]} {tri[1]} {tri[2]}")
        k += 1
    for tet, lab in zip(mesh.tets + 1, mesh.elem_label):
        out.append(f"{k} 4 2 {lab} {lab} {tet[0]} {tet[1]} {tet[2]} {tet[3]}")
        k += 1
    out.append("$EndElements")
    return "\n".join(out) + "\n"


def write_msh(mesh: Mesh, path) -> str:
    """Write ``mesh`` to ``path``; returns the sha256 of the written bytes."""
    text = to_msh_string(mesh)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return hashlib.sha256(text.encode()).hexdigest()


def mesh_hash(mesh: Mesh) -> str:
    return hashlib.sha256(to_msh_string(mesh).encode()).hexdigest()


def file_hash(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _parse_error(lineno, msg):
    return InputError("PARSE_ERROR", f"line {lineno}: {msg}", line=lineno)


def ingest_mesh(path) -> Mesh:
    """Read an MSH 2.2 file; negatively oriented tets are repaired in place."""
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise InputError("IO_ERROR", str(exc)) from None
    pos = 0
    names = {}
    nodes = ids = None
    tets, labels, tris, tags = [], [], [], []

    def take():
        nonlocal pos
        if pos >= len(lines):
            raise _parse_error(pos, "unexpected end of file")
        pos += 1
        return pos, lines[pos - 1].strip()

    while pos < len(lines):
        ln, line = take()
        if not line:
            continue
        if line == "$MeshFormat":
            ln, fmt = take()
            parts = fmt.split()
            if len(parts) < 3 or not parts[0].startswith("2.") or parts[1] != "0":
                raise _parse_error(ln, f"unsupported format {fmt!r}")
            take()
        elif line == "$PhysicalNames":
            ln, cnt = take()
            for _ in range(int(cnt)):
                ln, row = take()
                dim, tag, name = row.split(maxsplit=2)
                names[(int(dim), int(tag))] = name.strip('"')
            take()
        elif line == "$Nodes":
            ln, cnt = take()
            try:
                n = int(cnt)
            except ValueError:
                raise _parse_error(ln, f"bad node count {cnt!r}") from None
            nodes = np.empty((n, 3))
            ids = {}
            for i in range(n):
                ln, row = take()
                parts = row.split()
                if len(parts) != 4:
                    raise _parse_error(ln, f"bad node record {row!r}")
                try:
                    ids[int(parts[0])] = i
                    nodes[i] = [float(v) for v in parts[1:]]
                except ValueError:
                    raise _parse_error(ln, f"bad node record {row!r}") from None
            ln, end = take()
            if end != "$EndNodes":
                raise _parse_error(ln, "expected $EndNodes")
        elif line == "$Elements":
            if ids is None:
                raise _parse_error(ln, "$Elements before $Nodes")
            ln, cnt = take()
            for _ in range(int(cnt)):
                ln, row = take()
                try:
                    parts = [int(v) for v in row.split()]
                    etype, ntags = parts[1], parts[2]
                    etags = parts[3:3 + ntags]
                    conn = [ids[v] for v in parts[3 + ntags:]]
                except (ValueError, IndexError, KeyError):
                    raise _parse_error(ln, f"bad element record {row!r}") from None
                if etype == 4:
                    if ntags < 1:
                        raise InputError("UNTAGGED_ELEMENT", f"line {ln}: tet without physical tag", line=ln)
                    if len(conn) != 4:
                        raise _parse_error(ln, "tet needs 4 nodes")
                    tets.append(conn)
                    labels.append(etags[0])
                elif etype == 2:
                    if len(conn) != 3:
                        raise _parse_error(ln, "triangle needs 3 nodes")
                    name = names.get((2, etags[0])) if ntags else None
                    if name not in ("SIGMA", "REST"):
                        raise InputError("UNTAGGED_ELEMENT", f"line {ln}: triangle without SIGMA/REST tag", line=ln)
                    tris.append(conn)
                    tags.append(SIGMA if name == "SIGMA" else REST)
            ln, end = take()
            if end != "$EndElements":
                raise _parse_error(ln, "expected $EndElements")
        elif line.startswith("$"):
            # skip unknown sections
            end = "$End" + line[1:]
            while take()[1] != end:
                pass
        else:
            raise _parse_error(ln, f"unexpected content {line!r}")
    if nodes is None or not tets:
        raise _parse_error(len(lines), "no nodes or no tetrahedra")
    if SIGMA not in tags:
        raise InputError("UNTAGGED_ELEMENT", "no SIGMA-tagged boundary triangles")
    tets = np.array(tets, dtype=np.int64)
    neg = signed_volumes(nodes, tets) < 0
    if neg.any():
        log.warning("repaired orientation of %d tetrahedra in %s", int(neg.sum()), path)
        tets[neg, 2], tets[neg, 3] = tets[neg, 3].copy(), tets[neg, 2].copy()
    return Mesh(nodes, tets, np.array(labels), np.array(tris, dtype=np.int64).reshape(-1, 3),
                np.array(tags), repaired=int(neg.sum()))
