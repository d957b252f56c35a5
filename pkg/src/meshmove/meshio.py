"""
Plain-text mesh/field files and SVG rendering.

File layout::

    MESHMOVE-MESH 1
    DOMAIN <kind> <n_vertices>
    <x> <y>                      (one line per vertex)
    NODES <n>
    <id> <x> <y> <tag>           (tag: interior | edge:<k> | corner:<k>)
    ELEMENTS <m>
    <id> <n0> <n1> <n2>
    VALUES <name> <n_components> (optional, repeatable)
    <id> <v0> [<v1> ...]
    END
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib import colormaps
from matplotlib.colors import Normalize, to_hex

from .errors import InvalidArgument, InvalidMesh
from .mesh import CORNER, EDGE, INTERIOR, DomainSpec, Mesh

MAGIC = "MESHMOVE-MESH"
VERSION = 1


def _tag(kind: int, index: int) -> str:
    if kind == INTERIOR:
        return "interior"
    return f"{'edge' if kind == EDGE else 'corner'}:{index}"


def _parse_tag(text: str, where: str):
    if text == "interior":
        return INTERIOR, -1
    name, _, idx = text.partition(":")
    if name not in ("edge", "corner") or not idx.lstrip("-").isdigit():
        raise InvalidMesh(f"{where}: bad boundary tag {text!r}")
    return (EDGE if name == "edge" else CORNER), int(idx)


def format_mesh(mesh: Mesh, coords=None, fields: dict | None = None) -> str:
    coords = mesh.nodes if coords is None else np.asarray(coords, dtype=float)
    if coords.shape != mesh.nodes.shape:
        raise InvalidArgument(f"coordinates of shape {coords.shape} do not match the mesh")
    lines = [f"{MAGIC} {VERSION}", f"DOMAIN {mesh.domain.kind} {mesh.domain.n_segments}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.domain.vertices]
    lines.append(f"NODES {mesh.n_nodes}")
    lines += [
        f"{i} {x:.17g} {y:.17g} {_tag(k, j)}"
        for i, ((x, y), k, j) in enumerate(zip(coords, mesh.tag_kind, mesh.tag_index))
    ]
    lines.append(f"ELEMENTS {mesh.n_triangles}")
    lines += [f"{i} {a} {b} {c}" for i, (a, b, c) in enumerate(mesh.triangles)]
    for name, values in (fields or {}).items():
        if not name or any(ch.isspace() for ch in name):
            raise InvalidArgument(f"field name {name!r} must be a non-empty word")
        v = np.asarray(values, dtype=float).reshape(mesh.n_nodes, -1)
        lines.append(f"VALUES {name} {v.shape[1]}")
        lines += [f"{i} " + " ".join(f"{x:.17g}" for x in row) for i, row in enumerate(v)]
    lines.append("END")
    return "\n".join(lines) + "\n"


def write_mesh(path, mesh: Mesh, coords=None, fields: dict | None = None) -> None:
    Path(path).write_text(format_mesh(mesh, coords, fields))


def parse_mesh(text: str, source: str = "<string>", validate: bool = True) -> tuple[Mesh, dict]:
    """Inverse of :func:`format_mesh`; returns the mesh and a dict of named field arrays."""
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    pos = 0

    def take(expect: str, n_fields: int):
        nonlocal pos
        if pos >= len(rows) or rows[pos][0] != expect or len(rows[pos]) != n_fields:
            got = " ".join(rows[pos]) if pos < len(rows) else "end of file"
            raise InvalidMesh(f"{source}: expected a {expect} line, got {got!r}")
        pos += 1
        return rows[pos - 1]

    def block(count: int, width: int, what: str):
        nonlocal pos
        out = rows[pos:pos + count]
        if len(out) != count or any(len(r) != width for r in out):
            raise InvalidMesh(f"{source}: {what} block needs {count} lines of {width} fields")
        pos += count
        return out

    try:
        head = take(MAGIC, 2)
        if int(head[1]) != VERSION:
            raise InvalidMesh(f"{source}: unsupported format version {head[1]}")
        _, kind, nv = take("DOMAIN", 3)
        verts = np.array(block(int(nv), 2, "DOMAIN"), dtype=float)
        domain = DomainSpec(kind, verts)
        n = int(take("NODES", 2)[1])
        node_rows = block(n, 4, "NODES")
        if [int(r[0]) for r in node_rows] != list(range(n)):
            raise InvalidMesh(f"{source}: node ids must run 0..{n - 1} in order")
        nodes = np.array([r[1:3] for r in node_rows], dtype=float)
        tags = [_parse_tag(r[3], f"{source} node {r[0]}") for r in node_rows]
        m = int(take("ELEMENTS", 2)[1])
        tri = np.array([r[1:] for r in block(m, 4, "ELEMENTS")], dtype=np.int64).reshape(m, 3)
        fields = {}
        while pos < len(rows) and rows[pos][0] == "VALUES":
            _, name, nc = take("VALUES", 3)
            vals = np.array([r[1:] for r in block(n, int(nc) + 1, f"VALUES {name}")], dtype=float)
            fields[name] = vals[:, 0] if int(nc) == 1 else vals
        take("END", 1)
    except ValueError as exc:
        if isinstance(exc, InvalidMesh):
            raise
        raise InvalidMesh(f"{source}: malformed number ({exc})") from None
    kinds = np.array([k for k, _ in tags])
    index = np.array([j for _, j in tags])
    return Mesh(nodes, tri, kinds, index, domain, validate=validate), fields


def read_mesh(path, validate: bool = True) -> tuple[Mesh, dict]:
    path = Path(path)
    if not path.exists():
        raise InvalidArgument(f"mesh file not found: {path}")
    return parse_mesh(path.read_text(), str(path), validate)


def render_svg(mesh: Mesh, coords=None, values=None, width: int = 600, cmap: str = "viridis",
               stroke: str = "#222222") -> str:
    """
    SVG drawing of the mesh, optionally coloured by a nodal scalar field.

    Triangles take the mean of their nodal values; inverted triangles are
    outlined in red.  Vector fields are coloured by magnitude.
    """
    coords = mesh.nodes if coords is None else np.asarray(coords, dtype=float)
    lo, hi = mesh.domain.bounding_box
    lo = np.minimum(lo, coords.min(axis=0))
    hi = np.maximum(hi, coords.max(axis=0))
    span = np.maximum(hi - lo, 1e-12)
    pad = 10.0
    scale = (width - 2 * pad) / span.max()
    height = int(np.ceil(span[1] * scale + 2 * pad))

    def xy(p):
        return pad + (p[..., 0] - lo[0]) * scale, height - pad - (p[..., 1] - lo[1]) * scale

    fills = ["none"] * mesh.n_triangles
    if values is not None:
        v = np.asarray(values, dtype=float)
        if v.ndim == 2:
            v = np.linalg.norm(v, axis=1)
        if v.shape != (mesh.n_nodes,):
            raise InvalidArgument(f"field has {v.shape[0]} values for {mesh.n_nodes} nodes")
        tv = v[mesh.triangles].mean(axis=1)
        norm = Normalize(vmin=float(tv.min()), vmax=float(tv.max()) if tv.max() > tv.min() else float(tv.min()) + 1.0)
        cm = colormaps[cmap]
        fills = [to_hex(cm(norm(t))) for t in tv]
    inverted = mesh.areas(coords) <= 0
    px, py = xy(coords)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">']
    dx, dy = xy(mesh.domain.vertices)
    outline = " ".join(f"{a:.3f},{b:.3f}" for a, b in zip(dx, dy))
    out.append(f'<polygon points="{outline}" fill="none" stroke="#888888" stroke-width="1.5"/>')
    for t, tri in enumerate(mesh.triangles):
        pts = " ".join(f"{px[i]:.3f},{py[i]:.3f}" for i in tri)
        colour = "#d62728" if inverted[t] else stroke
        sw = 1.2 if inverted[t] else 0.5
        out.append(f'<polygon points="{pts}" fill="{fills[t]}" stroke="{colour}" stroke-width="{sw}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
