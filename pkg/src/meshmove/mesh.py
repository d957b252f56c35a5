"""
Triangular meshes on polygonal 2-D domains.

A :class:`Mesh` holds node coordinates, CCW triangle connectivity and a
per-node boundary tag.  Deformed meshes share the topology of the mesh they
were moved from; only the coordinates change, so most downstream code passes
``(mesh, coords)`` pairs around instead of rebuilding meshes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from matplotlib.path import Path
from scipy.spatial import Delaunay

from .errors import InvalidArgument, InvalidDomain, InvalidMesh

INTERIOR = 0
EDGE = 1
CORNER = 2

_TAG_NAMES = {INTERIOR: "interior", EDGE: "edge", CORNER: "corner"}


def _segments_intersect(p1, p2, q1, q2):
    def orient(a, b, c):
        return np.sign((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    return o1 * o2 < 0 and o3 * o4 < 0


@dataclass(frozen=True, eq=False)
class DomainSpec:
    """Polygonal domain with CCW vertices; segment ``k`` joins vertex k to k+1."""

    kind: str
    vertices: np.ndarray

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=float)
        if self.kind not in ("unit_square", "polygon"):
            raise InvalidDomain(f"unknown domain kind {self.kind!r}")
        if verts.ndim != 2 or verts.shape[1] != 2 or len(verts) < 3:
            raise InvalidDomain("polygon needs at least 3 vertices of shape (V, 2)")
        verts.setflags(write=False)
        object.__setattr__(self, "vertices", verts)
        nv = len(verts)
        for i in range(nv):
            for j in range(i + 1, nv):
                if j == i + 1 or (i == 0 and j == nv - 1):
                    continue
                if _segments_intersect(verts[i], verts[(i + 1) % nv], verts[j], verts[(j + 1) % nv]):
                    raise InvalidDomain(f"polygon is self-intersecting (segments {i} and {j})")
        if self.area <= 0:
            raise InvalidDomain("polygon vertices must be counter-clockwise with positive area")

    @classmethod
    def unit_square(cls) -> "DomainSpec":
        return cls("unit_square", np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]))

    @classmethod
    def polygon(cls, vertices) -> "DomainSpec":
        return cls("polygon", vertices)

    @classmethod
    def heptagon(cls) -> "DomainSpec":
        """Irregular convex heptagon inscribed in the unit square."""
        return cls.polygon(
            [[0.22, 0.0], [0.78, 0.06], [1.0, 0.42], [0.86, 0.88], [0.42, 1.0], [0.04, 0.8], [0.0, 0.3]]
        )

    @property
    def n_segments(self) -> int:
        return len(self.vertices)

    @property
    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def area(self) -> float:
        x, y = np.asarray(self.vertices, dtype=float).T
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def segment(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices[k], self.vertices[(k + 1) % self.n_segments]

    def tangents(self) -> np.ndarray:
        """Unit tangent of every segment, shape (V, 2)."""
        d = np.roll(self.vertices, -1, axis=0) - self.vertices
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    def contains(self, points, tol: float = 1e-12) -> np.ndarray:
        """Inside-or-on-boundary predicate."""
        points = np.atleast_2d(points)
        inside = Path(self.vertices).contains_points(points)
        return inside | (self.distance_to_boundary(points) <= tol)

    def _segment_projection(self, points):
        points = np.atleast_2d(points)
        a = self.vertices[None, :, :]
        b = np.roll(self.vertices, -1, axis=0)[None, :, :]
        ab = b - a
        t = np.einsum("pkd,pkd->pk", points[:, None, :] - a, ab) / np.einsum("pkd,pkd->pk", ab, ab)
        t = np.clip(t, 0.0, 1.0)
        proj = a + t[..., None] * ab
        dist = np.linalg.norm(points[:, None, :] - proj, axis=2)
        return proj, dist, t

    def distance_to_boundary(self, points) -> np.ndarray:
        _, dist, _ = self._segment_projection(points)
        return dist.min(axis=1)

    def nearest_boundary_point(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Closest boundary point and the segment it lies on."""
        proj, dist, _ = self._segment_projection(points)
        k = dist.argmin(axis=1)
        return proj[np.arange(len(k)), k], k

    def project_inside(self, points, tol: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
        """Pull exterior points onto the nearest boundary point; returns (points, moved mask)."""
        points = np.array(points, dtype=float)
        outside = ~Path(self.vertices).contains_points(points, radius=-tol if tol else 0.0)
        outside &= self.distance_to_boundary(points) > 1e-14
        if outside.any():
            points[outside] = self.nearest_boundary_point(points[outside])[0]
        return points, outside

    def to_dict(self) -> dict:
        return {"kind": self.kind, "vertices": self.vertices.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSpec":
        return cls(d["kind"], d["vertices"])

    def __eq__(self, other):
        return (
            isinstance(other, DomainSpec)
            and self.kind == other.kind
            and self.vertices.shape == other.vertices.shape
            and np.array_equal(self.vertices, other.vertices)
        )

    def __hash__(self):
        return hash((self.kind, self.vertices.shape, self.vertices.tobytes()))


def signed_area(a, b, c) -> float:
    """Half the cross product (b - a) x (c - a); positive iff a, b, c are CCW."""
    return 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))


def signed_areas(coords, triangles) -> np.ndarray:
    coords = np.asarray(coords, dtype=float)
    a, b, c = coords[triangles[:, 0]], coords[triangles[:, 1]], coords[triangles[:, 2]]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


@dataclass(frozen=True, eq=False)
class Mesh:
    """
    Triangle mesh with boundary tags.

    Parameters
    ----------
    nodes : array, shape (N, 2)
        Node coordinates.
    triangles : array, shape (M, 3)
        CCW node-index triples.
    tag_kind : array, shape (N,)
        One of ``INTERIOR``, ``EDGE``, ``CORNER``.
    tag_index : array, shape (N,)
        Segment index for edge nodes, vertex index for corners, -1 otherwise.
    domain : DomainSpec
    """

    nodes: np.ndarray
    triangles: np.ndarray
    tag_kind: np.ndarray
    tag_index: np.ndarray
    domain: DomainSpec
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        for name, dtype in (("nodes", float), ("triangles", np.int64), ("tag_kind", np.int64), ("tag_index", np.int64)):
            arr = np.array(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.validate:
            self._check()

    def _check(self):
        n = len(self.nodes)
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 2:
            raise InvalidMesh(f"nodes must have shape (N, 2), got {self.nodes.shape}")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise InvalidMesh(f"triangles must have shape (M, 3), got {self.triangles.shape}")
        if self.tag_kind.shape != (n,) or self.tag_index.shape != (n,):
            raise InvalidMesh("boundary tags must have one entry per node")
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= n):
            raise InvalidMesh("triangle references a missing node")
        if np.setdiff1d(np.arange(n), self.triangles.ravel()).size:
            raise InvalidMesh("mesh has orphan nodes")
        if np.any(self.areas() <= 0):
            raise InvalidMesh("reference mesh has non-positive triangle areas")
        for k in range(self.domain.n_segments):
            on = np.flatnonzero((self.tag_kind == EDGE) & (self.tag_index == k))
            if on.size:
                a, b = self.domain.segment(k)
                ab = b - a
                t = np.clip((self.nodes[on] - a) @ ab / (ab @ ab), 0.0, 1.0)
                if np.max(np.linalg.norm(self.nodes[on] - (a + t[:, None] * ab), axis=1)) > 1e-12:
                    raise InvalidMesh(f"node tagged edge({k}) is off segment {k}")
        corners = np.flatnonzero(self.tag_kind == CORNER)
        if corners.size and np.max(np.abs(self.nodes[corners] - self.domain.vertices[self.tag_index[corners]])) > 1e-12:
            raise InvalidMesh("corner-tagged node does not sit on its polygon vertex")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def tag(self, i: int) -> str:
        kind = int(self.tag_kind[i])
        if kind == INTERIOR:
            return "interior"
        return f"{_TAG_NAMES[kind]}:{int(self.tag_index[i])}"

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        return self.tag_kind != INTERIOR

    def areas(self, coords=None) -> np.ndarray:
        return signed_areas(self.nodes if coords is None else coords, self.triangles)

    @cached_property
    def edges(self) -> np.ndarray:
        """Sorted undirected edges (i < j), shape (E, 2)."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        """Undirected edges belonging to exactly one triangle."""
        t = self.triangles
        e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return uniq[counts == 1]

    @cached_property
    def boundary_neighbors(self) -> np.ndarray:
        """The two boundary-edge neighbours of every boundary node, -1 for interior nodes."""
        nb = -np.ones((self.n_nodes, 2), dtype=np.int64)
        fill = np.zeros(self.n_nodes, dtype=np.int64)
        for a, b in self.boundary_edges:
            for p, q in ((a, b), (b, a)):
                if fill[p] < 2:
                    nb[p, fill[p]] = q
                fill[p] += 1
        return nb

    @cached_property
    def density(self) -> float:
        """Nodes per unit length, estimated from the mean edge length."""
        length = np.linalg.norm(self.nodes[self.edges[:, 0]] - self.nodes[self.edges[:, 1]], axis=1)
        return float(1.0 / np.mean(length))

    @cached_property
    def boundary_tangents(self) -> np.ndarray:
        """Unit tangent per node for edge nodes, zeros elsewhere."""
        tang = np.zeros_like(self.nodes)
        on = self.tag_kind == EDGE
        tang[on] = self.domain.tangents()[self.tag_index[on]]
        return tang

    def moved(self, coords) -> "Mesh":
        """Same topology at new coordinates, without the reference-orientation check."""
        coords = np.asarray(coords, dtype=float)
        if coords.shape != self.nodes.shape:
            raise InvalidArgument(f"expected coordinates of shape {self.nodes.shape}, got {coords.shape}")
        return Mesh(coords, self.triangles, self.tag_kind, self.tag_index, self.domain, validate=False)

    def same_topology(self, other: "Mesh") -> bool:
        return self.triangles.shape == other.triangles.shape and np.array_equal(self.triangles, other.triangles)


def build_unit_square_mesh(n: int) -> Mesh:
    """n x n lattice on [0, 1]^2, each cell split along its lower-left to upper-right diagonal."""
    if int(n) != n or n < 2:
        raise InvalidArgument(f"need n >= 2 nodes per side, got {n}")
    n = int(n)
    s = np.linspace(0.0, 1.0, n)
    X, Y = np.meshgrid(s, s)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange(n * n).reshape(n, n)
    ll, lr, ul, ur = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel(), idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    tris = np.empty((2 * len(ll), 3), dtype=np.int64)
    tris[0::2] = np.column_stack([ll, lr, ur])
    tris[1::2] = np.column_stack([ll, ur, ul])

    i, j = np.divmod(np.arange(n * n), n)  # i: row (y), j: column (x)
    kind = np.full(n * n, INTERIOR)
    index = np.full(n * n, -1)
    for seg, mask in enumerate((i == 0, j == n - 1, i == n - 1, j == 0)):
        kind[mask] = EDGE
        index[mask] = seg
    for vert, (r, c) in enumerate(((0, 0), (0, n - 1), (n - 1, n - 1), (n - 1, 0))):
        kind[r * n + c] = CORNER
        index[r * n + c] = vert
    return Mesh(nodes, tris, kind, index, DomainSpec.unit_square())


def _boundary_points(domain: DomainSpec, density: float):
    pts, kind, index = [], [], []
    for k in range(domain.n_segments):
        a, b = domain.segment(k)
        m = max(1, int(np.ceil(np.linalg.norm(b - a) * density - 1e-9)))
        t = np.arange(m) / m
        pts.append(a + t[:, None] * (b - a))
        kind += [CORNER] + [EDGE] * (m - 1)
        index += [k] * m
    return np.concatenate(pts), np.array(kind), np.array(index)


def build_polygon_mesh(domain: DomainSpec, density: float) -> Mesh:
    """
    Deterministic conforming Delaunay triangulation of a polygon.

    Boundary segments are subdivided about ``density`` times per unit length
    and an axis-aligned lattice of spacing ``1 / density`` fills the interior,
    keeping lattice points at least half a spacing away from the boundary.
    Boundary sub-segments missing from the triangulation are split at their
    midpoint until every one of them is a mesh edge.
    """
    if density < 3:
        raise InvalidArgument(f"density must be >= 3, got {density}")
    if not isinstance(domain, DomainSpec):
        raise InvalidDomain("domain must be a DomainSpec")
    h = 1.0 / density
    lo, hi = domain.bounding_box
    xs = lo[0] + h * np.arange(int(np.floor((hi[0] - lo[0]) / h + 1e-9)) + 1)
    ys = lo[1] + h * np.arange(int(np.floor((hi[1] - lo[1]) / h + 1e-9)) + 1)
    X, Y = np.meshgrid(xs, ys)
    lattice = np.column_stack([X.ravel(), Y.ravel()])
    keep = Path(domain.vertices).contains_points(lattice) & (domain.distance_to_boundary(lattice) >= 0.5 * h - 1e-12)
    interior = lattice[keep]

    bpts, bkind, bindex = _boundary_points(domain, density)
    for _ in range(20):
        nb = len(bpts)
        pts = np.concatenate([bpts, interior])
        tri = Delaunay(pts).simplices.astype(np.int64)
        area = signed_areas(pts, tri)
        flip = area < 0
        tri[flip] = tri[flip][:, [0, 2, 1]]
        area = np.abs(area)
        centroid = pts[tri].mean(axis=1)
        tri = tri[(area > 1e-14 * h * h) & Path(domain.vertices).contains_points(centroid)]

        edge_set = {tuple(e) for e in np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1)}
        missing = [i for i in range(nb) if tuple(sorted((i, (i + 1) % nb))) not in edge_set]
        if not missing:
            break
        new_pts, new_kind, new_index = [], [], []
        for i in range(nb):
            new_pts.append(bpts[i])
            new_kind.append(bkind[i])
            new_index.append(bindex[i])
            if i in missing:
                new_pts.append(0.5 * (bpts[i] + bpts[(i + 1) % nb]))
                new_kind.append(EDGE)
                new_index.append(bindex[i])
        bpts, bkind, bindex = np.array(new_pts), np.array(new_kind), np.array(new_index)
    else:
        raise InvalidDomain("could not build a boundary-conforming triangulation")

    used = np.unique(tri)
    if used.size != len(pts):
        remap = -np.ones(len(pts), dtype=np.int64)
        remap[used] = np.arange(used.size)
        tri = remap[tri]
        kind = np.concatenate([bkind, np.full(len(interior), INTERIOR)])[used]
        index = np.concatenate([bindex, np.full(len(interior), -1)])[used]
        pts = pts[used]
    else:
        kind = np.concatenate([bkind, np.full(len(interior), INTERIOR)])
        index = np.concatenate([bindex, np.full(len(interior), -1)])
    return Mesh(pts, tri, kind, index, domain)


def inversion_fraction(mesh: Mesh, coords) -> float:
    """Fraction of triangles whose signed area is <= 0 under ``coords``."""
    coords = np.asarray(coords, dtype=float)
    if coords.shape != mesh.nodes.shape:
        raise InvalidArgument(f"expected {mesh.n_nodes} coordinates, got array of shape {coords.shape}")
    if mesh.n_triangles == 0:
        return 0.0
    return float(np.mean(mesh.areas(coords) <= 0.0))


@dataclass(frozen=True, eq=False)
class MeshGraph:
    """Directed graph view of a mesh; edge ``e`` carries a message from ``senders[e]`` to ``receivers[e]``."""

    node_features: np.ndarray
    senders: np.ndarray
    receivers: np.ndarray
    edge_features: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.node_features)

    @property
    def n_edges(self) -> int:
        return len(self.senders)

    def undirected_edges(self) -> np.ndarray:
        e = np.sort(np.column_stack([self.senders, self.receivers]), axis=1)
        return np.unique(e, axis=0)


def edge_features(coords, senders, receivers, node_features) -> np.ndarray:
    """``[u_i - u_j, |u_i - u_j|, v_i, v_j]`` for receiver i and sender j."""
    coords = np.asarray(coords, dtype=float)
    rel = coords[receivers] - coords[senders]
    dist = np.linalg.norm(rel, axis=1, keepdims=True)
    nf = np.asarray(node_features, dtype=float)
    return np.concatenate([rel, dist, nf[receivers], nf[senders]], axis=1)


def mesh_to_graph(mesh: Mesh, node_payload, coords=None) -> MeshGraph:
    """Bidirectional graph of the mesh with relative-position edge features."""
    payload = np.asarray(node_payload, dtype=float)
    if payload.ndim == 1:
        payload = payload.reshape(len(payload), -1) if payload.size else np.zeros((mesh.n_nodes, 0))
    if len(payload) != mesh.n_nodes:
        raise InvalidArgument(f"payload has {len(payload)} rows for {mesh.n_nodes} nodes")
    e = mesh.edges
    senders = np.empty(2 * len(e), dtype=np.int64)
    receivers = np.empty(2 * len(e), dtype=np.int64)
    senders[0::2], receivers[0::2] = e[:, 0], e[:, 1]
    senders[1::2], receivers[1::2] = e[:, 1], e[:, 0]
    coords = mesh.nodes if coords is None else coords
    return MeshGraph(payload, senders, receivers, edge_features(coords, senders, receivers, payload))
