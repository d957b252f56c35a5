"""
P1 finite elements on triangle meshes.

Poisson with strong Dirichlet data, viscous Burgers with backward Euler and
Picard-linearised advection, lumped-mass gradient/Hessian recovery, exact P1
L2 norms and field transfer between meshes of identical topology.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from matplotlib.tri import Triangulation

from .errors import InvalidArgument, InvalidMesh, NumericFailure
from .mesh import Mesh

SOLVER_RTOL = 1e-10
HULL_TOL = 1e-9


@dataclass(eq=False)
class ScalarField:
    mesh: Mesh
    values: np.ndarray
    clamped: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_nodes,):
            raise InvalidArgument(f"scalar field needs {self.mesh.n_nodes} values, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise InvalidArgument("field values must be finite")

    @property
    def n_components(self) -> int:
        return 1

    def components(self) -> list[np.ndarray]:
        return [self.values]


@dataclass(eq=False)
class VectorField:
    mesh: Mesh
    values: np.ndarray
    clamped: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_nodes, 2):
            raise InvalidArgument(f"vector field needs shape ({self.mesh.n_nodes}, 2), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise InvalidArgument("field values must be finite")

    @property
    def n_components(self) -> int:
        return 2

    def components(self) -> list[np.ndarray]:
        return [self.values[:, 0], self.values[:, 1]]


@dataclass(frozen=True)
class AnalyticField:
    """Closed-form field ``func(x, y)``; returns (N,) or (N, 2) arrays."""

    func: Callable

    def __call__(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return np.asarray(self.func(points[:, 0], points[:, 1]), dtype=float)

    def on(self, mesh: Mesh):
        vals = self(mesh.nodes)
        if vals.ndim == 2 and vals.shape[1] == 2:
            return VectorField(mesh, vals)
        return ScalarField(mesh, vals)


@dataclass(frozen=True)
class NodalHessian:
    hxx: np.ndarray
    hxy: np.ndarray
    hyy: np.ndarray

    @property
    def hyx(self) -> np.ndarray:
        return self.hxy

    def frobenius(self) -> np.ndarray:
        return np.sqrt(self.hxx**2 + 2.0 * self.hxy**2 + self.hyy**2)

    def matrices(self) -> np.ndarray:
        return np.stack([np.stack([self.hxx, self.hxy], -1), np.stack([self.hxy, self.hyy], -1)], -2)


def p1_geometry(coords, triangles):
    """Signed areas (M,) and barycentric gradients (M, 3, 2) of every triangle."""
    coords = np.asarray(coords, dtype=float)
    p = coords[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    grads = np.empty((len(triangles), 3, 2))
    grads[:, 1, 0] = d2[:, 1] / det
    grads[:, 1, 1] = -d2[:, 0] / det
    grads[:, 2, 0] = -d1[:, 1] / det
    grads[:, 2, 1] = d1[:, 0] / det
    grads[:, 0] = -grads[:, 1] - grads[:, 2]
    return 0.5 * det, grads


def _assemble(triangles, local, n):
    rows = np.repeat(triangles, 3, axis=1).ravel()
    cols = np.tile(triangles, (1, 3)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def _check_orientation(mesh: Mesh, area):
    if np.any(area <= 0):
        bad = int(np.sum(area <= 0))
        raise InvalidMesh(f"mesh has {bad} inverted or degenerate elements")


def stiffness_matrix(mesh: Mesh) -> sp.csr_matrix:
    area, grads = p1_geometry(mesh.nodes, mesh.triangles)
    local = np.einsum("m,mid,mjd->mij", np.abs(area), grads, grads)
    return _assemble(mesh.triangles, local, mesh.n_nodes)


_MASS_REF = (np.ones((3, 3)) + np.eye(3)) / 12.0


def mass_matrix(mesh: Mesh) -> sp.csr_matrix:
    area = np.abs(p1_geometry(mesh.nodes, mesh.triangles)[0])
    return _assemble(mesh.triangles, area[:, None, None] * _MASS_REF, mesh.n_nodes)


def lumped_mass(mesh: Mesh) -> np.ndarray:
    area = np.abs(p1_geometry(mesh.nodes, mesh.triangles)[0])
    return np.bincount(mesh.triangles.ravel(), np.repeat(area / 3.0, 3), minlength=mesh.n_nodes)


def advection_matrix(mesh: Mesh, velocity) -> sp.csr_matrix:
    """Exact P1 matrix of ``(w . grad phi_j, phi_i)`` for a P1 velocity ``w``."""
    area, grads = p1_geometry(mesh.nodes, mesh.triangles)
    w = np.asarray(velocity, dtype=float)[mesh.triangles]  # (M, 3, 2)
    # sum_k w_k M_ik, then dot with grad phi_j
    wm = np.einsum("ik,mkd->mid", _MASS_REF, w) * np.abs(area)[:, None, None]
    local = np.einsum("mid,mjd->mij", wm, grads)
    return _assemble(mesh.triangles, local, mesh.n_nodes)


def _as_nodal(f, mesh: Mesh) -> np.ndarray:
    if isinstance(f, (ScalarField, VectorField)):
        return f.values
    if callable(f):
        return np.asarray(f(mesh.nodes[:, 0], mesh.nodes[:, 1]), dtype=float) * np.ones(mesh.n_nodes)
    return np.asarray(f, dtype=float)


def solve_poisson(mesh: Mesh, f, g) -> ScalarField:
    """
    P1 Galerkin solution of ``-lap u = f`` with ``u = g`` on boundary nodes.

    ``f`` may be a ScalarField, nodal array or callable ``f(x, y)``; ``g`` is a
    callable or a nodal array whose boundary entries are used.
    """
    area, _ = p1_geometry(mesh.nodes, mesh.triangles)
    _check_orientation(mesh, area)
    fv = _as_nodal(f, mesh)
    if fv.shape != (mesh.n_nodes,):
        raise InvalidArgument(f"source has shape {fv.shape}, expected ({mesh.n_nodes},)")
    K = stiffness_matrix(mesh)
    b = mass_matrix(mesh) @ fv
    bnd = mesh.boundary_mask
    inner = ~bnd
    u = np.zeros(mesh.n_nodes)
    u[bnd] = _as_nodal(g, mesh)[bnd] if callable(g) or np.ndim(g) else float(g)
    A = K[inner][:, inner].tocsc()
    rhs = b[inner] - K[inner][:, bnd] @ u[bnd]
    if A.shape[0]:
        lu = spla.splu(A)
        x = lu.solve(rhs)
        # one step of iterative refinement for ill-conditioned (strongly graded) meshes
        x += lu.solve(rhs - A @ x)
        u[inner] = x
        res = np.linalg.norm(A @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)
        if not np.isfinite(res) or res > SOLVER_RTOL:
            raise NumericFailure(f"Poisson solve residual {res:.3e} above {SOLVER_RTOL:g}", residual=res)
    return ScalarField(mesh, u)


def solve_burgers(mesh: Mesh, u0: VectorField, nu: float, dt: float, steps: int,
                  picard_iters: int = 5, picard_tol: float = 1e-8) -> list[VectorField]:
    """
    Viscous Burgers with homogeneous Neumann data.

    Each step solves ``(M/dt + nu K + C(w)) u = M u_prev / dt`` where ``C(w)``
    is the advection matrix of the previous Picard iterate ``w``.
    """
    if nu <= 0 or dt <= 0:
        raise InvalidArgument(f"need nu > 0 and dt > 0, got nu={nu}, dt={dt}")
    area, _ = p1_geometry(mesh.nodes, mesh.triangles)
    _check_orientation(mesh, area)
    M = mass_matrix(mesh)
    base = (M / dt + nu * stiffness_matrix(mesh)).tocsr()
    u = np.array(u0.values if isinstance(u0, VectorField) else u0, dtype=float)
    traj = [VectorField(mesh, u.copy())]
    for step in range(int(steps)):
        rhs = M @ u / dt
        w = u
        updates = []
        for _ in range(picard_iters):
            lu = spla.splu((base + advection_matrix(mesh, w)).tocsc())
            new = lu.solve(rhs)
            upd = np.linalg.norm(new - w) / max(np.linalg.norm(new), 1e-300)
            updates.append(upd)
            w = new
            if upd < picard_tol:
                break
            if len(updates) >= 4 and updates[-1] > updates[-2] > updates[-3] > updates[-4]:
                raise NumericFailure(f"Picard iteration diverging at step {step}", residual=upd)
        if not np.all(np.isfinite(w)):
            raise NumericFailure(f"non-finite Burgers solution at step {step}")
        u = w
        traj.append(VectorField(mesh, u.copy()))
    return traj


def gradient_operators(mesh: Mesh) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Sparse (Gx, Gy) mapping nodal values to lumped-mass projected nodal gradients."""
    area, grads = p1_geometry(mesh.nodes, mesh.triangles)
    w = np.abs(area) / 3.0
    lumped = np.bincount(mesh.triangles.ravel(), np.repeat(w, 3), minlength=mesh.n_nodes)
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    ops = []
    for d in range(2):
        vals = (w[:, None, None] * grads[:, None, :, d] * np.ones((1, 3, 1))).ravel()
        G = sp.csr_matrix((vals, (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))
        ops.append(sp.diags(1.0 / lumped) @ G)
    return ops[0].tocsr(), ops[1].tocsr()


def recover_gradient(u: ScalarField) -> np.ndarray:
    Gx, Gy = gradient_operators(u.mesh)
    return np.column_stack([Gx @ u.values, Gy @ u.values])


def recover_hessian(u: ScalarField, operators=None) -> NodalHessian:
    """Double lumped-mass L2 projection of the P1 gradient, symmetrised."""
    Gx, Gy = operators if operators is not None else gradient_operators(u.mesh)
    gx, gy = Gx @ u.values, Gy @ u.values
    hxy = 0.5 * (Gy @ gx + Gx @ gy)
    return NodalHessian(Gx @ gx, hxy, Gy @ gy)


def _same_mesh(a: Mesh, b: Mesh) -> bool:
    return a is b or (a.same_topology(b) and np.array_equal(a.nodes, b.nodes))


def l2_error(u, u_ref) -> float:
    """Exact L2 norm of the P1 difference, summed over components."""
    if not _same_mesh(u.mesh, u_ref.mesh):
        raise InvalidArgument("l2_error needs both fields on the same mesh")
    if np.shape(u.values) != np.shape(u_ref.values):
        raise InvalidArgument("l2_error needs fields of the same kind")
    e = (u.values - u_ref.values).reshape(u.mesh.n_nodes, -1)
    M = mass_matrix(u.mesh)
    total = sum(float(e[:, c] @ (M @ e[:, c])) for c in range(e.shape[1]))
    return float(np.sqrt(max(total, 0.0)))


class PointLocator:
    """P1 point location and interpolation on a fixed mesh."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self._tri = Triangulation(mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.triangles)
        self._finder = self._tri.get_trifinder()

    def _barycentric(self, points, tri_idx):
        p = self.mesh.nodes[self.mesh.triangles[tri_idx]]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        r = points - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        l1 = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
        l2 = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
        return np.column_stack([1.0 - l1 - l2, l1, l2])

    def locate(self, points):
        """Containing triangle and barycentric weights; unlocated points are clamped."""
        points = np.asarray(points, dtype=float)
        tri = np.asarray(self._finder(points[:, 0], points[:, 1]), dtype=np.int64)
        clamped = tri < 0
        if clamped.any():
            pts = points[clamped]
            inside = self.mesh.domain.contains(pts, tol=1e-12)
            if not inside.all():
                pts = pts.copy()
                pts[~inside] = self.mesh.domain.nearest_boundary_point(pts[~inside])[0]
            # brute-force: triangle maximising the smallest barycentric weight
            all_tri = np.arange(self.mesh.n_triangles)
            best = np.empty(len(pts), dtype=np.int64)
            worst = np.empty(len(pts))
            for k, q in enumerate(pts):
                lam = self._barycentric(np.broadcast_to(q, (len(all_tri), 2)), all_tri).min(axis=1)
                best[k] = int(np.argmax(lam))
                worst[k] = lam[best[k]]
            tri[clamped] = best
            points = points.copy()
            points[clamped] = pts
            # points the trifinder missed only through round-off are not flagged
            clamped = clamped.copy()
            clamped[np.flatnonzero(clamped)[inside & (worst > -HULL_TOL)]] = False
        lam = self._barycentric(points, tri)
        lam = np.clip(lam, 0.0, None)
        lam /= lam.sum(axis=1, keepdims=True)
        return tri, lam, clamped

    def matrix(self, points):
        tri, lam, clamped = self.locate(points)
        rows = np.repeat(np.arange(len(tri)), 3)
        cols = self.mesh.triangles[tri].ravel()
        P = sp.csr_matrix((lam.ravel(), (rows, cols)), shape=(len(tri), self.mesh.n_nodes))
        return P, clamped

    def interpolate(self, values, points):
        P, clamped = self.matrix(points)
        return P @ np.asarray(values, dtype=float), clamped


def transfer_field(u, mesh_b: Mesh):
    """
    Carry a field onto ``mesh_b``.

    Analytic fields are re-evaluated at the new node positions; discrete
    fields are P1-interpolated after point location in their own mesh.
    Points outside the source mesh are clamped to its boundary and flagged in
    ``result.clamped``.
    """
    if isinstance(u, AnalyticField):
        return u.on(mesh_b)
    if callable(u) and not isinstance(u, (ScalarField, VectorField)):
        return AnalyticField(u).on(mesh_b)
    if _same_mesh(u.mesh, mesh_b):
        return type(u)(mesh_b, u.values.copy(), clamped=np.zeros(mesh_b.n_nodes, dtype=bool))
    vals, clamped = PointLocator(u.mesh).interpolate(u.values, mesh_b.nodes)
    return type(u)(mesh_b, vals, clamped=clamped)


# 7-point degree-5 rule on the reference triangle (barycentric coordinates, weights sum to 1)
_Q5_A1, _Q5_B1 = 0.059715871789770, 0.470142064105115
_Q5_A2, _Q5_B2 = 0.797426985353087, 0.101286507323456
QUAD5_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_Q5_A1, _Q5_B1, _Q5_B1], [_Q5_B1, _Q5_A1, _Q5_B1], [_Q5_B1, _Q5_B1, _Q5_A1],
    [_Q5_A2, _Q5_B2, _Q5_B2], [_Q5_B2, _Q5_A2, _Q5_B2], [_Q5_B2, _Q5_B2, _Q5_A2],
])
QUAD5_WEIGHTS = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)


def quadrature_l2_error(u, reference) -> float:
    """
    L2 distance between a P1 field and a reference, by degree-5 quadrature on ``u.mesh``.

    ``reference`` is either a callable mapping points (P, 2) to values
    (P,) or (P, C), or a discrete field on any mesh covering the same domain
    (evaluated there by P1 interpolation).
    """
    mesh = u.mesh
    corners = mesh.nodes[mesh.triangles]  # (T, 3, 2)
    pts = np.einsum("qk,tkd->tqd", QUAD5_BARY, corners).reshape(-1, 2)
    vals = np.asarray(u.values, dtype=float).reshape(mesh.n_nodes, -1)
    uq = np.einsum("qk,tkc->tqc", QUAD5_BARY, vals[mesh.triangles]).reshape(len(pts), -1)
    if isinstance(reference, (ScalarField, VectorField)):
        rq = PointLocator(reference.mesh).interpolate(reference.values, pts)[0]
    else:
        rq = np.asarray(reference(pts), dtype=float)
    rq = rq.reshape(len(pts), -1)
    if rq.shape != uq.shape:
        raise InvalidArgument(f"reference has {rq.shape[1]} components, field has {uq.shape[1]}")
    sq = ((uq - rq) ** 2).sum(axis=1).reshape(mesh.n_triangles, -1)
    area = np.abs(mesh.areas())
    return float(np.sqrt(area @ (sq @ QUAD5_WEIGHTS)))
