"""
Monge-Ampere mesh movement by fixed-point relaxation.

The moved mesh is ``x = xi + grad(phi)`` where the potential satisfies
``m(x) det(I + H(phi)) = theta``.  Each sweep recovers the gradient and
Hessian of ``phi`` on the computational mesh, evaluates the monitor at the
current physical positions, and corrects ``phi`` with an under-relaxed
Neumann Poisson solve driven by the normalised equidistribution residual.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidArgument, InversionFailure, NonConvergence
from .fem import PointLocator, gradient_operators, lumped_mass, stiffness_matrix
from .mesh import CORNER, EDGE, Mesh, inversion_fraction, signed_areas
from .monitor import MonitorField

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MAOptions:
    gamma: float = 0.2
    tol: float = 1e-6
    max_iters: int = 500


@dataclass(eq=False)
class MAPotential:
    mesh: Mesh
    phi: np.ndarray
    hessian: np.ndarray
    theta: float


@dataclass(eq=False)
class MAResult:
    coords: np.ndarray
    residuals: list[float]
    equidistribution: list[float]
    iterations: int
    eq_before: float
    eq_after: float
    converged: bool
    elapsed: float
    potential: MAPotential | None = field(default=None, repr=False)

    def log_lines(self) -> list[str]:
        lines = ["# iter residual equidistribution"]
        lines += [f"{i} {r:.10e} {e:.10e}" for i, (r, e) in enumerate(zip(self.residuals, self.equidistribution))]
        return lines


def element_monitor_integrals(mesh: Mesh, coords, m_at_nodes) -> np.ndarray:
    """Per-element integral of the P1 monitor (centroid rule, exact for P1)."""
    area = signed_areas(coords, mesh.triangles)
    return area * np.asarray(m_at_nodes)[mesh.triangles].mean(axis=1)


def equidistribution_coefficient(monitor: MonitorField, coords=None, locator: PointLocator | None = None) -> float:
    """Coefficient of variation of the element monitor integrals at ``coords``."""
    mesh = monitor.mesh
    if coords is None:
        coords, m_x = mesh.nodes, monitor.values
    else:
        coords = np.asarray(coords, dtype=float)
        locator = locator or PointLocator(mesh)
        m_x, _ = locator.interpolate(monitor.values, coords)
    q = element_monitor_integrals(mesh, coords, m_x)
    mean = q.mean()
    return float(q.std() / mean) if mean != 0 else 0.0


def project_boundary(mesh: Mesh, coords: np.ndarray) -> np.ndarray:
    """Slide edge nodes onto their tagged segment and pin corners."""
    x = np.array(coords, dtype=float)
    edge = np.flatnonzero(mesh.tag_kind == EDGE)
    if edge.size:
        k = mesh.tag_index[edge]
        a = mesh.domain.vertices[k]
        b = mesh.domain.vertices[(k + 1) % mesh.domain.n_segments]
        ab = b - a
        t = np.einsum("nd,nd->n", x[edge] - a, ab) / np.einsum("nd,nd->n", ab, ab)
        t = np.clip(t, 0.0, 1.0)
        x[edge] = a + t[:, None] * ab
        # exact coordinates on axis-aligned segments
        horiz = ab[:, 1] == 0
        x[edge[horiz], 1] = a[horiz, 1]
        vert = ab[:, 0] == 0
        x[edge[vert], 0] = a[vert, 0]
    corner = mesh.tag_kind == CORNER
    x[corner] = mesh.nodes[corner]
    return x


def tangential_derivative_operator(mesh: Mesh) -> sp.csr_matrix:
    """
    Three-point tangential derivative along the boundary for edge nodes.

    Row ``i`` of the result is zero unless node ``i`` is an edge node, in
    which case it differentiates along the segment using the node's two
    boundary neighbours (second order on non-uniform spacing).
    """
    edge = np.flatnonzero(mesh.tag_kind == EDGE)
    nb = mesh.boundary_neighbors[edge]
    t = mesh.boundary_tangents[edge]
    sa = np.einsum("nd,nd->n", mesh.nodes[nb[:, 0]] - mesh.nodes[edge], t)
    sb = np.einsum("nd,nd->n", mesh.nodes[nb[:, 1]] - mesh.nodes[edge], t)
    wa = -sb / (sa * (sa - sb))
    w0 = -(sa + sb) / (sa * sb)
    wb = -sa / (sb * (sb - sa))
    rows = np.repeat(edge, 3)
    cols = np.column_stack([nb[:, 0], edge, nb[:, 1]]).ravel()
    vals = np.column_stack([wa, w0, wb]).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))


def _potential_gradient(mesh: Mesh, phi, Gx, Gy, Dt):
    """Recovered gradient of a Neumann potential: tangential on edges, zero at corners."""
    g = np.column_stack([Gx @ phi, Gy @ phi])
    edge = mesh.tag_kind == EDGE
    g[edge] = mesh.boundary_tangents[edge] * (Dt @ phi)[edge, None]
    g[mesh.tag_kind == CORNER] = 0.0
    return g[:, 0], g[:, 1]


class _NeumannSolver:
    """Prefactored Neumann Laplacian with the first node pinned; solutions gauged to zero mean."""

    def __init__(self, K):
        K = K.tocsc()
        self._lu = spla.splu(K[1:, 1:].tocsc())
        self.n = K.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n)
        out[1:] = self._lu.solve(rhs[1:])
        return out - out.mean()


def ma_adapt(mesh: Mesh, monitor: MonitorField, opts: MAOptions | None = None, raise_on_failure: bool = True) -> MAResult:
    """
    Move ``mesh`` so that it equidistributes ``monitor``.

    Raises
    ------
    NonConvergence
        If the residual does not fall below ``opts.tol`` within ``opts.max_iters``.
    InversionFailure
        If the final mesh contains inverted elements.
    """
    opts = opts or MAOptions()
    if monitor.mesh is not mesh and not (
        monitor.mesh.same_topology(mesh) and np.array_equal(monitor.mesh.nodes, mesh.nodes)
    ):
        raise InvalidArgument("monitor must be defined on the mesh being adapted")
    if np.min(monitor.values) <= 0:
        raise InvalidArgument("monitor must be strictly positive")
    start = time.perf_counter()

    xi = mesh.nodes
    Gx, Gy = gradient_operators(mesh)
    Dt = tangential_derivative_operator(mesh)
    ml = lumped_mass(mesh)
    measure = ml.sum()
    K = stiffness_matrix(mesh)
    solver = _NeumannSolver(K)
    locator = PointLocator(mesh)
    m_nodes = monitor.values

    eq_before = equidistribution_coefficient(monitor)
    phi = np.zeros(mesh.n_nodes)
    residuals, eqs = [], []
    converged = False
    x = xi.copy()
    theta = float(ml @ m_nodes / measure)
    hess = np.zeros((mesh.n_nodes, 3))
    for it in range(opts.max_iters + 1):
        gx, gy = _potential_gradient(mesh, phi, Gx, Gy, Dt)
        hxx, hyy = Gx @ gx, Gy @ gy
        hxy = 0.5 * (Gy @ gx + Gx @ gy)
        # trace from the compact weak Laplacian, quadratic part from the recovered Hessian
        lap = -(K @ phi) / ml
        det = 1.0 + lap + hxx * hyy - hxy**2
        x = project_boundary(mesh, xi + np.column_stack([gx, gy]))
        m_x, _ = locator.interpolate(m_nodes, x)
        md = m_x * det
        theta = float(ml @ md / measure)
        r = md / theta - 1.0
        res = float(np.sqrt(ml @ r**2 / measure))
        residuals.append(res)
        q = element_monitor_integrals(mesh, x, m_x)
        eqs.append(float(q.std() / q.mean()))
        hess = np.column_stack([hxx, hxy, hyy])
        if res < opts.tol:
            converged = True
            break
        if it == opts.max_iters or not np.isfinite(res):
            break
        phi = phi + solver.solve(opts.gamma * ml * r)

    elapsed = time.perf_counter() - start
    result = MAResult(
        coords=x,
        residuals=residuals,
        equidistribution=eqs,
        iterations=len(residuals) - 1,
        eq_before=eq_before,
        eq_after=eqs[-1],
        converged=converged,
        elapsed=elapsed,
        potential=MAPotential(mesh, phi, hess, theta),
    )
    if not raise_on_failure:
        return result
    if not converged:
        raise NonConvergence(
            f"Monge-Ampere relaxation did not reach tol={opts.tol:g} in {opts.max_iters} iterations "
            f"(residual {residuals[-1]:.3e})",
            residual=residuals[-1],
        )
    inv = inversion_fraction(mesh, x)
    if inv > 0:
        raise InversionFailure(f"adapted mesh has {inv:.2%} inverted elements", residual=residuals[-1])
    log.debug("ma_adapt converged in %d iterations (%.1f ms)", result.iterations, 1e3 * elapsed)
    return result
