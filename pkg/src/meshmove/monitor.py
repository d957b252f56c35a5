"""Error- and curvature-driven monitor function for equidistribution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .fem import NodalHessian, ScalarField, VectorField, recover_hessian
from .mesh import Mesh

DEFAULT_ALPHA = 1.0
DEFAULT_BETA = 5.0
ZERO_GUARD = 1e-14
# recovered Hessians of linear fields carry round-off of order eps * |u| / h^2
ROUNDOFF_GUARD = 1e-12


@dataclass(eq=False)
class MonitorField:
    mesh: Mesh
    values: np.ndarray
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_nodes,):
            raise InvalidArgument(f"monitor needs {self.mesh.n_nodes} values, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise InvalidArgument("monitor values must be finite")

    def scaled(self, factor: float) -> "MonitorField":
        return MonitorField(self.mesh, self.values * factor, self.alpha, self.beta)


def _normalised(q: np.ndarray, guard: float = ZERO_GUARD) -> np.ndarray:
    peak = float(np.max(q)) if q.size else 0.0
    if peak < max(guard, ZERO_GUARD):
        return np.zeros_like(q)
    return q / peak


def hessian_guard(mesh: Mesh, u) -> float:
    """Level below which a recovered Hessian norm is indistinguishable from round-off."""
    return ROUNDOFF_GUARD * float(np.max(np.abs(u), initial=0.0)) * mesh.density ** 2


def monitor_values(u, u_exact, hess: NodalHessian, alpha: float, beta: float,
                   hess_guard: float = ZERO_GUARD) -> np.ndarray:
    """
    Nodal ``1 + alpha * e^2 / max e^2 + beta * |H|_F / max |H|_F`` for a scalar field.

    A term whose maximum is below its guard (``ZERO_GUARD``, or
    ``hess_guard`` for the Hessian term) is taken as zero.
    """
    if alpha < 0 or beta < 0:
        raise InvalidArgument(f"alpha and beta must be non-negative, got {alpha}, {beta}")
    err2 = (np.asarray(u, dtype=float) - np.asarray(u_exact, dtype=float)) ** 2
    return 1.0 + alpha * _normalised(err2) + beta * _normalised(hess.frobenius(), hess_guard)


def evaluate_monitor(u, u_exact, hess=None, alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA) -> MonitorField:
    """
    Monitor field on ``u.mesh``.

    For a VectorField the monitor is evaluated per component (each with its
    own recovered Hessian; ``hess`` may be a list of per-component Hessians)
    and the node-wise maximum is returned.
    """
    if alpha < 0 or beta < 0:
        raise InvalidArgument(f"alpha and beta must be non-negative, got {alpha}, {beta}")
    if u.mesh.n_nodes != u_exact.mesh.n_nodes:
        raise InvalidArgument("u and u_exact must live on the same mesh")
    if isinstance(u, VectorField):
        hessians = hess if hess is not None else [None, None]
        parts = []
        for c, (uc, ec) in enumerate(zip(u.components(), u_exact.components())):
            h = hessians[c] if hessians[c] is not None else recover_hessian(ScalarField(u.mesh, uc))
            parts.append(monitor_values(uc, ec, h, alpha, beta, hessian_guard(u.mesh, uc)))
        m = np.maximum(parts[0], parts[1])
    else:
        h = hess if hess is not None else recover_hessian(u)
        m = monitor_values(u.values, u_exact.values, h, alpha, beta, hessian_guard(u.mesh, u.values))
    return MonitorField(u.mesh, m, alpha, beta)
