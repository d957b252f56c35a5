"""
Inputs shared by all deformers: the sampled state grid, node-level samples,
graph connectivity and boundary bookkeeping, collated into mini-batches.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..errors import InvalidArgument
from ..mesh import CORNER, EDGE, DomainSpec, Mesh
from ..nn import tensor as T
from ..nn.layers import Conv2d
from ..nn.params import ParameterStore
from ..problems import InputState

NORM_GUARD = 1e-14


@lru_cache(maxsize=32)
def _grid(domain: DomainSpec, grid_n: int):
    lo, hi = domain.bounding_box
    s = np.linspace(0.0, 1.0, grid_n)
    gy, gx = np.meshgrid(s, s, indexing="ij")
    unit = np.column_stack([gx.ravel(), gy.ravel()])
    points = lo + unit * (hi - lo)
    inside = domain.contains(points, tol=1e-12)
    return points, inside, unit


def sample_grid(state: InputState, grid_n: int = 32) -> tuple[np.ndarray, float]:
    """
    Sample ``state`` on a uniform ``grid_n`` x ``grid_n`` grid over the bounding box.

    Returns the (C, grid_n, grid_n) array divided by its largest absolute
    value, and that scale (1.0 when the state is numerically zero).
    """
    if grid_n < 8:
        raise InvalidArgument(f"grid_n must be >= 8, got {grid_n}")
    points, inside, _ = _grid(state.domain, grid_n)
    vals = np.zeros((len(points), state.channels))
    vals[inside] = np.asarray(state.sampler(points[inside]), dtype=float).reshape(int(inside.sum()), -1)
    peak = float(np.max(np.abs(vals))) if vals.size else 0.0
    scale = peak if peak >= NORM_GUARD else 1.0
    grid = (vals / scale).T.reshape(state.channels, grid_n, grid_n)
    if peak < NORM_GUARD:
        grid = np.zeros_like(grid)
    return grid, scale


def coordinate_channels(grid_n: int) -> np.ndarray:
    s = np.linspace(-1.0, 1.0, grid_n)
    gy, gx = np.meshgrid(s, s, indexing="ij")
    return np.stack([gx, gy])


@dataclass(eq=False)
class PreparedSample:
    """Everything a deformer needs about one (mesh, state) pair, as plain arrays."""

    mesh: Mesh
    grid: np.ndarray          # (C + 2, G, G) state channels then coordinate channels
    params: np.ndarray        # (P,) scaled physical parameters
    node_state: np.ndarray    # (N, C) state at the nodes, same scale as the grid
    target: np.ndarray | None = None


def prepare_sample(mesh: Mesh, state: InputState, grid_n: int = 32, param_scale=None,
                   target=None) -> PreparedSample:
    if state.domain != mesh.domain:
        raise InvalidArgument("input state and mesh must share a domain")
    grid, scale = sample_grid(state, grid_n)
    grid = np.concatenate([grid, coordinate_channels(grid_n)])
    node_state = state.sample(mesh.nodes) / scale
    params = np.asarray(state.params, dtype=float)
    if param_scale is not None:
        param_scale = np.asarray(param_scale, dtype=float)
        if param_scale.shape != params.shape:
            raise InvalidArgument(f"param_scale has {param_scale.size} entries for {params.size} parameters")
        params = params * param_scale
    if target is not None:
        target = np.asarray(target, dtype=float)
        if target.shape != mesh.nodes.shape:
            raise InvalidArgument(f"target shape {target.shape} does not match mesh nodes {mesh.nodes.shape}")
    return PreparedSample(mesh, grid, params, node_state, target)


@dataclass(eq=False)
class DeformBatch:
    """Several prepared samples concatenated node-wise; ``owner[i]`` is the sample of node i."""

    samples: list
    grids: np.ndarray
    params: np.ndarray
    xi: np.ndarray
    node_state: np.ndarray
    owner: np.ndarray
    senders: np.ndarray
    receivers: np.ndarray
    edge_mask: np.ndarray
    corner_mask: np.ndarray
    tangents: np.ndarray
    boundary_nbrs: np.ndarray
    box_lo: np.ndarray
    box_span: np.ndarray
    spacing: np.ndarray
    target: np.ndarray | None

    @property
    def n_nodes(self) -> int:
        return len(self.xi)

    def split(self, coords) -> list[np.ndarray]:
        bounds = np.cumsum([s.mesh.n_nodes for s in self.samples])[:-1]
        return np.split(np.asarray(coords), bounds)


def collate(samples) -> DeformBatch:
    samples = list(samples)
    if not samples:
        raise InvalidArgument("cannot collate an empty batch")
    offsets = np.cumsum([0] + [s.mesh.n_nodes for s in samples[:-1]])
    xi, owner, senders, receivers, nbrs = [], [], [], [], []
    edge_mask, corner_mask, tangents, lo, span, spacing = [], [], [], [], [], []
    for k, (s, off) in enumerate(zip(samples, offsets)):
        m = s.mesh
        xi.append(m.nodes)
        owner.append(np.full(m.n_nodes, k))
        e = m.edges
        senders.append(np.concatenate([e[:, 0], e[:, 1]]) + off)
        receivers.append(np.concatenate([e[:, 1], e[:, 0]]) + off)
        nb = m.boundary_neighbors
        nbrs.append(np.where(nb >= 0, nb + off, -1))
        edge_mask.append(m.tag_kind == EDGE)
        corner_mask.append(m.tag_kind == CORNER)
        tangents.append(m.boundary_tangents)
        blo, bhi = m.domain.bounding_box
        lo.append(np.broadcast_to(blo, (m.n_nodes, 2)))
        span.append(np.broadcast_to(bhi - blo, (m.n_nodes, 2)))
        spacing.append(np.full(m.n_nodes, 1.0 / m.density))
    targets = [s.target for s in samples]
    return DeformBatch(
        samples=samples,
        grids=np.stack([s.grid for s in samples]),
        params=np.stack([s.params for s in samples]),
        xi=np.concatenate(xi),
        node_state=np.concatenate([s.node_state for s in samples]),
        owner=np.concatenate(owner),
        senders=np.concatenate(senders),
        receivers=np.concatenate(receivers),
        edge_mask=np.concatenate(edge_mask),
        corner_mask=np.concatenate(corner_mask),
        tangents=np.concatenate(tangents),
        boundary_nbrs=np.concatenate(nbrs),
        box_lo=np.concatenate(lo),
        box_span=np.concatenate(span),
        spacing=np.concatenate(spacing),
        target=None if any(t is None for t in targets) else np.concatenate(targets),
    )


class GlobalExtractor:
    """Strided conv stack with SELU and global average pooling; output ``I = [E, p]``."""

    def __init__(self, store: ParameterStore, in_channels: int, channels, rng: np.random.Generator,
                 name: str = "global"):
        self.convs = []
        c_in = in_channels
        for k, c_out in enumerate(channels):
            self.convs.append(Conv2d(store, f"{name}.conv{k}", c_in, c_out, 3, rng, stride=2, padding=1))
            c_in = c_out
        self.size = c_in

    def embed(self, grids):
        h = T.as_tensor(grids)
        for conv in self.convs:
            h = T.selu(conv(h))
        return T.global_average_pool(h)

    def __call__(self, grids, params):
        return T.concat([self.embed(grids), T.as_tensor(params)], axis=1)
