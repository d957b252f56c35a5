"""
Graph deformers: edge-feature message passing followed by attention blocks.

In the position-updating block every node moves to an attention-weighted
average of its closed 1-ring, so it stays inside the convex hull of the ring.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from ..mesh import edge_features
from ..nn import tensor as T
from ..nn.layers import MLP, Linear
from ..nn.params import ParameterStore


def gnn_block(edge_fn, edge_feats, receivers, n_nodes: int, extra=None):
    """
    Update edge features with ``edge_fn`` and sum them into their receivers.

    ``extra`` (per-node features, e.g. the broadcast global embedding) is
    appended to the summed messages.
    """
    edge_feats = T.as_tensor(edge_feats)
    if edge_feats.ndim != 2 or edge_feats.shape[0] != len(receivers):
        raise ShapeError(f"gnn_block: {edge_feats.shape[0] if edge_feats.ndim else 0} edge rows for {len(receivers)} receivers")
    v = T.segment_sum(edge_fn(edge_feats), receivers, n_nodes)
    if extra is None:
        return v
    extra = T.as_tensor(extra)
    if extra.shape[0] != n_nodes:
        raise ShapeError(f"gnn_block: extra features have {extra.shape[0]} rows for {n_nodes} nodes")
    return T.concat([v, extra], axis=1)


def closed_ring(senders, receivers, n_nodes: int):
    """Directed edges plus one self loop per node, and a float mask marking the loops."""
    loops = np.arange(n_nodes)
    s = np.concatenate([senders, loops])
    r = np.concatenate([receivers, loops])
    is_self = np.concatenate([np.zeros(len(senders)), np.ones(n_nodes)])
    return s, r, is_self


class AttentionBlock:
    """
    Single-head attention over the closed 1-ring with SELU features.

    The score of edge j -> i is ``a . selu(z_i Wr + z_j Ws + (x_j - x_i) / h * We)``
    (``h`` the sample's mean edge length), so a node can weight neighbours
    by direction rather than by a per-node score shared by all its neighbours.
    """

    def __init__(self, store: ParameterStore, name: str, n_in: int, hidden: int, rng: np.random.Generator,
                 self_bias: float = 4.0):
        self.proj = Linear(store, f"{name}.proj", n_in, hidden, rng)
        scale = 1.0 / np.sqrt(hidden)
        self.w_recv = store.add(f"{name}.att_recv", rng.normal(0.0, scale, (hidden, hidden)))
        self.w_send = store.add(f"{name}.att_send", rng.normal(0.0, scale, (hidden, hidden)))
        self.w_edge = store.add(f"{name}.att_edge", rng.normal(0.0, 1.0 / np.sqrt(2.0), (2, hidden)))
        self.a = store.add(f"{name}.att_out", rng.normal(0.0, 0.1 * scale, (hidden, 1)))
        self.self_bias = store.add(f"{name}.self_bias", np.array([self_bias]))

    def attention(self, h, ring, n_nodes: int, pos, spacing):
        s, r, is_self = ring
        z = T.selu(self.proj(h))
        rel = (T.gather_rows(pos, s) - T.gather_rows(pos, r)) * (1.0 / spacing[r])[:, None]
        e = T.gather_rows(z @ self.w_recv, r) + T.gather_rows(z @ self.w_send, s) + rel @ self.w_edge
        logits = (T.selu(e) @ self.a).reshape(-1) + self.self_bias * is_self
        return z, T.segment_softmax(logits, r, n_nodes)

    def __call__(self, h, ring, n_nodes: int, pos, spacing, move: bool = True):
        s, r, _ = ring
        pos = T.as_tensor(pos)
        z, alpha = self.attention(h, ring, n_nodes, pos, spacing)
        a = alpha.reshape(-1, 1)
        feats = T.selu(T.segment_sum(a * T.gather_rows(z, s), r, n_nodes))
        new_pos = T.segment_sum(a * T.gather_rows(pos, s), r, n_nodes) if move else None
        return feats, new_pos, alpha


def slide_boundary(new_pos, pos, batch):
    """
    Keep edge nodes on their segment and corners fixed.

    The update of an edge node is projected onto the segment tangent and its
    tangential coordinate clamped to the span of its two boundary
    neighbours, which keeps it inside its closed 1-ring hull.
    """
    pos = T.as_tensor(pos)
    t = batch.tangents
    step = T.tsum((new_pos - pos) * t, axis=1)
    nb = batch.boundary_nbrs
    lo = np.zeros(batch.n_nodes)
    hi = np.zeros(batch.n_nodes)
    e = np.flatnonzero(batch.edge_mask)
    if e.size:
        ends = np.einsum("nkd,nd->nk", pos.data[nb[e]] - pos.data[e, None, :], t[e])
        lo[e], hi[e] = ends.min(axis=1), ends.max(axis=1)
    step = T.clip(step, lo, hi)
    interior = (~(batch.edge_mask | batch.corner_mask)).astype(float)[:, None]
    return new_pos * interior + pos * (1.0 - interior) + step.reshape(-1, 1) * t


class EdgeEncoder:
    """Relative edge features -> three-layer MLP -> sum over incoming edges, then ``[v', I]``."""

    def __init__(self, store: ParameterStore, state_channels: int, hidden: int, rng: np.random.Generator):
        self.mlp = MLP(store, "edge_mlp", [3 + 2 * state_channels, hidden, hidden, hidden], rng)

    def __call__(self, batch, cond):
        feats = edge_features(batch.xi, batch.senders, batch.receivers, batch.node_state)
        return gnn_block(self.mlp, feats, batch.receivers, batch.n_nodes, extra=cond)


class GATDeformer:
    """Attention blocks that move each node to a convex combination of its closed 1-ring."""

    def __init__(self, store: ParameterStore, cond_size: int, state_channels: int, rng: np.random.Generator,
                 hidden: int = 64, blocks: int = 3, self_bias: float = 4.0):
        self.encoder = EdgeEncoder(store, state_channels, hidden, rng)
        sizes = [hidden + cond_size + 2] + [hidden + 2] * (blocks - 1)
        self.blocks = [AttentionBlock(store, f"gat.block{b}", n, hidden, rng, self_bias) for b, n in enumerate(sizes)]

    def __call__(self, batch, cond, trace: list | None = None):
        ring = closed_ring(batch.senders, batch.receivers, batch.n_nodes)
        pos = T.Tensor(batch.xi)
        h = T.concat([self.encoder(batch, cond), pos], axis=1)
        for block in self.blocks:
            h, new_pos, alpha = block(h, ring, batch.n_nodes, pos, batch.spacing)
            new_pos = slide_boundary(new_pos, pos, batch)
            if trace is not None:
                trace.append((pos.data.copy(), new_pos.data.copy(), alpha.data.copy()))
            pos = new_pos
            h = T.concat([h, pos], axis=1)
        return pos


def tangential_displacement(disp, batch):
    """Interior nodes keep ``disp``; edge nodes keep its tangential part; corners get zero."""
    t = batch.tangents
    interior = (~(batch.edge_mask | batch.corner_mask)).astype(float)[:, None]
    along = T.tsum(disp * t, axis=1).reshape(-1, 1)
    return disp * interior + along * t


class GATDisplacement:
    """Plain attention stack with a zero-initialised linear displacement head."""

    def __init__(self, store: ParameterStore, cond_size: int, state_channels: int, rng: np.random.Generator,
                 hidden: int = 64, blocks: int = 3, self_bias: float = 4.0):
        self.encoder = EdgeEncoder(store, state_channels, hidden, rng)
        sizes = [hidden + cond_size + 2] + [hidden] * (blocks - 1)
        self.blocks = [AttentionBlock(store, f"gatclip.block{b}", n, hidden, rng, self_bias) for b, n in enumerate(sizes)]
        self.head = Linear(store, "gatclip.head", hidden, 2, rng, zero=True)

    def __call__(self, batch, cond):
        ring = closed_ring(batch.senders, batch.receivers, batch.n_nodes)
        h = T.concat([self.encoder(batch, cond), T.Tensor(batch.xi)], axis=1)
        for block in self.blocks:
            h, _, _ = block(h, ring, batch.n_nodes, batch.xi, batch.spacing, move=False)
        return T.Tensor(batch.xi) + tangential_displacement(self.head(h), batch)


class MLPDisplacement:
    """Per-node MLP on ``[I, xi]`` with a zero-initialised output layer."""

    def __init__(self, store: ParameterStore, cond_size: int, rng: np.random.Generator, hidden: int = 64):
        self.mlp = MLP(store, "mlpclip", [cond_size + 2, hidden, hidden, 2], rng, zero_last=True)

    def __call__(self, batch, cond):
        disp = self.mlp(T.concat([cond, T.Tensor(batch.xi)], axis=1))
        return T.Tensor(batch.xi) + tangential_displacement(disp, batch)
