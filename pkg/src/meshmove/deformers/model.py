"""Deformer models behind one interface, with checkpoint save/load."""

from __future__ import annotations

import copy

import numpy as np

from ..errors import ConfigError, InvalidDomain
from ..mesh import CORNER, Mesh
from ..mover import project_boundary
from ..nn import tensor as T
from ..nn.params import ParameterStore, read_checkpoint, save_checkpoint
from ..problems import InputState, stream
from .features import DeformBatch, GlobalExtractor, collate, prepare_sample
from .gat import GATDeformer, GATDisplacement, MLPDisplacement
from .spline import SplineCoupling

KINDS = ("m2n_spline", "m2n_gat", "mlp_deform_clip", "gat_deform_clip")

DEFAULT_CONFIG = {
    "grid_n": 32,
    "conv_channels": [16, 32, 64],
    "hidden": 64,
    "state_channels": 1,
    "param_scale": [0.05],
    # spline
    "bins": 8,
    "blocks": 4,
    "min_bin": 1e-3,
    "min_derivative": 1e-3,
    "normalize_to_bbox": True,
    # graph models
    "gat_blocks": 3,
    "self_bias": 4.0,
}


def clip_to_domain(mesh: Mesh, coords) -> np.ndarray:
    """Pull exterior points to the nearest domain point, then keep boundary nodes on their segments."""
    x, _ = mesh.domain.project_inside(coords)
    return project_boundary(mesh, x)


class DeformerModel:
    """
    A learned map from (initial mesh, input state) to new node coordinates.

    Parameters
    ----------
    kind : one of ``KINDS``
    config : dict, optional
        Overrides for ``DEFAULT_CONFIG``.
    seed : int
        Seeds the parameter initialisation stream.
    """

    def __init__(self, kind: str, config: dict | None = None, seed: int = 0):
        if kind not in KINDS:
            raise ConfigError(f"unknown deformer kind {kind!r}; choose from {', '.join(KINDS)}")
        unknown = set(config or {}) - set(DEFAULT_CONFIG)
        if unknown:
            raise ConfigError(f"unknown deformer config keys: {sorted(unknown)}")
        self.kind = kind
        self.config = {**copy.deepcopy(DEFAULT_CONFIG), **copy.deepcopy(config or {})}
        self.seed = int(seed)
        cfg = self.config
        rng = stream(seed, "init", kind)
        self.store = ParameterStore()
        self.extractor = GlobalExtractor(self.store, cfg["state_channels"] + 2, cfg["conv_channels"], rng)
        cond = self.extractor.size + len(cfg["param_scale"])
        if kind == "m2n_spline":
            self.net = SplineCoupling(self.store, cond, rng, cfg["bins"], cfg["blocks"], cfg["hidden"],
                                      cfg["min_bin"], cfg["min_derivative"])
        elif kind == "m2n_gat":
            self.net = GATDeformer(self.store, cond, cfg["state_channels"], rng, cfg["hidden"],
                                   cfg["gat_blocks"], cfg["self_bias"])
        elif kind == "gat_deform_clip":
            self.net = GATDisplacement(self.store, cond, cfg["state_channels"], rng, cfg["hidden"],
                                       cfg["gat_blocks"], cfg["self_bias"])
        else:
            self.net = MLPDisplacement(self.store, cond, rng, cfg["hidden"])

    def __repr__(self):
        return f"DeformerModel({self.kind!r}, {self.store.n_values} parameters)"

    def prepare(self, mesh: Mesh, state: InputState, target=None):
        if state.channels != self.config["state_channels"]:
            raise ConfigError(f"{self.kind} was built for {self.config['state_channels']}-channel states, "
                              f"got a {state.channels}-channel {state.kind}")
        if self.kind == "m2n_spline" and not self.config["normalize_to_bbox"] and mesh.domain.kind != "unit_square":
            raise InvalidDomain("spline deformer needs the unit square unless normalize_to_bbox is enabled")
        return prepare_sample(mesh, state, self.config["grid_n"], self.config["param_scale"], target)

    def forward(self, batch: DeformBatch, trace: list | None = None):
        """Differentiable coordinates for every node of the batch, as a (N, 2) tensor."""
        per_sample = self.extractor(batch.grids, batch.params)
        if self.kind == "m2n_spline":
            u = (batch.xi - batch.box_lo) / batch.box_span
            out, _ = self.net(u, per_sample, batch.owner)
            return out * batch.box_span + batch.box_lo
        cond = T.gather_rows(per_sample, batch.owner)
        if self.kind == "m2n_gat":
            return self.net(batch, cond, trace)
        return self.net(batch, cond)

    def finalize(self, batch: DeformBatch, coords) -> list[np.ndarray]:
        """Per-sample numpy coordinates after the kind-specific boundary treatment."""
        coords = np.asarray(coords.data if isinstance(coords, T.Tensor) else coords)
        out = []
        for s, x in zip(batch.samples, batch.split(coords)):
            if self.kind in ("mlp_deform_clip", "gat_deform_clip"):
                x = clip_to_domain(s.mesh, x)
            elif self.kind == "m2n_gat":
                x = project_boundary(s.mesh, x)
            elif s.mesh.domain.kind == "unit_square":
                x = x.copy()
                corner = s.mesh.tag_kind == CORNER
                x[corner] = s.mesh.nodes[corner]
            out.append(x)
        return out

    def deform(self, mesh: Mesh, state: InputState) -> np.ndarray:
        batch = collate([self.prepare(mesh, state)])
        return self.finalize(batch, self.forward(batch))[0]

    def deform_many(self, pairs) -> list[np.ndarray]:
        batch = collate([self.prepare(m, s) for m, s in pairs])
        return self.finalize(batch, self.forward(batch))

    def save(self, path, meta: dict | None = None) -> None:
        save_checkpoint(path, self.kind, {"seed": self.seed, **self.config}, self.store, meta)

    @classmethod
    def load(cls, path) -> "DeformerModel":
        doc = read_checkpoint(path)
        config = dict(doc["config"])
        seed = config.pop("seed", 0)
        model = cls(doc["kind"], config, seed)
        model.store.load_state_dict(doc)
        model.meta = doc.get("meta", {})
        return model


def extract_global(model: DeformerModel, state: InputState) -> np.ndarray:
    """Resolution-independent embedding ``[E, p]`` of one input state."""
    from .features import coordinate_channels, sample_grid
    n = model.config["grid_n"]
    grid, _ = sample_grid(state, n)
    grid = np.concatenate([grid, coordinate_channels(n)])[None]
    params = np.asarray(state.params, dtype=float) * np.asarray(model.config["param_scale"], dtype=float)
    return model.extractor(grid, params[None]).data[0]


def _deform_kind(kinds, model: DeformerModel, mesh: Mesh, state: InputState) -> np.ndarray:
    if model.kind not in kinds:
        raise ConfigError(f"expected a {' or '.join(kinds)} model, got {model.kind}")
    return model.deform(mesh, state)


def spline_deform(model: DeformerModel, mesh: Mesh, state: InputState) -> np.ndarray:
    return _deform_kind(("m2n_spline",), model, mesh, state)


def gat_deform(model: DeformerModel, mesh: Mesh, state: InputState) -> np.ndarray:
    return _deform_kind(("m2n_gat",), model, mesh, state)


def clip_baseline_deform(model: DeformerModel, mesh: Mesh, state: InputState) -> np.ndarray:
    return _deform_kind(("mlp_deform_clip", "gat_deform_clip"), model, mesh, state)
