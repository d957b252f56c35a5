"""Named parameter storage, Adam and JSON checkpoints."""

from __future__ import annotations

import json
import os
from collections import OrderedDict

import numpy as np

from ..errors import ConfigError, ShapeError, StateError
from .tensor import Tensor

CHECKPOINT_FORMAT = "meshmove-checkpoint"
CHECKPOINT_VERSION = 1


class ParameterStore:
    """Ordered named parameters with Adam moment buffers."""

    def __init__(self):
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, data) -> Tensor:
        if name in self.params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    @property
    def n_values(self) -> int:
        return int(sum(t.data.size for t in self.params.values()))

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def flat(self) -> np.ndarray:
        return np.concatenate([t.data.ravel() for t in self.params.values()]) if self.params else np.zeros(0)

    def state_dict(self) -> dict:
        def pack(arrays):
            return {k: {"shape": list(a.shape), "data": a.ravel().tolist()} for k, a in arrays.items()}

        return {
            "params": pack({k: t.data for k, t in self.params.items()}),
            "adam": {"step": self.step, "m": pack(self.m), "v": pack(self.v)},
        }

    def load_state_dict(self, state: dict) -> None:
        """Copy values in place so layers holding tensor references stay valid."""
        params = state["params"]
        missing = set(self.params) ^ set(params)
        if missing:
            raise ConfigError(f"checkpoint parameters do not match the model: {sorted(missing)[:5]}")

        def unpack(entry, name):
            a = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            if a.shape != self.params[name].data.shape:
                raise ShapeError(f"checkpoint parameter {name!r} has shape {a.shape}, model expects {self.params[name].data.shape}")
            return a

        for name, t in self.params.items():
            t.data[...] = unpack(params[name], name)
            t.grad = None
        adam = state.get("adam")
        if adam:
            self.step = int(adam["step"])
            for name in self.params:
                self.m[name] = unpack(adam["m"][name], name)
                self.v[name] = unpack(adam["v"][name], name)


def adam_step(store: ParameterStore, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> ParameterStore:
    """One bias-corrected Adam update; clears the gradients."""
    missing = [name for name, t in store.params.items() if t.grad is None]
    if missing:
        raise StateError(f"adam_step: no gradient for {len(missing)} parameter(s), e.g. {missing[0]!r}")
    store.step += 1
    c1 = 1.0 - beta1**store.step
    c2 = 1.0 - beta2**store.step
    for name, t in store.params.items():
        g = t.grad
        m = store.m[name] = beta1 * store.m[name] + (1.0 - beta1) * g
        v = store.v[name] = beta2 * store.v[name] + (1.0 - beta2) * g * g
        t.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        t.grad = None
    return store


def save_checkpoint(path, kind: str, config: dict, store: ParameterStore, meta: dict | None = None) -> None:
    """Write atomically (temp file then rename) so a crash never leaves a partial checkpoint."""
    doc = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "kind": kind,
           "config": config, "meta": meta or {}}
    doc.update(store.state_dict())
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def read_checkpoint(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"checkpoint {path} is not valid JSON: {exc}") from None
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not a meshmove checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {doc.get('version')} in {path}")
    return doc
