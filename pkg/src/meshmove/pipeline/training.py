"""Mini-batch L1 training of deformers on MA target meshes."""

from __future__ import annotations

import logging
import math
import time
from pathlib import Path

import numpy as np

from ..deformers import DeformerModel, collate
from ..errors import ConfigError, InvalidArgument, NumericFailure
from ..nn import tensor as T
from ..nn.params import adam_step
from ..problems import stream
from .datasets import Dataset

log = logging.getLogger(__name__)

TRAIN_DEFAULTS = {"epochs": 100, "batch_size": 6, "lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8}


def default_model_config(dataset: Dataset) -> dict:
    """State channels and parameter scaling implied by the dataset's problem type."""
    if dataset.problem == "poisson":
        return {"state_channels": 1, "param_scale": [0.05]}
    return {"state_channels": 2, "param_scale": [50.0, 0.05]}


def dataset_tag(dataset: Dataset) -> dict:
    m = dataset.manifest
    return {"problem": m["problem"], "seed": m["seed"], "split": m["split"], "count": m["count"]}


def batch_loss(model: DeformerModel, batch):
    return T.l1_loss(model.forward(batch), T.Tensor(batch.target))


def train(kind: str, dataset: Dataset, epochs: int | None = None, seed: int = 0, out_dir=None,
          model_config: dict | None = None, train_config: dict | None = None, model: DeformerModel | None = None):
    """
    Fit a deformer to the dataset's MA targets.

    Returns the model and the per-epoch log (list of dicts with ``epoch``,
    ``loss``, ``seconds``).  With ``out_dir`` the checkpoint is rewritten
    after every epoch; a non-finite loss aborts and leaves the last good
    checkpoint in place.
    """
    if len(dataset) == 0:
        raise InvalidArgument("cannot train on an empty dataset")
    cfg = {**TRAIN_DEFAULTS, **(train_config or {})}
    unknown = set(cfg) - set(TRAIN_DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
    epochs = int(cfg["epochs"] if epochs is None else epochs)
    if model is None:
        model = DeformerModel(kind, {**default_model_config(dataset), **(model_config or {})}, seed=seed)
    prepared = [model.prepare(r.mesh, r.state(), target=r.target) for r in dataset]
    bs = int(cfg["batch_size"])
    ckpt = Path(out_dir) / "checkpoint.json" if out_dir is not None else None
    if ckpt is not None:
        ckpt.parent.mkdir(parents=True, exist_ok=True)
    history = []
    for epoch in range(epochs):
        start = time.perf_counter()
        order = stream(seed, "batching", epoch).permutation(len(prepared))
        total, weight = 0.0, 0
        for b in range(math.ceil(len(order) / bs)):
            batch = collate([prepared[i] for i in order[b * bs:(b + 1) * bs]])
            with T.Tape() as tape:
                loss = batch_loss(model, batch)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericFailure(f"training loss became {value} at epoch {epoch}, batch {b}; "
                                     f"last good checkpoint kept at {ckpt}", residual=value)
            tape.backward(loss)
            adam_step(model.store, cfg["lr"], cfg["beta1"], cfg["beta2"], cfg["eps"])
            total += value * len(batch.samples)
            weight += len(batch.samples)
        entry = {"epoch": epoch, "loss": total / weight, "seconds": time.perf_counter() - start}
        history.append(entry)
        log.info("epoch %d loss %.6e (%.2fs)", epoch, entry["loss"], entry["seconds"])
        if ckpt is not None:
            model.save(ckpt, meta={"dataset": dataset_tag(dataset), "epochs_done": epoch + 1,
                                   "train_config": cfg, "history": [h["loss"] for h in history]})
    model.meta = {"dataset": dataset_tag(dataset), "epochs_done": epochs, "train_config": cfg,
                  "history": [h["loss"] for h in history]}
    return model, history
