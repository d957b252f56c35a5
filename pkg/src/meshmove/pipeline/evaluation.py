"""
Evaluation harness: deform, check for tangling, solve, and compare errors.

Error reduction is ``(e_initial - e_adapted) / e_initial`` where both errors
are L2 distances to ground truth (the analytic solution for Poisson, the
refined-mesh trajectory for Burgers).  Tangled meshes are scored as 0%.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..deformers import DeformerModel
from ..errors import ConfigError, NumericFailure
from ..mover import MAOptions, ma_adapt
from .datasets import (Dataset, burgers_monitor, burgers_reference, burgers_step_error, poisson_error,
                       poisson_monitor)

log = logging.getLogger(__name__)

METHOD_LABELS = {
    "ma": "MA",
    "m2n_spline": "M2N-Spline",
    "m2n_gat": "M2N-GAT",
    "mlp_deform_clip": "MLP-Deform-Clip",
    "gat_deform_clip": "GAT-Deform-Clip",
}
TIMING_NOTE = ("Time (ms) is the wall time of one deformation call: the full ma_adapt call for MA, "
               "and for learned models the whole deform call including input sampling and feature extraction.")


def error_reduction(e_initial: float, e_adapted: float) -> float:
    if e_initial == 0:
        return 0.0
    return (e_initial - e_adapted) / e_initial


@dataclass
class SampleResult:
    method: str
    seed: int
    index: int
    resolution: int
    e_initial: float
    e_adapted: float
    reduction: float
    time_ms: float
    inverted: int
    elements: int
    status: str = "ok"   # ok | illegal (tangled) | solve-failed | ma-failed


@dataclass
class MethodRow:
    method: str
    seeds: list
    samples: int
    reduction_mean: float
    reduction_std: float
    reduction_sample_std: float
    time_ms_mean: float
    time_ms_std: float
    inversion_pct: float
    illegal: int
    failed: int


@dataclass(eq=False)
class EvalReport:
    problem: str
    rows: list
    samples: list
    dataset: dict
    example: dict = field(default_factory=dict, repr=False)

    def row(self, method: str) -> MethodRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    def to_tsv(self) -> str:
        cols = list(MethodRow.__dataclass_fields__)
        lines = ["\t".join(cols)]
        for r in self.rows:
            d = asdict(r)
            d["seeds"] = ",".join(str(s) for s in r.seeds)
            lines.append("\t".join(_fmt(d[c]) for c in cols))
        return "\n".join(lines) + "\n"

    def samples_tsv(self) -> str:
        cols = list(SampleResult.__dataclass_fields__)
        lines = ["\t".join(cols)]
        lines += ["\t".join(_fmt(getattr(s, c)) for c in cols) for s in self.samples]
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        d = self.dataset
        head = [
            f"Problem: {self.problem}   test set: {d.get('count')} samples (seed {d.get('seed')}, split {d.get('split')})",
            TIMING_NOTE,
            "Tangled (inverted) meshes are scored as 0% error reduction; meshes whose solve fails likewise.",
            "",
            f"{'Method':<18}{'Error Reduction (%)':>22}{'Time (ms)':>22}{'Element Inversion (%)':>24}",
            "-" * 86,
        ]
        body = []
        for r in self.rows:
            red = f"{100 * r.reduction_mean:.2f} ± {100 * r.reduction_std:.2f}"
            tms = f"{r.time_ms_mean:.2f} ± {r.time_ms_std:.2f}"
            body.append(f"{r.method:<18}{red:>22}{tms:>22}{r.inversion_pct:>24.2f}")
        notes = [""]
        for r in self.rows:
            if r.illegal or r.failed:
                notes.append(f"{r.method}: {r.illegal} tangled output(s), {r.failed} failed solve(s)")
        return "\n".join(head + body + notes) + "\n"

    def write(self, out_dir, figures: bool = True) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for name, text in (("report.tsv", self.to_tsv()), ("samples.tsv", self.samples_tsv()),
                           ("report.txt", self.to_text())):
            (out / name).write_text(text)
            written.append(out / name)
        if figures:
            from .figures import render_report_figures
            written += render_report_figures(self, out)
        return written


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


class _Problem:
    """Ground truth and error evaluation for one test record."""

    def __init__(self, record, references: dict, refine: int = 4):
        self.record = record
        s = record.sample
        self.mesh = record.mesh
        if s.problem == "poisson":
            self.error = lambda coords=None: poisson_error(self.mesh, s.mixture, coords)
            self.monitor = lambda: poisson_monitor(self.mesh, s.mixture, record.alpha, record.beta)
        else:
            key = (s.seed, s.split, s.trajectory)
            if key not in references:
                references[key] = burgers_reference(s.burgers, s.domain, s.resolution, refine)
            ref = references[key]
            b = s.burgers
            self.error = lambda coords=None: burgers_step_error(self.mesh, ref, s.step, b.nu, b.dt, coords)
            from ..fem import VectorField
            self.monitor = lambda: burgers_monitor(VectorField(self.mesh, s.velocity), ref[s.step],
                                                   record.alpha, record.beta)


def _score(method, seed, problem, e0, coords, elapsed) -> SampleResult:
    rec = problem.record
    mesh = problem.mesh
    inverted = int(np.sum(mesh.areas(coords) <= 0))
    base = dict(method=method, seed=seed, index=rec.sample.index, resolution=rec.sample.resolution,
                e_initial=e0, time_ms=1e3 * elapsed, inverted=inverted, elements=mesh.n_triangles)
    if inverted:
        return SampleResult(e_adapted=float("nan"), reduction=0.0, status="illegal", **base)
    try:
        e1 = problem.error(coords)
    except NumericFailure as exc:
        log.warning("%s: solve failed on sample %d: %s", method, rec.sample.index, exc)
        return SampleResult(e_adapted=float("nan"), reduction=0.0, status="solve-failed", **base)
    return SampleResult(e_adapted=e1, reduction=error_reduction(e0, e1), **base)


def _check_disjoint(model: DeformerModel, dataset: Dataset) -> None:
    tag = getattr(model, "meta", {}).get("dataset")
    if not tag:
        return
    m = dataset.manifest
    if tag.get("seed") == m["seed"] and tag.get("split") == m["split"] and tag.get("problem") == m["problem"]:
        raise ConfigError(f"test dataset (seed {m['seed']}, split {m['split']!r}) is the training set of "
                          f"this {model.kind} checkpoint; generate the test set with another seed or split")


def evaluate(models, dataset: Dataset, include_ma: bool = True, ma_options: MAOptions | None = None,
             check_disjoint: bool = True, keep_example: bool = True) -> EvalReport:
    """
    Score MA and each model on every record of ``dataset``.

    ``models`` is a list of DeformerModel instances or checkpoint paths;
    several checkpoints of one kind are aggregated as seeds of one method.
    """
    loaded = []
    for m in models:
        if not isinstance(m, DeformerModel):
            path = Path(m)
            if not path.exists():
                raise ConfigError(f"checkpoint not found: {path}")
            m = DeformerModel.load(path)
        if check_disjoint:
            _check_disjoint(m, dataset)
        loaded.append(m)
    if not include_ma and not loaded:
        raise ConfigError("nothing to evaluate: pass checkpoints and/or enable the MA baseline")
    opts = ma_options or MAOptions(**dataset.manifest.get("config", {}).get("ma", {}))
    log.info("evaluating %d samples: %s", len(dataset), ", ".join(
        (["MA"] if include_ma else []) + [METHOD_LABELS[m.kind] for m in loaded]))
    references: dict = {}
    results: list[SampleResult] = []
    example = {}
    refine = int(dataset.manifest.get("config", {}).get("refine", 4))
    for k, rec in enumerate(dataset):
        problem = _Problem(rec, references, refine)
        e0 = problem.error()
        if keep_example and k == 0:
            example = {"mesh": rec.mesh, "coords": {}}
        if include_ma:
            monitor = problem.monitor()
            res = ma_adapt(rec.mesh, monitor, opts, raise_on_failure=False)
            r = _score("MA", 0, problem, e0, res.coords, res.elapsed)
            if not res.converged:
                r.status, r.reduction = "ma-failed", 0.0
            results.append(r)
            if example and k == 0:
                example["coords"]["MA"] = res.coords
        state = rec.state()
        for m in loaded:
            start = time.perf_counter()
            coords = m.deform(rec.mesh, state)
            elapsed = time.perf_counter() - start
            label = METHOD_LABELS[m.kind]
            results.append(_score(label, m.seed, problem, e0, coords, elapsed))
            if example and k == 0 and label not in example["coords"]:
                example["coords"][label] = coords
    rows = _aggregate(results)
    return EvalReport(dataset.problem, rows, results, dict(dataset.manifest, records=None), example)


def _aggregate(results) -> list[MethodRow]:
    order = [label for label in METHOD_LABELS.values() if any(r.method == label for r in results)]
    rows = []
    for method in order:
        mine = [r for r in results if r.method == method]
        seeds = sorted({r.seed for r in mine})
        per_seed_red = [np.mean([r.reduction for r in mine if r.seed == s]) for s in seeds]
        per_seed_time = [np.mean([r.time_ms for r in mine if r.seed == s]) for s in seeds]
        rows.append(MethodRow(
            method=method,
            seeds=seeds,
            samples=len(mine),
            reduction_mean=float(np.mean(per_seed_red)),
            reduction_std=float(np.std(per_seed_red)),
            reduction_sample_std=float(np.std([r.reduction for r in mine])),
            time_ms_mean=float(np.mean(per_seed_time)),
            time_ms_std=float(np.std([r.time_ms for r in mine])),
            inversion_pct=100.0 * sum(r.inverted for r in mine) / max(sum(r.elements for r in mine), 1),
            illegal=sum(r.status == "illegal" for r in mine),
            failed=sum(r.status in ("solve-failed", "ma-failed") for r in mine),
        ))
    return rows
