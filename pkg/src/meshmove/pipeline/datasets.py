"""
Supervised datasets of (problem, initial mesh, Monge-Ampere target mesh).

A dataset directory holds ``manifest.json`` and one JSON file per record.
Everything is derived from ``(seed, split)`` through named random streams,
so regenerating with the same arguments reproduces the files byte for byte.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from ..errors import ConfigError, InvalidArgument, MeshMoveError, NumericFailure
from ..fem import AnalyticField, VectorField, quadrature_l2_error, solve_burgers, solve_poisson, transfer_field
from ..mesh import DomainSpec, Mesh, build_polygon_mesh, build_unit_square_mesh, inversion_fraction
from ..monitor import DEFAULT_ALPHA, DEFAULT_BETA, evaluate_monitor
from ..mover import MAOptions, ma_adapt
from ..problems import (BurgersSpec, GaussianMixture, InputState, burgers_state, poisson_state, random_burgers,
                        random_mixture, stream)

log = logging.getLogger(__name__)

DATASET_FORMAT = "meshmove-dataset"
DATASET_VERSION = 1
MAX_FAILURE_RATE = 0.2

POISSON_DEFAULTS = {
    "domain": "unit_square",
    "resolutions": [15, 20],
    "n_gaussians": [1, 3],
    "width_range": [0.05, 0.25],
    "amp_range": [0.5, 1.5],
    "alpha": DEFAULT_ALPHA,
    "beta": DEFAULT_BETA,
    "ma": {"gamma": 0.2, "tol": 1e-6, "max_iters": 500},
}

BURGERS_DEFAULTS = {
    "domain": "unit_square",
    "resolutions": [15],
    "steps": 20,
    "dt": 0.01,
    "nu_range": [0.005, 0.02],
    "refine": 4,
    "alpha": DEFAULT_ALPHA,
    "beta": DEFAULT_BETA,
    "ma": {"gamma": 0.2, "tol": 1e-6, "max_iters": 500},
}


def make_domain(name: str) -> DomainSpec:
    if name == "unit_square":
        return DomainSpec.unit_square()
    if name == "heptagon":
        return DomainSpec.heptagon()
    raise ConfigError(f"unknown domain {name!r}; use unit_square or heptagon")


@lru_cache(maxsize=64)
def initial_mesh(domain_name: str, resolution: int) -> Mesh:
    """``resolution`` x ``resolution`` lattice on the square; boundary density ``resolution - 1`` elsewhere."""
    if resolution < 3:
        raise InvalidArgument(f"resolution must be >= 3, got {resolution}")
    if domain_name == "unit_square":
        return build_unit_square_mesh(resolution)
    return build_polygon_mesh(make_domain(domain_name), resolution - 1)


def mesh_to_dict(mesh: Mesh) -> dict:
    return {
        "domain": mesh.domain.to_dict(),
        "nodes": mesh.nodes.tolist(),
        "triangles": mesh.triangles.tolist(),
        "tag_kind": mesh.tag_kind.tolist(),
        "tag_index": mesh.tag_index.tolist(),
    }


def mesh_from_dict(d: dict) -> Mesh:
    return Mesh(d["nodes"], d["triangles"], d["tag_kind"], d["tag_index"], DomainSpec.from_dict(d["domain"]))


@dataclass(eq=False)
class ProblemSample:
    """One problem instance: a Gaussian mixture (Poisson) or one step of a Burgers trajectory."""

    problem: str
    domain: str
    resolution: int
    seed: int
    split: str
    index: int
    mixture: GaussianMixture | None = None
    burgers: BurgersSpec | None = None
    trajectory: int = -1
    step: int = -1
    velocity: np.ndarray | None = None

    def to_dict(self) -> dict:
        d = {"problem": self.problem, "domain": self.domain, "resolution": self.resolution,
             "seed": self.seed, "split": self.split, "index": self.index}
        if self.mixture is not None:
            d["mixture"] = self.mixture.to_dict()
        if self.burgers is not None:
            d.update(burgers=self.burgers.to_dict(), trajectory=self.trajectory, step=self.step,
                     velocity=np.asarray(self.velocity).tolist())
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemSample":
        return cls(
            problem=d["problem"], domain=d["domain"], resolution=int(d["resolution"]), seed=int(d["seed"]),
            split=d["split"], index=int(d["index"]),
            mixture=GaussianMixture.from_dict(d["mixture"]) if "mixture" in d else None,
            burgers=BurgersSpec.from_dict(d["burgers"]) if "burgers" in d else None,
            trajectory=int(d.get("trajectory", -1)), step=int(d.get("step", -1)),
            velocity=np.asarray(d["velocity"], dtype=float) if "velocity" in d else None,
        )


@dataclass(eq=False)
class DatasetRecord:
    sample: ProblemSample
    mesh: Mesh
    target: np.ndarray
    alpha: float
    beta: float
    ma_stats: dict = field(default_factory=dict)

    def state(self) -> InputState:
        """The deformer input for this record."""
        s = self.sample
        if s.problem == "poisson":
            return poisson_state(s.mixture, self.mesh.domain, self.mesh.density)
        return burgers_state(VectorField(self.mesh, s.velocity), s.burgers.nu, self.mesh.density)

    def to_dict(self) -> dict:
        return {"sample": self.sample.to_dict(), "mesh": mesh_to_dict(self.mesh),
                "target": np.asarray(self.target).tolist(),
                "monitor": {"alpha": self.alpha, "beta": self.beta}, "ma": self.ma_stats}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetRecord":
        return cls(ProblemSample.from_dict(d["sample"]), mesh_from_dict(d["mesh"]),
                   np.asarray(d["target"], dtype=float), float(d["monitor"]["alpha"]),
                   float(d["monitor"]["beta"]), dict(d.get("ma", {})))


@dataclass(eq=False)
class Dataset:
    manifest: dict
    records: list

    @property
    def problem(self) -> str:
        return self.manifest["problem"]

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def _ma_stats(result) -> dict:
    # wall time is deliberately left out so the files stay reproducible
    return {"iterations": result.iterations, "residual": result.residuals[-1],
            "eq_before": result.eq_before, "eq_after": result.eq_after}


def _ma_options(cfg: dict) -> MAOptions:
    return MAOptions(**cfg.get("ma", {}))


def poisson_error(mesh: Mesh, mixture: GaussianMixture, coords=None) -> float:
    """L2 error of the P1 Poisson solution on ``mesh`` (optionally moved) against the analytic solution."""
    m = mesh if coords is None else mesh.moved(coords)
    u = solve_poisson(m, mixture.f, mixture.u)
    return quadrature_l2_error(u, AnalyticField(mixture.u))


def poisson_monitor(mesh: Mesh, mixture: GaussianMixture, alpha: float, beta: float):
    u = solve_poisson(mesh, mixture.f, mixture.u)
    return evaluate_monitor(u, AnalyticField(mixture.u).on(mesh), alpha=alpha, beta=beta)


def _poisson_attempt(args) -> dict:
    seed, split, attempt, cfg = args
    rng = stream(seed, split, "poisson", attempt)
    n = int(rng.choice(cfg["resolutions"]))
    mesh = initial_mesh(cfg["domain"], n)
    mixture = random_mixture(rng, mesh.domain, tuple(cfg["n_gaussians"]), tuple(cfg["width_range"]),
                             tuple(cfg["amp_range"]))
    sample = ProblemSample("poisson", cfg["domain"], n, seed, split, attempt, mixture=mixture)
    try:
        monitor = poisson_monitor(mesh, mixture, cfg["alpha"], cfg["beta"])
        result = ma_adapt(mesh, monitor, _ma_options(cfg))
    except NumericFailure as exc:
        return {"failure": {"attempt": attempt, "resolution": n, "reason": str(exc)}}
    rec = DatasetRecord(sample, mesh, result.coords, cfg["alpha"], cfg["beta"], _ma_stats(result))
    return {"record": rec.to_dict()}


def _run(fn, jobs, workers: int):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def _check_failures(failures: list, attempts: int, what: str) -> None:
    if attempts and len(failures) / attempts > MAX_FAILURE_RATE:
        detail = "; ".join(f"#{f['attempt']}: {f['reason']}" for f in failures[:5])
        raise NumericFailure(
            f"{what}: Monge-Ampere failed on {len(failures)} of {attempts} samples "
            f"(> {MAX_FAILURE_RATE:.0%}); first failures: {detail}")


def generate_poisson_dataset(count: int, resolutions=None, seed: int = 0, split: str = "train",
                             config: dict | None = None, workers: int = 1) -> Dataset:
    """
    Draw ``count`` mixed-Gaussian Poisson problems and their MA target meshes.

    Samples whose MA run fails are logged and replaced by fresh draws; the
    run aborts if more than 20% of the attempts fail.
    """
    if count < 1:
        raise InvalidArgument(f"count must be >= 1, got {count}")
    cfg = {**POISSON_DEFAULTS, **(config or {})}
    if resolutions is not None:
        cfg["resolutions"] = [int(r) for r in resolutions]
    records, failures = [], []
    attempt = 0
    while len(records) < count:
        need = count - len(records)
        batch = list(range(attempt, attempt + (need if attempt == 0 else math.ceil(need / (1 - MAX_FAILURE_RATE)))))
        attempt += len(batch)
        for out in _run(_poisson_attempt, [(seed, split, a, cfg) for a in batch], workers):
            if "failure" in out:
                log.warning("dropping Poisson sample %d: %s", out["failure"]["attempt"], out["failure"]["reason"])
                failures.append(out["failure"])
            elif len(records) < count:
                records.append(DatasetRecord.from_dict(out["record"]))
        _check_failures(failures, attempt, "Poisson dataset")
    manifest = _manifest("poisson", seed, split, cfg, records, failures, attempt)
    return Dataset(manifest, records)


def burgers_reference(spec: BurgersSpec, domain: str, resolution: int, refine: int) -> list[VectorField]:
    """Reference trajectory on the mesh with ``refine`` times more cells per side."""
    fine = initial_mesh(domain, refine * (resolution - 1) + 1)
    return solve_burgers(fine, AnalyticField(spec.u0).on(fine), spec.nu, spec.dt, spec.steps)


def burgers_monitor(u: VectorField, reference: VectorField, alpha: float, beta: float):
    return evaluate_monitor(u, transfer_field(reference, u.mesh), alpha=alpha, beta=beta)


def burgers_step_error(mesh: Mesh, reference: list, step: int, nu: float, dt: float, coords=None) -> float:
    """
    Error of one Burgers step on ``mesh`` (optionally moved).

    The reference state at ``step`` is interpolated onto the mesh, advanced
    by one time step, and compared with the reference state at ``step + 1``.
    """
    m = mesh if coords is None else mesh.moved(coords)
    start = transfer_field(reference[step], m)
    u1 = solve_burgers(m, VectorField(m, start.values), nu, dt, 1)[-1]
    return quadrature_l2_error(u1, reference[step + 1])


def _burgers_trajectory(args) -> dict:
    seed, split, traj, cfg = args
    rng = stream(seed, split, "burgers", traj)
    n = int(rng.choice(cfg["resolutions"]))
    spec = random_burgers(rng, tuple(cfg["nu_range"]), cfg["dt"], cfg["steps"])
    if cfg.get("zero_initial"):
        spec = BurgersSpec(spec.center, spec.width, 0.0, spec.direction, spec.nu, spec.dt, spec.steps)
    mesh = initial_mesh(cfg["domain"], n)
    work = solve_burgers(mesh, AnalyticField(spec.u0).on(mesh), spec.nu, spec.dt, spec.steps)
    ref = burgers_reference(spec, cfg["domain"], n, cfg["refine"])
    records, failures = [], []
    for k in range(spec.steps):
        index = traj * spec.steps + k
        sample = ProblemSample("burgers", cfg["domain"], n, seed, split, index, burgers=spec,
                               trajectory=traj, step=k, velocity=work[k].values)
        try:
            monitor = burgers_monitor(work[k], ref[k], cfg["alpha"], cfg["beta"])
            result = ma_adapt(mesh, monitor, _ma_options(cfg))
        except NumericFailure as exc:
            failures.append({"attempt": index, "resolution": n, "reason": str(exc)})
            continue
        rec = DatasetRecord(sample, mesh, result.coords, cfg["alpha"], cfg["beta"], _ma_stats(result))
        rec.ma_stats["monitor_max"] = float(monitor.values.max())
        records.append(rec.to_dict())
    return {"records": records, "failures": failures}


def generate_burgers_dataset(trajectories: int, steps: int | None = None, resolutions=None, nu_range=None,
                             seed: int = 0, split: str = "train", config: dict | None = None,
                             workers: int = 1) -> Dataset:
    """One record per (trajectory, time step); MA failures are dropped and logged."""
    if trajectories < 1:
        raise InvalidArgument(f"trajectories must be >= 1, got {trajectories}")
    cfg = {**BURGERS_DEFAULTS, **(config or {})}
    if steps is not None:
        cfg["steps"] = int(steps)
    if resolutions is not None:
        cfg["resolutions"] = [int(r) for r in resolutions]
    if nu_range is not None:
        cfg["nu_range"] = [float(v) for v in nu_range]
    if cfg["steps"] < 1 or min(cfg["nu_range"]) <= 0:
        raise InvalidArgument("Burgers dataset needs steps >= 1 and a positive viscosity range")
    records, failures = [], []
    for out in _run(_burgers_trajectory, [(seed, split, t, cfg) for t in range(trajectories)], workers):
        records += [DatasetRecord.from_dict(r) for r in out["records"]]
        failures += out["failures"]
    for f in failures:
        log.warning("dropping Burgers record %d: %s", f["attempt"], f["reason"])
    _check_failures(failures, trajectories * cfg["steps"], "Burgers dataset")
    manifest = _manifest("burgers", seed, split, cfg, records, failures, trajectories * cfg["steps"])
    manifest["trajectories"] = trajectories
    return Dataset(manifest, records)


def _manifest(problem, seed, split, cfg, records, failures, attempts) -> dict:
    return {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "problem": problem,
        "seed": int(seed),
        "split": split,
        "count": len(records),
        "attempts": int(attempts),
        "config": cfg,
        "failures": failures,
        "records": [
            {"file": f"records/{i:05d}.json", "index": r.sample.index, "resolution": r.sample.resolution,
             "ma_iterations": r.ma_stats.get("iterations")}
            for i, r in enumerate(records)
        ],
    }


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def save_dataset(dataset: Dataset, out_dir) -> Path:
    out = Path(out_dir)
    (out / "records").mkdir(parents=True, exist_ok=True)
    for entry, rec in zip(dataset.manifest["records"], dataset.records):
        (out / entry["file"]).write_text(_dump(rec.to_dict()))
    path = out / "manifest.json"
    path.write_text(_dump(dataset.manifest))
    return path


def load_dataset(path) -> Dataset:
    """Load from a dataset directory or its manifest file."""
    path = Path(path)
    manifest_path = path / "manifest.json" if path.is_dir() else path
    if not manifest_path.exists():
        raise ConfigError(f"no dataset manifest at {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{manifest_path} is not valid JSON: {exc}") from None
    if manifest.get("format") != DATASET_FORMAT:
        raise ConfigError(f"{manifest_path} is not a meshmove dataset manifest")
    root = manifest_path.parent
    records = []
    for entry in manifest["records"]:
        try:
            records.append(DatasetRecord.from_dict(json.loads((root / entry["file"]).read_text())))
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read dataset record {entry.get('file')}: {exc}") from None
    for rec in records:
        if inversion_fraction(rec.mesh, rec.target) > 0:
            raise MeshMoveError(f"record {rec.sample.index} has an inverted target mesh")
    return Dataset(manifest, records)
