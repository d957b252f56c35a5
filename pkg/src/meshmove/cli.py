"""
Command-line interface.

    meshmove gen-data --problem poisson --count 64 --seed 0 --out data/train
    meshmove train --data data/train --kind m2n_spline --epochs 100 --out runs/spline
    meshmove eval --data data/test --checkpoint runs/spline/checkpoint.json --ma --out report
    meshmove adapt --data data/test --index 0 --method ma --out adapted.mesh
    meshmove solve --mesh adapted.mesh --data data/test --index 0 --out solved.mesh
    meshmove render --mesh solved.mesh --field u --out solved.svg
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, InvalidArgument, MeshMoveError
from .fem import AnalyticField, PointLocator, quadrature_l2_error, solve_poisson
from .mesh import Mesh, inversion_fraction
from .meshio import read_mesh, render_svg, write_mesh
from .monitor import MonitorField
from .mover import MAOptions, ma_adapt

log = logging.getLogger("meshmove")

CONFIG_SECTIONS = ("data", "model", "train", "ma")


def load_config(path) -> dict:
    """Read a YAML or JSON config with optional ``data``, ``model``, ``train`` and ``ma`` sections."""
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        cfg = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must be a mapping with sections {', '.join(CONFIG_SECTIONS)}")
    unknown = set(cfg) - set(CONFIG_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}; expected {', '.join(CONFIG_SECTIONS)}")
    return cfg


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _record(args):
    from .pipeline.datasets import load_dataset
    ds = load_dataset(args.data)
    if not 0 <= args.index < len(ds):
        raise InvalidArgument(f"--index {args.index} out of range: dataset has {len(ds)} records")
    return ds, ds.records[args.index]


def _record_monitor(ds, rec):
    from .pipeline.evaluation import _Problem
    refine = int(ds.manifest.get("config", {}).get("refine", 4))
    return _Problem(rec, {}, refine).monitor()


def _ma_options(cfg: dict) -> MAOptions | None:
    if "ma" not in cfg:
        return None
    known = set(MAOptions.__dataclass_fields__)
    unknown = set(cfg["ma"]) - known
    if unknown:
        raise ConfigError(f"unknown ma options {sorted(unknown)}; expected {sorted(known)}")
    return MAOptions(**cfg["ma"])


# subcommands

def cmd_gen_data(args, cfg) -> int:
    from .pipeline.datasets import generate_burgers_dataset, generate_poisson_dataset, save_dataset
    data_cfg = dict(cfg.get("data", {}))
    if "ma" in cfg:
        data_cfg["ma"] = cfg["ma"]
    if args.problem == "poisson":
        ds = generate_poisson_dataset(args.count, args.resolutions, args.seed, args.split, data_cfg, args.workers)
    else:
        nu = args.nu_range
        if nu is not None and len(nu) != 2:
            raise InvalidArgument("--nu-range takes two numbers, e.g. 0.005,0.02")
        ds = generate_burgers_dataset(args.trajectories, args.steps, args.resolutions, nu, args.seed, args.split,
                                      data_cfg, args.workers)
    path = save_dataset(ds, args.out)
    failed = len(ds.manifest["failures"])
    print(f"wrote {len(ds)} {args.problem} records to {path}" + (f" ({failed} MA failures dropped)" if failed else ""))
    return 0


def cmd_train(args, cfg) -> int:
    from .pipeline.datasets import load_dataset
    from .pipeline.training import train
    ds = load_dataset(args.data)
    _, history = train(args.kind, ds, args.epochs, args.seed, args.out, cfg.get("model"), cfg.get("train"))
    out = Path(args.out)
    (out / "history.tsv").write_text("epoch\tloss\tseconds\n" + "".join(
        f"{h['epoch']}\t{h['loss']:.10g}\t{h['seconds']:.4f}\n" for h in history))
    print(f"trained {args.kind} for {len(history)} epochs; final loss {history[-1]['loss']:.4e}; "
          f"checkpoint {out / 'checkpoint.json'}")
    return 0


def cmd_eval(args, cfg) -> int:
    from .pipeline.datasets import load_dataset
    from .pipeline.evaluation import evaluate
    ds = load_dataset(args.data)
    opts = _ma_options(cfg)
    report = evaluate(args.checkpoint, ds, include_ma=args.ma, ma_options=opts)
    report.write(args.out, figures=not args.no_figures)
    print(report.to_text(), end="")
    print(f"report written to {args.out}")
    return 0


def _mesh_state(mesh: Mesh, fields: dict, name: str, nu: float | None):
    from .problems import InputState
    if name not in fields:
        raise InvalidArgument(f"mesh file has no field {name!r}; available: {', '.join(fields) or 'none'}")
    values = fields[name]
    locator = PointLocator(mesh)
    if values.shape[1] == 1:
        return InputState("poisson_source", lambda p: locator.interpolate(values[:, 0], p)[0], mesh.domain,
                          [mesh.density])
    if nu is None:
        raise InvalidArgument("a two-component (velocity) state needs --nu")
    return InputState("burgers_velocity", lambda p: locator.interpolate(values, p)[0], mesh.domain, [nu, mesh.density])


def cmd_adapt(args, cfg) -> int:
    if (args.data is None) == (args.mesh is None):
        raise InvalidArgument("give exactly one input: --data DIR --index K, or --mesh FILE")
    if args.data is not None:
        ds, rec = _record(args)
        mesh, state, fields = rec.mesh, rec.state(), {}
    else:
        mesh, fields = _read_mesh(args.mesh)
        ds = rec = state = None
    if args.method == "ma":
        if rec is not None:
            monitor = _record_monitor(ds, rec)
        elif args.monitor == "uniform":
            monitor = MonitorField(mesh, np.ones(mesh.n_nodes))
        else:
            if args.monitor not in fields or fields[args.monitor].shape[1] != 1:
                raise InvalidArgument(f"--monitor must be 'uniform' or a scalar field of the mesh file; "
                                      f"available: {', '.join(fields) or 'none'}")
            monitor = MonitorField(mesh, fields[args.monitor][:, 0])
        opts = _ma_options(cfg)
        result = ma_adapt(mesh, monitor, opts)
        coords = result.coords
        print(f"MA converged in {result.iterations} iterations; equidistribution "
              f"{result.eq_before:.4g} -> {result.eq_after:.4g}")
        extra = {"monitor": monitor.values}
    else:
        from .deformers import DeformerModel
        path = Path(args.method)
        if not path.exists():
            raise ConfigError(f"--method must be 'ma' or a checkpoint path; {path} does not exist")
        model = DeformerModel.load(path)
        if state is None:
            state = _mesh_state(mesh, fields, args.state, args.nu)
        coords = model.deform(mesh, state)
        extra = {}
    inv = inversion_fraction(mesh, coords)
    write_mesh(args.out, mesh, coords, extra)
    print(f"wrote {args.out}; element inversion {100 * inv:.2f}%")
    return 0


def cmd_solve(args, cfg) -> int:
    mesh, _ = _read_mesh(args.mesh)
    if args.data is not None:
        _, rec = _record(args)
        if rec.sample.problem != "poisson":
            raise InvalidArgument("solve supports Poisson records; Burgers records are evaluated by 'eval'")
        if rec.mesh.n_nodes != mesh.n_nodes:
            raise InvalidArgument("mesh file does not match the record's mesh topology")
        f, g = rec.sample.mixture.f, rec.sample.mixture.u
    else:
        f = lambda x, y: 2 * np.pi ** 2 * np.sin(np.pi * x) * np.sin(np.pi * y)
        g = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
    u = solve_poisson(mesh, f, g)
    err = quadrature_l2_error(u, AnalyticField(g))
    write_mesh(args.out, mesh, None, {"u": u.values})
    print(f"L2 error vs exact solution: {err:.6e}")
    print(f"wrote {args.out}")
    return 0


def _read_mesh(path):
    mesh, fields = read_mesh(path)
    # one column per component, whatever the stored layout
    return mesh, {k: np.asarray(v, dtype=float).reshape(mesh.n_nodes, -1) for k, v in fields.items()}


def cmd_render(args, cfg) -> int:
    mesh, fields = _read_mesh(args.mesh)
    values = None
    if args.field is not None:
        if args.field not in fields:
            raise InvalidArgument(f"mesh file has no field {args.field!r}; available: {', '.join(fields) or 'none'}")
        values = fields[args.field]
        values = values[:, 0] if values.shape[1] == 1 else np.linalg.norm(values, axis=1)
    Path(args.out).write_text(render_svg(mesh, None, values, width=args.width))
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meshmove", description="Monge-Ampere and learned mesh movement for FEM.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON file with data/model/train/ma sections")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", required=True, help="output path")
    common.add_argument("--workers", type=int, default=1, help="worker processes for per-sample work")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate a dataset of MA target meshes")
    p.add_argument("--problem", choices=("poisson", "burgers"), default="poisson")
    p.add_argument("--count", type=int, default=64, help="Poisson samples")
    p.add_argument("--trajectories", type=int, default=3, help="Burgers trajectories")
    p.add_argument("--steps", type=int, default=None, help="Burgers time steps per trajectory")
    p.add_argument("--resolutions", type=_ints, default=None, help="comma-separated nodes per side")
    p.add_argument("--nu-range", type=_floats, default=None, help="Burgers viscosity range lo,hi")
    p.add_argument("--split", default="train", help="split label recorded in the manifest")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train a deformer on a dataset")
    p.add_argument("--data", required=True, help="dataset directory or manifest")
    p.add_argument("--kind", required=True, choices=("m2n_spline", "m2n_gat", "mlp_deform_clip", "gat_deform_clip"))
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score MA and checkpoints on a test dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", action="append", default=[], help="checkpoint file (repeatable)")
    p.add_argument("--ma", action=argparse.BooleanOptionalAction, default=True, help="include the MA baseline")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("adapt", parents=[common], help="move one mesh with MA or a checkpoint")
    p.add_argument("--method", default="ma", help="'ma' or a checkpoint path")
    p.add_argument("--data", help="dataset directory (use with --index)")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--mesh", help="mesh file input instead of a dataset record")
    p.add_argument("--monitor", default="uniform", help="MA on a mesh file: 'uniform' or a scalar field name")
    p.add_argument("--state", default="f", help="learned deformers on a mesh file: state field name")
    p.add_argument("--nu", type=float, default=None, help="viscosity for velocity states")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("solve", parents=[common], help="solve Poisson on a mesh file")
    p.add_argument("--mesh", required=True)
    p.add_argument("--data", help="take the problem from this dataset record (default: sin(pi x) sin(pi y))")
    p.add_argument("--index", type=int, default=0)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("render", parents=[common], help="render a mesh file as SVG")
    p.add_argument("--mesh", required=True)
    p.add_argument("--field", help="colour by this nodal field")
    p.add_argument("--width", type=int, default=600)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if getattr(args, "workers", 1) < 1:
            raise InvalidArgument("--workers must be >= 1")
        return args.func(args, cfg)
    except MeshMoveError as exc:
        print(f"meshmove {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"meshmove {args.command}: error: {exc.strerror or exc}: {exc.filename or ''}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
