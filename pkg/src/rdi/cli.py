"""Command-line front end: ``rdi gen-mesh | build-op | detect | study``.

Exit codes: 0 success, 2 usage error, 3 input error, 4 numerical failure.
Every command writes its outputs to temporary files and renames them only
once the whole run has succeeded, so a failed run leaves nothing behind.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from contextlib import ExitStack
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import indicator, meshgen, osus, studies, testfns
from .indicator import DetectConfig
from .mesh import MeshError, detect_features, load_mesh, read_features_csv, virtual_split, write_features_csv, write_off

logger = logging.getLogger("rdi")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message, code=EXIT_INPUT):
        super().__init__(message)
        self.code = code


class Outputs:
    """Stage output files as ``<name>.part`` and publish them together."""

    def __init__(self):
        self.staged = []
        self.created = []

    def stage(self, path, writer):
        path = Path(path)
        self._ensure_dir(path.parent)
        part = path.with_name(path.name + ".part")
        writer(part)
        self.staged.append((part, path))
        return path

    def _ensure_dir(self, d: Path):
        missing = []
        while not d.exists():
            missing.append(d)
            d = d.parent
        for m in reversed(missing):
            m.mkdir()
            self.created.append(m)

    def commit(self):
        for part, path in self.staged:
            part.replace(path)
        self.staged, self.created = [], []

    def discard(self):
        for part, _ in self.staged:
            part.unlink(missing_ok=True)
        for d in reversed(self.created):
            try:
                d.rmdir()
            except OSError:
                pass
        self.staged, self.created = [], []


def _write_json(obj):
    def writer(path):
        Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return writer


def _manifest(args, outputs, **fields):
    base = {
        "command": args.command,
        "argv": args.argv,
        "outputs": [str(p) for p in outputs],
        "timings": {},
    }
    base.update(fields)
    return base


def _manifest_path(output: Path) -> Path:
    return output.with_name(output.name + ".manifest.json")


# -- config and features ------------------------------------------------------


def detect_config(args) -> DetectConfig:
    overrides = dict(kappa0=args.kappa0, kappa1=args.kappa1, c_local=args.cl, c_global=args.cg, weight_mode=args.weights)
    try:
        if args.config:
            return DetectConfig.from_file(args.config, **overrides)
        return DetectConfig().replace(**overrides)
    except OSError as exc:
        raise CliError("cannot read config: %s" % exc) from exc
    except (TypeError, ValueError) as exc:
        raise CliError("invalid configuration: %s" % exc, EXIT_USAGE if not args.config else EXIT_INPUT) from exc


def _features_mode(values):
    if values in (["auto"], ["none"]):
        return values[0], None
    if len(values) == 2 and values[0] == "file":
        return "file", values[1]
    raise CliError("--features takes 'auto', 'none' or 'file PATH'", EXIT_USAGE)


def prepared_mesh(args):
    """Load the mesh and apply the requested virtual splitting."""
    try:
        mesh = load_mesh(args.mesh)
    except MeshError as exc:
        raise CliError(str(exc)) from exc
    mode, path = _features_mode(args.features)
    if mode == "none":
        return mesh, None
    try:
        features = detect_features(mesh) if mode == "auto" else read_features_csv(path)
    except (OSError, ValueError) as exc:
        raise CliError("cannot read features: %s" % exc) from exc
    if len(features) == 0:
        return mesh, features
    try:
        return virtual_split(mesh, features), features
    except (IndexError, ValueError) as exc:
        raise CliError("invalid feature edges: %s" % exc) from exc


# -- commands ---------------------------------------------------------------------


GENERATORS = {
    "icosphere": (meshgen.icosphere, ("level",)),
    "cubed-sphere": (meshgen.cubed_sphere, ("n",)),
    "flat-grid": (meshgen.flat_grid, ("n", "pattern")),
    "flat-random": (meshgen.flat_random, ("points", "seed")),
    "cylinder": (meshgen.cylinder, ("nr", "nz")),
}


def cmd_gen_mesh(args, out: Outputs) -> int:
    fn, names = GENERATORS[args.kind]
    params = {name: getattr(args, name) for name in names}
    missing = [n for n, v in params.items() if v is None and n not in ("seed",)]
    if missing:
        raise CliError("%s needs --%s" % (args.kind, ", --".join(missing)), EXIT_USAGE)
    if args.kind == "flat-random":
        params = {"n_points": params["points"], "seed": params["seed"]}
    t0 = time.perf_counter()
    try:
        mesh = fn(**params)
    except ValueError as exc:
        raise CliError("%s: %s" % (args.kind, exc), EXIT_USAGE) from exc
    elapsed = time.perf_counter() - t0
    output = Path(args.output or "%s.off" % args.kind)
    out.stage(output, lambda p: write_off(mesh, p))
    manifest = _manifest(
        args, [output],
        mesh_kind=args.kind, params=params, fingerprint=mesh.fingerprint.hex(),
        n_vertices=mesh.n_vertices, n_elements=mesh.n_elements,
        boundary_edges=int(len(mesh.boundary_halffacets)), timings={"generate": elapsed},
    )
    out.stage(_manifest_path(output), _write_json(manifest))
    print("%s: %d vertices, %d elements, %d boundary edges"
          % (output, mesh.n_vertices, mesh.n_elements, len(mesh.boundary_halffacets)))
    return EXIT_OK


def cmd_build_op(args, out: Outputs) -> int:
    mesh, features = prepared_mesh(args)
    t0 = time.perf_counter()
    op = osus.assemble(mesh)
    elapsed = time.perf_counter() - t0
    n_flagged = len(op.flagged_rows)
    if op.n_cells and n_flagged == op.n_cells:
        raise CliError("every WLS fit is ill-conditioned; no usable operator", EXIT_NUMERIC)
    output = Path(args.output or Path(args.mesh).with_suffix(".osus"))
    flagged = output.with_name(output.stem + ".flagged.csv")
    out.stage(output, lambda p: osus.save(op, p))
    out.stage(flagged, lambda p: osus.write_flagged_csv(op, p))
    paths = [output, flagged]
    if features is not None and len(features):
        paths.append(out.stage(output.with_name(output.stem + ".features.csv"),
                               lambda p: write_features_csv(features, p)))
    manifest = _manifest(
        args, paths, mesh=str(args.mesh), fingerprint=mesh.fingerprint.hex(),
        patches=mesh.n_patches, feature_edges=0 if features is None else len(features) // 2,
        nnz=op.nnz, flagged_rows=n_flagged, timings={"assemble": elapsed},
    )
    out.stage(_manifest_path(output), _write_json(manifest))
    print("%s: %d x %d, nnz %d, %d patches, %d flagged rows"
          % (output, op.n_cells, op.n_nodes, op.nnz, mesh.n_patches, n_flagged))
    return EXIT_OK


def read_nodal_csv(path) -> np.ndarray:
    """Values from the last column of a CSV, header row optional."""
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and r[0].strip()]
    except OSError as exc:
        raise CliError("cannot read values: %s" % exc) from exc
    if rows:
        try:
            float(rows[0][-1])
        except ValueError:
            rows = rows[1:]
    try:
        return np.array([float(r[-1]) for r in rows])
    except ValueError as exc:
        raise CliError("%s: %s" % (path, exc)) from exc


def cmd_detect(args, out: Outputs) -> int:
    config = detect_config(args)
    mesh, _ = prepared_mesh(args)
    timings = {}
    if args.operator:
        try:
            op = osus.load(args.operator, mesh)
        except (OSError, osus.OperatorError) as exc:
            raise CliError("operator %s: %s" % (args.operator, exc)) from exc
    else:
        t0 = time.perf_counter()
        op = osus.assemble(mesh)
        timings["assemble"] = time.perf_counter() - t0
    if args.values:
        f = read_nodal_csv(args.values)
        source = str(args.values)
    else:
        try:
            f = testfns.eval(args.function, mesh.vertex_coords)
        except KeyError as exc:
            raise CliError(exc.args[0], EXIT_USAGE) from exc
        source = args.function
    if f.shape != (mesh.n_vertices,):
        raise CliError("expected %d nodal values, got %d" % (mesh.n_vertices, len(f)))
    if not np.all(np.isfinite(f)):
        raise CliError("nodal values must be finite")

    result = indicator.detect(mesh, op, f, config)
    timings.update(result.timings)
    outdir = Path(args.output or "rdi-out")
    paths = [
        out.stage(outdir / "cells.csv", lambda p: indicator.write_cells_csv(result, p)),
        out.stage(outdir / "nodes.csv", lambda p: indicator.write_nodes_csv(result, p)),
    ]
    if not args.no_vtk:
        paths.append(out.stage(outdir / "result.vtk", lambda p: indicator.write_vtk(mesh, result, p, f)))
    counts = result.counts()
    manifest = _manifest(
        args, paths, mesh=str(args.mesh), operator=args.operator and str(args.operator), function=source,
        config=config.as_dict(), fingerprint=mesh.fingerprint.hex(), counts=counts, timings=timings,
    )
    out.stage(outdir / "manifest.json", _write_json(manifest))
    print("marked: %d C0, %d C1, %d smooth" % (counts["c0"], counts["c1"], counts["smooth"]))
    return EXIT_OK


def _int_list(text):
    return tuple(int(t) for t in text.split(","))


def _float_list(text):
    return tuple(float(t) for t in text.split(","))


def cmd_study(args, out: Outputs) -> int:
    kwargs = {}
    if args.kind == "convergence":
        if args.ns:
            kwargs["ns"] = args.ns
        kwargs["pattern"] = args.pattern or "right"
    elif args.kind == "nonuniform":
        if args.ratios:
            kwargs["ratios"] = args.ratios
        kwargs["config"] = detect_config(args)
    elif args.kind == "timing":
        if args.levels:
            kwargs["levels"] = args.levels
        kwargs["seed"] = args.seed if args.seed is not None else 0
    t0 = time.perf_counter()
    try:
        rows, slopes = studies.STUDIES[args.kind](**kwargs)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    elapsed = time.perf_counter() - t0
    output = Path(args.output or "%s.csv" % args.kind)

    def write_table(path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)

    out.stage(output, write_table)
    manifest = _manifest(args, [output], study=args.kind, slopes=slopes, timings={"study": elapsed})
    out.stage(_manifest_path(output), _write_json(manifest))
    for row in rows:
        print(", ".join("%s=%.6g" % (k, v) for k, v in row.items()))
    for k, v in slopes.items():
        print("slope %s: %.3f" % (k, v))
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------


def _add_detect_flags(p):
    p.add_argument("--config", type=Path, help="key = value file of detector settings")
    p.add_argument("--kappa0", type=float, help="beta threshold for C0 markers")
    p.add_argument("--kappa1", type=float, help="beta threshold below which flags are cleared")
    p.add_argument("--cl", type=float, help="local element threshold coefficient")
    p.add_argument("--cg", type=float, help="global element threshold coefficient")
    p.add_argument("--weights", choices=("unit", "area"), help="cell weights in beta")


def _add_features_flag(p):
    p.add_argument("--features", nargs="+", default=["auto"], metavar="MODE",
                   help="'auto' (dihedral scan), 'none', or 'file PATH' (element_id,edge_local_id CSV)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rdi", description="Robust discontinuity indicators on surface meshes.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-mesh", help="write a generated mesh as OFF")
    p.add_argument("kind", choices=sorted(GENERATORS))
    p.add_argument("-o", "--output", type=Path)
    p.add_argument("--level", type=int, help="icosphere subdivision level")
    p.add_argument("--n", type=int, help="cells per side (flat-grid, cubed-sphere)")
    p.add_argument("--pattern", choices=("right", "alternate", "quad"), default="right")
    p.add_argument("--points", type=int, help="point count (flat-random)")
    p.add_argument("--nr", type=int, help="cylinder segments around")
    p.add_argument("--nz", type=int, help="cylinder segments along the axis")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_mesh)

    p = sub.add_parser("build-op", help="assemble and save the OSUS operator of a mesh")
    p.add_argument("mesh", type=Path)
    p.add_argument("-o", "--output", type=Path)
    _add_features_flag(p)
    p.set_defaults(func=cmd_build_op)

    p = sub.add_parser("detect", help="mark discontinuities of nodal values")
    p.add_argument("mesh", type=Path)
    p.add_argument("operator", type=Path, nargs="?", help="saved operator (assembled on the fly if omitted)")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--function", help="built-in test function (%s)" % ", ".join(sorted(testfns.FUNCTIONS)))
    src.add_argument("--values", type=Path, help="CSV of nodal values, one per vertex")
    p.add_argument("-o", "--output", type=Path, help="output directory")
    p.add_argument("--no-vtk", action="store_true")
    _add_features_flag(p)
    _add_detect_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("study", help="run a refinement, weighting or timing study")
    p.add_argument("kind", choices=sorted(studies.STUDIES))
    p.add_argument("-o", "--output", type=Path)
    p.add_argument("--ns", type=_int_list, help="grid sizes, e.g. 16,32,64")
    p.add_argument("--pattern", choices=("right", "alternate", "quad"))
    p.add_argument("--levels", type=_int_list, help="icosphere levels, e.g. 2,3,4,5")
    p.add_argument("--ratios", type=_float_list, help="fine-to-coarse size ratios")
    p.add_argument("--seed", type=int)
    _add_detect_flags(p)
    p.set_defaults(func=cmd_study)
    return parser


def _thread_limit():
    raw = os.environ.get("RDI_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise CliError("RDI_THREADS must be a positive integer", EXIT_USAGE) from None
    if n < 1:
        raise CliError("RDI_THREADS must be a positive integer", EXIT_USAGE)
    return n


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    out = Outputs()
    try:
        with ExitStack() as stack:
            limit = _thread_limit()
            if limit:
                stack.enter_context(threadpool_limits(limits=limit))
            code = args.func(args, out)
        out.commit()
        return code
    except CliError as exc:
        out.discard()
        print("rdi %s: error: %s" % (args.command, exc), file=sys.stderr)
        return exc.code
    except BaseException:
        out.discard()
        raise


if __name__ == "__main__":
    sys.exit(main())
