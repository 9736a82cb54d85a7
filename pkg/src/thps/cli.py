"""Command-line driver: ``thps solve|converge|evolve|mesh-info``.

Every failure exits nonzero with one line on stderr of the form
``<category>: <reason>`` (``config error``, ``numerical error``,
``io error``).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _list_arg(text):
    return tuple(x for x in text.replace(",", " ").split() if x)


# flag -> (RunConfig key, parser)
_FLAGS = {
    "--kind": ("kind", str),
    "--exact": ("exact", str),
    "--surface": ("surface", str),
    "--mesh": ("mesh", str),
    "--degree": ("degree", int),
    "--regularization": ("regularization", str),
    "--vertex-rule": ("vertex_rule", str),
    "--scheme": ("scheme", int),
    "--dt": ("dt", float),
    "--steps": ("steps", int),
    "--seed": ("seed", int),
    "--output-dir": ("output_dir", str),
    "--threads": ("threads", int),
    "--variant": ("variant", str),
    "--coef-a": ("a", float),
    "--coef-c": ("c", float),
    "--forcing": ("forcing", float),
    "--dirichlet": ("dirichlet", float),
}

_HELP = {
    "--mesh": "icosphere:S, hemisphere:S, flat:KIND, implicit:NAME:RES or an .off/.obj path",
    "--regularization": "closed-surface root: auto, none, mean-zero or pin-node",
    "--vertex-rule": "auto (residual for solves, binormal for time stepping), residual or binormal",
    "--scheme": "IMEX-BDF order 1..4",
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="thps", description="High-order direct solver for elliptic PDEs on surfaces.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI run configuration; flags override its values")
        for flag, (key, kind) in _FLAGS.items():
            p.add_argument(flag, dest=key, type=kind, default=None, help=_HELP.get(flag))
        p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
        return p

    common(sub.add_parser("solve", help="factorize and solve one steady problem"))
    conv = common(sub.add_parser("converge", help="error sweep over meshes and degrees"))
    conv.add_argument("--refinements", type=_list_arg, default=None,
                      help="comma separated mesh specs, e.g. icosphere:1,icosphere:2")
    conv.add_argument("--degrees", type=_list_arg, default=None, help="comma separated degrees")
    evo = common(sub.add_parser("evolve", help="time-dependent reaction-diffusion run"))
    evo.add_argument("--snapshot-times", type=_list_arg, default=None)
    evo.add_argument("--snapshot-every", type=int, default=None)
    evo.add_argument("--degrees", type=_list_arg, default=None,
                     help="diffusion only: repeat the run per degree and tabulate the error")
    evo.add_argument("--param", action="append", default=[], metavar="NAME=VALUE",
                     help="reaction parameter override (repeatable)")
    info = sub.add_parser("mesh-info", help="summarize a mesh and its merge tree")
    info.add_argument("mesh")
    info.add_argument("--degree", type=int, default=4)
    info.add_argument("--surface", default=None)
    return parser


def _load_config(args):
    from .config import RunConfig

    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {}
    for key, _ in _FLAGS.values():
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "refinements", None) is not None:
        overrides["refinements"] = args.refinements
    if getattr(args, "degrees", None) is not None:
        try:
            overrides["degrees"] = tuple(int(d) for d in args.degrees)
        except ValueError:
            raise _UsageError(f"degrees must be integers: {','.join(args.degrees)}") from None
    if getattr(args, "snapshot_times", None) is not None:
        overrides["snapshot_times"] = tuple(float(t) for t in args.snapshot_times)
    if getattr(args, "snapshot_every", None) is not None:
        overrides["snapshot_every"] = args.snapshot_every
    if getattr(args, "no_figures", False):
        overrides["figures"] = False
    cfg.update(**overrides)
    for item in getattr(args, "param", []):
        name, _, value = item.partition("=")
        try:
            cfg.reaction[name.strip().lower()] = float(value)
        except ValueError:
            raise _UsageError(f"bad --param {item!r}; expected NAME=VALUE") from None
    return cfg.validate()


def _outdir(cfg) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _print_row(row):
    print("  ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))


def cmd_solve(cfg) -> int:
    from .driver import CONVERGE_COLUMNS, run_solve
    from .io import write_csv, write_vtk

    out = _outdir(cfg)
    res = run_solve(cfg)
    fields = {"u": res.u}
    if res.exact is not None:
        fields["exact"] = res.exact
        fields["error"] = res.u - res.exact
    write_vtk(out / "solution.vtk", res.disc.node_coords(), res.disc.ref, fields)
    write_csv(out / "error.csv", [res.row], CONVERGE_COLUMNS)
    cfg.write(out / "run.ini")
    if cfg.figures:
        from .plotting import plot_surface_field

        plot_surface_field(res.disc.node_coords(), res.u, res.disc.ref, out / "solution.png", "u")
    _print_row(res.row)
    return EXIT_OK


def cmd_converge(cfg) -> int:
    from .driver import CONVERGE_COLUMNS, run_converge
    from .io import write_csv
    from .plotting import fit_slope

    out = _outdir(cfg)
    rows = run_converge(cfg)
    write_csv(out / "convergence.csv", rows, CONVERGE_COLUMNS)
    cfg.write(out / "run.ini")
    lines = []
    for n in sorted({r["n"] for r in rows}):
        sel = [r for r in rows if r["n"] == n]
        if len(sel) > 1:
            slope = fit_slope([r["h"] for r in sel], [r["err_Linf"] for r in sel])
            lines.append(f"n={n} slope={slope:.3f} expected={n - 1}")
    if len({r["N"] for r in rows}) > 1:
        import numpy as np

        big = [r for r in rows if r["t_solve"] > 0]
        expo = np.polyfit(np.log([r["N"] for r in big]), np.log([r["t_solve"] for r in big]), 1)[0]
        lines.append(f"t_solve exponent in N: {expo:.3f}")
    (out / "slopes.txt").write_text("\n".join(lines) + "\n")
    if cfg.figures:
        from .plotting import plot_convergence

        plot_convergence(rows, out / "convergence.png")
    for row in rows:
        _print_row(row)
    print("\n".join(lines))
    return EXIT_OK


def cmd_evolve(cfg) -> int:
    import numpy as np

    from .driver import run_evolve
    from .io import write_csv, write_vtk

    out = _outdir(cfg)
    cfg.write(out / "run.ini")
    degrees = cfg.degrees if cfg.kind == "diffusion" and cfg.degrees else (cfg.degree,)
    table = []
    for n in degrees:
        res = run_evolve(cfg, degree=n)
        table.append({"n": n, "dof": res.disc.dof, "err_Linf": res.error if res.error is not None else float("nan")})
    sim = res.result
    species = sim.species
    for t, state in sim.snapshots:
        fields = {name: state[k] for k, name in enumerate(species)}
        write_vtk(out / f"snapshot_t{t:012.6f}.vtk", res.disc.node_coords(), res.disc.ref, fields,
                  title=f"t={t!r} seed={sim.seed}")
    hist = [{"t": float(t), **{f"max_{s}": float(sim.max_norms[k, j]) for j, s in enumerate(species)},
             "reaction_evals": int(sim.reaction_evals[k])} for k, t in enumerate(sim.times)]
    write_csv(out / "history.csv", hist, list(hist[0]))
    (out / "stats.json").write_text(json.dumps(res.stats, indent=2, sort_keys=True) + "\n")
    if len(degrees) > 1:
        write_csv(out / "error_vs_degree.csv", table, ("n", "dof", "err_Linf"))
    if cfg.figures:
        from .plotting import plot_error_vs_degree, plot_history, plot_surface_field

        plot_history(sim.times, sim.max_norms, species, out / "history.png")
        t_last, state = sim.snapshots[-1]
        for k, name in enumerate(species):
            plot_surface_field(res.disc.node_coords(), state[k], res.disc.ref,
                               out / f"final_{name}.png", f"{name}, t = {t_last:g}")
        if len(degrees) > 1:
            plot_error_vs_degree(table, out / "error_vs_degree.png")
    for key in sorted(res.stats):
        value = res.stats[key]
        print(f"{key} = {value:.6g}" if isinstance(value, float) and np.isfinite(value) else f"{key} = {value}")
    return EXIT_OK


def cmd_mesh_info(args) -> int:
    from .geometry import mesh_size
    from .merge import discretize
    from .mesh import load_mesh
    from .surfaces import SurfaceDef

    mesh = load_mesh(args.mesh)
    comps = mesh.connected_components()
    info = {
        "vertices": len(mesh.vertices),
        "triangles": mesh.num_triangles,
        "edges": len(mesh.edges),
        "boundary_edges": len(mesh.boundary_edges),
        "closed": mesh.is_closed,
        "components": len(comps),
        "euler_characteristic": len(mesh.vertices) - len(mesh.edges) + mesh.num_triangles,
    }
    if args.surface and len(comps) == 1:
        disc = discretize(mesh, SurfaceDef.from_spec(args.surface), args.degree)
        info.update(h=mesh_size(disc.elements), dof=disc.dof, tree_depth=disc.plan.depth,
                    area=disc.area(), root_boundary_points=len(disc.plan.root.points))
    for key, value in info.items():
        print(f"{key} = {value}")
    return EXIT_OK


def _limit_threads(threads: int):
    if threads <= 0:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=threads)


def main(argv=None) -> int:
    import numpy as np

    from .config import ConfigError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "mesh-info":
            return cmd_mesh_info(args)
        cfg = _load_config(args)
        limiter = _limit_threads(cfg.threads)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                return {"solve": cmd_solve, "converge": cmd_converge, "evolve": cmd_evolve}[args.command](cfg)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except (np.linalg.LinAlgError, FloatingPointError, RuntimeError, ArithmeticError) as exc:
        # LinAlgError is a ValueError, so this must come first
        return _fail("numerical error", exc, EXIT_NUMERICAL)
    except (_UsageError, ConfigError, ValueError, KeyError) as exc:
        return _fail("config error", exc, EXIT_CONFIG)
    except OSError as exc:
        return _fail("io error", exc, EXIT_IO)


def _fail(category, exc, code) -> int:
    reason = " ".join(str(exc).split()) or type(exc).__name__
    print(f"{category}: {reason}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
