"""High-level runs shared by the command line and the acceptance tests."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .config import ConfigError, RunConfig
from .geometry import mesh_size
from .harmonics import parse_exact
from .leaf import PdeCoefficients
from .merge import Discretization, discretize, factorize_discretization
from .mesh import load_mesh
from .surfaces import SurfaceDef
from .timestep import (
    ImexScheme,
    SnapshotPolicy,
    SurfaceSpace,
    build_stepper,
    coupled4,
    diffusion,
    random_initial,
    run_simulation,
    stripes,
    turing2,
)

CONVERGE_COLUMNS = ("h", "n", "N", "dof", "err_Linf", "t_build", "t_merge", "t_solve")


def relative_max_error(u, exact) -> float:
    """``max|u - exact| / max|exact|`` over all nodes."""
    return float(np.abs(u - exact).max() / np.abs(exact).max())


def make_discretization(mesh_spec: str, surface_spec: str, n: int) -> Discretization:
    return discretize(load_mesh(mesh_spec), SurfaceDef.from_spec(surface_spec), n)


def exact_solution(cfg: RunConfig, surf: SurfaceDef):
    if cfg.exact is None:
        return None
    if surf.kind != "sphere":
        raise ConfigError("builtin exact solutions are spherical harmonics and need a sphere surface")
    try:
        return parse_exact(cfg.exact, surf.radius)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# {{{ steady solves

@dataclass
class SolveOutcome:
    disc: Discretization
    u: np.ndarray
    exact: np.ndarray | None
    row: dict
    regularization: str


def _steady_problem(cfg: RunConfig, surf: SurfaceDef):
    """Coefficients, forcing, Dirichlet data and exact solution of a steady run."""
    if cfg.kind == "poisson":
        ex = exact_solution(cfg, surf)
        if ex is None:
            raise ConfigError("kind 'poisson' needs an exact solution such as exact = Y3_2")
        coeffs = PdeCoefficients.laplace_beltrami()
        return coeffs, (lambda p: ex.eigenvalue * ex(p)), ex, ex
    if cfg.kind == "custom":
        coeffs = PdeCoefficients(a=cfg.a * np.eye(3), b=np.asarray(cfg.b, dtype=float), c=cfg.c)
        ex = exact_solution(cfg, surf)
        dirichlet = ex if ex is not None else cfg.dirichlet
        return coeffs, cfg.forcing, dirichlet, ex
    raise ConfigError(f"kind {cfg.kind!r} is time dependent; use the evolve command")


def run_solve(cfg: RunConfig, mesh_spec: str | None = None, degree: int | None = None,
              disc: Discretization | None = None) -> SolveOutcome:
    """Factorize and solve one steady problem and measure the error."""
    n = cfg.degree if degree is None else degree
    if disc is None:
        disc = make_discretization(mesh_spec or cfg.mesh, cfg.surface, n)
    coeffs, f, dirichlet, ex = _steady_problem(cfg, disc.surf)
    handle = factorize_discretization(
        disc, coeffs, f, regularization=cfg.regularization,
        vertex_rule="residual" if cfg.vertex_rule == "auto" else cfg.vertex_rule,
    )
    if len(disc.plan.root.points):
        if callable(dirichlet):
            h = dirichlet
        else:
            h = np.full(len(disc.plan.root.points), float(dirichlet))
    else:
        h = None
    u = handle.solve(h)
    exact = None
    err = float("nan")
    if ex is not None:
        exact = disc.sample(ex)
        if handle.regularization == "mean-zero":
            exact = exact - disc.integrate(exact) / disc.area()
        err = relative_max_error(u, exact)
    row = {
        "h": mesh_size(disc.elements),
        "n": disc.degree,
        "N": disc.num_elements,
        "dof": disc.dof,
        "err_Linf": err,
        "t_build": handle.timings["build"],
        "t_merge": handle.timings["merge"],
        "t_solve": handle.timings["solve"],
    }
    return SolveOutcome(disc, u, exact, row, handle.regularization)


def run_converge(cfg: RunConfig, refinements=None, degrees=None) -> list[dict]:
    """Error table over every (mesh, degree) pair."""
    refinements = tuple(cfg.refinements if refinements is None else refinements)
    degrees = tuple(cfg.degrees if degrees is None else degrees) or (cfg.degree,)
    if not refinements:
        raise ConfigError("refinement list is empty")
    if cfg.exact is None:
        raise ConfigError("a convergence sweep needs an exact solution (exact = ...)")
    rows = []
    for n in degrees:
        for spec in refinements:
            rows.append(run_solve(cfg, spec, n).row)
    return rows

# }}}


# {{{ time-dependent runs

def build_system(cfg: RunConfig):
    params = dict(cfg.reaction)
    try:
        if cfg.kind == "turing2":
            return turing2(**params)
        if cfg.kind == "stripes":
            return stripes(**params)
        if cfg.kind == "coupled4":
            return coupled4(cfg.variant, **params)
        if cfg.kind == "diffusion":
            return diffusion(**params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    raise ConfigError(f"kind {cfg.kind!r} is steady; use the solve command")


@dataclass
class EvolveOutcome:
    disc: Discretization
    result: object
    stats: dict
    error: float | None


def run_evolve(cfg: RunConfig, degree: int | None = None, callback=None) -> EvolveOutcome:
    """Time-dependent run; diffusion starts from the exact harmonic if one is named."""
    system = build_system(cfg)
    n = cfg.degree if degree is None else degree
    disc = make_discretization(cfg.mesh, cfg.surface, n)
    space = SurfaceSpace(disc, "binormal" if cfg.vertex_rule == "auto" else cfg.vertex_rule)
    t0 = time.perf_counter()
    stepper = build_stepper(space, system, ImexScheme.bdf(cfg.scheme), cfg.dt)
    t_setup = time.perf_counter() - t0

    ex = exact_solution(cfg, disc.surf) if cfg.kind == "diffusion" else None
    if ex is not None:
        u0 = space.sample(ex)[None]
    else:
        u0 = random_initial(space, system, cfg.seed)
    stepper.set_initial(u0)
    policy = SnapshotPolicy(times=tuple(cfg.snapshot_times), every=cfg.snapshot_every)
    t0 = time.perf_counter()
    result = run_simulation(stepper, cfg.steps, policy, seed=cfg.seed, callback=callback)
    t_run = time.perf_counter() - t0

    final = stepper.state
    stats = {"t_final": stepper.t, "steps": cfg.steps, "seed": cfg.seed,
             "factorizations": stepper.factorizations,
             "startup_factorizations": stepper.startup_factorizations,
             "reaction_evals": stepper.reaction_evals,
             "t_setup": t_setup, "t_run": t_run}
    for k, name in enumerate(system.species):
        stats[f"{name}_min"] = float(final[k].min())
        stats[f"{name}_max"] = float(final[k].max())
        stats[f"{name}_variance"] = space.variance(final[k])
    error = None
    if ex is not None:
        decay = np.exp(ex.eigenvalue * system.diffusion[0] * stepper.t)
        error = relative_max_error(final[0], u0[0] * decay)
        stats["err_Linf"] = error
    return EvolveOutcome(disc, result, stats, error)

# }}}
