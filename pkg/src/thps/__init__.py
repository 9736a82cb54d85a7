"""Triangle-based hierarchical Poincare-Steklov solver for PDEs on surfaces.

Typical use::

    from thps import PdeCoefficients, SurfaceDef, factorize, load_mesh

    handle = factorize(load_mesh("hemisphere:2"), SurfaceDef.sphere(),
                       PdeCoefficients.laplace_beltrami(), f, n=8)
    u = handle.solve(dirichlet)
"""

from .geometry import lift_element, lift_elements, mesh_size, number_nodes
from .harmonics import SphericalHarmonic, real_sph_harm
from .leaf import PdeCoefficients, apply_leaf_solve, build_leaf
from .merge import (
    Discretization,
    SolverHandle,
    build_merge_plan,
    discretize,
    factorize,
    factorize_discretization,
    merge_pair,
    solve,
    solve_closed_root,
)
from .mesh import FlatMesh, load_mesh
from .reference import ReferenceElement, build_reference_element
from .surfaces import SurfaceDef, closest_point_project
from .timestep import (
    ImexScheme,
    RdSystem,
    ScalarSpace,
    SurfaceSpace,
    build_stepper,
    coupled4,
    run_simulation,
    stripes,
    turing2,
)

__version__ = "0.1.0"
