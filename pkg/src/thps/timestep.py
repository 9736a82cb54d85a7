"""IMEX-BDF integration of surface reaction-diffusion systems.

Each step solves ``(I - omega dt delta_s Lap) u_s^{n+1} = f_s^n`` per
species with a solver factorized once for the whole run, where
``f^n = sum a_i u^{n-i} + dt sum b_i F(u^{n-i})``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction as Fr
from typing import Callable

import numpy as np

from .leaf import PdeCoefficients
from .merge import Discretization, factorize_discretization


class InstabilityError(FloatingPointError):
    def __init__(self, step: int, species: str):
        super().__init__(f"non-finite values in species {species!r} at step {step}")
        self.step = step
        self.species = species


# {{{ schemes

_BDF_TABLE = {
    1: (Fr(1), (Fr(1),), (Fr(1),)),
    2: (Fr(2, 3), (Fr(4, 3), Fr(-1, 3)), (Fr(4, 3), Fr(-2, 3))),
    3: (
        Fr(6, 11),
        (Fr(18, 11), Fr(-9, 11), Fr(2, 11)),
        (Fr(18, 11), Fr(-18, 11), Fr(6, 11)),
    ),
    4: (
        Fr(12, 25),
        (Fr(48, 25), Fr(-36, 25), Fr(16, 25), Fr(-3, 25)),
        (Fr(48, 25), Fr(-72, 25), Fr(48, 25), Fr(-12, 25)),
    ),
}


@dataclass(frozen=True)
class ImexScheme:
    """IMEX-BDF coefficients stored as exact rationals.

    ``a[i]`` and ``b[i]`` multiply ``u^{n-i}`` and ``F(u^{n-i})``.
    """

    order: int
    omega: Fr
    a: tuple
    b: tuple

    @classmethod
    def bdf(cls, order: int) -> "ImexScheme":
        if order not in _BDF_TABLE:
            raise ValueError(f"IMEX-BDF order must be 1..4, got {order}")
        omega, a, b = _BDF_TABLE[order]
        return cls(order, omega, a, b)

    def float_coeffs(self):
        return float(self.omega), np.array(self.a, dtype=float), np.array(self.b, dtype=float)

# }}}


# {{{ reaction-diffusion systems

@dataclass
class RdSystem:
    """Reaction-diffusion system ``u_t = D Lap u + F(u)`` with diagonal ``D``.

    ``reaction`` maps a stacked state ``(S, ...)`` to an array of the same
    shape and is evaluated pointwise at the collocation nodes.
    """

    name: str
    species: tuple
    diffusion: tuple
    reaction: Callable
    params: dict = field(default_factory=dict)

    @property
    def num_species(self) -> int:
        return len(self.species)


TURING2_DEFAULTS = {
    "alpha": 0.899,
    "beta": -0.91,
    "gamma": -0.899,
    "r1": 0.02,
    "r2": 0.2,
    "delta_u2": 5e-3,
    "delta_u1_ratio": 0.516,
}

STRIPES_OVERRIDES = {"alpha": 1.899, "beta": -0.95, "gamma": -1.899, "r1": 1.5, "r2": 0.0}

COUPLED4_DEFAULTS = {
    **TURING2_DEFAULTS,
    "alpha_v": 0.398,
    "beta_v": -0.41,
    "gamma_v": -0.398,
    "delta_v2": 5e-3,
    "delta_v1_ratio": 0.122,
    "q1": 0.0,
    "q2": 0.0,
    "q3": 0.0,
}


def _pair_kinetics(u, w, alpha, beta, gamma, r1, r2, cubic=None):
    cubic = w if cubic is None else cubic
    du = alpha * u * (1.0 - r1 * cubic**2) + w * (1.0 - r2 * u)
    dw = beta * w * (1.0 + (alpha * r1 / beta) * u * w) + u * (gamma + r2 * w)
    return du, dw


def _check_params(given, defaults, name):
    unknown = set(given) - set(defaults)
    if unknown:
        raise ValueError(f"unknown {name} parameters: {', '.join(sorted(unknown))}")
    return {**defaults, **given}


def turing2(**params) -> RdSystem:
    """Two-species activator-inhibitor kinetics (spots for the defaults)."""
    p = _check_params(params, TURING2_DEFAULTS, "turing2")
    if "alpha" in params and "gamma" not in params:
        p["gamma"] = -p["alpha"]

    def reaction(U):
        du, dw = _pair_kinetics(U[0], U[1], p["alpha"], p["beta"], p["gamma"], p["r1"], p["r2"])
        return np.stack([du, dw])

    d2 = p["delta_u2"]
    return RdSystem("turing2", ("u1", "u2"), (p["delta_u1_ratio"] * d2, d2), reaction, p)


def stripes(**params) -> RdSystem:
    """Turing2 in the stripe regime."""
    sysm = turing2(**{**STRIPES_OVERRIDES, **params})
    sysm.name = "stripes"
    return sysm


def coupled4(variant: str = "printed", **params) -> RdSystem:
    """Two coupled activator-inhibitor pairs ``(u1, u2)`` and ``(v1, v2)``.

    ``variant="printed"`` uses ``v2**2`` in the cubic term of the ``u1``
    equation; ``variant="u2"`` uses ``u2**2`` as in the uncoupled system.
    """
    if variant not in ("printed", "u2"):
        raise ValueError(f"coupled4 variant must be 'printed' or 'u2', got {variant!r}")
    p = _check_params(params, COUPLED4_DEFAULTS, "coupled4")
    if "alpha" in params and "gamma" not in params:
        p["gamma"] = -p["alpha"]
    if "alpha_v" in params and "gamma_v" not in params:
        p["gamma_v"] = -p["alpha_v"]
    p["variant"] = variant

    def reaction(U):
        u1, u2, v1, v2 = U
        cubic = v2 if variant == "printed" else u2
        du1, du2 = _pair_kinetics(u1, u2, p["alpha"], p["beta"], p["gamma"], p["r1"], p["r2"], cubic)
        dv1, dv2 = _pair_kinetics(v1, v2, p["alpha_v"], p["beta_v"], p["gamma_v"], p["r1"], p["r2"])
        dv1 = dv1 + p["q1"] * u1 + p["q2"] * u1 * v2 + p["q3"] * u1 * v2**2
        dv2 = dv2 - p["q2"] * u2 * v1 - p["q3"] * u2**2 * v1
        return np.stack([du1, du2, dv1, dv2])

    dv2 = p["delta_v2"]
    du2 = dv2
    diff = (p["delta_u1_ratio"] * du2, du2, p["delta_v1_ratio"] * dv2, dv2)
    return RdSystem("coupled4", ("u1", "u2", "v1", "v2"), diff, reaction, p)


def diffusion(delta: float = 1.0) -> RdSystem:
    """Single-species heat equation ``u_t = delta Lap u``."""
    return RdSystem("diffusion", ("u",), (float(delta),), lambda U: np.zeros_like(U), {"delta": delta})


PRESETS = {"turing2": turing2, "stripes": stripes, "coupled4": coupled4, "diffusion": diffusion}

# }}}


# {{{ spatial backends

class SurfaceSpace:
    """Implicit solves ``(I - tau delta Lap) u = f`` on a discretized surface.

    Open surfaces carry homogeneous Dirichlet data.  The binormal vertex
    rule is the default here: collocating the PDE at element corners puts
    spurious positive eigenvalues in the discrete Laplacian for some
    degrees (3, 4, 5, 7 and 9 among those checked), and implicit stepping
    amplifies those modes.
    """

    def __init__(self, disc: Discretization, vertex_rule: str = "binormal"):
        self.disc = disc
        self.vertex_rule = vertex_rule

    @property
    def shape(self):
        return (self.disc.num_elements, self.disc.ref.num_nodes)

    def make_solver(self, tau_delta: float):
        coeffs = PdeCoefficients(a=-tau_delta * np.eye(3), b=0.0, c=1.0)
        handle = factorize_discretization(self.disc, coeffs, regularization="none",
                                          vertex_rule=self.vertex_rule)
        nb = len(self.disc.plan.root.points)

        def solve(rhs):
            handle.update_forcing(rhs)
            return handle.solve(np.zeros(nb) if nb else None)

        return solve, handle.factorizations

    def integrate(self, u) -> float:
        return self.disc.integrate(u)

    def random_field(self, rng) -> np.ndarray:
        """Uniform noise in [-0.5, 0.5] per physical point."""
        vals = rng.uniform(-0.5, 0.5, size=self.disc.numbering.num_points)
        return vals[self.disc.numbering.ids]

    def sample(self, func) -> np.ndarray:
        return self.disc.sample(func)

    def variance(self, u) -> float:
        area = self.disc.area()
        mean = self.disc.integrate(u) / area
        return self.disc.integrate((u - mean) ** 2) / area


class ScalarSpace:
    """Zero-dimensional stand-in where the diffusion operator is ``lam``."""

    def __init__(self, lam: float):
        self.lam = float(lam)

    shape = ()

    def make_solver(self, tau_delta: float):
        denom = 1.0 - tau_delta * self.lam
        if denom == 0.0:
            raise ZeroDivisionError("implicit scalar operator is singular")
        return (lambda rhs: np.asarray(rhs) / denom), 1

    def integrate(self, u) -> float:
        return float(u)

    def random_field(self, rng):
        return np.asarray(rng.uniform(-0.5, 0.5))

    def sample(self, func):
        return np.asarray(func, dtype=float)

    def variance(self, u) -> float:
        return 0.0

# }}}


# {{{ stepper

def _neville(values, ns):
    """Extrapolate ``values[j]`` computed with ``ns[j]`` substeps to zero step size."""
    table = [list(values)]
    for k in range(1, len(values)):
        prev = table[-1]
        row = []
        for j in range(k, len(values)):
            ratio = ns[j] / ns[j - k]
            row.append(prev[j - k + 1] + (prev[j - k + 1] - prev[j - k]) / (ratio - 1.0))
        table.append(row)
    return table[-1][-1]


class Stepper:
    """Fixed-step IMEX-BDF integrator.

    The first ``M - 1`` steps are computed by extrapolated IMEX Euler with
    ``1, 2, ..., M - 1`` substeps, which keeps the global order at ``M``.
    Those steps use their own solvers, counted in
    ``startup_factorizations``; ``factorizations`` counts the solvers used
    for the rest of the run.
    """

    def __init__(self, space, system: RdSystem, scheme: ImexScheme, dt: float):
        if not dt > 0:
            raise ValueError(f"time step must be positive, got {dt}")
        self.space = space
        self.system = system
        self.scheme = scheme
        self.dt = float(dt)
        self.omega, self.a, self.b = scheme.float_coeffs()
        self.solvers = []
        self.factorizations = 0
        for delta in system.diffusion:
            solve, nf = space.make_solver(self.omega * self.dt * delta)
            self.solvers.append(solve)
            self.factorizations += nf
        self._startup_solvers = {}
        self.startup_factorizations = 0
        self.reaction_evals = 0
        self.step_index = 0
        self.states: list = []
        self.reactions: list = []

    @property
    def t(self) -> float:
        return self.step_index * self.dt

    @property
    def state(self) -> np.ndarray:
        return self.states[0]

    def set_initial(self, u0):
        u0 = np.asarray(u0, dtype=float)
        expected = (self.system.num_species,) + tuple(self.space.shape)
        if u0.shape != expected:
            raise ValueError(f"initial state has shape {u0.shape}, expected {expected}")
        self.states = [u0.copy()]
        self.reactions = [self._reaction(u0)]
        self.step_index = 0

    def _reaction(self, U):
        self.reaction_evals += 1
        return np.asarray(self.system.reaction(U), dtype=float)

    def _euler_solvers(self, substeps):
        if substeps not in self._startup_solvers:
            tau = self.dt / substeps
            solvers = []
            for delta in self.system.diffusion:
                solve, nf = self.space.make_solver(tau * delta)
                solvers.append(solve)
                self.startup_factorizations += nf
            self._startup_solvers[substeps] = solvers
        return self._startup_solvers[substeps]

    def _euler(self, U, substeps):
        tau = self.dt / substeps
        solvers = self._euler_solvers(substeps)
        for _ in range(substeps):
            rhs = U + tau * self._reaction(U)
            U = np.stack([s(r) for s, r in zip(solvers, rhs)])
        return U

    def _startup_step(self):
        k = self.scheme.order - 1
        ns = list(range(1, k + 1))
        return _neville([self._euler(self.states[0], j) for j in ns], ns)

    def step(self) -> np.ndarray:
        if not self.states:
            raise RuntimeError("set_initial must be called before stepping")
        if len(self.states) < self.scheme.order:
            new = self._startup_step()
        else:
            rhs = np.zeros_like(self.states[0])
            for ai, bi, u, f in zip(self.a, self.b, self.states, self.reactions):
                rhs += ai * u + (self.dt * bi) * f
            new = np.stack([s(r) for s, r in zip(self.solvers, rhs)])
        self.step_index += 1
        for s, name in enumerate(self.system.species):
            if not np.all(np.isfinite(new[s])):
                raise InstabilityError(self.step_index, name)
        self.states.insert(0, new)
        del self.states[self.scheme.order:]
        self.reactions.insert(0, self._reaction(new))
        del self.reactions[self.scheme.order:]
        return new


def build_stepper(space, system: RdSystem, scheme: ImexScheme, dt: float) -> Stepper:
    return Stepper(space, system, scheme, dt)

# }}}


# {{{ simulation driver

@dataclass
class SnapshotPolicy:
    """Snapshot at the listed times (nearest step) and/or every ``every`` steps."""

    times: tuple = ()
    every: int | None = None
    include_initial: bool = True
    include_final: bool = True

    def steps_for(self, dt: float, nsteps: int) -> set:
        out = set()
        for t in self.times:
            k = int(round(t / dt))
            if 0 <= k <= nsteps:
                out.add(k)
        if self.every:
            out.update(range(0, nsteps + 1, self.every))
        if self.include_initial:
            out.add(0)
        if self.include_final:
            out.add(nsteps)
        return out


@dataclass
class SimulationResult:
    times: np.ndarray
    max_norms: np.ndarray
    reaction_evals: np.ndarray
    snapshots: list
    species: tuple
    factorizations: int
    startup_factorizations: int
    seed: int | None = None

    def snapshot_at(self, t: float):
        return min(self.snapshots, key=lambda s: abs(s[0] - t))


def run_simulation(stepper: Stepper, steps: int, policy: SnapshotPolicy | None = None,
                   seed: int | None = None, callback=None) -> SimulationResult:
    """Advance *steps* steps recording max-norms and snapshots.

    Instability propagates as :class:`InstabilityError`.
    """
    if steps < 0:
        raise ValueError("number of steps must be non-negative")
    policy = policy or SnapshotPolicy()
    wanted = policy.steps_for(stepper.dt, steps)
    nsp = stepper.system.num_species
    norms = np.empty((steps + 1, nsp))
    evals = np.empty(steps + 1, dtype=np.int64)
    snaps = []

    def record(k, U):
        norms[k] = np.abs(U.reshape(nsp, -1)).max(axis=1)
        evals[k] = stepper.reaction_evals
        if k in wanted:
            snaps.append((stepper.t, U.copy()))
        if callback is not None:
            callback(stepper)

    record(0, stepper.state)
    for k in range(1, steps + 1):
        record(k, stepper.step())
    return SimulationResult(
        times=stepper.dt * np.arange(stepper.step_index - steps, stepper.step_index + 1),
        max_norms=norms,
        reaction_evals=evals,
        snapshots=snaps,
        species=stepper.system.species,
        factorizations=stepper.factorizations,
        startup_factorizations=stepper.startup_factorizations,
        seed=seed,
    )


def random_initial(space, system: RdSystem, seed: int | None) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.stack([space.random_field(rng) for _ in system.species])


def observed_order(errors, dts) -> np.ndarray:
    """Pairwise observed orders ``log(e_i/e_{i+1}) / log(dt_i/dt_{i+1})``."""
    e = np.asarray(errors, dtype=float)
    h = np.asarray(dts, dtype=float)
    return np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])


def decay_factor(l: int, delta: float, t: float, radius: float = 1.0) -> float:
    """``exp(-delta l(l+1) t / r^2)``, the exact decay of ``Y_l^m`` under diffusion."""
    return math.exp(-delta * l * (l + 1) * t / radius**2)

# }}}
