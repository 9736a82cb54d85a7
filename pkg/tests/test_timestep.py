from fractions import Fraction

import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from oracles import dense_collocation_solve
from thps.driver import make_discretization
from thps.leaf import PdeCoefficients
from thps.merge import discretize
from thps.mesh import hemisphere, icosphere
from thps.surfaces import SurfaceDef
from thps.timestep import (
    ImexScheme,
    InstabilityError,
    RdSystem,
    ScalarSpace,
    SnapshotPolicy,
    SurfaceSpace,
    build_stepper,
    coupled4,
    decay_factor,
    diffusion,
    observed_order,
    random_initial,
    run_simulation,
    stripes,
    turing2,
)
from thps.timestep import _neville


# {{{ coefficients

@pytest.mark.parametrize("M", [1, 2, 3, 4])
def test_order_conditions_exact(M):
    # u(t_{n+1}) - omega dt u'(t_{n+1}) = sum a_i u(t_{n-i}) and
    # omega u'(t_{n+1}) = sum b_i u'(t_{n-i}) for polynomials of degree <= M
    s = ImexScheme.bdf(M)
    for k in range(M + 1):
        u = lambda t: Fraction(t) ** k
        du = lambda t: k * Fraction(t) ** (k - 1) if k else Fraction(0)
        lhs = u(1) - s.omega * du(1)
        assert lhs == sum(a * u(-i) for i, a in enumerate(s.a))
        if k < M:
            assert s.omega * du(1) == sum(b * du(-i) for i, b in enumerate(s.b))
    assert all(isinstance(x, Fraction) for x in (s.omega, *s.a, *s.b))


def test_invalid_order():
    with pytest.raises(ValueError):
        ImexScheme.bdf(5)


@given(st.lists(st.floats(-1, 1), min_size=1, max_size=4))
def test_neville_exact_for_polynomials_in_step(coeffs):
    ns = list(range(1, len(coeffs) + 1))
    # value(n) = c0 + c1/n + ... ; extrapolation to 1/n -> 0 returns c0
    vals = [sum(c / n**j for j, c in enumerate(coeffs)) for n in ns]
    assert _neville(vals, ns) == pytest.approx(coeffs[0], abs=1e-12)

# }}}


# {{{ scalar problems

def scalar_error(M, dt, lam=-2.0, T=1.0):
    # u' = lam u + sin(u); reference from a tight Runge-Kutta solve
    system = RdSystem("test", ("u",), (1.0,), lambda U: np.sin(U))
    stepper = build_stepper(ScalarSpace(lam), system, ImexScheme.bdf(M), dt)
    stepper.set_initial(np.array([1.0]))
    steps = int(round(T / dt))
    for _ in range(steps):
        stepper.step()
    ref = solve_ivp(lambda t, u: lam * u + np.sin(u), (0, T), [1.0], rtol=1e-13, atol=1e-14).y[0, -1]
    return abs(stepper.state[0] - ref)


@pytest.mark.parametrize("M", [1, 2, 3, 4])
def test_scalar_nonlinear_order(M):
    dts = [0.02, 0.01, 0.005]
    orders = observed_order([scalar_error(M, dt) for dt in dts], dts)
    assert np.all(np.abs(orders - M) < 0.25), orders


def test_instability_is_reported():
    system = RdSystem("blowup", ("w",), (1.0,), lambda U: U**3)
    stepper = build_stepper(ScalarSpace(0.0), system, ImexScheme.bdf(2), 1.0)
    stepper.set_initial(np.array([10.0]))
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(InstabilityError) as info:
            run_simulation(stepper, 20)
    assert info.value.species == "w" and 1 <= info.value.step <= 20


def test_stepper_preconditions():
    stepper = build_stepper(ScalarSpace(-1.0), diffusion(), ImexScheme.bdf(1), 0.1)
    with pytest.raises(RuntimeError):
        stepper.step()
    with pytest.raises(ValueError):
        stepper.set_initial(np.zeros(2))
    with pytest.raises(ValueError):
        build_stepper(ScalarSpace(-1.0), diffusion(), ImexScheme.bdf(1), 0.0)
    with pytest.raises(ValueError):
        run_simulation(stepper, -1)

# }}}


# {{{ presets

def test_preset_values_and_overrides():
    t = turing2()
    assert t.params["gamma"] == -t.params["alpha"]
    assert t.diffusion == (0.516 * 5e-3, 5e-3)
    s = stripes()
    assert (s.params["alpha"], s.params["beta"], s.params["r1"], s.params["r2"]) == (1.899, -0.95, 1.5, 0.0)
    assert s.params["gamma"] == -1.899 and s.name == "stripes"
    assert turing2(alpha=0.5).params["gamma"] == -0.5
    with pytest.raises(ValueError, match="unknown"):
        turing2(kappa=1.0)
    with pytest.raises(ValueError):
        coupled4("guess")


def test_coupled_variants_differ_only_in_cubic_term():
    rng = np.random.default_rng(0)
    U = rng.uniform(-1, 1, size=(4, 10))
    a, b = coupled4("printed").reaction(U), coupled4("u2").reaction(U)
    np.testing.assert_array_equal(a[1:], b[1:])
    p = coupled4().params
    u1, u2, v1, v2 = U
    np.testing.assert_allclose(a[0] - b[0], -p["alpha"] * p["r1"] * u1 * (v2**2 - u2**2))
    # with zero coupling the v pair obeys the uncoupled kinetics with primed parameters
    tv = turing2(alpha=p["alpha_v"], beta=p["beta_v"], gamma=p["gamma_v"]).reaction(U[2:])
    np.testing.assert_allclose(a[2:], tv)


def test_turing_kinetics_closed_form():
    u, w = 0.3, -0.7
    p = turing2().params
    du = p["alpha"] * u * (1 - p["r1"] * w**2) + w * (1 - p["r2"] * u)
    dw = p["beta"] * w * (1 + p["alpha"] * p["r1"] / p["beta"] * u * w) + u * (p["gamma"] + p["r2"] * w)
    np.testing.assert_allclose(turing2().reaction(np.array([[u], [w]]))[:, 0], [du, dw])

# }}}


# {{{ surface runs

@pytest.fixture(scope="module")
def small_space():
    return SurfaceSpace(discretize(icosphere(1), SurfaceDef.sphere(), 5))


def test_diffusion_conserves_mass(small_space):
    stepper = build_stepper(small_space, diffusion(1.0), ImexScheme.bdf(2), 0.01)
    u0 = small_space.sample(lambda p: 1.0 + p[:, 0] + np.exp(p[:, 2]))
    stepper.set_initial(u0[None])
    m0 = small_space.integrate(u0)
    for _ in range(1000):
        stepper.step()
    assert abs(small_space.integrate(stepper.state[0]) - m0) < 1e-8 * abs(m0)


def test_factorizations_independent_of_steps(small_space):
    nodes = len(small_space.disc.plan.nodes)
    counts = []
    for steps in (3, 12):
        stepper = build_stepper(small_space, turing2(), ImexScheme.bdf(3), 0.1)
        stepper.set_initial(random_initial(small_space, stepper.system, 4))
        res = run_simulation(stepper, steps)
        counts.append((res.factorizations, res.startup_factorizations))
    assert counts[0] == counts[1]
    assert counts[0][0] == 2 * nodes
    # extrapolated Euler startup with 1 and 2 substeps
    assert counts[0][1] == 2 * 2 * nodes


def test_zero_state_is_equilibrium(small_space):
    stepper = build_stepper(small_space, turing2(), ImexScheme.bdf(4), 0.1)
    stepper.set_initial(np.zeros((2,) + small_space.shape))
    res = run_simulation(stepper, 20)
    assert np.all(res.max_norms == 0.0)


def test_random_initial_data(small_space):
    system = turing2()
    a = random_initial(small_space, system, 11)
    np.testing.assert_array_equal(a, random_initial(small_space, system, 11))
    assert not np.array_equal(a, random_initial(small_space, system, 12))
    assert a.min() >= -0.5 and a.max() <= 0.5
    # one value per physical point, so copies on shared edges agree
    ids = small_space.disc.numbering.ids
    flat = np.full(small_space.disc.numbering.num_points, np.nan)
    flat[ids] = a[0]
    np.testing.assert_array_equal(flat[ids], a[0])


def test_snapshot_policy(small_space):
    stepper = build_stepper(small_space, diffusion(), ImexScheme.bdf(1), 0.1)
    stepper.set_initial(np.ones((1,) + small_space.shape))
    res = run_simulation(stepper, 0, SnapshotPolicy(times=(0.0, 2.0)))
    assert [t for t, _ in res.snapshots] == [0.0]
    res = run_simulation(stepper, 10, SnapshotPolicy(times=(0.5,), every=4), seed=3)
    assert [round(t, 10) for t, _ in res.snapshots] == [0.0, 0.4, 0.5, 0.8, 1.0]
    assert res.seed == 3 and res.max_norms.shape == (11, 1)
    assert np.all(np.diff(res.reaction_evals) > 0)


def test_open_surface_diffusion_decays():
    space = SurfaceSpace(discretize(hemisphere(1), SurfaceDef.sphere(), 5))
    stepper = build_stepper(space, diffusion(), ImexScheme.bdf(2), 0.05)
    stepper.set_initial(space.sample(lambda p: p[:, 2])[None])
    res = run_simulation(stepper, 20)
    assert np.all(np.diff(res.max_norms[:, 0]) < 0)


def laplacian_spectrum(disc, rule):
    # eigenvalues of the collocated Laplacian with the coupling rows as constraints
    _, A = dense_collocation_solve(disc, PdeCoefficients.laplace_beltrami(), None, None, rule)
    _, B = dense_collocation_solve(disc, PdeCoefficients(a=0.0, c=1.0), None, None, rule)
    ev = la.eigvals(A, B)
    ev = ev[np.isfinite(ev)]
    # constraint rows are shared by A and B and show up as eigenvalue 1
    return ev[np.abs(ev - 1) > 1e-6]


@pytest.mark.filterwarnings("ignore::scipy.linalg.LinAlgWarning")
@pytest.mark.parametrize("n", [3, 4, 5])
def test_stepping_operator_has_no_growing_modes(n):
    disc = make_discretization("icosphere:0", "sphere", n)
    ev = laplacian_spectrum(disc, "binormal")
    assert ev.real.max() < 1e-8 * np.abs(ev).max()
    # corner collocation is anti-diffusive at these degrees
    assert laplacian_spectrum(disc, "residual").real.max() > 1.0


def test_turing_stays_bounded_at_low_degree():
    space = SurfaceSpace(discretize(icosphere(0), SurfaceDef.sphere(), 4))
    stepper = build_stepper(space, turing2(), ImexScheme.bdf(4), 0.1)
    stepper.set_initial(random_initial(space, stepper.system, 1))
    res = run_simulation(stepper, 200)
    assert np.all(np.isfinite(res.max_norms)) and res.max_norms.max() < 100


def test_decay_factor():
    assert decay_factor(1, 1.0, 1.0) == pytest.approx(np.exp(-2))
    assert decay_factor(3, 0.5, 2.0, radius=2.0) == pytest.approx(np.exp(-0.5 * 12 * 2 / 4))

# }}}
