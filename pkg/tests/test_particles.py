"""Tests for the interacting particle system and covariance estimator.

Oracles: scipy quadrature for the bump normalization, brute-force O(N^2)
pair sums, exact Euler recursions for drift-only dynamics, and Gaussian
moment identities for the limiting covariance quadrature.
"""

import math
import warnings

import numpy as np
import pytest
from scipy.integrate import quad

from sktfluct.particles import (
    BUMP_NORM,
    MartingaleTracker,
    MollifiedKernel,
    ParticleAbort,
    ParticleEnsemble,
    analytic_covariance,
    bump,
    covariance_from_trajectory,
    diffusion_coefficients,
    eta_from_N,
    heat_gaussian_density,
    lipschitz_clip,
    local_density,
    pair_density,
    particle_step,
    replica_cross_report,
    replica_mean_report,
    replica_variance_report,
    run_particles,
    scaling_margin,
    window_bump,
)


def make_ensemble(positions, sigma, interaction, eta, **kw):
    # unit-test ensembles are far too small for the admissible radius
    # scale; the advisory warning is checked separately
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return ParticleEnsemble(
            positions=np.asarray(positions, dtype=float),
            sigma=np.asarray(sigma, dtype=float),
            interaction=np.asarray(interaction, dtype=float),
            eta=eta,
            **kw,
        )


def test_bump_normalization_matches_quadrature():
    raw, err = quad(lambda x: math.exp(-1.0 / (1.0 - x * x)), -1.0, 1.0)
    assert err < 1e-9
    assert abs(BUMP_NORM - raw) < 1e-9


def test_bump_shape():
    assert bump(np.array([-1.0, 1.0, 2.0, -3.0])).max() == 0.0
    assert np.isclose(bump(0.0), math.exp(-1.0) / BUMP_NORM, rtol=1e-15)
    x = np.linspace(-1.2, 1.2, 7)
    assert np.allclose(bump(x), bump(-x))
    fine = np.linspace(-1.0, 1.0, 200_001)
    assert abs(np.trapezoid(bump(fine), fine) - 1.0) < 1e-8


def test_kernel_scaling_and_mass():
    kern = MollifiedKernel(mass=0.7, eta=0.25)
    assert np.isclose(kern(0.0), 0.7 / 0.25 * bump(0.0), rtol=1e-15)
    x = np.linspace(-0.25, 0.25, 100_001)
    assert abs(np.trapezoid(kern(x), x) - 0.7) < 1e-8
    assert kern(np.array([0.3, -0.4])).max() == 0.0
    with pytest.raises(ValueError):
        MollifiedKernel(mass=1.0, eta=0.0)
    with pytest.raises(ValueError):
        MollifiedKernel(mass=-1.0, eta=0.5)


def test_lipschitz_clip_bounds_and_slope():
    eta, alpha = 0.2, 1.5
    cap = eta ** (-alpha)
    x = np.linspace(-1.0, 2.0 * cap, 10_001)
    y = lipschitz_clip(x, eta, alpha)
    assert y.min() == 0.0
    assert y.max() == cap
    mid = (x > 0) & (x < cap)
    assert np.array_equal(y[mid], x[mid])
    slopes = np.abs(np.diff(y) / np.diff(x))
    assert slopes.max() <= 1.0 + 1e-12


def test_eta_from_N_solves_scaling_equation():
    for n in (10, 1000, 10**6):
        eta = eta_from_N(n)
        assert np.isclose(eta ** (-3.0), math.sqrt(math.log(n)), rtol=1e-12)
        assert abs(scaling_margin(n, eta, alpha=1.0)) < 1e-12
    assert eta_from_N(1000) > eta_from_N(10**6)
    with pytest.raises(ValueError):
        eta_from_N(1)
    with pytest.raises(ValueError):
        eta_from_N(100, alpha=0.0)


def test_ensemble_validation_and_scale_warning():
    pos = np.zeros((2, 5))
    with pytest.raises(ValueError):
        make_ensemble(pos, [0.1], np.zeros((2, 2)), eta=1.0)
    with pytest.raises(ValueError):
        make_ensemble(pos, [0.1, 0.1], np.zeros((3, 3)), eta=1.0)
    with pytest.raises(ValueError):
        make_ensemble(pos, [0.1, -0.1], np.zeros((2, 2)), eta=1.0)
    with pytest.raises(ValueError):
        make_ensemble(pos, [0.1, 0.1], np.zeros((2, 2)), eta=-1.0)
    with pytest.raises(ValueError):
        make_ensemble(pos, [0.1, 0.1], np.zeros((2, 2)), eta=1.0,
                      grad_potentials=(None,))
    with pytest.warns(RuntimeWarning, match="admissible scale"):
        ParticleEnsemble(positions=np.zeros((1, 100)), sigma=np.array([0.1]),
                         interaction=np.zeros((1, 1)), eta=0.05)


def test_local_density_isolated_and_coincident():
    # a lone particle senses nothing from its own species
    lone = make_ensemble([[0.0]], [0.1], [[2.0]], eta=1.0)
    assert local_density(lone, lone.kernel(0, 0), 0, 0, 0) == 0.0

    # two coincident particles: each feels mass * bump(0) / (eta N)
    par = make_ensemble([[0.0, 0.0]], [0.1], [[2.0]], eta=0.5)
    got = local_density(par, par.kernel(0, 0), 0, 0, 0)
    assert np.isclose(got, 2.0 * bump(0.0) / (0.5 * 2), rtol=1e-14)

    # beyond the kernel support the density vanishes
    far = make_ensemble([[0.0, 10.0]], [0.1], [[2.0]], eta=0.5)
    assert local_density(far, far.kernel(0, 0), 0, 0, 0) == 0.0

    # cross-species densities keep the particle itself
    two = make_ensemble([[0.0], [0.0]], [0.1, 0.1],
                        [[0.0, 3.0], [3.0, 0.0]], eta=0.5)
    got = local_density(two, two.kernel(0, 1), 0, 1, 0)
    assert np.isclose(got, 3.0 * bump(0.0) / 0.5, rtol=1e-14)


def test_pair_density_matches_direct_sum():
    rng = np.random.default_rng(5)
    pos = rng.uniform(0.0, 1.0, size=(2, 50))
    ens = make_ensemble(pos, [0.1, 0.2], [[0.5, 0.3], [0.2, 0.4]], eta=0.8)
    for i in range(2):
        for j in range(2):
            kern = ens.kernel(i, j)
            direct = np.array([
                local_density(ens, kern, i, j, k) for k in range(50)
            ])
            assert np.allclose(pair_density(ens, i, j), direct,
                               rtol=0, atol=1e-13)


def test_diffusion_coefficients_match_clipped_pair_sums():
    rng = np.random.default_rng(6)
    pos = rng.uniform(-1.0, 1.0, size=(3, 40))
    inter = np.array([[0.5, 0.3, 0.0], [0.2, 0.4, 0.1], [0.0, 0.6, 0.2]])
    ens = make_ensemble(pos, [0.1, 0.2, 0.05], inter, eta=0.9, alpha=1.0)
    env = np.zeros_like(pos)
    for i in range(3):
        for j in range(3):
            env[i] += lipschitz_clip(pair_density(ens, i, j), 0.9, 1.0)
    expected = np.sqrt(2.0 * np.array([0.1, 0.2, 0.05])[:, None] + 2.0 * env)
    assert np.allclose(diffusion_coefficients(ens), expected, rtol=0, atol=1e-12)


def test_clipping_engages_for_crowded_particles():
    # 30 coincident particles with a large kernel mass saturate the cap
    pos = np.zeros((1, 30))
    ens = make_ensemble(pos, [0.0], [[50.0]], eta=0.5, alpha=2.0)
    raw = pair_density(ens, 0, 0)
    cap = 0.5 ** (-2.0)
    assert raw.max() > cap
    diff = diffusion_coefficients(ens)
    assert np.allclose(diff, math.sqrt(2.0 * cap), rtol=1e-14)


def test_pure_brownian_variance():
    # zero interaction: every particle is an exact sqrt(2 sigma) Brownian path
    sigma, dt, n_steps, count = 0.5, 1e-3, 50, 20_000
    ens = make_ensemble(np.zeros((1, count)), [sigma], [[0.0]], eta=1.0)
    ens = run_particles(ens, dt, n_steps, np.random.default_rng(17))
    t = dt * n_steps
    target = 2.0 * sigma * t
    est = ens.positions.var()
    stderr = target * math.sqrt(2.0 / count)
    assert abs(est - target) < 4.0 * stderr
    assert abs(ens.positions.mean()) < 4.0 * math.sqrt(target / count)


def test_gradient_flow_matches_exact_euler_recursion():
    # sigma = 0, no interaction: X_{m+1} = (1 - k dt) X_m exactly
    k, dt, n_steps = 1.3, 1e-2, 40
    x0 = np.linspace(-1.0, 1.0, 11)
    ens = make_ensemble(x0[None, :], [0.0], [[0.0]], eta=1.0,
                        grad_potentials=(lambda x: k * x,))
    ens = run_particles(ens, dt, n_steps, np.random.default_rng(0))
    assert np.allclose(ens.positions[0], x0 * (1.0 - k * dt) ** n_steps,
                       rtol=1e-12)


def test_particle_step_validation_and_abort():
    ens = make_ensemble([[0.0, 1.0]], [0.1], [[0.0]], eta=1.0)
    with pytest.raises(ValueError):
        particle_step(ens, 0.0, np.random.default_rng(0))
    diverging = make_ensemble([[0.0, 1.0]], [0.1], [[0.0]], eta=1.0,
                              grad_potentials=(lambda x: np.full_like(x, np.inf),))
    with pytest.raises(ParticleAbort):
        particle_step(diverging, 1e-3, np.random.default_rng(0))


def test_run_reproducibility():
    pos = np.linspace(-1.0, 1.0, 64)[None, :]
    kw = dict(sigma=[0.2], interaction=[[0.3]], eta=0.9)
    a = run_particles(make_ensemble(pos, **kw), 1e-3, 20, np.random.default_rng(3))
    b = run_particles(make_ensemble(pos, **kw), 1e-3, 20, np.random.default_rng(3))
    c = run_particles(make_ensemble(pos, **kw), 1e-3, 20, np.random.default_rng(4))
    assert np.array_equal(a.positions, b.positions)
    assert not np.array_equal(a.positions, c.positions)


def test_martingale_single_step_identity():
    rng = np.random.default_rng(9)
    pos = rng.uniform(-1.0, 1.0, size=(2, 40))
    ens = make_ensemble(pos, [0.1, 0.3], [[0.2, 0.1], [0.1, 0.2]], eta=0.9)
    phi1, dphi1 = window_bump(-0.5, 0.5)
    tracker = MartingaleTracker([dphi1, np.cos], n_species=2)
    _, record = particle_step(ens, 1e-3, np.random.default_rng(21))
    tracker.update(record)
    scale = 1.0 / math.sqrt(40)
    for p, dphi in enumerate((dphi1, np.cos)):
        hand = scale * (dphi(record.positions) * record.diffusion
                        * record.increments).sum(axis=1)
        assert np.allclose(tracker.values[:, p], hand, rtol=1e-14)


def test_martingale_constant_test_function_vanishes():
    pos = np.random.default_rng(2).uniform(-1.0, 1.0, size=(1, 30))
    ens = make_ensemble(pos, [0.2], [[0.3]], eta=0.9)
    tracker = MartingaleTracker([lambda x: np.zeros_like(x)], n_species=1)
    run_particles(ens, 1e-3, 10, np.random.default_rng(5), tracker=tracker)
    assert np.all(tracker.values == 0.0)


def test_window_bump_support_and_derivative():
    phi, dphi = window_bump(0.2, 0.8)
    edges = np.array([0.2, 0.8, 0.0, 1.0])
    assert np.all(phi(edges) == 0.0)
    assert np.all(dphi(edges) == 0.0)
    assert phi(0.5) == pytest.approx(math.exp(-1.0))
    interior = np.linspace(0.3, 0.7, 17)
    h = 1e-6
    fd = (phi(interior + h) - phi(interior - h)) / (2.0 * h)
    assert np.allclose(dphi(interior), fd, rtol=1e-7, atol=1e-9)
    with pytest.raises(ValueError):
        window_bump(0.5, 0.5)


def test_heat_gaussian_density_moments():
    dens = heat_gaussian_density(mean=[0.0, 1.0], std=[0.3, 0.4],
                                 sigma=[0.1, 0.2])
    x = np.linspace(-6.0, 8.0, 40_001)
    for r in (0.0, 0.5):
        u = dens(x, r)
        assert u.shape == (2, x.size)
        mass = np.trapezoid(u, x, axis=1)
        assert np.allclose(mass, 1.0, atol=1e-10)
        mean = np.trapezoid(u * x[None, :], x, axis=1)
        assert np.allclose(mean, [0.0, 1.0], atol=1e-10)
        var = np.trapezoid(u * (x[None, :] - mean[:, None]) ** 2, x, axis=1)
        expected = np.array([0.3, 0.4]) ** 2 + 2.0 * np.array([0.1, 0.2]) * r
        assert np.allclose(var, expected, rtol=1e-8)


def test_analytic_covariance_gaussian_moment_oracle():
    # dphi = dpsi = x with zero interaction gives
    #   int_0^t 2 sigma E[X_r^2] dr = 2 sigma (std^2 t + sigma t^2)
    sigma, std, t = 0.3, 0.5, 0.8
    dens = heat_gaussian_density(mean=[0.0], std=[std], sigma=[sigma])
    x = np.linspace(-12.0, 12.0, 20_001)
    got = analytic_covariance(dens, [[0.0]], [sigma], lambda y: y, lambda y: y,
                              t, x=x, n_times=101)
    exact = 2.0 * sigma * (std**2 * t + sigma * t**2)
    assert np.isclose(got, exact, rtol=1e-8)

    # self-interaction a adds 2a int u^2 x^2 dx = a sqrt(v_r) / (2 sqrt(pi))
    a = 0.4
    got = analytic_covariance(dens, [[a]], [sigma], lambda y: y, lambda y: y,
                              t, x=x, n_times=4001)
    v0, vt = std**2, std**2 + 2.0 * sigma * t
    exact += a / (2.0 * math.sqrt(math.pi)) * (vt**1.5 - v0**1.5) / (3.0 * sigma)
    assert np.isclose(got, exact, rtol=1e-7)


def test_analytic_covariance_symmetry_and_zero():
    dens = heat_gaussian_density(mean=[0.0], std=[0.4], sigma=[0.2])
    x = np.linspace(-8.0, 8.0, 4001)
    phi, dphi = window_bump(-1.0, 1.0)
    ab = analytic_covariance(dens, [[0.1]], [0.2], dphi, np.cos, 0.5, x=x)
    ba = analytic_covariance(dens, [[0.1]], [0.2], np.cos, dphi, 0.5, x=x)
    assert np.isclose(ab, ba, rtol=1e-13)
    zero = analytic_covariance(dens, [[0.1]], [0.2], dphi,
                               lambda y: np.zeros_like(y), 0.5, x=x)
    assert zero == 0.0
    with pytest.raises(ValueError):
        analytic_covariance(dens, [[0.1]], [0.2], dphi, dphi, 0.5)


def test_covariance_from_trajectory_constant_density():
    # hand-built two-snapshot trajectory with constant density: the time
    # trapezoid collapses to t times the spatial sum
    from sktfluct.grid import Grid
    from sktfluct.model import Coefficients
    from sktfluct.solver import SolverConfig, Trajectory

    grid = Grid(length=1.0, cells=32)
    u = np.vstack([1.0 + 0.2 * np.cos(np.pi * grid.centers),
                   np.full(32, 0.7)])
    coeffs = Coefficients(np.array([[0.1, 0.0, 0.3], [0.1, 0.2, 0.0]]))
    cfg = SolverConfig(eps=1e-4, dt=1e-5, t_end=0.25, deterministic=True)
    traj = Trajectory(
        grid=grid, coeffs=coeffs, pi=np.ones(2), config=cfg,
        times=np.array([0.0, 0.25]), state=np.array([u, u]),
        entropy_var=np.array([np.log(u), np.log(u)]),
        density=np.array([u, u]), reports=[], dt_used=1e-5,
        initial_entropy_margin=0.0,
    )
    dphi = lambda x: np.sin(2.0 * np.pi * x)
    sigma = np.array([0.05, 0.1])
    coeff = 2.0 * sigma[0] + 2.0 * (coeffs.interaction[0][:, None] * u).sum(axis=0)
    hand = 0.25 * float((u[0] * dphi(grid.centers) ** 2 * coeff).sum() * grid.dx)
    got = covariance_from_trajectory(traj, sigma, dphi, dphi, species=0)
    assert np.isclose(got, hand, rtol=1e-13)


def test_replica_reports():
    rng = np.random.default_rng(42)
    samples = rng.normal(0.0, 2.0, size=4000)
    rep = replica_variance_report(samples, analytic=4.0)
    assert rep["replicas"] == 4000
    assert abs(rep["z"]) < 4.0
    assert np.isclose(rep["estimate"], samples.var(ddof=1), rtol=1e-14)

    other = rng.normal(0.0, 1.0, size=4000)
    cross = replica_cross_report(samples, other)
    assert abs(cross["z"]) < 4.0

    mean = replica_mean_report(samples)
    assert abs(mean["z"]) < 4.0
    assert mean["analytic"] == 0.0

    with pytest.raises(ValueError):
        replica_variance_report(np.ones(4), analytic=1.0)
