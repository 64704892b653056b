"""Tests for the strict YAML schema and the object builders."""

import warnings
from pathlib import Path

import numpy as np
import pytest

from sktfluct.config import (
    ConfigError,
    RunConfig,
    build_coefficients,
    build_ensemble,
    build_grid,
    build_initial_density,
    build_solver_config,
    build_weights,
    load_config,
    parse_config,
    resolved_dict,
    sample_from_density,
)
from sktfluct.grid import Grid
from sktfluct.particles import eta_from_N

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


def test_empty_config_gives_defaults():
    cfg = parse_config("")
    assert cfg.grid.cells == 128
    assert cfg.solver.eps == 1e-4
    assert cfg.solver.delta == "auto"
    assert cfg.seed == 0


def test_shipped_configs_parse():
    paths = sorted(CONFIG_DIR.glob("*.yaml"))
    assert paths, "expected example configs next to the package"
    for path in paths:
        cfg = load_config(path)
        assert isinstance(cfg, RunConfig)


def test_resolved_dict_round_trips():
    cfg = load_config(CONFIG_DIR / "spde_example.yaml")
    again = RunConfig.from_dict(resolved_dict(cfg))
    assert again == cfg


def test_unknown_keys_are_rejected_with_path():
    with pytest.raises(ConfigError, match="config: unknown key 'bogus'"):
        parse_config("bogus: 1")
    with pytest.raises(ConfigError, match="solver: unknown key 'stepsize'"):
        parse_config("solver:\n  stepsize: 1e-5")
    with pytest.raises(ConfigError, match="solver.initial: unknown key"):
        parse_config("solver:\n  initial:\n    shape: flat")
    with pytest.raises(ConfigError, match="expected a mapping"):
        parse_config("solver: 3")
    with pytest.raises(ConfigError, match="not valid YAML"):
        parse_config("a: [unclosed")


def test_lambda_alias():
    cfg = parse_config("solver:\n  lambda: 2.5")
    assert cfg.solver.lam == 2.5


def test_load_config_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/path.yaml")


def test_build_grid_and_coefficients():
    cfg = parse_config("grid:\n  length: 2.0\n  cells: 64\n"
                       "model:\n  coefficients: [[1.0, 1.0, 0.5], [1.0, 0.5, 1.0]]")
    grid = build_grid(cfg)
    assert grid.length == 2.0 and grid.cells == 64
    coeffs = build_coefficients(cfg)
    assert coeffs.n == 2
    assert np.array_equal(coeffs.base, [1.0, 1.0])
    with pytest.raises(ConfigError, match="coefficients"):
        build_coefficients(parse_config(""))


def test_build_weights_auto_and_explicit():
    cfg = parse_config("model:\n  coefficients: [[1.0, 1.0, 0.5], [1.0, 0.5, 1.0]]")
    coeffs = build_coefficients(cfg)
    pi = build_weights(cfg, coeffs)
    assert np.allclose(pi, [1.0, 1.0])

    cfg.model.balance_weights = [1.0, 2.0]
    assert np.array_equal(build_weights(cfg, coeffs), [1.0, 2.0])
    cfg.model.balance_weights = [1.0]
    with pytest.raises(ConfigError):
        build_weights(cfg, coeffs)
    cfg.model.balance_weights = [1.0, -2.0]
    with pytest.raises(ConfigError):
        build_weights(cfg, coeffs)
    cfg.model.balance_weights = "manual"
    with pytest.raises(ConfigError):
        build_weights(cfg, coeffs)


def test_build_solver_config_auto_fields():
    cfg = parse_config("solver:\n  eps: 1e-3\n  deterministic: true")
    scfg = build_solver_config(cfg)
    assert scfg.delta is None and scfg.delta_eff == 1e-3
    assert scfg.modes is None
    assert scfg.seed == 0
    assert build_solver_config(cfg, seed=7).seed == 7

    cfg = parse_config("solver:\n  delta: 0.05\n  modes: 16\n  deterministic: true")
    scfg = build_solver_config(cfg)
    assert scfg.delta_eff == 0.05 and scfg.modes == 16


def grid32():
    return Grid(length=1.0, cells=32)


def test_initial_density_constant_and_cosine():
    cfg = parse_config(
        "solver:\n  initial:\n    kind: constant\n    base: [0.4, 0.7]"
    )
    u0 = build_initial_density(cfg, grid32(), 2)
    assert u0.shape == (2, 32)
    assert np.all(u0[0] == 0.4) and np.all(u0[1] == 0.7)

    cfg = parse_config(
        "solver:\n  initial:\n    kind: cosine\n    base: [0.5]\n"
        "    amplitude: [0.2]\n    frequency: [2]"
    )
    grid = grid32()
    u0 = build_initial_density(cfg, grid, 1)
    hand = 0.5 + 0.2 * np.cos(2.0 * np.pi * grid.centers)
    assert np.allclose(u0[0], hand, rtol=1e-15)


def test_initial_density_gaussian_and_errors():
    cfg = parse_config(
        "solver:\n  initial:\n    kind: gaussian\n    base: [0.1]\n"
        "    amplitude: [0.3]\n    mean: [0.5]\n    std: [0.1]"
    )
    grid = grid32()
    u0 = build_initial_density(cfg, grid, 1)
    z = (grid.centers - 0.5) / 0.1
    hand = 0.1 + 0.3 * np.exp(-0.5 * z * z) / (0.1 * np.sqrt(2.0 * np.pi))
    assert np.allclose(u0[0], hand, rtol=1e-15)

    # negative density, wrong entry count, missing field, unknown kind
    with pytest.raises(ConfigError, match="negative"):
        build_initial_density(parse_config(
            "solver:\n  initial:\n    kind: cosine\n    base: [0.1]\n"
            "    amplitude: [0.5]\n    frequency: [1]"), grid, 1)
    with pytest.raises(ConfigError, match="need 2 entries"):
        build_initial_density(parse_config(
            "solver:\n  initial:\n    kind: constant\n    base: [0.4]"), grid, 2)
    with pytest.raises(ConfigError, match="mean"):
        build_initial_density(parse_config(
            "solver:\n  initial:\n    kind: gaussian\n    base: [0.1]\n"
            "    amplitude: [0.3]\n    std: [0.1]"), grid, 1)
    with pytest.raises(ConfigError, match="std"):
        build_initial_density(parse_config(
            "solver:\n  initial:\n    kind: gaussian\n    base: [0.1]\n"
            "    amplitude: [0.3]\n    mean: [0.5]\n    std: [0.0]"), grid, 1)
    with pytest.raises(ConfigError, match="unknown kind"):
        build_initial_density(parse_config(
            "solver:\n  initial:\n    kind: wedge\n    base: [0.1]"), grid, 1)


def test_sample_from_density_uniform_is_exact_inverse_cdf():
    grid = grid32()
    flat = np.ones(32)
    draws = sample_from_density(np.random.default_rng(8), 1000, grid, flat)
    raw = np.random.default_rng(8).uniform(size=1000)
    assert np.allclose(draws, raw * grid.length, rtol=0, atol=1e-15)
    with pytest.raises(ConfigError, match="no mass"):
        sample_from_density(np.random.default_rng(0), 10, grid, np.zeros(32))


def test_sample_from_density_matches_target_mean():
    grid = Grid(length=1.0, cells=64)
    density = 1.0 + 0.5 * np.cos(np.pi * grid.centers)
    draws = sample_from_density(np.random.default_rng(3), 200_000, grid, density)
    assert np.all((draws >= 0.0) & (draws <= 1.0))
    # continuous target mean: 0.5 - 1/pi^2 (midpoint cells add O(dx^2))
    assert abs(draws.mean() - (0.5 - 1.0 / np.pi**2)) < 4e-3


def build_quiet_ensemble(cfg, rng, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return build_ensemble(cfg, rng, **kw)


def test_build_ensemble_gaussian_and_auto_radius():
    cfg = parse_config(
        "particles:\n  count: 500\n  sigma: [0.5]\n  interaction: [[0.0]]\n"
        "  initial:\n    kind: gaussian\n    mean: [0.2]\n    std: [0.3]"
    )
    ens = build_quiet_ensemble(cfg, np.random.default_rng(4))
    assert ens.positions.shape == (1, 500)
    assert ens.eta == eta_from_N(500)
    raw = np.random.default_rng(4).standard_normal((1, 500))
    assert np.allclose(ens.positions, 0.2 + 0.3 * raw, rtol=0, atol=1e-15)

    cfg.particles.eta = 0.7
    assert build_quiet_ensemble(cfg, np.random.default_rng(4)).eta == 0.7


def test_build_ensemble_from_density_and_errors():
    cfg = parse_config(
        "particles:\n  count: 300\n  sigma: [0.1, 0.1]\n"
        "  interaction: [[0.0, 0.1], [0.1, 0.0]]\n  eta: 0.8\n"
        "  initial:\n    kind: from_density"
    )
    grid = grid32()
    density = np.vstack([np.ones(32), 1.0 + 0.3 * np.cos(np.pi * grid.centers)])
    ens = build_quiet_ensemble(cfg, np.random.default_rng(1), grid=grid,
                               density=density)
    assert ens.positions.shape == (2, 300)
    assert np.all((ens.positions >= 0.0) & (ens.positions <= 1.0))

    with pytest.raises(ConfigError, match="from_density"):
        build_quiet_ensemble(cfg, np.random.default_rng(1))

    bad = parse_config("particles:\n  sigma: [0.1, 0.2]\n  interaction: [[0.0]]")
    with pytest.raises(ConfigError, match="interaction"):
        build_quiet_ensemble(bad, np.random.default_rng(0))

    bad = parse_config(
        "particles:\n  sigma: [0.1]\n  interaction: [[0.0]]\n"
        "  initial:\n    kind: lattice"
    )
    with pytest.raises(ConfigError, match="unknown kind"):
        build_quiet_ensemble(bad, np.random.default_rng(0))
