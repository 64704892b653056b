"""Run configuration: a strict key-tree schema parsed from YAML.

Every numeric choice lives in the config file so experiments diff
cleanly; command-line flags only override paths and seeds.  Unknown keys
are rejected with their full path, and the word "auto" stands for the
documented derived defaults (delta from eps, modes from the grid, the
interaction radius from the population size, balance weights from the
coefficient matrix).
"""

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import yaml

from .grid import Grid
from .model import Coefficients, solve_balance_weights
from .particles import ParticleEnsemble, eta_from_N
from .solver import SolverConfig

__all__ = [
    "ConfigError",
    "GridSection",
    "InitialSection",
    "ModelSection",
    "SolverSection",
    "AssumptionsSection",
    "ParticleInitialSection",
    "ParticlesSection",
    "RunConfig",
    "load_config",
    "parse_config",
    "resolved_dict",
    "build_grid",
    "build_coefficients",
    "build_weights",
    "build_solver_config",
    "build_initial_density",
    "build_ensemble",
    "sample_from_density",
]


class ConfigError(ValueError):
    """Schema violation; message carries the offending key path."""


_KEY_ALIASES = {"lambda": "lam"}


def _from_mapping(cls, data, path, nested=None):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    nested = nested or {}
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        name = _KEY_ALIASES.get(key, key)
        if name not in names:
            raise ConfigError(f"{path}: unknown key '{key}'")
        if name in nested:
            kwargs[name] = nested[name].from_dict(value, f"{path}.{key}")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


@dataclass
class GridSection:
    length: float = 1.0
    cells: int = 128

    @classmethod
    def from_dict(cls, data, path="grid"):
        return _from_mapping(cls, data, path)


@dataclass
class InitialSection:
    """Initial density per species.

    kind "constant" uses base alone; "cosine" adds amplitude times a
    half-period cosine of the given integer frequency; "gaussian" is a
    normal bump of unit mass scaled by amplitude on top of base.
    """

    kind: str = "cosine"
    base: list = field(default_factory=lambda: [0.35, 0.35])
    amplitude: list = field(default_factory=lambda: [0.15, 0.15])
    frequency: list = field(default_factory=lambda: [1, 2])
    mean: list = field(default_factory=list)
    std: list = field(default_factory=list)

    @classmethod
    def from_dict(cls, data, path="solver.initial"):
        return _from_mapping(cls, data, path)


@dataclass
class ModelSection:
    """coefficients rows are (a_i0, a_i1 .. a_in): base then interaction."""

    coefficients: list = field(default_factory=list)
    balance_weights: object = "auto"

    @classmethod
    def from_dict(cls, data, path="model"):
        return _from_mapping(cls, data, path)


@dataclass
class SolverSection:
    eps: float = 1e-4
    dt: float = 1e-5
    t_end: float = 0.1
    delta: object = "auto"
    lam: float = 1.0
    population: int = 10_000
    deterministic: bool = False
    record_every: int = 100
    modes: object = "auto"
    smoothness: float = 2.5
    operator_order: int = 2
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    cfl_safety: float = 0.5
    blowup_threshold: float = 1e8
    allow_small_lambda: bool = False
    entropy_tol: float = 1e-2
    initial: InitialSection = field(default_factory=InitialSection)

    @classmethod
    def from_dict(cls, data, path="solver"):
        return _from_mapping(cls, data, path, nested={"initial": InitialSection})


@dataclass
class AssumptionsSection:
    p: float = 3.0
    kappa: float = 0.5
    lam: float = 1.0
    allow_small_lambda: bool = False

    @classmethod
    def from_dict(cls, data, path="assumptions"):
        return _from_mapping(cls, data, path)


@dataclass
class ParticleInitialSection:
    """kind "gaussian" draws normal(mean, std) per species; kind
    "from_density" inverts the solver initial density instead."""

    kind: str = "gaussian"
    mean: list = field(default_factory=lambda: [0.5])
    std: list = field(default_factory=lambda: [0.1])

    @classmethod
    def from_dict(cls, data, path="particles.initial"):
        return _from_mapping(cls, data, path)


@dataclass
class ParticlesSection:
    count: int = 2000
    sigma: list = field(default_factory=lambda: [0.5])
    interaction: list = field(default_factory=lambda: [[0.0]])
    eta: object = "auto"
    alpha: float = 1.0
    delta_c: float = 1.0
    dt: float = 1e-3
    t_end: float = 0.25
    replicas: int = 200
    record_every: int = 50
    mean_field: bool = False
    test_windows: list = field(default_factory=lambda: [[0.35, 0.65]])
    initial: ParticleInitialSection = field(default_factory=ParticleInitialSection)

    @classmethod
    def from_dict(cls, data, path="particles"):
        return _from_mapping(cls, data, path, nested={"initial": ParticleInitialSection})


@dataclass
class RunConfig:
    output_dir: str = "out"
    seed: int = 0
    replicas: int = 1
    parallelism: int = 1
    model: ModelSection = field(default_factory=ModelSection)
    grid: GridSection = field(default_factory=GridSection)
    solver: SolverSection = field(default_factory=SolverSection)
    assumptions: AssumptionsSection = field(default_factory=AssumptionsSection)
    particles: ParticlesSection = field(default_factory=ParticlesSection)

    @classmethod
    def from_dict(cls, data, path="config"):
        nested = {
            "model": ModelSection,
            "grid": GridSection,
            "solver": SolverSection,
            "assumptions": AssumptionsSection,
            "particles": ParticlesSection,
        }
        return _from_mapping(cls, data, path, nested=nested)


def parse_config(text: str) -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if data is None:
        data = {}
    return RunConfig.from_dict(data)


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return parse_config(handle.read())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc


def resolved_dict(cfg: RunConfig) -> dict:
    """Plain nested dict of the fully resolved configuration."""
    return dataclasses.asdict(cfg)


def build_grid(cfg: RunConfig) -> Grid:
    return Grid(length=float(cfg.grid.length), cells=int(cfg.grid.cells))


def build_coefficients(cfg: RunConfig) -> Coefficients:
    rows = cfg.model.coefficients
    if not rows:
        raise ConfigError("model.coefficients: required (rows of a_i0, a_i1 .. a_in)")
    return Coefficients(np.asarray(rows, dtype=float))


def build_weights(cfg: RunConfig, coeffs: Coefficients) -> np.ndarray:
    choice = cfg.model.balance_weights
    if isinstance(choice, str):
        if choice != "auto":
            raise ConfigError(f"model.balance_weights: expected 'auto' or a list, got '{choice}'")
        return solve_balance_weights(coeffs).pi
    pi = np.asarray(choice, dtype=float)
    if pi.shape != (coeffs.n,) or np.any(pi <= 0):
        raise ConfigError("model.balance_weights: need one positive weight per species")
    return pi


def _auto(value, fallback):
    return fallback if isinstance(value, str) and value == "auto" else value


def build_solver_config(cfg: RunConfig, seed: int | None = None) -> SolverConfig:
    s = cfg.solver
    delta = _auto(s.delta, None)
    modes = _auto(s.modes, None)
    return SolverConfig(
        eps=float(s.eps),
        dt=float(s.dt),
        t_end=float(s.t_end),
        delta=None if delta is None else float(delta),
        lam=float(s.lam),
        n_pop=int(s.population),
        modes=None if modes is None else int(modes),
        smoothness=float(s.smoothness),
        operator_order=int(s.operator_order),
        seed=int(cfg.seed if seed is None else seed),
        deterministic=bool(s.deterministic),
        record_every=int(s.record_every),
        newton_tol=float(s.newton_tol),
        newton_max_iter=int(s.newton_max_iter),
        cfl_safety=float(s.cfl_safety),
        blowup_threshold=float(s.blowup_threshold),
        allow_small_lambda=bool(s.allow_small_lambda),
    )


def build_initial_density(cfg: RunConfig, grid: Grid, n_species: int) -> np.ndarray:
    init = cfg.solver.initial
    x = grid.centers

    def per_species(values, name, default=None):
        if not values:
            if default is None:
                raise ConfigError(f"solver.initial.{name}: required for kind '{init.kind}'")
            values = default
        arr = np.asarray(values, dtype=float)
        if arr.shape != (n_species,):
            raise ConfigError(
                f"solver.initial.{name}: need {n_species} entries, got {arr.shape}"
            )
        return arr

    base = per_species(init.base, "base")
    if init.kind == "constant":
        u0 = np.repeat(base[:, None], grid.cells, axis=1)
    elif init.kind == "cosine":
        amp = per_species(init.amplitude, "amplitude")
        freq = per_species(init.frequency, "frequency")
        u0 = base[:, None] + amp[:, None] * np.cos(
            freq[:, None] * np.pi * x[None, :] / grid.length
        )
    elif init.kind == "gaussian":
        amp = per_species(init.amplitude, "amplitude")
        mean = per_species(init.mean, "mean")
        std = per_species(init.std, "std")
        if np.any(std <= 0):
            raise ConfigError("solver.initial.std: must be positive")
        z = (x[None, :] - mean[:, None]) / std[:, None]
        u0 = base[:, None] + amp[:, None] * np.exp(-0.5 * z * z) / (
            std[:, None] * np.sqrt(2.0 * np.pi)
        )
    else:
        raise ConfigError(f"solver.initial.kind: unknown kind '{init.kind}'")
    if np.any(u0 < 0):
        raise ConfigError("solver.initial: produced a negative density")
    return u0


def sample_from_density(rng, count: int, grid: Grid, density_row: np.ndarray) -> np.ndarray:
    """Draw positions from a piecewise-constant density on the grid.

    The cellwise cumulative mass makes the CDF piecewise linear, so
    inverse transform sampling through interp is exact for this law.
    """
    density_row = np.asarray(density_row, dtype=float)
    mass = density_row.sum()
    if mass <= 0:
        raise ConfigError("particles.initial: density has no mass to sample from")
    edges = np.linspace(0.0, grid.length, grid.cells + 1)
    cdf = np.concatenate([[0.0], np.cumsum(density_row)]) / mass
    return np.interp(rng.uniform(size=count), cdf, edges)


def build_ensemble(cfg: RunConfig, rng, grid: Grid | None = None,
                   density: np.ndarray | None = None) -> ParticleEnsemble:
    p = cfg.particles
    sigma = np.asarray(p.sigma, dtype=float)
    interaction = np.asarray(p.interaction, dtype=float)
    n = sigma.size
    if interaction.shape != (n, n):
        raise ConfigError(
            f"particles.interaction: need a {n}x{n} matrix to match sigma"
        )
    eta = _auto(p.eta, None)
    if eta is None:
        eta = eta_from_N(int(p.count), alpha=float(p.alpha), delta_c=float(p.delta_c))
    init = p.initial
    if init.kind == "gaussian":
        mean = np.asarray(init.mean, dtype=float)
        std = np.asarray(init.std, dtype=float)
        if mean.shape != (n,) or std.shape != (n,):
            raise ConfigError("particles.initial: need mean and std per species")
        positions = mean[:, None] + std[:, None] * rng.standard_normal((n, int(p.count)))
    elif init.kind == "from_density":
        if grid is None or density is None:
            raise ConfigError(
                "particles.initial.kind 'from_density' needs the solver grid and initial"
            )
        positions = np.stack(
            [sample_from_density(rng, int(p.count), grid, density[i]) for i in range(n)]
        )
    else:
        raise ConfigError(f"particles.initial.kind: unknown kind '{init.kind}'")
    return ParticleEnsemble(
        positions=positions,
        sigma=sigma,
        interaction=interaction,
        eta=float(eta),
        alpha=float(p.alpha),
        delta_c=float(p.delta_c),
    )
