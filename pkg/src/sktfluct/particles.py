"""Interacting particle system whose hydrodynamic limit is the
cross-diffusion model, plus the martingale-covariance estimator.

N particles per species diffuse on the real line with a state-dependent
coefficient: each particle senses the mollified empirical density of
every species through a compactly supported bump kernel, clips it, and
diffuses at sqrt(2 sigma_i + 2 sum_j clipped density).  Against the
mean-field density the fluctuation martingale of a test function has a
computable covariance; this module estimates it over replicas and
evaluates the limiting quadrature for the comparison.

Pair sums use sorted neighbor windows (searchsorted + segment bincount),
which is exact for the compactly supported kernel, not an approximation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "BUMP_NORM",
    "bump",
    "MollifiedKernel",
    "lipschitz_clip",
    "ParticleEnsemble",
    "ParticleAbort",
    "StepRecord",
    "local_density",
    "pair_density",
    "diffusion_coefficients",
    "particle_step",
    "MartingaleTracker",
    "run_particles",
    "window_bump",
    "heat_gaussian_density",
    "analytic_covariance",
    "covariance_from_trajectory",
    "replica_variance_report",
    "replica_cross_report",
    "replica_mean_report",
    "eta_from_N",
    "scaling_margin",
]

# integral of exp(-1/(1-x^2)) over (-1, 1); pins the bump to unit mass
BUMP_NORM = 0.44399381616807865


def bump(x):
    """Smooth unit-mass bump supported on (-1, 1)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    xi = x[inside]
    out[inside] = np.exp(-1.0 / (1.0 - xi * xi)) / BUMP_NORM
    return out


_BUMP_AT_ZERO = math.exp(-1.0) / BUMP_NORM


@dataclass(frozen=True)
class MollifiedKernel:
    """Kernel mass * eta^-1 * bump(x / eta); integrates to mass exactly."""

    mass: float
    eta: float

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError(f"kernel radius must be positive, got {self.eta}")
        if self.mass < 0:
            raise ValueError(f"kernel mass must be nonnegative, got {self.mass}")

    def __call__(self, x):
        return self.mass / self.eta * bump(np.asarray(x, dtype=float) / self.eta)


def lipschitz_clip(x, eta: float, alpha: float):
    """Clip to [0, eta^-alpha]; globally Lipschitz with constant 1."""
    return np.clip(x, 0.0, eta ** (-alpha))


class ParticleAbort(RuntimeError):
    """A particle position left the finite range."""


def eta_from_N(n_particles: int, alpha: float = 1.0, delta_c: float = 1.0, dim: int = 1) -> float:
    """Smallest admissible interaction radius for a population size.

    Solves radius^-(dim+1+alpha) <= sqrt(delta_c log N) for the radius;
    anything larger is also admissible.  Rejects populations too small
    for the bound to be satisfiable at all.
    """
    if alpha <= 0 or delta_c <= 0:
        raise ValueError("alpha and delta_c must be positive")
    if n_particles <= 1 or delta_c * math.log(n_particles) <= 0:
        raise ValueError(
            f"population {n_particles} gives delta_c log N <= 0; no interaction "
            "radius can satisfy the scaling condition"
        )
    return (delta_c * math.log(n_particles)) ** (-0.5 / (dim + 1 + alpha))


def scaling_margin(n_particles: int, eta: float, alpha: float, delta_c: float = 1.0,
                   dim: int = 1) -> float:
    """sqrt(delta_c log N) - eta^-(dim+1+alpha); nonnegative means admissible."""
    if n_particles <= 1:
        return -math.inf
    return math.sqrt(delta_c * math.log(n_particles)) - eta ** (-(dim + 1 + alpha))


@dataclass
class ParticleEnsemble:
    """Positions (n_species, n_particles) with the interaction data.

    ``interaction[i, j]`` is the kernel mass felt by species i from
    species j; ``sigma`` the per-species base diffusion; gradients of
    the confining potentials are optional callables (None means free).
    """

    positions: np.ndarray
    sigma: np.ndarray
    interaction: np.ndarray
    eta: float
    alpha: float = 1.0
    delta_c: float = 1.0
    grad_potentials: tuple = field(default=None)

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.interaction = np.asarray(self.interaction, dtype=float)
        n, count = self.positions.shape
        if count < 1:
            raise ValueError("need at least one particle per species")
        if self.sigma.shape != (n,):
            raise ValueError(f"sigma must have shape ({n},), got {self.sigma.shape}")
        if self.interaction.shape != (n, n):
            raise ValueError(
                f"interaction must have shape ({n}, {n}), got {self.interaction.shape}"
            )
        if np.any(self.sigma < 0) or np.any(self.interaction < 0):
            raise ValueError("diffusion constants and kernel masses must be nonnegative")
        if self.eta <= 0:
            raise ValueError(f"interaction radius must be positive, got {self.eta}")
        if self.grad_potentials is not None and len(self.grad_potentials) != n:
            raise ValueError("need one potential gradient per species (or None)")
        margin = scaling_margin(count, self.eta, self.alpha, self.delta_c)
        if margin < 0:
            warnings.warn(
                f"radius {self.eta:.4g} is below the admissible scale for "
                f"N={count} (margin {margin:.3g}); results leave the proven regime",
                RuntimeWarning,
                stacklevel=2,
            )

    @property
    def n_species(self) -> int:
        return self.positions.shape[0]

    @property
    def n_particles(self) -> int:
        return self.positions.shape[1]

    def kernel(self, i: int, j: int) -> MollifiedKernel:
        return MollifiedKernel(mass=float(self.interaction[i, j]), eta=self.eta)


def local_density(ensemble: ParticleEnsemble, kernel: MollifiedKernel,
                  i: int, j: int, k: int) -> float:
    """Mollified density of species j felt by particle k of species i.

    Direct O(N) evaluation excluding the particle itself; the stepper
    uses the windowed batch version below.
    """
    x = ensemble.positions[i, k]
    others = ensemble.positions[j]
    vals = kernel(x - others)
    if i == j:
        vals = np.delete(vals, k)
    return float(vals.sum() / ensemble.n_particles)


def _windowed_bump_table(query: np.ndarray, source: np.ndarray, eta: float):
    """Flat table of bump((query_k - source_l) / eta) inside the support.

    Sorts the sources once and visits only the particles inside the
    kernel support of each query, so the sums built from it are exact.
    Returns (query indices, source indices in original order, values);
    the kernel is even, so the same values serve both directions.
    """
    order = np.argsort(source)
    xs = source[order]
    lo = np.searchsorted(xs, query - eta, side="left")
    hi = np.searchsorted(xs, query + eta, side="right")
    counts = hi - lo
    total = int(counts.sum())
    if total == 0:
        empty = np.zeros(0, dtype=int)
        return empty, empty, np.zeros(0)
    seg = np.repeat(np.arange(query.size), counts)
    starts = np.cumsum(counts) - counts
    idx = np.arange(total) - np.repeat(starts, counts) + np.repeat(lo, counts)
    vals = bump((query[seg] - xs[idx]) / eta)
    return seg, order[idx], vals


def pair_density(ensemble: ParticleEnsemble, i: int, j: int) -> np.ndarray:
    """Vector of local_density(i, j, k) over all particles k of species i."""
    seg, _, vals = _windowed_bump_table(
        ensemble.positions[i], ensemble.positions[j], ensemble.eta
    )
    sums = np.bincount(seg, weights=vals, minlength=ensemble.n_particles)
    if i == j:
        sums = sums - _BUMP_AT_ZERO
    mass = ensemble.interaction[i, j]
    return mass / ensemble.eta * sums / ensemble.n_particles


def diffusion_coefficients(ensemble: ParticleEnsemble) -> np.ndarray:
    """Per-particle coefficient sqrt(2 sigma_i + 2 sum_j clipped density).

    Evaluates each unordered species pair once and reads the sums off
    both axes of the shared table.
    """
    n = ensemble.n_species
    count = ensemble.n_particles
    scale = 1.0 / (ensemble.eta * count)
    env = np.zeros_like(ensemble.positions)
    for i in range(n):
        for j in range(i, n):
            a_ij = ensemble.interaction[i, j]
            a_ji = ensemble.interaction[j, i]
            if a_ij == 0.0 and a_ji == 0.0:
                continue
            seg, src, vals = _windowed_bump_table(
                ensemble.positions[i], ensemble.positions[j], ensemble.eta
            )
            sums_q = np.bincount(seg, weights=vals, minlength=count)
            if i == j:
                env[i] += lipschitz_clip(
                    a_ij * scale * (sums_q - _BUMP_AT_ZERO), ensemble.eta, ensemble.alpha
                )
                continue
            if a_ij != 0.0:
                env[i] += lipschitz_clip(a_ij * scale * sums_q, ensemble.eta,
                                         ensemble.alpha)
            if a_ji != 0.0:
                sums_s = np.bincount(src, weights=vals, minlength=count)
                env[j] += lipschitz_clip(a_ji * scale * sums_s, ensemble.eta,
                                         ensemble.alpha)
    return np.sqrt(2.0 * ensemble.sigma[:, None] + 2.0 * env)


@dataclass(frozen=True)
class StepRecord:
    """Pre-step data shared by the update and the martingale estimator."""

    positions: np.ndarray
    diffusion: np.ndarray
    increments: np.ndarray
    dt: float


def particle_step(ensemble: ParticleEnsemble, dt: float,
                  rng: np.random.Generator) -> tuple:
    """One Euler update; returns (new ensemble, StepRecord).

    Drift and diffusion use the pre-step configuration only, so the
    update is data-parallel over particles.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    pre = ensemble.positions
    diff = diffusion_coefficients(ensemble)
    incr = rng.standard_normal(pre.shape) * math.sqrt(dt)
    drift = np.zeros_like(pre)
    if ensemble.grad_potentials is not None:
        for i, grad in enumerate(ensemble.grad_potentials):
            if grad is not None:
                drift[i] = -np.asarray(grad(pre[i]), dtype=float)
    moved = pre + dt * drift + diff * incr
    if not np.all(np.isfinite(moved)):
        raise ParticleAbort("particle positions left the finite range")
    record = StepRecord(positions=pre.copy(), diffusion=diff, increments=incr, dt=dt)
    return replace(ensemble, positions=moved), record


class MartingaleTracker:
    """Running fluctuation martingales (1/sqrt(N)) sum_k dphi(X) b dW.

    One value per (species, test function); feed it every StepRecord in
    order.  ``derivatives`` are the test-function derivatives.
    """

    def __init__(self, derivatives, n_species: int):
        self.derivatives = tuple(derivatives)
        self.values = np.zeros((n_species, len(self.derivatives)))

    def update(self, record: StepRecord):
        scale = 1.0 / math.sqrt(record.positions.shape[1])
        for p, dphi in enumerate(self.derivatives):
            weights = dphi(record.positions) * record.diffusion * record.increments
            self.values[:, p] += scale * weights.sum(axis=1)
        return self


def run_particles(ensemble: ParticleEnsemble, dt: float, n_steps: int,
                  rng: np.random.Generator, tracker: MartingaleTracker | None = None):
    """Advance n_steps, feeding the optional tracker; returns the ensemble."""
    for _ in range(n_steps):
        ensemble, record = particle_step(ensemble, dt, rng)
        if tracker is not None:
            tracker.update(record)
    return ensemble


def window_bump(lo: float, hi: float):
    """Smooth test function supported on (lo, hi) and its derivative.

    Built from the same bump profile as the kernel, so it is C-infinity
    with compact support; both callables accept arrays.
    """
    if hi <= lo:
        raise ValueError(f"window must have positive width, got [{lo}, {hi}]")
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)

    def phi(x):
        y = (np.asarray(x, dtype=float) - center) / half
        out = np.zeros_like(y)
        inside = np.abs(y) < 1.0
        yi = y[inside]
        out[inside] = np.exp(-1.0 / (1.0 - yi * yi))
        return out

    def dphi(x):
        y = (np.asarray(x, dtype=float) - center) / half
        out = np.zeros_like(y)
        inside = np.abs(y) < 1.0
        yi = y[inside]
        denom = 1.0 - yi * yi
        out[inside] = np.exp(-1.0 / denom) * (-2.0 * yi / denom**2) / half
        return out

    return phi, dphi


def heat_gaussian_density(mean, std, sigma):
    """Density of independent diffusions started from per-species normals.

    Returns a callable (x, r) -> stacked densities: each species stays
    normal with variance std_i^2 + 2 sigma_i r.  This is the exact law
    for zero interaction and zero potential.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    std = np.atleast_1d(np.asarray(std, dtype=float))
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))

    def density(x, r):
        x = np.asarray(x, dtype=float)
        var = (std**2 + 2.0 * sigma * r)[:, None]
        z = (x[None, :] - mean[:, None]) ** 2 / var
        return np.exp(-0.5 * z) / np.sqrt(2.0 * np.pi * var)

    return density


def analytic_covariance(density, interaction, sigma, dphi, dpsi, t: float,
                        species: int = 0, x: np.ndarray | None = None,
                        n_times: int = 201) -> float:
    """Limiting covariance of M(t, phi) and M(t, psi) for one species.

    Quadrature (trapezoid in time and space) of the inner product of the
    species density with dphi * dpsi * (2 sigma_i + 2 sum_j a_ij u_j),
    integrated over [0, t].  ``density(x, r)`` must return the stacked
    per-species densities, shape (n_species, len(x)).
    """
    if x is None:
        raise ValueError("pass the spatial quadrature nodes covering the support")
    x = np.asarray(x, dtype=float)
    interaction = np.atleast_2d(np.asarray(interaction, dtype=float))
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    times = np.linspace(0.0, t, n_times)
    weights = dphi(x) * dpsi(x)
    values = np.empty(n_times)
    for m, r in enumerate(times):
        u = np.atleast_2d(np.asarray(density(x, r), dtype=float))
        coeff = 2.0 * sigma[species] + 2.0 * (interaction[species][:, None] * u).sum(axis=0)
        values[m] = np.trapezoid(u[species] * weights * coeff, x)
    return float(np.trapezoid(values, times))


def covariance_from_trajectory(traj, sigma, dphi, dpsi, species: int = 0) -> float:
    """Same quadrature with the density taken from a recorded mean-field run."""
    centers = traj.grid.centers
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    inter = traj.coeffs.interaction
    weights = dphi(centers) * dpsi(centers)
    values = np.empty(traj.times.size)
    for m in range(traj.times.size):
        u = traj.density[m]
        coeff = 2.0 * sigma[species] + 2.0 * (inter[species][:, None] * u).sum(axis=0)
        values[m] = float((u[species] * weights * coeff).sum() * traj.grid.dx)
    return float(np.trapezoid(values, traj.times))


def replica_variance_report(samples, analytic: float) -> dict:
    """Sample variance vs the analytic value with a fourth-moment stderr."""
    samples = np.asarray(samples, dtype=float)
    count = samples.size
    if count < 8:
        raise ValueError("need a handful of replicas for a variance estimate")
    est = float(samples.var(ddof=1))
    centered = samples - samples.mean()
    m4 = float((centered**4).mean())
    var_of_var = (m4 - (count - 3) / (count - 1) * est * est) / count
    stderr = math.sqrt(max(var_of_var, 0.0))
    z = (est - analytic) / stderr if stderr > 0 else math.inf
    return {"estimate": est, "analytic": analytic, "stderr": stderr,
            "z": float(z), "replicas": int(count)}


def replica_cross_report(first, second, analytic: float = 0.0) -> dict:
    """Sample covariance of two martingale samples vs the analytic value."""
    first = np.asarray(first, dtype=float)
    second = np.asarray(second, dtype=float)
    count = first.size
    est = float(np.cov(first, second, ddof=1)[0, 1])
    var_est = (first.var(ddof=1) * second.var(ddof=1) + est * est) / count
    stderr = math.sqrt(max(var_est, 0.0))
    z = (est - analytic) / stderr if stderr > 0 else math.inf
    return {"estimate": est, "analytic": analytic, "stderr": stderr,
            "z": float(z), "replicas": int(count)}


def replica_mean_report(samples) -> dict:
    """Mean vs zero (martingale property) with the standard error."""
    samples = np.asarray(samples, dtype=float)
    count = samples.size
    stderr = float(samples.std(ddof=1) / math.sqrt(count))
    mean = float(samples.mean())
    z = mean / stderr if stderr > 0 else math.inf
    return {"estimate": mean, "analytic": 0.0, "stderr": stderr,
            "z": float(z), "replicas": int(count)}
