"""Smoothed multiplicative noise: square-root regularizer, mode basis,
divergence-form increments, and the weighted drift correction.

The noise amplitude per species is sigma_ii(u) = g_delta(u_i * ta_i(u))
with ta the effective diffusivity.  g_delta is a C^1 surrogate for the
square root: linear below delta/2, a cubic Hermite patch up to delta,
exact square root beyond, and zero on negatives.  Passing
``delta=None`` selects the bare square root (used for limit checks;
derivatives are then singular at zero and guarded).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid, NeumannEigenbasis, divergence, gradient, integrate
from .model import Coefficients, tilde_a

__all__ = [
    "NoiseBasis",
    "WienerIncrement",
    "g_delta",
    "g_delta_prime",
    "sigma_delta",
    "sigma_delta_du",
    "sigma_gradient",
    "sample_increment",
    "noise_divergence_term",
    "ito_stratonovich_correction",
]


def _as_array(x):
    arr = np.asarray(x, dtype=float)
    return arr, arr.ndim == 0


def g_delta(x, delta):
    """C^1 square-root surrogate; exact sqrt for x >= delta, 0 for x < 0."""
    x, scalar = _as_array(x)
    if delta is None:
        out = np.sqrt(np.maximum(x, 0.0))
        return float(out) if scalar else out
    if delta <= 0:
        raise ValueError(f"regularization width must be positive, got {delta}")
    rt = np.sqrt(delta)
    # Hermite-basis evaluation: the factored basis polynomials are exactly
    # 0/1 at the knots, so the cubic returns the neighboring branches'
    # endpoint expressions bit for bit and the C^1 match is rounding-free
    h = 0.5 * delta
    t = (x - h) / h
    omt = 1.0 - t
    cubic = (
        (h / rt) * (1.0 + 2.0 * t) * omt * omt
        + (h / rt) * t * omt * omt
        + rt * t * t * (3.0 - 2.0 * t)
        + (h * (0.5 / rt)) * t * t * (t - 1.0)
    )
    out = np.select(
        [x < 0.0, x <= h, x < delta],
        [0.0, x / rt, cubic],
        default=np.sqrt(np.abs(x)),
    )
    return float(out) if scalar else out


def g_delta_prime(x, delta):
    """Derivative of :func:`g_delta`, branchwise."""
    x, scalar = _as_array(x)
    if delta is None:
        with np.errstate(divide="ignore"):
            out = np.where(x > 0.0, 0.5 / np.sqrt(np.where(x > 0.0, x, 1.0)), 0.0)
        return float(out) if scalar else out
    if delta <= 0:
        raise ValueError(f"regularization width must be positive, got {delta}")
    rt = np.sqrt(delta)
    # same Hermite form as g_delta: the slope basis is exactly 0/1 at the
    # knots, so the one-sided derivatives coincide with the neighboring
    # branches' expressions without rounding
    h = 0.5 * delta
    t = (x - h) / h
    dcubic = (
        (1.0 / rt) * (3.0 * t - 1.0) * (t - 1.0)
        + (0.5 / rt) * t * (3.0 * t - 2.0)
        + ((h / rt) * 6.0 * t * (t - 1.0) + rt * 6.0 * t * (1.0 - t)) / h
    )
    out = np.select(
        [x < 0.0, x <= h, x < delta],
        [0.0, 1.0 / rt, dcubic],
        default=0.5 / np.sqrt(np.abs(np.where(x == 0.0, 1.0, x))),
    )
    return float(out) if scalar else out


class NoiseBasis:
    """Truncated smooth mode family e_k = phi_k (1 + lambda_k)^{-s/2}.

    phi_k are the zero-flux cosine eigenmodes, so the family is
    orthonormal in the spectral realization of the order-s Sobolev inner
    product.  Tables hold values and exact derivatives at cell centers;
    the sup-norm sums that the smallness checks need are cached together
    with analytic bounds on the omitted modes (the smoothness weight
    makes the tails summable as long as s exceeds d + 1 = 2).
    """

    def __init__(
        self,
        grid: Grid,
        modes: int,
        smoothness: float = 2.5,
        eigenbasis: NeumannEigenbasis | None = None,
    ):
        if smoothness <= 2.0:
            raise ValueError(
                f"mode smoothness must exceed 2 in one dimension, got {smoothness}"
            )
        if not 1 <= modes <= grid.cells:
            raise ValueError(f"mode count must lie in [1, {grid.cells}], got {modes}")
        self.grid = grid
        self.modes = int(modes)
        self.smoothness = float(smoothness)
        eig = eigenbasis if eigenbasis is not None else NeumannEigenbasis(grid)
        self.eigenbasis = eig
        weight = (1.0 + eig.eigenvalues[:modes]) ** (-smoothness / 2.0)
        self.e = eig.modes[:modes] * weight[:, None]
        self.de = eig.dmodes[:modes] * weight[:, None]
        # per-cell mode sums used by the drift correction
        self.sq_sum = (self.e**2).sum(axis=0)
        self.prod_sum = (self.e * self.de).sum(axis=0)
        # sup-norm sums for the smallness inequalities (tabulated part)
        self.sum_sq_inf = float((np.abs(self.e).max(axis=1) ** 2).sum())
        self.sum_dsq_inf = float((np.abs(self.de).max(axis=1) ** 2).sum())
        self.sum_dsq_l2 = float(integrate(grid, self.de**2).sum())
        s, length = self.smoothness, grid.length
        kmin = modes * np.pi / length  # smallest omitted wavenumber
        # sum_{k >= K} f(k) <= f(K) + integral_K^inf f for decreasing f,
        # with f the sup-norm envelope (2/L)(k pi/L)^(-2s) or its
        # derivative analogue carrying two extra wavenumber powers
        self.tail_sq_inf = (2.0 / length) * (
            kmin ** (-2.0 * s)
            + (length / np.pi) * kmin ** (1.0 - 2.0 * s) / (2.0 * s - 1.0)
        )
        self.tail_dsq_inf = (2.0 / length) * (
            kmin ** (2.0 - 2.0 * s)
            + (length / np.pi) * kmin ** (3.0 - 2.0 * s) / (2.0 * s - 3.0)
        )


@dataclass(frozen=True, eq=False)
class WienerIncrement:
    """One time slice of mode increments, shape (species, modes)."""

    values: np.ndarray
    dt: float

    def __post_init__(self):
        if self.dt < 0:
            raise ValueError("time increment must be nonnegative")


def sample_increment(
    rng: np.random.Generator, basis: NoiseBasis, dt: float, species: int
) -> WienerIncrement:
    """Draw independent N(0, dt) mode increments for each species."""
    if dt < 0:
        raise ValueError("time increment must be nonnegative")
    values = rng.normal(0.0, np.sqrt(dt), size=(species, basis.modes))
    return WienerIncrement(values=values, dt=float(dt))


def sigma_delta(coeffs: Coefficients, u: np.ndarray, delta) -> np.ndarray:
    """Diagonal noise amplitude g_delta(u_i * ta_i(u)) per species."""
    u = np.asarray(u, dtype=float)
    return g_delta(u * tilde_a(coeffs, u), delta)


def sigma_delta_du(coeffs: Coefficients, u: np.ndarray, delta) -> np.ndarray:
    """Own-species derivative of the amplitude.

    Chain rule through the argument u_i * ta_i(u): the inner factor is
    ta_i + a_ii u_i.
    """
    u = np.asarray(u, dtype=float)
    ta = tilde_a(coeffs, u)
    self_term = coeffs.self_interaction.reshape((-1,) + (1,) * (u.ndim - 1))
    return g_delta_prime(u * ta, delta) * (ta + self_term * u)


def sigma_gradient(coeffs: Coefficients, u: np.ndarray, delta, grid: Grid) -> np.ndarray:
    """Spatial derivative of the amplitude via the chain rule.

    Uses g'_delta(u ta) * (ta du + u dta) with the collocated discrete
    gradient for du, so it stays consistent with the tabulated mode
    derivatives to second order.
    """
    u = np.asarray(u, dtype=float)
    ta = tilde_a(coeffs, u)
    du = gradient(grid, u)
    dta = np.tensordot(coeffs.interaction, du, axes=(1, 0))
    return g_delta_prime(u * ta, delta) * (ta * du + u * dta)


def noise_divergence_term(
    grid: Grid,
    basis: NoiseBasis,
    sigma: np.ndarray,
    increment: WienerIncrement,
    n_pop: int,
) -> np.ndarray:
    """Weak-divergence noise kick (1/sqrt(N)) d/dx(sigma_ii e_k) dW_k^i.

    The mode sum collapses first (the divergence is linear), and the
    weak divergence guarantees the spatial integral of the output is
    zero to rounding, so the noise never creates or destroys mass.
    """
    sigma = np.asarray(sigma, dtype=float)
    if increment.values.shape[1] != basis.modes:
        raise ValueError(
            f"increment carries {increment.values.shape[1]} modes, basis has {basis.modes}"
        )
    if increment.values.shape[0] != sigma.shape[0]:
        raise ValueError("increment and amplitude disagree on species count")
    if n_pop < 1:
        raise ValueError("population size must be a positive integer")
    mixed = increment.values @ basis.e  # (species, cells)
    return divergence(grid, sigma * mixed) / np.sqrt(float(n_pop))


def ito_stratonovich_correction(
    coeffs: Coefficients,
    basis: NoiseBasis,
    u: np.ndarray,
    delta,
    grid: Grid,
) -> np.ndarray:
    """Drift correction sum_k d/dx(ds/du e_k^2 ds/dx + ds/du e_k e_k' s).

    ``delta=None`` evaluates the same expression with the bare square
    root (meaningful only away from vanishing densities).  The outer
    derivative is the weak divergence, so the correction integrates to
    zero exactly and preserves mass pathwise.
    """
    u = np.asarray(u, dtype=float)
    sig = sigma_delta(coeffs, u, delta)
    dsig_du = sigma_delta_du(coeffs, u, delta)
    dsig_dx = sigma_gradient(coeffs, u, delta, grid)
    integrand = dsig_du * (basis.sq_sum * dsig_dx + basis.prod_sum * sig)
    return divergence(grid, integrand)
