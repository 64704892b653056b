"""Cross-diffusion model algebra: coefficients, entropy structure, mobility.

Coefficient convention: ``a`` has shape (n, n+1).  Column 0 holds the
plain diffusion constants of each species, columns 1..n the self- and
cross-interaction strengths.  All entries are nonnegative.

The entropy structure requires reversibility weights ``pi`` with
``pi_i * a_ij == pi_j * a_ji``; they exist iff the interaction graph has
consistent cycle products, and :func:`solve_balance_weights` computes
them (normalized so the smallest weight is 1) or reports why none exist.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, integrate

__all__ = [
    "Coefficients",
    "BalanceWeights",
    "Field",
    "DetailedBalanceError",
    "AssumptionCheck",
    "AssumptionReport",
    "tilde_a",
    "diffusion_matrix",
    "diffusion_tensor",
    "entropy_density",
    "entropy_functional",
    "w_of_u",
    "u_of_w",
    "mobility",
    "mobility_tensor",
    "solve_balance_weights",
    "check_noise_smallness",
]


class DetailedBalanceError(ValueError):
    """No reversibility weights exist for the given interaction matrix."""


@dataclass(frozen=True, eq=False)
class Coefficients:
    """Nonnegative diffusion/interaction table, shape (n, n+1)."""

    a: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        if a.ndim != 2 or a.shape[1] != a.shape[0] + 1:
            raise ValueError(f"coefficient table must be (n, n+1), got {a.shape}")
        if not np.all(np.isfinite(a)) or np.any(a < 0):
            raise ValueError("coefficients must be finite and nonnegative")
        object.__setattr__(self, "a", a)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def base(self) -> np.ndarray:
        """Plain diffusion constants (column 0)."""
        return self.a[:, 0]

    @property
    def interaction(self) -> np.ndarray:
        """Self/cross interaction block (n, n)."""
        return self.a[:, 1:]

    @property
    def self_interaction(self) -> np.ndarray:
        return np.diag(self.interaction)

    def require_positive_diagonals(self):
        """The solver's well-posedness needs a_i0 > 0 and a_ii > 0."""
        if np.any(self.base <= 0) or np.any(self.self_interaction <= 0):
            raise ValueError(
                "plain diffusion and self-interaction coefficients must be "
                "strictly positive for the field solver"
            )


@dataclass(frozen=True, eq=False)
class BalanceWeights:
    """Reversibility weights plus the worst relative balance residual."""

    pi: np.ndarray
    residual: float


@dataclass(eq=False)
class Field:
    """Species-by-cells state snapshot with a semantic tag."""

    values: np.ndarray
    kind: str

    KINDS = ("density", "entropy", "state")

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError(f"field values must be (species, cells), got {self.values.shape}")
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}")

    def validate(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"{self.kind} field contains non-finite entries")
        if self.kind == "density" and np.any(self.values <= 0):
            raise ValueError("density field must be entrywise positive")
        return self


def _pi_column(pi, like: np.ndarray) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    return pi.reshape(pi.shape + (1,) * (like.ndim - 1))


def tilde_a(coeffs: Coefficients, u: np.ndarray) -> np.ndarray:
    """Effective diffusivity a_i0 + sum_k a_ik u_k, per species."""
    u = np.asarray(u, dtype=float)
    return coeffs.base.reshape((-1,) + (1,) * (u.ndim - 1)) + np.tensordot(
        coeffs.interaction, u, axes=(1, 0)
    )


def diffusion_matrix(coeffs: Coefficients, u: np.ndarray) -> np.ndarray:
    """Nonsymmetric diffusion matrix A_ij = delta_ij tilde_a_i + a_ij u_i at a point."""
    u = np.asarray(u, dtype=float)
    if u.ndim != 1:
        raise ValueError("diffusion_matrix expects a single composition vector")
    return np.diag(tilde_a(coeffs, u)) + coeffs.interaction * u[:, None]


def diffusion_tensor(coeffs: Coefficients, u: np.ndarray) -> np.ndarray:
    """Vectorized diffusion matrix over cells, shape (n, n, cells)."""
    u = np.asarray(u, dtype=float)
    out = coeffs.interaction[:, :, None] * u[:, None, :]
    ta = tilde_a(coeffs, u)
    idx = np.arange(coeffs.n)
    out[idx, idx, :] += ta
    return out


def entropy_density(pi, u):
    """Boltzmann-type entropy sum_i pi_i (u_i (log u_i - 1) + 1).

    Accepts a composition vector or a (species, cells) field; the species
    axis is contracted.  The integrand extends continuously by pi_i at
    u_i = 0.  Negative entries are rejected.
    """
    u = np.asarray(u, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if np.any(u < 0):
        raise ValueError("entropy density needs nonnegative densities")
    safe = np.where(u > 0, u, 1.0)
    term = np.where(u > 0, u * (np.log(safe) - 1.0) + 1.0, 1.0)
    out = np.tensordot(pi, term, axes=(0, 0))
    return float(out) if np.ndim(out) == 0 else out


def entropy_functional(pi, u: np.ndarray, grid: Grid) -> float:
    """Midpoint quadrature of the entropy density over the domain."""
    return float(integrate(grid, entropy_density(pi, u)))


def w_of_u(pi, u: np.ndarray) -> np.ndarray:
    """Entropy variables w_i = pi_i log u_i (positive densities only)."""
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        raise ValueError("entropy variables need strictly positive densities")
    return _pi_column(pi, u) * np.log(u)


def u_of_w(pi, w: np.ndarray) -> np.ndarray:
    """Densities u_i = exp(w_i / pi_i); always entrywise positive."""
    w = np.asarray(w, dtype=float)
    return np.exp(w / _pi_column(pi, w))


def mobility(coeffs: Coefficients, pi, u: np.ndarray) -> np.ndarray:
    """Onsager mobility B_ij = A_ij u_j / pi_j at a composition point.

    Symmetric positive semidefinite whenever pi solves the balance
    relations; this is the matrix the entropy-variable flux uses.
    """
    u = np.asarray(u, dtype=float)
    pi = np.asarray(pi, dtype=float)
    return diffusion_matrix(coeffs, u) * (u / pi)[None, :]


def mobility_tensor(coeffs: Coefficients, pi, u: np.ndarray) -> np.ndarray:
    """Vectorized mobility over cells, shape (n, n, cells)."""
    pi = np.asarray(pi, dtype=float)
    return diffusion_tensor(coeffs, u) * (np.asarray(u) / pi[:, None])[None, :, :]


def quadratic_form_bound(coeffs: Coefficients, pi, u: np.ndarray, z: np.ndarray):
    """Reversible lower bound for z . h''(u) A(u) z at a composition point.

    Returns sum_i pi_i (a_i0 z_i^2 / u_i + 2 a_ii z_i^2) plus the
    nonnegative cross terms; under detailed balance the full expression
    equals the quadratic form itself.  Vectorized over trailing axes.
    """
    u = np.asarray(u, dtype=float)
    z = np.asarray(z, dtype=float)
    pi = np.asarray(pi, dtype=float)
    picol = _pi_column(pi, u)
    base = coeffs.base.reshape(picol.shape[:1] + (1,) * (u.ndim - 1))
    diag = np.diag(coeffs.interaction).reshape(base.shape)
    total = (picol * (base * z**2 / u + 2.0 * diag * z**2)).sum(axis=0)
    inter = coeffs.interaction
    for i in range(coeffs.n):
        for j in range(i + 1, coeffs.n):
            c = pi[i] * inter[i, j]
            if c == 0 and pi[j] * inter[j, i] == 0:
                continue
            ratio = np.sqrt(u[j] / u[i])
            total = total + c * (ratio * z[i] + z[j] / ratio) ** 2
    return total


def solve_balance_weights(coeffs: Coefficients, tol: float = 1e-12) -> BalanceWeights:
    """Find pi > 0 with pi_i a_ij = pi_j a_ji, or raise DetailedBalanceError.

    Spanning-tree propagation per connected component of the interaction
    graph, then every off-tree edge is checked against ``tol`` (relative).
    Each component is normalized so its smallest weight is 1, which makes
    the result unique and independent of species ordering.
    """
    a = coeffs.interaction
    n = coeffs.n
    for i in range(n):
        for j in range(i + 1, n):
            if (a[i, j] > 0) != (a[j, i] > 0):
                raise DetailedBalanceError(
                    f"one-sided interaction between species {i} and {j}: "
                    f"a[{i},{j}]={a[i, j]}, a[{j},{i}]={a[j, i]}"
                )
    pi = np.full(n, np.nan)
    for root in range(n):
        if not np.isnan(pi[root]):
            continue
        component = [root]
        pi[root] = 1.0
        queue = [root]
        while queue:
            i = queue.pop()
            for j in range(n):
                if i != j and a[i, j] > 0 and np.isnan(pi[j]):
                    pi[j] = pi[i] * a[i, j] / a[j, i]
                    component.append(j)
                    queue.append(j)
        members = np.array(component)
        pi[members] /= pi[members].min()
    residual = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            if a[i, j] > 0:
                lhs = pi[i] * a[i, j]
                rhs = pi[j] * a[j, i]
                residual = max(residual, abs(lhs - rhs) / max(lhs, rhs))
    if residual > tol:
        raise DetailedBalanceError(
            f"interaction cycles are inconsistent: relative residual {residual:.3e} "
            f"exceeds {tol:.1e}"
        )
    return BalanceWeights(pi=pi, residual=residual)


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    lhs: float
    rhs: float

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return self.lhs < self.rhs


@dataclass(frozen=True)
class AssumptionReport:
    """Outcome of the three noise-smallness inequalities for a population size."""

    n_pop: int
    p: float
    kappa: float
    lam: float
    checks: tuple
    minimal_n: int | None
    tail_bounds: tuple = field(default=(0.0, 0.0))

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _smallness_sides(coeffs, pi, basis, lam, p, kappa):
    """Left-side prefactors (before the 1/N powers) and right sides."""
    n = coeffs.n
    pi = np.asarray(pi, dtype=float)
    s_e = basis.sum_sq_inf + basis.tail_sq_inf
    s_de = basis.sum_dsq_inf + basis.tail_dsq_inf
    holder = 3.0 ** ((p - 1.0) / p)
    a_self_max = float(coeffs.self_interaction.max())
    c1 = holder * (p / (p - 1.0)) * math.sqrt(2.0) * math.sqrt(s_e)
    c2 = holder * (
        (n / 2.0) * (18.0 * abs(lam - 1.0) / kappa + 0.5 + 0.5 * lam * a_self_max) * s_e
        + 0.5 * lam * a_self_max * s_de
    )
    c3 = holder * (lam / 3.0 + n / 4.0) * s_e
    r2 = 4.0 * float((pi * coeffs.base).min())
    r3 = 2.0 * float((pi * coeffs.self_interaction).min())
    return (c1, c2, c3), (1.0, r2, r3)


def check_noise_smallness(
    coeffs: Coefficients,
    pi,
    basis,
    lam: float,
    n_pop: int,
    p: float = 3.0,
    kappa: float = 0.5,
    allow_small_lambda: bool = False,
) -> AssumptionReport:
    """Evaluate the three 1/N smallness inequalities the entropy estimate needs.

    The first scales like N^{-1/2}, the other two like N^{-1}.  Basis sup
    norms come from the tabulated modes; the contribution of the omitted
    tail modes is covered by the stored analytic bounds.  The report also
    carries the smallest integer population size making all three hold
    (None if the right sides vanish).
    """
    if p <= 2.0:
        raise ValueError(f"exponent p must exceed 2, got {p}")
    if not 0.0 < kappa <= 0.5:
        raise ValueError(f"kappa must lie in (0, 1/2], got {kappa}")
    if lam <= 0.5 and not allow_small_lambda:
        raise ValueError(
            f"correction weight {lam} is at or below 1/2; the entropy estimate "
            "is only proven above it (pass allow_small_lambda to probe anyway)"
        )
    if n_pop < 1:
        raise ValueError("population size must be a positive integer")
    (c1, c2, c3), (r1, r2, r3) = _smallness_sides(coeffs, pi, basis, lam, p, kappa)
    checks = (
        AssumptionCheck("noise-magnitude", c1 / math.sqrt(n_pop), r1),
        AssumptionCheck("gradient-absorption", c2 / n_pop, r2),
        AssumptionCheck("self-diffusion-absorption", c3 / n_pop, r3),
    )
    minimal = None
    if r2 > 0 and r3 > 0:
        candidate = max(
            1,
            math.floor(c1**2 / r1**2) + 1,
            math.floor(c2 / r2) + 1,
            math.floor(c3 / r3) + 1,
        )
        # float-edge guard: bump while any inequality is still non-strict
        while not (
            c1 / math.sqrt(candidate) < r1
            and c2 / candidate < r2
            and c3 / candidate < r3
        ):
            candidate += 1
        minimal = candidate
    return AssumptionReport(
        n_pop=int(n_pop),
        p=p,
        kappa=kappa,
        lam=lam,
        checks=checks,
        minimal_n=minimal,
        tail_bounds=(basis.tail_sq_inf, basis.tail_dsq_inf),
    )
