"""Explicit Euler time stepper for the regularized stochastic
cross-diffusion system in entropy variables.

Each step inverts the perturbed state map (warm started from the last
step), assembles the entropy-variable flux with face-averaged mobility,
adds the weak-divergence noise kick and the weighted drift correction,
and advances the state explicitly.  An explicit scheme is what the
stochastic integral calls for; the price is the usual parabolic step
restriction, which is checked against the initial diffusion matrix and
auto-shrunk with a warning when violated.

Everything the scheme adds to the state is an exact discrete divergence,
so the state mass per species is conserved to rounding.  The density
mass differs from the state mass by eps times the mean entropy variable;
``Trajectory.summary`` reports both drifts.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, NeumannEigenbasis, face_divergence, face_gradient, integrate
from .model import (
    Coefficients,
    Field,
    entropy_functional,
    mobility_tensor,
    quadratic_form_bound,
    u_of_w,
)
from .noise import (
    NoiseBasis,
    ito_stratonovich_correction,
    noise_divergence_term,
    sample_increment,
    sigma_delta,
    sigma_gradient,
)
from .regularization import (
    RegularizationConfig,
    SobolevOperator,
    state_to_entropy,
)

__all__ = [
    "SolverConfig",
    "SolverAbort",
    "EntropyReport",
    "Trajectory",
    "drift_term",
    "step",
    "run",
    "entropy_report",
    "entropy_budget_rate",
]


class SolverAbort(RuntimeError):
    """The trajectory left the trusted regime (overflow, NaN, blow-up)."""


@dataclass
class SolverConfig:
    """Run parameters; ``delta`` defaults to ``eps`` when omitted."""

    eps: float
    dt: float
    t_end: float
    delta: float | None = None
    lam: float = 1.0
    n_pop: int = 10_000
    modes: int | None = None
    smoothness: float = 2.5
    operator_order: int = 2
    seed: int = 0
    deterministic: bool = False
    record_every: int = 100
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    cfl_safety: float = 0.5
    blowup_threshold: float = 1e8
    allow_small_lambda: bool = False

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.dt <= 0 or self.t_end <= 0:
            raise ValueError("dt and t_end must be positive")
        if self.delta is not None and self.delta <= 0:
            raise ValueError("delta must be positive when given")
        if self.n_pop < 1:
            raise ValueError("population size must be a positive integer")
        if not self.deterministic and self.lam <= 0.5 and not self.allow_small_lambda:
            raise ValueError(
                f"correction weight {self.lam} is at or below 1/2, outside the "
                "proven regime; pass allow_small_lambda to run anyway"
            )

    @property
    def delta_eff(self) -> float:
        return self.eps if self.delta is None else self.delta


@dataclass
class EntropyReport:
    """Diagnostics at one recorded time."""

    t: float
    entropy: float
    dissipation: float
    dissipation_bound: float
    mass: np.ndarray
    state_mass: np.ndarray
    min_density: float
    max_density: float
    cum_dissipation: float
    cum_dissipation_bound: float
    cum_noise_work: float
    cum_correction_work: float
    cum_ito_term: float
    entropy_like: np.ndarray


@dataclass
class Trajectory:
    grid: Grid
    coeffs: Coefficients
    pi: np.ndarray
    config: SolverConfig
    times: np.ndarray
    state: np.ndarray
    entropy_var: np.ndarray
    density: np.ndarray
    reports: list
    dt_used: float
    initial_entropy_margin: float
    warnings_issued: list = field(default_factory=list)

    def record(self, index: int, kind: str) -> Field:
        source = {"state": self.state, "entropy": self.entropy_var, "density": self.density}
        return Field(values=source[kind][index], kind=kind).validate()

    def summary(self) -> dict:
        rep0, repT = self.reports[0], self.reports[-1]
        state0 = rep0.state_mass
        eps = self.config.eps
        mean_w0 = integrate(self.grid, self.entropy_var[0])
        mean_wT = integrate(self.grid, self.entropy_var[-1])
        identity_residual = np.abs(
            (repT.mass - rep0.mass) + eps * (mean_wT - mean_w0)
        ) / np.abs(state0)
        balance_residual = repT.entropy - rep0.entropy + repT.cum_dissipation
        return {
            "t_end": float(self.times[-1]),
            "dt": self.dt_used,
            "eps": eps,
            "delta": self.config.delta_eff,
            "lambda": self.config.lam,
            "n_pop": self.config.n_pop,
            "deterministic": self.config.deterministic,
            "entropy_initial": rep0.entropy,
            "entropy_final": repT.entropy,
            "entropy_balance_residual": float(balance_residual),
            "entropy_balance_residual_rel": float(abs(balance_residual) / rep0.entropy)
            if rep0.entropy
            else 0.0,
            "cum_dissipation": repT.cum_dissipation,
            "cum_dissipation_bound": repT.cum_dissipation_bound,
            "cum_noise_work": repT.cum_noise_work,
            "cum_correction_work": repT.cum_correction_work,
            "cum_ito_term": repT.cum_ito_term,
            "state_mass_drift_rel": float(
                np.abs((repT.state_mass - state0) / state0).max()
            ),
            "mass_identity_residual_rel": float(identity_residual.max()),
            "min_density": min(r.min_density for r in self.reports),
            "max_density": max(r.max_density for r in self.reports),
            "initial_entropy_margin": self.initial_entropy_margin,
            "warnings": list(self.warnings_issued),
        }


def _dissipation_bound(coeffs, pi, u, dwf, grid):
    """Face-side quadrature of the reversible lower bound.

    Evaluated per face side with the scheme's own effective density
    gradient z = (u / pi) dw, which keeps the bound below the assembled
    dissipation to rounding (with equality under detailed balance).
    """
    total = 0.0
    for side in (u[..., :-1], u[..., 1:]):
        z = side / pi[:, None] * dwf
        total += 0.5 * quadratic_form_bound(coeffs, pi, side, z).sum() * grid.dx
    return float(total)


def _drift_and_dissipation(coeffs, pi, u, w, grid):
    mob = mobility_tensor(coeffs, pi, u)
    mob_face = 0.5 * (mob[..., 1:] + mob[..., :-1])
    dwf = face_gradient(grid, w)
    flux = np.einsum("ijf,jf->if", mob_face, dwf)
    drift = face_divergence(grid, flux)
    diss = float(np.einsum("if,ijf,jf->", dwf, mob_face, dwf) * grid.dx)
    bound = _dissipation_bound(coeffs, pi, u, dwf, grid)
    return drift, diss, bound


def drift_term(coeffs: Coefficients, pi, w: np.ndarray, grid: Grid) -> np.ndarray:
    """Entropy-variable diffusion term div(B(w) dw) with face-averaged B."""
    pi = np.asarray(pi, dtype=float)
    w = np.asarray(w, dtype=float)
    u = u_of_w(pi, w)
    return _drift_and_dissipation(coeffs, pi, u, w, grid)[0]


def entropy_report(
    coeffs: Coefficients, pi, w: np.ndarray, u: np.ndarray, v: np.ndarray,
    grid: Grid, eps: float, op: SobolevOperator, t: float, cum: dict,
) -> EntropyReport:
    """Assemble the record-time diagnostics from the current fields."""
    _, diss, bound = _drift_and_dissipation(coeffs, pi, u, w, grid)
    entropy = entropy_functional(pi, u, grid) + 0.5 * eps * op.image_norm(w) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        xlogx = np.where(u > 0, u * np.log(np.where(u > 0, u, 1.0)), 0.0)
    like = integrate(grid, xlogx - u + 2.0)
    return EntropyReport(
        t=t,
        entropy=float(entropy),
        dissipation=diss,
        dissipation_bound=bound,
        mass=integrate(grid, u),
        state_mass=integrate(grid, v),
        min_density=float(u.min()),
        max_density=float(u.max()),
        cum_dissipation=cum["dissipation"],
        cum_dissipation_bound=cum["dissipation_bound"],
        cum_noise_work=cum["noise_work"],
        cum_correction_work=cum["correction_work"],
        cum_ito_term=cum["ito_term"],
        entropy_like=like,
    )


def _cfl_bound(coeffs, u0, grid, safety):
    """Parabolic step bound safety * dx^2 / max row sum of A(u0)."""
    ta = coeffs.base[:, None] + coeffs.interaction @ u0
    row_sum = ta + u0 * coeffs.interaction.sum(axis=1)[:, None]
    return safety * grid.dx**2 / float(row_sum.max())


def step(
    coeffs: Coefficients,
    pi,
    v: np.ndarray,
    w: np.ndarray,
    grid: Grid,
    cfg: SolverConfig,
    basis: NoiseBasis,
    op: SobolevOperator,
    rng: np.random.Generator,
    dt: float | None = None,
):
    """One explicit update of the state; returns (v_next, step diagnostics).

    ``w`` must be the entropy variable matching ``v``.  Stochastic terms
    are skipped entirely in deterministic mode, leaving the rng untouched
    there.
    """
    dt = cfg.dt if dt is None else dt
    pi = np.asarray(pi, dtype=float)
    u = u_of_w(pi, w)
    drift, diss, bound = _drift_and_dissipation(coeffs, pi, u, w, grid)
    diag = {
        "dissipation": diss,
        "dissipation_bound": bound,
        "noise_work": 0.0,
        "correction_work": 0.0,
        "ito_term": 0.0,
    }
    v_next = v + dt * drift
    if not cfg.deterministic:
        delta = cfg.delta_eff
        incr = sample_increment(rng, basis, dt, coeffs.n)
        sig = sigma_delta(coeffs, u, delta)
        kick = noise_divergence_term(grid, basis, sig, incr, cfg.n_pop)
        corr = ito_stratonovich_correction(coeffs, basis, u, delta, grid)
        corr_scale = dt * cfg.lam / cfg.n_pop
        v_next = v_next + kick + corr_scale * corr
        sig_dx = sigma_gradient(coeffs, u, delta, grid)
        # quadratic variation of the entropy under the noise
        mode_sq = (sig_dx[:, None, :] * basis.e[None] + sig[:, None, :] * basis.de[None]) ** 2
        diag["noise_work"] = float(integrate(grid, (kick * w).sum(axis=0)))
        diag["correction_work"] = float(corr_scale * integrate(grid, (corr * w).sum(axis=0)))
        diag["ito_term"] = float(
            dt / (2.0 * cfg.n_pop)
            * integrate(grid, (mode_sq.sum(axis=1) * pi[:, None] / u)).sum()
        )
    return v_next, diag


def run(
    coeffs: Coefficients,
    pi,
    u0: np.ndarray,
    grid: Grid,
    cfg: SolverConfig,
    basis: NoiseBasis | None = None,
    rng: np.random.Generator | None = None,
) -> Trajectory:
    """Integrate from the nonnegative initial density u0 up to t_end.

    The initial state is u0 itself; its entropy variable comes from one
    cold inversion, every later step warm starts from the previous one.
    Records (state, entropy variable, density, report) every
    ``record_every`` steps and always at the final time.
    """
    coeffs.require_positive_diagonals()
    pi = np.asarray(pi, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != (coeffs.n, grid.cells):
        raise ValueError(f"initial density must be (n, cells), got {u0.shape}")
    if np.any(u0 < 0) or not np.all(np.isfinite(u0)):
        raise ValueError("initial density must be finite and nonnegative")

    eig = NeumannEigenbasis(grid)
    op = SobolevOperator(eig, order=cfg.operator_order)
    if basis is None:
        n_modes = cfg.modes if cfg.modes is not None else grid.cells // 2
        basis = NoiseBasis(grid, modes=n_modes, smoothness=cfg.smoothness, eigenbasis=eig)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)

    issued = []
    dt = cfg.dt
    bound = _cfl_bound(coeffs, u0, grid, cfg.cfl_safety)
    if dt > bound:
        message = (
            f"time step {dt:.3e} exceeds the parabolic bound {bound:.3e}; "
            "shrinking to the bound"
        )
        warnings.warn(message, RuntimeWarning, stacklevel=2)
        issued.append(message)
        dt = bound
    n_steps = max(1, math.ceil(cfg.t_end / dt - 1e-9))
    last_dt = cfg.t_end - (n_steps - 1) * dt

    reg = RegularizationConfig(
        eps=cfg.eps, newton_tol=cfg.newton_tol, max_iter=cfg.newton_max_iter
    )
    v = u0.copy()
    w, _ = state_to_entropy(pi, v, reg, op)

    entropy0 = entropy_functional(pi, u_of_w(pi, w), grid) + 0.5 * cfg.eps * op.image_norm(w) ** 2
    initial_margin = entropy_functional(pi, u0, grid) - entropy0

    cum = {k: 0.0 for k in ("dissipation", "dissipation_bound", "noise_work",
                            "correction_work", "ito_term")}
    times, states, wvars, densities, reports = [], [], [], [], []

    def take_record(t):
        u = u_of_w(pi, w)
        times.append(t)
        states.append(v.copy())
        wvars.append(w.copy())
        densities.append(u)
        reports.append(
            entropy_report(coeffs, pi, w, u, v, grid, cfg.eps, op, t, dict(cum))
        )

    take_record(0.0)
    t = 0.0
    for k in range(n_steps):
        dt_k = last_dt if k == n_steps - 1 else dt
        v, diag = step(coeffs, pi, v, w, grid, cfg, basis, op, rng, dt=dt_k)
        cum["dissipation"] += dt_k * diag["dissipation"]
        cum["dissipation_bound"] += dt_k * diag["dissipation_bound"]
        cum["noise_work"] += diag["noise_work"]
        cum["correction_work"] += diag["correction_work"]
        cum["ito_term"] += diag["ito_term"]
        t += dt_k
        if not np.all(np.isfinite(v)):
            raise SolverAbort(f"state left the finite range at step {k + 1} (t={t:.6g})")
        try:
            w, _ = state_to_entropy(pi, v, reg, op, w0=w)
        except Exception as exc:
            raise SolverAbort(f"entropy inversion failed at step {k + 1} (t={t:.6g}): {exc}")
        peak = float(np.abs(u_of_w(pi, w)).max())
        if peak > cfg.blowup_threshold:
            raise SolverAbort(
                f"density reached {peak:.3e} at step {k + 1} (t={t:.6g}), "
                f"beyond the blow-up threshold {cfg.blowup_threshold:.1e}"
            )
        if (k + 1) % cfg.record_every == 0 or k == n_steps - 1:
            take_record(t)

    return Trajectory(
        grid=grid,
        coeffs=coeffs,
        pi=pi,
        config=cfg,
        times=np.asarray(times),
        state=np.asarray(states),
        entropy_var=np.asarray(wvars),
        density=np.asarray(densities),
        reports=reports,
        dt_used=dt,
        initial_entropy_margin=float(initial_margin),
        warnings_issued=issued,
    )


def entropy_budget_rate(
    basis: NoiseBasis,
    pi,
    lam: float,
    kappa: float,
    n_pop: int,
    entropy_like,
    kappa3: float = 0.5,
) -> float:
    """Admissible growth rate of the expected entropy under the noise.

    Assembled from the cached basis norms: the sup-norm sum of the mode
    derivatives multiplies the measured integral of (u log u - u + 2),
    and the mode derivatives' squared L2 mass enters with the interpolation
    weights.  Valid once the smallness inequalities hold for ``n_pop``.
    """
    pi = np.asarray(pi, dtype=float)
    entropy_like = np.asarray(entropy_like, dtype=float)
    sup_term = basis.sum_dsq_inf + basis.tail_dsq_inf
    c_grad = ((32.0 * lam + 1.0) / (2.0 * kappa) + 0.5) * sup_term
    c_flat = (lam / (2.0 * kappa) + 1.0 / (2.0 * kappa3)) * basis.sum_dsq_l2
    return float((pi * (c_grad * entropy_like + c_flat)).sum() / n_pop)
