"""Entropy-variable regularization layer.

The perturbed state map ``v = u(w) + eps * L*L w`` (with L the spectral
order-m Sobolev operator on the zero-flux cosine basis) is strongly
monotone, so it has a Lipschitz inverse.  ``state_to_entropy`` computes
that inverse with a damped Newton iteration: the residual is measured in
the dual-weighted spectral norm, the linearized systems are solved by
preconditioned conjugate gradients in spectral coordinates, and the step
is halved until the residual decreases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import NeumannEigenbasis
from .model import w_of_u

__all__ = [
    "SobolevOperator",
    "RegularizationConfig",
    "NewtonInfo",
    "NewtonError",
    "entropy_to_state",
    "state_to_entropy",
]


class NewtonError(RuntimeError):
    """Inversion failed; carries the residual history for diagnosis."""

    def __init__(self, message, history):
        super().__init__(f"{message}; residual history {list(history)}")
        self.history = list(history)


class SobolevOperator:
    """Spectral multiplier operator with symbol (1 + eigenvalue)^{m/2}.

    Self-adjoint and bounded below by 1 on the cosine basis, so applying
    it realizes the order-m Sobolev norm of a zero-flux field as a plain
    L2 norm, and its inverse realizes the dual norm.  The order must
    exceed d/2 + 1 = 1.5, hence the default 2.
    """

    def __init__(self, eigenbasis: NeumannEigenbasis, order: int = 2):
        if order < 2:
            raise ValueError(f"operator order must be at least 2, got {order}")
        self.eigenbasis = eigenbasis
        self.order = int(order)
        self.multipliers = (1.0 + eigenbasis.eigenvalues) ** (order / 2.0)

    def apply(self, f: np.ndarray) -> np.ndarray:
        eig = self.eigenbasis
        return eig.from_spectral(eig.to_spectral(f) * self.multipliers)

    def apply_squared(self, f: np.ndarray) -> np.ndarray:
        """One application of L*L (multiplier squared)."""
        eig = self.eigenbasis
        return eig.from_spectral(eig.to_spectral(f) * self.multipliers**2)

    def image_norm(self, f: np.ndarray) -> float:
        """||L f||_{L2}, i.e. the order-m Sobolev norm of f."""
        c = self.eigenbasis.to_spectral(f) * self.multipliers
        return float(np.sqrt((c**2).sum()))

    def dual_norm(self, f: np.ndarray) -> float:
        """Norm of f in the dual of the operator domain (weights 1/mu_k)."""
        c = self.eigenbasis.to_spectral(f) / self.multipliers
        return float(np.sqrt((c**2).sum()))


@dataclass(frozen=True)
class RegularizationConfig:
    """Inversion knobs; defaults match the verification suite."""

    eps: float
    newton_tol: float = 1e-10
    max_iter: int = 50
    max_backtracks: int = 20
    positivity_floor: float = 1e-12
    exp_cap: float = 700.0
    cg_rtol: float = 1e-11
    cg_max_iter: int = 500

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError(f"regularization strength must be positive, got {self.eps}")


@dataclass
class NewtonInfo:
    iterations: int
    residual: float
    history: list = field(default_factory=list)
    capped: bool = False


def _capped_density(pi_col, w, cap):
    args = w / pi_col
    hit = bool((args > cap).any())
    return np.exp(np.minimum(args, cap)), hit


def entropy_to_state(pi, w: np.ndarray, eps: float, op: SobolevOperator) -> np.ndarray:
    """Forward map u(w) + eps L*L w (eps = 0 gives the bare density map)."""
    w = np.asarray(w, dtype=float)
    pi = np.asarray(pi, dtype=float)
    out = np.exp(w / pi[:, None])
    if eps:
        out = out + eps * op.apply_squared(w)
    return out


def _cg_spectral(diag, eps, op, rhs, rtol, max_iter):
    """Solve (diag + eps L*L) x = rhs by PCG in spectral coordinates.

    ``diag`` is the positive pointwise Jacobian of the density map; the
    preconditioner inverts its species mean plus the spectral part, which
    is exact in the flat-density limit.  Batched over species with
    per-species step lengths.
    """
    eig = op.eigenbasis
    mult2 = eps * op.multipliers**2
    b = eig.to_spectral(rhs)

    def operate(xhat):
        return eig.to_spectral(diag * eig.from_spectral(xhat)) + mult2 * xhat

    precond = 1.0 / (diag.mean(axis=1, keepdims=True) + mult2)
    x = np.zeros_like(b)
    r = b.copy()
    z = precond * r
    p = z.copy()
    rz = (r * z).sum(axis=1, keepdims=True)
    bnorm = np.sqrt((b * b).sum(axis=1, keepdims=True))
    target = rtol * np.maximum(bnorm, 1e-300)
    for _ in range(max_iter):
        if np.all(np.sqrt((r * r).sum(axis=1, keepdims=True)) <= target):
            break
        ap = operate(p)
        denom = (p * ap).sum(axis=1, keepdims=True)
        alpha = np.where(denom > 0, rz / np.where(denom > 0, denom, 1.0), 0.0)
        x += alpha * p
        r -= alpha * ap
        z = precond * r
        rz_new = (r * z).sum(axis=1, keepdims=True)
        beta = rz_new / np.where(rz > 0, rz, 1.0)
        p = z + beta * p
        rz = rz_new
    return eig.from_spectral(x)


def state_to_entropy(
    pi,
    v: np.ndarray,
    cfg: RegularizationConfig,
    op: SobolevOperator,
    w0: np.ndarray | None = None,
):
    """Invert the perturbed state map: find w with u(w) + eps L*L w = v.

    Newton with backtracking on the dual-weighted residual norm.  The
    residual tolerance, iteration cap, and damping depth come from the
    config; the initial guess floors the state at a small positive value
    before taking entropy variables unless a warm start is supplied.
    Raises :class:`NewtonError` when the iteration stalls or the budget
    is exhausted.

    Returns ``(w, info)``.
    """
    v = np.asarray(v, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if v.ndim != 2 or v.shape[0] != pi.shape[0]:
        raise ValueError(f"state must be (species, cells) matching pi, got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("state contains non-finite entries")
    pi_col = pi[:, None]
    if w0 is None:
        w = pi_col * np.log(np.maximum(v, cfg.positivity_floor))
    else:
        w = np.array(w0, dtype=float, copy=True)

    capped = False

    def residual(w_try):
        nonlocal capped
        dens, hit = _capped_density(pi_col, w_try, cfg.exp_cap)
        capped = capped or hit
        return dens + cfg.eps * op.apply_squared(w_try) - v, dens

    r, dens = residual(w)
    rnorm = op.dual_norm(r)
    history = [rnorm]
    for iteration in range(cfg.max_iter):
        if rnorm <= cfg.newton_tol:
            return w, NewtonInfo(iteration, rnorm, history, capped)
        step = _cg_spectral(
            dens / pi_col, cfg.eps, op, -r, cfg.cg_rtol, cfg.cg_max_iter
        )
        scale = 1.0
        for _ in range(cfg.max_backtracks):
            r_try, dens_try = residual(w + scale * step)
            rnorm_try = op.dual_norm(r_try)
            if np.isfinite(rnorm_try) and rnorm_try < rnorm * (1.0 - 1e-4 * scale):
                break
            scale *= 0.5
        else:
            raise NewtonError(
                f"line search stalled at iteration {iteration}", history
            )
        w = w + scale * step
        r, dens = r_try, dens_try
        rnorm = rnorm_try
        history.append(rnorm)
    if rnorm <= cfg.newton_tol:
        return w, NewtonInfo(cfg.max_iter, rnorm, history, capped)
    raise NewtonError(
        f"no convergence within {cfg.max_iter} iterations "
        f"(residual {rnorm:.3e} vs tol {cfg.newton_tol:.1e})",
        history,
    )
