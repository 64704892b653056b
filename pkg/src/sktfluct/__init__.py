"""Simulation and verification toolkit for a fluctuating cross-diffusion
population model: an entropy-regularized field solver, the underlying
interacting particle system, and executable checks of the structural
identities connecting them."""

from .grid import Grid, NeumannEigenbasis, divergence, face_divergence, face_gradient, gradient, integrate
from .model import (
    AssumptionCheck,
    AssumptionReport,
    BalanceWeights,
    Coefficients,
    DetailedBalanceError,
    Field,
    check_noise_smallness,
    diffusion_matrix,
    diffusion_tensor,
    entropy_density,
    entropy_functional,
    mobility,
    mobility_tensor,
    quadratic_form_bound,
    solve_balance_weights,
    tilde_a,
    u_of_w,
    w_of_u,
)
from .noise import (
    NoiseBasis,
    WienerIncrement,
    g_delta,
    g_delta_prime,
    ito_stratonovich_correction,
    noise_divergence_term,
    sample_increment,
    sigma_delta,
    sigma_delta_du,
    sigma_gradient,
)
from .particles import (
    MartingaleTracker,
    MollifiedKernel,
    ParticleAbort,
    ParticleEnsemble,
    StepRecord,
    analytic_covariance,
    covariance_from_trajectory,
    diffusion_coefficients,
    eta_from_N,
    local_density,
    particle_step,
    run_particles,
    window_bump,
)
from .regularization import (
    NewtonError,
    NewtonInfo,
    RegularizationConfig,
    SobolevOperator,
    entropy_to_state,
    state_to_entropy,
)
from .solver import (
    EntropyReport,
    SolverAbort,
    SolverConfig,
    Trajectory,
    drift_term,
    entropy_budget_rate,
    run,
    step,
)

__version__ = "0.1.0"
