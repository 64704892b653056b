"""Command line surface: reproducible experiments from one config file.

Subcommands:
  simulate-spde      integrate the field model, write series/snapshots CSV
  simulate-particles run particle replicas, write martingale traces
  verify-entropy     deterministic run; fail if the entropy balance drifts
  verify-covariance  particle replicas vs the limiting covariance
  check-assumptions  balance weights and noise-smallness margins

Exit codes: 0 pass, 1 usage or config error, 2 a numerical check failed,
3 the computation aborted (blow-up, NaN).  Flags only override paths and
seeds; every numeric choice lives in the config file.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import (
    ConfigError,
    RunConfig,
    build_coefficients,
    build_ensemble,
    build_grid,
    build_initial_density,
    build_solver_config,
    build_weights,
    load_config,
    resolved_dict,
)
from .grid import NeumannEigenbasis
from .model import DetailedBalanceError, check_noise_smallness, solve_balance_weights
from .noise import NoiseBasis
from .particles import (
    MartingaleTracker,
    ParticleAbort,
    analytic_covariance,
    covariance_from_trajectory,
    heat_gaussian_density,
    particle_step,
    replica_cross_report,
    replica_mean_report,
    replica_variance_report,
    window_bump,
)
from .reporting import (
    write_json_summary,
    write_martingale_csv,
    write_series_csv,
    write_snapshots_csv,
)
from .solver import SolverAbort, run

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CHECK = 2
EXIT_ABORT = 3

OUTPUT_ROOT_ENV = "SKTFLUCT_OUTPUT_ROOT"

__all__ = ["main", "entrypoint"]


def _output_dir(cfg: RunConfig, override) -> Path:
    if override:
        path = Path(override)
    else:
        root = os.environ.get(OUTPUT_ROOT_ENV, ".")
        path = Path(root) / cfg.output_dir
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = int(args.seed)
    return cfg


def _say(args, message: str):
    if not getattr(args, "quiet", False):
        print(message)


# ---------------------------------------------------------------- spde


def _spde_replica(payload):
    """Worker: one field replica from a plain config dict (picklable)."""
    data, replica, outdir = payload
    cfg = RunConfig.from_dict(data)
    coeffs = build_coefficients(cfg)
    pi = build_weights(cfg, coeffs)
    grid = build_grid(cfg)
    u0 = build_initial_density(cfg, grid, coeffs.n)
    seed = cfg.seed + replica
    scfg = build_solver_config(cfg, seed=seed)
    traj = run(coeffs, pi, u0, grid, scfg)
    outdir = Path(outdir)
    config_dict = resolved_dict(cfg)
    write_series_csv(outdir / f"series_{replica:03d}.csv", traj, seed, config_dict)
    if replica == 0:
        write_snapshots_csv(outdir / "snapshots.csv", traj, seed, config_dict)
    return replica, traj.summary()


def _run_spde_replicas(cfg: RunConfig, outdir: Path):
    payloads = [(resolved_dict(cfg), r, str(outdir)) for r in range(cfg.replicas)]
    if cfg.parallelism > 1 and cfg.replicas > 1:
        with ProcessPoolExecutor(max_workers=int(cfg.parallelism)) as pool:
            results = list(pool.map(_spde_replica, payloads))
    else:
        results = [_spde_replica(p) for p in payloads]
    return dict(results)


def cmd_simulate_spde(args) -> int:
    cfg = _load(args)
    outdir = _output_dir(cfg, args.output)
    summaries = _run_spde_replicas(cfg, outdir)
    payload = {
        "replicas": cfg.replicas,
        "runs": {str(k): v for k, v in sorted(summaries.items())},
    }
    write_json_summary(outdir / "summary.json", "spde", cfg.seed, resolved_dict(cfg), payload)
    for replica in sorted(summaries):
        s = summaries[replica]
        _say(args, f"replica {replica}: H {s['entropy_initial']:.6g} -> "
                   f"{s['entropy_final']:.6g}, state mass drift "
                   f"{s['state_mass_drift_rel']:.2e}")
    _say(args, f"wrote {outdir}/summary.json")
    return EXIT_OK


def cmd_verify_entropy(args) -> int:
    cfg = _load(args)
    cfg.solver.deterministic = True
    cfg.replicas = 1
    outdir = _output_dir(cfg, args.output)
    coeffs = build_coefficients(cfg)
    pi = build_weights(cfg, coeffs)
    grid = build_grid(cfg)
    u0 = build_initial_density(cfg, grid, coeffs.n)
    scfg = build_solver_config(cfg)
    traj = run(coeffs, pi, u0, grid, scfg)
    summary = traj.summary()
    config_dict = resolved_dict(cfg)
    write_series_csv(outdir / "series_000.csv", traj, cfg.seed, config_dict)
    write_snapshots_csv(outdir / "snapshots.csv", traj, cfg.seed, config_dict)
    residual = abs(summary["entropy_balance_residual"])
    tol = cfg.solver.entropy_tol * summary["entropy_initial"]
    passed = residual <= tol
    checks = {
        "entropy_balance": {
            "residual": residual,
            "tolerance": tol,
            "passed": passed,
        },
        "state_mass_drift_rel": summary["state_mass_drift_rel"],
        "dissipation_bound_ok": summary["cum_dissipation"]
        >= summary["cum_dissipation_bound"] - 1e-10,
    }
    write_json_summary(outdir / "entropy.json", "entropy", cfg.seed, config_dict,
                       {"summary": summary, "checks": checks})
    verdict = "PASS" if passed else "FAIL"
    _say(args, f"entropy balance: {verdict} |dH + int D dt| = {residual:.3e} "
               f"(tolerance {tol:.3e})")
    return EXIT_OK if passed else EXIT_CHECK


# ----------------------------------------------------------- particles


def _particle_replica(payload):
    """Worker: one particle replica; returns traces and final martingales."""
    data, replica = payload
    cfg = RunConfig.from_dict(data)
    p = cfg.particles
    rng = np.random.default_rng(cfg.seed + replica)
    grid = density = None
    if p.initial.kind == "from_density":
        grid = build_grid(cfg)
        density = build_initial_density(cfg, grid, len(p.sigma))
    ensemble = build_ensemble(cfg, rng, grid=grid, density=density)
    derivatives = [window_bump(lo, hi)[1] for lo, hi in p.test_windows]
    tracker = MartingaleTracker(derivatives, ensemble.n_species)
    n_steps = max(1, round(p.t_end / p.dt))
    rows = []
    t = 0.0
    for k in range(n_steps):
        ensemble, record = particle_step(ensemble, p.dt, rng)
        tracker.update(record)
        t += p.dt
        if (k + 1) % p.record_every == 0 or k == n_steps - 1:
            rows.append((replica, t, tracker.values.copy()))
    return replica, rows, tracker.values.copy()


def _run_particle_replicas(cfg: RunConfig):
    payloads = [(resolved_dict(cfg), r) for r in range(cfg.particles.replicas)]
    if cfg.parallelism > 1:
        with ProcessPoolExecutor(max_workers=int(cfg.parallelism)) as pool:
            results = list(pool.map(_particle_replica, payloads))
    else:
        results = [_particle_replica(p) for p in payloads]
    results.sort(key=lambda item: item[0])
    rows = [row for _, replica_rows, _ in results for row in replica_rows]
    finals = np.stack([final for _, _, final in results])
    return rows, finals


def _covariance_targets(cfg: RunConfig):
    """Analytic covariance per (species, window) for the configured model."""
    p = cfg.particles
    sigma = np.asarray(p.sigma, dtype=float)
    interaction = np.asarray(p.interaction, dtype=float)
    pairs = [window_bump(lo, hi) for lo, hi in p.test_windows]
    n = sigma.size
    targets = np.empty((n, len(pairs)))
    if p.mean_field:
        cfg_mf = RunConfig.from_dict(resolved_dict(cfg))
        cfg_mf.solver.deterministic = True
        cfg_mf.solver.t_end = p.t_end
        coeffs = build_coefficients(cfg_mf)
        pi = build_weights(cfg_mf, coeffs)
        grid = build_grid(cfg_mf)
        u0 = build_initial_density(cfg_mf, grid, coeffs.n)
        traj = run(coeffs, pi, u0, grid, build_solver_config(cfg_mf))
        for i in range(n):
            for j, (_, dphi) in enumerate(pairs):
                targets[i, j] = covariance_from_trajectory(traj, sigma, dphi, dphi, i)
        return targets
    if np.any(interaction != 0.0):
        raise ConfigError(
            "particles: nonzero interaction needs mean_field: true for the "
            "covariance target"
        )
    if p.initial.kind != "gaussian":
        raise ConfigError(
            "particles: the closed-form covariance target needs a gaussian initial"
        )
    density = heat_gaussian_density(p.initial.mean, p.initial.std, sigma)
    for i in range(n):
        for j, ((lo, hi), (_, dphi)) in enumerate(zip(p.test_windows, pairs)):
            x = np.linspace(lo, hi, 2001)
            targets[i, j] = analytic_covariance(
                density, interaction, sigma, dphi, dphi, p.t_end, species=i, x=x
            )
    return targets


def _covariance_payload(cfg: RunConfig, finals: np.ndarray):
    targets = _covariance_targets(cfg)
    n, n_win = targets.shape
    variance, means, crosses = [], [], []
    worst = 0.0
    for i in range(n):
        for j in range(n_win):
            rep = replica_variance_report(finals[:, i, j], float(targets[i, j]))
            rep.update({"species": i + 1, "window": j + 1})
            variance.append(rep)
            mean_rep = replica_mean_report(finals[:, i, j])
            mean_rep.update({"species": i + 1, "window": j + 1})
            means.append(mean_rep)
            worst = max(worst, abs(rep["z"]), abs(mean_rep["z"]))
    for i in range(n):
        for k in range(i + 1, n):
            for j in range(n_win):
                rep = replica_cross_report(finals[:, i, j], finals[:, k, j])
                rep.update({"species_pair": [i + 1, k + 1], "window": j + 1})
                crosses.append(rep)
                worst = max(worst, abs(rep["z"]))
    return {
        "replicas": int(finals.shape[0]),
        "variance_checks": variance,
        "mean_checks": means,
        "cross_species_checks": crosses,
        "max_abs_z": worst,
        "delta_c": cfg.particles.delta_c,
    }, worst


def cmd_simulate_particles(args) -> int:
    cfg = _load(args)
    outdir = _output_dir(cfg, args.output)
    rows, finals = _run_particle_replicas(cfg)
    config_dict = resolved_dict(cfg)
    n_win = len(cfg.particles.test_windows)
    n_species = len(cfg.particles.sigma)
    write_martingale_csv(outdir / "martingales.csv", rows, n_species, n_win,
                         cfg.seed, config_dict)
    payload, worst = _covariance_payload(cfg, finals)
    write_json_summary(outdir / "covariance.json", "covariance", cfg.seed,
                       config_dict, payload)
    _say(args, f"{finals.shape[0]} replicas, max |z| = {worst:.2f}; "
               f"wrote {outdir}/covariance.json")
    return EXIT_OK


def cmd_verify_covariance(args) -> int:
    cfg = _load(args)
    outdir = _output_dir(cfg, args.output)
    rows, finals = _run_particle_replicas(cfg)
    config_dict = resolved_dict(cfg)
    n_win = len(cfg.particles.test_windows)
    n_species = len(cfg.particles.sigma)
    write_martingale_csv(outdir / "martingales.csv", rows, n_species, n_win,
                         cfg.seed, config_dict)
    payload, worst = _covariance_payload(cfg, finals)
    passed = worst <= 3.0
    payload["passed"] = passed
    write_json_summary(outdir / "covariance.json", "covariance", cfg.seed,
                       config_dict, payload)
    for rep in payload["variance_checks"]:
        _say(args, f"species {rep['species']} window {rep['window']}: "
                   f"var {rep['estimate']:.4e} vs {rep['analytic']:.4e} "
                   f"(z = {rep['z']:+.2f})")
    verdict = "PASS" if passed else "FAIL"
    _say(args, f"covariance: {verdict} max |z| = {worst:.2f} (limit 3)")
    return EXIT_OK if passed else EXIT_CHECK


# ---------------------------------------------------------- assumptions


def cmd_check_assumptions(args) -> int:
    cfg = _load(args)
    outdir = _output_dir(cfg, args.output)
    coeffs = build_coefficients(cfg)
    config_dict = resolved_dict(cfg)
    try:
        balance = solve_balance_weights(coeffs)
    except DetailedBalanceError as exc:
        write_json_summary(outdir / "assumptions.json", "assumptions", cfg.seed,
                           config_dict, {"balance_error": str(exc), "passed": False})
        _say(args, f"detailed balance: FAIL {exc}")
        return EXIT_CHECK
    grid = build_grid(cfg)
    eig = NeumannEigenbasis(grid)
    modes = cfg.solver.modes
    n_modes = grid.cells // 2 if isinstance(modes, str) else int(modes)
    basis = NoiseBasis(grid, modes=n_modes, smoothness=float(cfg.solver.smoothness),
                       eigenbasis=eig)
    report = check_noise_smallness(
        coeffs, balance.pi, basis,
        n_pop=int(cfg.solver.population),
        p=float(cfg.assumptions.p),
        kappa=float(cfg.assumptions.kappa),
        lam=float(cfg.assumptions.lam),
        allow_small_lambda=bool(cfg.assumptions.allow_small_lambda),
    )
    payload = {
        "balance_weights": balance.pi.tolist(),
        "balance_residual": balance.residual,
        "population": int(cfg.solver.population),
        "minimal_population": report.minimal_n,
        "checks": [
            {"name": c.name, "lhs": c.lhs, "rhs": c.rhs, "margin": c.margin,
             "passed": c.passed}
            for c in report.checks
        ],
        "tail_bounds": report.tail_bounds,
        "passed": report.passed,
    }
    write_json_summary(outdir / "assumptions.json", "assumptions", cfg.seed,
                       config_dict, payload)
    _say(args, "balance weights: " + ", ".join(f"{v:.6g}" for v in balance.pi)
               + f" (residual {balance.residual:.2e})")
    for c in report.checks:
        verdict = "PASS" if c.passed else "FAIL"
        _say(args, f"{c.name}: {verdict} lhs {c.lhs:.4e} < rhs {c.rhs:.4e} "
                   f"(margin {c.margin:.4e})")
    _say(args, f"minimal population satisfying all bounds: {report.minimal_n}")
    return EXIT_OK if report.passed else EXIT_CHECK


# ----------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sktfluct",
        description="Cross-diffusion field and particle simulations with "
                    "structural verification checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "simulate-spde": (cmd_simulate_spde, "integrate the field model"),
        "simulate-particles": (cmd_simulate_particles, "run particle replicas"),
        "verify-entropy": (cmd_verify_entropy, "check the entropy balance"),
        "verify-covariance": (cmd_verify_covariance,
                              "check martingale covariances against the limit"),
        "check-assumptions": (cmd_check_assumptions,
                              "balance weights and smallness margins"),
    }
    for name, (func, helptext) in commands.items():
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", help="YAML config file")
        p.add_argument("--output", default=None, help="output directory override")
        p.add_argument("--seed", default=None, type=int, help="base seed override")
        p.add_argument("--quiet", action="store_true", help="suppress progress lines")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else EXIT_USAGE
        return EXIT_OK if code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverAbort, ParticleAbort) as exc:
        print(f"compute abort: {exc}", file=sys.stderr)
        return EXIT_ABORT


def entrypoint():
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
