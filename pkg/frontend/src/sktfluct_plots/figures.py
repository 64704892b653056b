"""Figure builders for the simulator's output files.

Four figure types: entropy decay with the dissipation overlay, species
density snapshots, covariance z-scores with the +-3 band, and
refinement curves of the reported residuals across runs at different
regularization strengths.  Builders return matplotlib figures computed
from the input files alone (no clock, no environment in the content),
so rendering the same directory twice gives identical bytes.
"""

from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .loading import (
    LoadError,
    MissingColumnsError,
    directory_listing,
    load_report,
    load_run_summary,
    load_table,
    require_file,
    species_columns,
)

FIGURE_KINDS = ("entropy", "snapshots", "covariance", "refinement")
FORMATS = ("png", "pdf", "svg")

__all__ = [
    "FIGURE_KINDS",
    "FORMATS",
    "PlotJob",
    "build_entropy",
    "build_snapshots",
    "build_covariance",
    "build_refinement",
    "plot_entropy",
    "plot_snapshots",
    "plot_covariance",
    "plot_refinement",
    "render_job",
]


# ------------------------------------------------------------ entropy


def build_entropy(run_dir):
    """Entropy H(t) per replica, dissipation D(t) and the balance line.

    The balance line H(0) - integral of D is the trapezoid sum of the
    reported dissipation column; it should shadow H(t) up to the time
    discretization error.
    """
    run_dir = Path(run_dir)
    series = sorted(run_dir.glob("series_*.csv"))
    if not series:
        raise LoadError(
            f"{run_dir} has no series_*.csv; directory holds: "
            + directory_listing(run_dir)
        )
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    twin = ax.twinx()
    for path in series:
        _, table = load_table(path, "series", required=("t", "H", "D"))
        label = path.stem.replace("series_", "replica ")
        ax.plot(table["t"], table["H"], lw=1.4, label=f"H(t), {label}")
    _, table = load_table(series[0], "series", required=("t", "H", "D"))
    t, diss = table["t"], table["D"]
    integrated = np.concatenate(
        [[0.0], np.cumsum(0.5 * (diss[1:] + diss[:-1]) * np.diff(t))]
    )
    ax.plot(t, table["H"][0] - integrated, "k--", lw=1.0,
            label="H(0) - integrated D")
    twin.plot(t, diss, color="0.55", ls=":", lw=1.2, label="dissipation D(t)")
    ax.set_xlabel("time t")
    ax.set_ylabel("entropy H")
    twin.set_ylabel("dissipation D")
    handles, labels = ax.get_legend_handles_labels()
    h2, l2 = twin.get_legend_handles_labels()
    ax.legend(handles + h2, labels + l2, fontsize=8)
    fig.tight_layout()
    return fig


# ---------------------------------------------------------- snapshots


def build_snapshots(run_dir, max_times=6):
    """Density profiles over position, one panel per species.

    At most max_times recorded instants are drawn, evenly spaced in the
    record index and always including the first and last.
    """
    run_dir = Path(run_dir)
    path = require_file(run_dir, "snapshots.csv")
    _, table = load_table(path, "snapshots", required=("t", "x", "u_1"))
    columns = species_columns(table, "u")
    times = np.unique(table["t"])
    keep = times[np.unique(np.linspace(0, times.size - 1, max_times).round().astype(int))]
    fig, axes = plt.subplots(
        len(columns), 1, figsize=(6.4, 2.2 * len(columns)), sharex=True,
        squeeze=False,
    )
    cmap = plt.get_cmap("viridis")
    span = max(keep[-1] - keep[0], 1.0e-300)
    for i, col in enumerate(columns):
        ax = axes[i, 0]
        for t in keep:
            rows = table[table["t"] == t]
            ax.plot(rows["x"], rows[col], color=cmap((t - keep[0]) / span),
                    lw=1.3, label=f"t = {t:g}")
        ax.set_ylabel(f"density {col}")
    axes[-1, 0].set_xlabel("position x")
    axes[0, 0].legend(fontsize=8, ncol=2)
    fig.tight_layout()
    return fig


# --------------------------------------------------------- covariance


_CHECK_FIELDS = ("estimate", "analytic", "stderr", "z")


def _checks(report, key, path):
    entries = report.get(key, [])
    for entry in entries:
        missing = [f for f in _CHECK_FIELDS if f not in entry]
        if missing:
            raise MissingColumnsError(
                f"{path} entries under {key} lack fields {missing}"
            )
    return entries


def _check_label(tag, entry):
    window = entry.get("window", "?")
    if "species_pair" in entry:
        pair = "-".join(str(s) for s in entry["species_pair"])
        return f"{tag} s{pair} w{window}"
    return f"{tag} s{entry.get('species', '?')} w{window}"


def build_covariance(run_dir):
    """Replica covariance versus analytic target, and per-check z-scores.

    Left: estimate against analytic with one-stderr bars and the y = x
    reference.  Right: z-score per check with the +-3 acceptance band.
    """
    run_dir = Path(run_dir)
    path = require_file(run_dir, "covariance.json")
    report = load_report(path, "covariance")
    groups = [
        ("variance", _checks(report, "variance_checks", path), "o"),
        ("mean", _checks(report, "mean_checks", path), "s"),
        ("cross", _checks(report, "cross_species_checks", path), "^"),
    ]
    if not any(entries for _, entries, _ in groups):
        raise LoadError(f"{path} holds no covariance checks")
    fig, (left, right) = plt.subplots(1, 2, figsize=(9.6, 4.0))
    position = 0
    ticks, tick_labels = [], []
    for name, entries, marker in groups:
        if not entries:
            continue
        analytic = [e["analytic"] for e in entries]
        estimate = [e["estimate"] for e in entries]
        stderr = [e["stderr"] for e in entries]
        left.errorbar(analytic, estimate, yerr=stderr, marker=marker, ls="none",
                      capsize=3, label=name)
        spots = range(position, position + len(entries))
        right.plot(list(spots), [e["z"] for e in entries], marker=marker,
                   ls="none", label=name)
        ticks.extend(spots)
        tick_labels.extend(_check_label(name[0], e) for e in entries)
        position += len(entries)
    lo, hi = left.get_xlim()
    left.plot([lo, hi], [lo, hi], color="0.6", ls="--", lw=1.0, zorder=0,
              label="estimate = analytic")
    left.set_xlim(lo, hi)
    left.set_xlabel("analytic covariance")
    left.set_ylabel("replica estimate")
    left.legend(fontsize=8)
    right.axhspan(-3.0, 3.0, color="tab:green", alpha=0.15, label="|z| <= 3")
    right.axhline(0.0, color="0.6", lw=0.8)
    right.set_xticks(ticks)
    right.set_xticklabels(tick_labels, rotation=60, ha="right", fontsize=7)
    right.set_ylabel("z-score")
    right.legend(fontsize=8)
    fig.tight_layout()
    return fig


# --------------------------------------------------------- refinement


_REFINEMENT_METRICS = (
    ("entropy_balance_residual_rel", "entropy balance residual"),
    ("mass_identity_residual_rel", "mass identity residual"),
    ("initial_entropy_margin", "initialization entropy margin"),
)


def build_refinement(run_dirs):
    """Reported residuals against the regularization strength, log-log.

    Each directory contributes one point per metric, read from its run
    summary; the strength is the resolved solver eps (delta equals eps
    when left on auto).
    """
    points = []
    for directory in run_dirs:
        config, summary = load_run_summary(directory)
        eps = float(config["solver"]["eps"])
        missing = [k for k, _ in _REFINEMENT_METRICS if k not in summary]
        if missing:
            raise MissingColumnsError(
                f"{directory} run summary lacks fields {missing}"
            )
        points.append((eps, summary))
    if len(points) < 2:
        raise LoadError("refinement needs at least two run directories")
    points.sort(key=lambda item: item[0])
    eps = [p[0] for p in points]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for key, label in _REFINEMENT_METRICS:
        ax.loglog(eps, [abs(p[1][key]) for p in points], marker="o", lw=1.2,
                  label=label)
    ax.set_xlabel("regularization strength eps")
    ax.set_ylabel("reported value")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


# ------------------------------------------------------------ writing


def _save(fig, path, fmt, dpi):
    # strip writer timestamps so output bytes depend on inputs alone
    metadata = {"pdf": {"CreationDate": None}, "svg": {"Date": None}}.get(fmt)
    fig.savefig(path, format=fmt, dpi=dpi, metadata=metadata)
    plt.close(fig)
    return Path(path)


def plot_entropy(run_dir, out=None, fmt="png", dpi=150):
    out = Path(out) if out else Path(run_dir) / f"entropy.{fmt}"
    return _save(build_entropy(run_dir), out, fmt, dpi)


def plot_snapshots(run_dir, out=None, fmt="png", dpi=150):
    out = Path(out) if out else Path(run_dir) / f"snapshots.{fmt}"
    return _save(build_snapshots(run_dir), out, fmt, dpi)


def plot_covariance(run_dir, out=None, fmt="png", dpi=150):
    out = Path(out) if out else Path(run_dir) / f"covariance.{fmt}"
    return _save(build_covariance(run_dir), out, fmt, dpi)


def plot_refinement(run_dirs, out=None, fmt="png", dpi=150):
    out = Path(out) if out else Path(run_dirs[0]) / f"refinement.{fmt}"
    return _save(build_refinement(run_dirs), out, fmt, dpi)


# ---------------------------------------------------------------- job


@dataclass(frozen=True)
class PlotJob:
    """One batch invocation: input directories, selection, style.

    An empty figure selection means auto: render whatever each
    directory has inputs for, refinement once at least two directories
    carry run summaries.  Explicit selections fail fast when any
    directory lacks the needed files.
    """

    directories: tuple
    figures: tuple = ()
    fmt: str = "png"
    dpi: int = 150
    output: Path = None

    def __post_init__(self):
        if not self.directories:
            raise ValueError("need at least one input directory")
        unknown = [f for f in self.figures if f not in FIGURE_KINDS]
        if unknown:
            raise ValueError(
                f"unknown figures {unknown}; choose from {list(FIGURE_KINDS)}"
            )
        if self.fmt not in FORMATS:
            raise ValueError(f"format must be one of {list(FORMATS)}")
        if self.dpi <= 0:
            raise ValueError("dpi must be positive")


_PER_DIR = {
    "entropy": (plot_entropy, lambda d: any(d.glob("series_*.csv"))),
    "snapshots": (plot_snapshots, lambda d: (d / "snapshots.csv").is_file()),
    "covariance": (plot_covariance, lambda d: (d / "covariance.json").is_file()),
}


def _has_summary(directory) -> bool:
    return (directory / "entropy.json").is_file() or (
        directory / "summary.json"
    ).is_file()


def render_job(job: PlotJob) -> list:
    """Render the selection, returning the written figure paths."""
    dirs = [Path(d) for d in job.directories]
    for d in dirs:
        if not d.is_dir():
            raise LoadError(f"{d} is not a directory")
    auto = not job.figures
    written = []

    def destination(directory, name):
        if job.output is None:
            return directory / f"{name}.{job.fmt}"
        out = Path(job.output)
        out.mkdir(parents=True, exist_ok=True)
        return out / f"{directory.name}_{name}.{job.fmt}"

    for name, (plot, present) in _PER_DIR.items():
        if auto:
            targets = [d for d in dirs if present(d)]
        elif name in job.figures:
            targets = dirs
        else:
            targets = []
        for d in targets:
            written.append(plot(d, out=destination(d, name), fmt=job.fmt,
                                dpi=job.dpi))
    want_refinement = "refinement" in job.figures or (
        auto and sum(map(_has_summary, dirs)) >= 2
    )
    if want_refinement:
        sources = [d for d in dirs if _has_summary(d)] if auto else dirs
        if job.output is None:
            out = sources[0] / f"refinement.{job.fmt}"
        else:
            Path(job.output).mkdir(parents=True, exist_ok=True)
            out = Path(job.output) / f"refinement.{job.fmt}"
        written.append(plot_refinement(sources, out=out, fmt=job.fmt,
                                       dpi=job.dpi))
    if not written:
        inventory = "; ".join(f"{d}: {directory_listing(d)}" for d in dirs)
        raise LoadError(f"no renderable inputs found ({inventory})")
    return written
