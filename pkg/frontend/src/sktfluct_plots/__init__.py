"""Batch figure generation for sktfluct simulator outputs."""

from .figures import (
    FIGURE_KINDS,
    FORMATS,
    PlotJob,
    build_covariance,
    build_entropy,
    build_refinement,
    build_snapshots,
    plot_covariance,
    plot_entropy,
    plot_refinement,
    plot_snapshots,
    render_job,
)
from .loading import (
    KNOWN_SCHEMA,
    Header,
    LoadError,
    MissingColumnsError,
    SchemaError,
    load_report,
    load_run_summary,
    load_table,
    read_header,
)

__all__ = [
    "FIGURE_KINDS",
    "FORMATS",
    "KNOWN_SCHEMA",
    "Header",
    "LoadError",
    "MissingColumnsError",
    "PlotJob",
    "SchemaError",
    "build_covariance",
    "build_entropy",
    "build_refinement",
    "build_snapshots",
    "load_report",
    "load_run_summary",
    "load_table",
    "plot_covariance",
    "plot_entropy",
    "plot_refinement",
    "plot_snapshots",
    "read_header",
    "render_job",
]
