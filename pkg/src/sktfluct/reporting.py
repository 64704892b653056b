"""Delimited and JSON output with reproducibility headers.

Every file starts from the same metadata: a format tag with its schema
version, the seed, and the fully resolved configuration as one JSON
line.  CSV files carry it in '#' comment lines above the header row;
JSON files embed it under reserved keys.  Column orders are fixed and
documented here, since downstream tooling parses them by name.
"""

import csv
import json
from datetime import datetime, timezone

import numpy as np

SCHEMA_VERSION = 1

__all__ = [
    "SCHEMA_VERSION",
    "metadata_lines",
    "write_series_csv",
    "write_snapshots_csv",
    "write_martingale_csv",
    "write_json_summary",
    "series_columns",
]


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def metadata_lines(kind: str, seed: int, config: dict) -> list:
    """Comment block embedded at the top of every CSV output."""
    return [
        f"# sktfluct {kind} schema={SCHEMA_VERSION}",
        f"# created: {_timestamp()}",
        f"# seed: {seed}",
        "# config: " + json.dumps(config, sort_keys=True, default=str),
    ]


def series_columns(n_species: int) -> list:
    cols = ["t"]
    cols += [f"mass_{i + 1}" for i in range(n_species)]
    cols += ["H", "D", "D_lb", "min_u", "max_u"]
    return cols


def write_series_csv(path, traj, seed: int, config: dict):
    """Time series of the scalar diagnostics, one row per record."""
    n = traj.coeffs.n
    with open(path, "w", encoding="utf-8", newline="") as handle:
        for line in metadata_lines("series", seed, config):
            handle.write(line + "\n")
        writer = csv.writer(handle)
        writer.writerow(series_columns(n))
        for rep in traj.reports:
            row = [f"{rep.t:.12g}"]
            row += [f"{m:.17g}" for m in rep.mass]
            row += [
                f"{rep.entropy:.17g}",
                f"{rep.dissipation:.17g}",
                f"{rep.dissipation_bound:.17g}",
                f"{rep.min_density:.17g}",
                f"{rep.max_density:.17g}",
            ]
            writer.writerow(row)


def write_snapshots_csv(path, traj, seed: int, config: dict):
    """Long-format density snapshots: (t, x, u_1 .. u_n) per cell."""
    n = traj.coeffs.n
    centers = traj.grid.centers
    with open(path, "w", encoding="utf-8", newline="") as handle:
        for line in metadata_lines("snapshots", seed, config):
            handle.write(line + "\n")
        writer = csv.writer(handle)
        writer.writerow(["t", "x"] + [f"u_{i + 1}" for i in range(n)])
        for m, t in enumerate(traj.times):
            u = traj.density[m]
            for c in range(centers.size):
                writer.writerow(
                    [f"{t:.12g}", f"{centers[c]:.12g}"]
                    + [f"{u[i, c]:.17g}" for i in range(n)]
                )


def write_martingale_csv(path, rows, n_species: int, n_windows: int,
                         seed: int, config: dict):
    """Replica martingale traces: (replica, t, M_i_j per species/window)."""
    cols = ["replica", "t"]
    cols += [
        f"M_{i + 1}_{j + 1}" for i in range(n_species) for j in range(n_windows)
    ]
    with open(path, "w", encoding="utf-8", newline="") as handle:
        for line in metadata_lines("martingales", seed, config):
            handle.write(line + "\n")
        writer = csv.writer(handle)
        writer.writerow(cols)
        for replica, t, values in rows:
            flat = np.asarray(values).reshape(-1)
            writer.writerow(
                [str(replica), f"{t:.12g}"] + [f"{v:.17g}" for v in flat]
            )


def write_json_summary(path, kind: str, seed: int, config: dict, payload: dict):
    """JSON report with the same reproducibility envelope as the CSVs."""
    document = {
        "schemaVersion": SCHEMA_VERSION,
        "kind": kind,
        "created": _timestamp(),
        "seed": seed,
        "config": config,
        **payload,
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(document, handle, indent=2, sort_keys=False, default=_coerce)
        handle.write("\n")


def _coerce(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return str(value)
