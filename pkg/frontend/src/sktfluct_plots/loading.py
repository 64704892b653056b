"""Readers for the simulator's CSV and JSON outputs.

Every simulator file carries a reproducibility envelope: CSVs start
with '# sktfluct <kind> schema=<n>' comment lines holding the seed and
the resolved config, JSON reports carry the same fields as top-level
keys.  The readers here verify the kind and the schema version, check
that the documented columns are present, and hand back plain numpy
structured arrays or dicts.  No physics is recomputed downstream of
these files; the simulator is the single source of numerical truth.
"""

import io
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

KNOWN_SCHEMA = 1

__all__ = [
    "KNOWN_SCHEMA",
    "LoadError",
    "SchemaError",
    "MissingColumnsError",
    "Header",
    "read_header",
    "load_table",
    "load_report",
    "load_run_summary",
    "species_columns",
    "require_file",
    "directory_listing",
]


class LoadError(Exception):
    """Unusable input: missing files, unparsable content."""


class SchemaError(LoadError):
    """Recognized file with the wrong kind or an unknown schema version."""


class MissingColumnsError(LoadError):
    """Header row lacks columns the figure needs."""


@dataclass(frozen=True)
class Header:
    """Reproducibility envelope shared by every simulator output."""

    kind: str
    schema: int
    seed: int
    config: dict


_TAG = re.compile(r"^# sktfluct (\S+) schema=(\d+)\s*$")


def directory_listing(directory) -> str:
    """Sorted file names of a directory, for error messages."""
    directory = Path(directory)
    names = sorted(p.name for p in directory.iterdir())
    return ", ".join(names) if names else "(empty)"


def require_file(directory, name) -> Path:
    """Path of an expected input, or an error listing what is there."""
    directory = Path(directory)
    if not directory.is_dir():
        raise LoadError(f"{directory} is not a directory")
    path = directory / name
    if not path.is_file():
        raise LoadError(
            f"{directory} has no {name}; directory holds: "
            + directory_listing(directory)
        )
    return path


def read_header(path) -> Header:
    """Parse the '#' comment envelope at the top of a CSV output."""
    path = Path(path)
    kind = schema = seed = config = None
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if not line.startswith("#"):
                break
            match = _TAG.match(line)
            if match:
                kind, schema = match.group(1), int(match.group(2))
            elif line.startswith("# seed:"):
                seed = int(line.split(":", 1)[1])
            elif line.startswith("# config:"):
                config = json.loads(line.split(":", 1)[1])
    if kind is None:
        raise SchemaError(f"{path} has no 'sktfluct <kind> schema=<n>' tag")
    if schema > KNOWN_SCHEMA:
        raise SchemaError(
            f"{path} uses schema {schema}, newest understood is {KNOWN_SCHEMA}"
        )
    if seed is None or config is None:
        raise SchemaError(f"{path} envelope lacks the seed or config line")
    return Header(kind=kind, schema=schema, seed=seed, config=config)


def load_table(path, kind, required=()):
    """CSV body as a structured array, after envelope and column checks."""
    path = Path(path)
    header = read_header(path)
    if header.kind != kind:
        raise SchemaError(f"{path} is a '{header.kind}' file, expected '{kind}'")
    with open(path, "r", encoding="utf-8") as handle:
        body = "".join(ln for ln in handle if not ln.startswith("#"))
    table = np.genfromtxt(io.StringIO(body), delimiter=",", names=True)
    names = table.dtype.names or ()
    missing = [c for c in required if c not in names]
    if missing:
        raise MissingColumnsError(
            f"{path} lacks columns {missing}; found {list(names)}"
        )
    return header, np.atleast_1d(table)


def load_report(path, kind) -> dict:
    """JSON report, after schema-version and kind checks."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as handle:
        report = json.load(handle)
    version = report.get("schemaVersion")
    if not isinstance(version, int) or version > KNOWN_SCHEMA:
        raise SchemaError(
            f"{path} has schemaVersion {version!r}, newest understood is "
            f"{KNOWN_SCHEMA}"
        )
    if report.get("kind") != kind:
        raise SchemaError(
            f"{path} is a '{report.get('kind')}' report, expected '{kind}'"
        )
    return report


def load_run_summary(directory):
    """Scalar run summary and resolved config from a field-run directory.

    verify-entropy writes entropy.json with the summary inline;
    simulate-spde writes summary.json with one summary per replica, of
    which replica 0 is taken.
    """
    directory = Path(directory)
    if (directory / "entropy.json").is_file():
        report = load_report(directory / "entropy.json", "entropy")
        return report["config"], report["summary"]
    if (directory / "summary.json").is_file():
        report = load_report(directory / "summary.json", "spde")
        runs = report["runs"]
        first = runs[min(runs, key=int)]
        return report["config"], first
    raise LoadError(
        f"{directory} has neither entropy.json nor summary.json; directory "
        "holds: " + directory_listing(directory)
    )


def species_columns(table, prefix) -> list:
    """Column names '<prefix>_1', '<prefix>_2', ... present in a table."""
    names = table.dtype.names or ()
    found = [n for n in names if re.fullmatch(rf"{prefix}_\d+", n)]
    return sorted(found, key=lambda n: int(n.rsplit("_", 1)[1]))
