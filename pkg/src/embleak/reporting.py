"""Report serialization and run manifests.

Reports are JSON with floats normalized to 12 significant digits and sorted
keys, so identical inputs and seeds produce byte-identical files. The
manifest embedded in each report carries only stable fields; volatile ones
(wall-clock duration, the report digest) go to a sidecar next to the report.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def normalize(obj, sig: int = 12):
    """Round floats to ``sig`` significant digits and strip numpy types."""
    if isinstance(obj, dict):
        return {str(k): normalize(v, sig) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [normalize(v, sig) for v in obj]
    if isinstance(obj, np.ndarray):
        return [normalize(v, sig) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(f"{float(obj):.{sig}g}")
    return obj


@dataclass
class RunManifest:
    subcommand: str
    argv: list[str]
    seed: int | None
    input_digests: dict[str, str]
    tool_version: str

    def to_dict(self) -> dict:
        return {
            "subcommand": self.subcommand,
            "argv": list(self.argv),
            "seed": self.seed,
            "input_digests": dict(sorted(self.input_digests.items())),
            "tool_version": self.tool_version,
        }


def dump_report(result: dict, manifest: RunManifest, out_path,
                duration_seconds: float | None = None) -> str:
    """Write the report (embedding the stable manifest) plus its sidecar.

    Returns the report digest. The sidecar ``<out>.manifest.json`` repeats the
    manifest and adds duration and digest, keeping the report itself
    reproducible byte for byte.
    """
    out_path = Path(out_path)
    payload = normalize({"manifest": manifest.to_dict(), "result": result})
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    out_path.write_text(text)
    digest = hashlib.sha256(text.encode()).hexdigest()

    sidecar = dict(manifest.to_dict())
    sidecar["report_digest"] = digest
    if duration_seconds is not None:
        sidecar["duration_seconds"] = duration_seconds
    Path(str(out_path) + ".manifest.json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n"
    )
    return digest


def write_series_csv(path, header, rows) -> None:
    """Two-or-more column plot-ready series."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    if isinstance(v, (int, np.integer)):
        return int(v)
    return v
