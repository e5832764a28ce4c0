"""Report and artifact persistence: JSON + CSV, written atomically."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .metrics import MetricsReport, PER_SAMPLE_METRICS


def atomic_write(path, data: bytes) -> None:
    """Write via a temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise OSError(f"failed writing {path}: {exc}") from exc


def report_to_json_doc(report: MetricsReport) -> dict:
    return {
        "schema": 1,
        "seed": report.seed,
        "n_samples": report.n_samples,
        "protocol": report.protocol,
        "aggregates": report.aggregates,
    }


def export_report(report: MetricsReport, out_dir, stem: str = "report"):
    """Write aggregate JSON and per-sample CSV; returns both paths.

    Output bytes are a pure function of the report, so re-exporting the
    same report reproduces identical files.
    """
    out_dir = Path(out_dir)
    json_path = out_dir / f"{stem}.json"
    csv_path = out_dir / f"{stem}.csv"

    doc = json.dumps(report_to_json_doc(report), indent=2, sort_keys=True) + "\n"
    atomic_write(json_path, doc.encode("utf-8"))

    cols = [k for k in PER_SAMPLE_METRICS if k in report.per_sample]
    lines = ["sample," + ",".join(cols)]
    for i in range(report.n_samples):
        lines.append(str(i) + "," + ",".join(repr(float(report.per_sample[k][i])) for k in cols))
    atomic_write(csv_path, ("\n".join(lines) + "\n").encode("ascii"))
    return json_path, csv_path


def load_report_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def export_curve_csv(mean: np.ndarray, std: np.ndarray, path) -> None:
    """Aggregated perturbation curve: one row per step."""
    lines = ["step,mean_decay,std"]
    for i, (m, s) in enumerate(zip(mean, std), start=1):
        lines.append(f"{i},{float(m)!r},{float(s)!r}")
    atomic_write(path, ("\n".join(lines) + "\n").encode("ascii"))


def write_jsonl(records, path) -> None:
    """One JSON object per line, stable key order."""
    text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
    atomic_write(path, text.encode("utf-8"))


def write_json(doc, path) -> None:
    atomic_write(path, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8"))
