"""Checkpoint, export, and CSV emission helpers."""

from __future__ import annotations

import csv
import json
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .model import PREEMPH_WINDOW, Constellation, PreEmphasis
from .pipeline import MetricReport, ModelParams

CHECKPOINT_VERSION = 1
CSV_COLUMNS = ["power_dbm", "metric", "value", "std", "channel", "seed"]


def save_checkpoint(path: str | Path, params: ModelParams,
                    rng: np.random.Generator | None = None) -> None:
    """Versioned checkpoint of all parameter groups plus the rng state."""
    meta = {"version": CHECKPOINT_VERSION, "decoder_rms": params.decoder_rms}
    if rng is not None:
        meta["rng_state"] = rng.bit_generator.state
    arrays = {"constellation": params.constellation, "preemph": params.preemph}
    for k, v in params.decoder.items():
        arrays[f"dec_{k}"] = v
    np.savez(path, _meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path: str | Path) -> tuple[ModelParams, np.random.Generator | None]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["_meta"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ConfigurationError(
                f"unsupported checkpoint version {meta.get('version')}")
        params = ModelParams(
            constellation=data["constellation"].copy(),
            preemph=data["preemph"].copy(),
            decoder={k[4:]: data[k].copy() for k in data.files if k.startswith("dec_")},
            decoder_rms=float(meta["decoder_rms"]),
        )
    rng = None
    if "rng_state" in meta:
        rng = np.random.default_rng()
        rng.bit_generator.state = meta["rng_state"]
    return params, rng


def export_constellation(path: str | Path, constellation: Constellation) -> None:
    """One line per point: `index re im` (normalized values)."""
    pts = constellation.normalized
    with open(path, "w") as f:
        for i, c in enumerate(pts):
            f.write(f"{i} {c.real:.12e} {c.imag:.12e}\n")


def import_constellation(path: str | Path) -> Constellation:
    pts = np.zeros(64, dtype=np.complex128)
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        i, re, im = line.split()
        pts[int(i)] = float(re) + 1j * float(im)
    return Constellation(pts)


def export_preemph(path: str | Path, pe: PreEmphasis) -> None:
    """One line per coefficient: `m n re im`."""
    w = PREEMPH_WINDOW
    with open(path, "w") as f:
        for m in range(-w, w + 1):
            for n in range(-w, w + 1):
                c = pe.coeff(m, n)
                f.write(f"{m} {n} {c.real:.12e} {c.imag:.12e}\n")


def import_preemph(path: str | Path) -> PreEmphasis:
    w = PREEMPH_WINDOW
    c = np.zeros((2 * w + 1, 2 * w + 1), dtype=np.complex128)
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        m, n, re, im = line.split()
        c[int(m) + w, int(n) + w] = float(re) + 1j * float(im)
    return PreEmphasis(c)


def write_metrics_csv(path: str | Path, rows: list[dict]) -> None:
    """Fixed-column metric CSV; the timestamp lives in a comment header line
    excluded from byte comparisons."""
    with open(path, "w", newline="") as f:
        f.write(f"# generated {datetime.now(timezone.utc).isoformat()}\n")
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in CSV_COLUMNS})


def report_rows(report: MetricReport) -> list[dict]:
    rows = [
        {"power_dbm": report.launch_power_dbm, "metric": "mi", "value": f"{report.mi_mean:.6f}",
         "std": f"{report.mi_std:.6f}", "channel": report.channel, "seed": report.seed},
        {"power_dbm": report.launch_power_dbm, "metric": "snr", "value": f"{report.snr_db:.4f}",
         "std": "", "channel": report.channel, "seed": report.seed},
    ]
    if report.sdr_db is not None:
        rows.append({"power_dbm": report.launch_power_dbm, "metric": "sdr",
                     "value": f"{report.sdr_db:.4f}", "std": "", "channel": report.channel,
                     "seed": report.seed})
    return rows
