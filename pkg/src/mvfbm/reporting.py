"""Run artifacts: canonical report.json, CSV series, manifest, figures.

report.json is written with sorted keys and no timestamps so that reruns of
the same config and seed are byte-identical; volatile metadata (wall time,
hostname-free timestamp) lives in manifest.json only.  Figures are rendered
from the same series that go into the CSVs, one PNG per series, next to the
delimited output.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from datetime import datetime, timezone

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def canonical_json(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, indent=2)


def config_hash(resolved_config: dict) -> str:
    return hashlib.sha256(canonical_json(resolved_config).encode()).hexdigest()


def write_report(outdir: str, payload: dict) -> str:
    path = os.path.join(outdir, "report.json")
    with open(path, "w") as fh:
        fh.write(canonical_json(payload))
        fh.write("\n")
    return path


def write_manifest(outdir: str, resolved_config: dict, extra: dict) -> str:
    manifest = {
        "config": resolved_config,
        "config_hash": config_hash(resolved_config),
        "generated_at": datetime.now(timezone.utc).isoformat(),
        **extra,
    }
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w") as fh:
        fh.write(canonical_json(manifest))
        fh.write("\n")
    return path


def write_series_csv(outdir: str, name: str, header: list[str], rows) -> str:
    path = os.path.join(outdir, f"{name}.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{v:.12g}" if isinstance(v, float) else v for v in row])
    return path


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------

def _save(fig, outdir: str, name: str) -> str:
    path = os.path.join(outdir, f"{name}.png")
    fig.savefig(path, dpi=130, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_paths(outdir: str, nodes, paths, title: str, name: str = "paths") -> str:
    fig, ax = plt.subplots(figsize=(7, 4))
    for p in paths:
        ax.plot(nodes, p, lw=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("value")
    ax.set_title(title)
    return _save(fig, outdir, name)


def plot_series(outdir: str, x, ys: dict, name: str, xlabel: str, ylabel: str,
                logx: bool = False, logy: bool = False, title: str | None = None) -> str:
    fig, ax = plt.subplots(figsize=(6.5, 4))
    for label, y in ys.items():
        ax.plot(x, y, marker="o", label=label)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if len(ys) > 1:
        ax.legend()
    ax.set_title(title or name)
    ax.grid(alpha=0.3)
    return _save(fig, outdir, name)


def plot_estimate_comparison(outdir: str, labels, values, errors, name: str = "estimates",
                             title: str = "estimates with 3 SE bars") -> str:
    fig, ax = plt.subplots(figsize=(6.5, 4))
    xs = range(len(labels))
    ax.errorbar(xs, values, yerr=[3 * e for e in errors], fmt="o", capsize=5)
    ax.set_xticks(list(xs))
    ax.set_xticklabels(labels, rotation=15)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    return _save(fig, outdir, name)
