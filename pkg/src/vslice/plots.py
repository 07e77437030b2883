"""Figure rendering for report outputs.

Figures are derived from the delimited files already on disk, never from
in-memory state, so `analyze` can re-render after the fact.  Uses the Agg
backend; nothing here opens a window.
"""

from __future__ import annotations

import csv
import os
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def _read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _atomic_save(fig, path: Path) -> None:
    tmp = path.with_name(path.name + f".tmp-{os.getpid()}.png")
    fig.savefig(tmp, dpi=130, bbox_inches="tight")
    plt.close(fig)
    tmp.replace(path)


def render_epsilon_trend(metrics_csv: Path, out_path: Path) -> Path | None:
    rows = _read_csv(metrics_csv)
    if not rows:
        return None
    # seed-average satisfaction per (density, mode, epsilon)
    acc: dict[tuple[str, str], dict[float, list[float]]] = defaultdict(lambda: defaultdict(list))
    for row in rows:
        if row["embb_satisfaction"] == "":
            continue
        key = (row["density"], row["mode"])
        acc[key][float(row["epsilon"])].append(float(row["embb_satisfaction"]))
    if not acc:
        return None
    fig, ax = plt.subplots(figsize=(5.6, 3.8))
    for (density, mode), by_eps in sorted(acc.items()):
        eps = sorted(by_eps)
        sat = [float(np.mean(by_eps[e])) for e in eps]
        ax.plot(eps, sat, marker="o", label=f"{density}/{mode}")
    ax.set_xscale("log")
    ax.set_xlabel("reliability budget epsilon")
    ax.set_ylabel("broadband satisfaction fraction")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    _atomic_save(fig, out_path)
    return out_path


def render_loss_ccdf(loss_csv: Path, out_path: Path) -> Path | None:
    rows = _read_csv(loss_csv)
    if not rows:
        return None
    by_h: dict[int, list[tuple[float, float]]] = defaultdict(list)
    for row in rows:
        by_h[int(row["horizon"])].append((float(row["loss_value"]), float(row["ccdf_prob"])))
    fig, ax = plt.subplots(figsize=(5.6, 3.8))
    for h in sorted(by_h):
        pts = sorted(by_h[h])
        ax.plot([p[0] for p in pts], [p[1] for p in pts],
                drawstyle="steps-post", label=f"lookahead {h}")
    ax.set_xlabel("beam selection loss")
    ax.set_ylabel("P(loss > x)")
    ax.set_ylim(bottom=0.0)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    _atomic_save(fig, out_path)
    return out_path


def render_mi_cca(mi_csv: Path, out_path: Path) -> Path | None:
    rows = _read_csv(mi_csv)
    if not rows:
        return None
    bins = [int(r["angular_bins"]) for r in rows]
    mi = [float(r["mi_nats"]) for r in rows]
    rho = [float(r["canonical_corr"]) for r in rows]
    fig, ax = plt.subplots(figsize=(5.6, 3.8))
    ax.plot(bins, mi, marker="s", color="tab:blue", label="mutual information (nats)")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("angular resolution (bins)")
    ax.set_ylabel("mutual information (nats)", color="tab:blue")
    ax2 = ax.twinx()
    ax2.plot(bins, rho, marker="^", color="tab:red", label="canonical correlation")
    ax2.set_ylabel("first canonical correlation", color="tab:red")
    ax2.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    _atomic_save(fig, out_path)
    return out_path


def render_all(out_dir: Path) -> dict[str, Path]:
    out_dir = Path(out_dir)
    written: dict[str, Path] = {}
    jobs = [
        ("fig_epsilon_trend", "metrics.csv", render_epsilon_trend, "fig_epsilon_trend.png"),
        ("fig_loss_ccdf", "loss_ccdf.csv", render_loss_ccdf, "fig_loss_ccdf.png"),
        ("fig_mi_cca", "mi_cca.csv", render_mi_cca, "fig_mi_cca.png"),
    ]
    for key, src, fn, dst in jobs:
        src_path = out_dir / src
        if not src_path.exists():
            continue
        result = fn(src_path, out_dir / dst)
        if result is not None:
            written[key] = result
    return written
