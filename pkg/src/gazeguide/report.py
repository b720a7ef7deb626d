"""Figure rendering for sweep output.

Reads the metrics CSV the sweep writes and drops a small set of summary
figures next to it: acquisition time against marker spacing, step counts,
and the t_i distribution.
"""
from __future__ import annotations

import csv
import os
from collections import defaultdict
from statistics import median
from typing import List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _load_rows(csv_path: str) -> List[dict]:
    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def render_sweep_figures(csv_path: str, out_dir: str) -> List[str]:
    """Render summary figures for a sweep CSV; returns the written paths."""
    rows = _load_rows(csv_path)
    os.makedirs(out_dir, exist_ok=True)
    written = []

    # Median acquisition time per (delta_d, delta_t) cell.
    by_cell = defaultdict(list)
    for r in rows:
        if r["t_i_us"]:
            by_cell[(float(r["delta_d_m"]), int(r["delta_t_ms"]))].append(
                int(r["t_i_us"]) / 1000.0)
    fig, ax = plt.subplots(figsize=(6, 4))
    delta_ts = sorted({k[1] for k in by_cell})
    for dt in delta_ts:
        dds = sorted(dd for dd, t in by_cell if t == dt)
        med = [median(by_cell[(dd, dt)]) for dd in dds]
        ax.plot(dds, med, marker="o", label=f"dt = {dt} ms")
    ax.set_xlabel("marker spacing delta_d (m)")
    ax.set_ylabel("median t_i (ms)")
    ax.set_title("Acquisition time vs. marker spacing")
    if delta_ts:
        ax.legend()
    path = os.path.join(out_dir, "t_i_vs_delta_d.png")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    # Steps per episode per delta_d.
    steps_per_episode = defaultdict(int)
    episode_dd = {}
    for r in rows:
        key = r["episode_id"]
        steps_per_episode[key] += 1
        episode_dd[key] = float(r["delta_d_m"])
    by_dd = defaultdict(list)
    for key, count in steps_per_episode.items():
        by_dd[episode_dd[key]].append(count)
    fig, ax = plt.subplots(figsize=(6, 4))
    dds = sorted(by_dd)
    ax.bar(range(len(dds)), [median(by_dd[d]) for d in dds])
    ax.set_xticks(range(len(dds)), [f"{d:g}" for d in dds])
    ax.set_xlabel("marker spacing delta_d (m)")
    ax.set_ylabel("median steps per episode")
    ax.set_title("Chain length vs. marker spacing")
    path = os.path.join(out_dir, "steps_vs_delta_d.png")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    # Distribution of all acquisition times.
    all_ti = [int(r["t_i_us"]) / 1000.0 for r in rows if r["t_i_us"]]
    fig, ax = plt.subplots(figsize=(6, 4))
    if all_ti:
        ax.hist(all_ti, bins=30)
    ax.set_xlabel("t_i (ms)")
    ax.set_ylabel("count")
    ax.set_title("Acquisition time distribution")
    path = os.path.join(out_dir, "t_i_hist.png")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    return written
