"""Figures written next to the CSV outputs (opt-in via ``[eval] plots = true`` or ``--plots``)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _ecdf(ax, values, label=None, **kw):
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        return
    ax.step(v, np.arange(1, v.size + 1) / v.size, where="post", label=label, **kw)


def plot_run(metrics, cfg, out_dir: Path) -> list:
    """DL throughput and VoIP delay CDFs for one evaluation run."""
    out_dir = Path(out_dir)
    tpt = np.asarray(metrics.dl_bits, dtype=float) / cfg.grid.tti_duration / 1e6
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    _ecdf(a1, tpt)
    a1.set_xlabel("DL cell throughput [Mbit/s]")
    a1.set_ylabel("CDF")
    _ecdf(a2, metrics.voip_delays() * 1e3)
    a2.axvline(cfg.scenario.voip_max_delay * 1e3, color="k", ls=":", lw=1)
    a2.set_xlabel("VoIP packet delay [ms]")
    fig.tight_layout()
    path = out_dir / "cdfs.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path]


def plot_sweep(rows, path: Path) -> Path:
    counts = [c for c, _ in rows]
    mbps = [v / 1e6 for _, v in rows]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(counts, mbps, "o-")
    ax.set_xlabel("VoIP users")
    ax.set_ylabel("mean DL throughput [Mbit/s]")
    ax.set_ylim(bottom=0)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_training(log_lines, path: Path) -> Path:
    rows = [line.split(",") for line in log_lines]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    if rows:
        steps = np.array([int(r[0]) for r in rows])
        loss = np.array([float(r[1]) for r in rows])
        ax.semilogy(steps, np.maximum(loss, 1e-12), lw=0.6)
    ax.set_xlabel("learner step")
    ax.set_ylabel("loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
