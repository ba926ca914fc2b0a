"""Evaluation runs, baselines, the starvation sweep, summaries and CSV/JSON export."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .envs import ToySortEnv, inversions
from .neural import Checkpoint, check_compatible, load_checkpoint
from .policies import ProportionalFair, RoundRobin
from .qadra import Networks, greedy_order
from .simcore import MetricsLog, Simulator, exceeds_bound
from .sortmdp import feature_matrix

QUANTILES = (0.1, 0.5, 0.9)


def percentiles(samples, quantiles=QUANTILES) -> list:
    """Nearest-rank quantiles: the value at rank ceil(q * n), ranks counted from 1."""
    data = np.sort(np.asarray(samples, dtype=float).ravel())
    if data.size == 0:
        raise ValueError("percentiles of an empty sample")
    n = data.size
    out = []
    for q in quantiles:
        if not 0.0 <= q <= 1.0:
            raise ValueError(f"quantile {q} outside [0, 1]")
        rank = min(max(math.ceil(q * n - 1e-12), 1), n)
        out.append(float(data[rank - 1]))
    return out


class QadraPolicy:
    """Greedy (epsilon = 0) learned sorter behind the baseline policy interface."""

    name = "qadra"

    def __init__(self, ckpt: Checkpoint, fb_saturation: float):
        self.nets = Networks(ckpt.arch)
        self.params = ckpt.params
        self.stats = ckpt.stats
        self.fb_saturation = fb_saturation
        if not self.stats.finalized:
            raise ValueError("checkpoint has no feature statistics (was it trained past warm-up?)")

    def sort(self, flows, tti):
        X = feature_matrix(flows, tti, self.fb_saturation)
        return [flows[i] for i in greedy_order(self.nets, self.params, self.stats, X)]

    def observe(self, outcome, flows):
        pass


def make_policy(cfg: ExperimentConfig, checkpoint=None):
    name = cfg.run.td_policy
    if name == "round_robin":
        return RoundRobin(cfg.run.voip_first)
    if name == "proportional_fair":
        return ProportionalFair(cfg.grid_config(), cfg.pf.smoothing, cfg.pf.floor, cfg.run.voip_first)
    if checkpoint is None:
        raise ValueError("td_policy = qadra needs a checkpoint")
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    arch = ckpt.arch or cfg.arch()
    if arch != cfg.arch():
        raise ValueError(f"checkpoint architecture {arch} differs from config {cfg.arch()}")
    check_compatible(ckpt.params, arch)
    if ckpt.stats.finalized and len(ckpt.stats.mean) != arch.feature_dim:
        raise ValueError("checkpoint feature statistics have the wrong dimension")
    ckpt.arch = arch
    return QadraPolicy(ckpt, cfg.scenario.fb_saturation_bits)


def simulate(cfg: ExperimentConfig, policy, n_ttis: int, seed) -> MetricsLog:
    sim = Simulator(cfg.traffic_config(), cfg.grid_config(), seed)
    all_flows = list(sim.flows.values())
    for _ in range(n_ttis):
        flows = sim.advance_tti()
        order = policy.sort(flows, sim.now)
        outcome = sim.step(order)
        policy.observe(outcome, all_flows)
    return sim.finalize()


@dataclass
class RunSummary:
    policy: str
    n_ttis: int
    tpt_p10: float  # DL throughput percentiles over tpt_window_ttis blocks, bit/s
    tpt_p50: float
    tpt_p90: float
    tpt_mean: float
    voip_packets: int
    delayed_fraction: float
    reward_fb_total: float
    reward_voip_total: float
    runtime_s: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def windowed_throughput(dl_bits, window: int, tti_duration: float) -> np.ndarray:
    """Mean DL rate (bit/s) over consecutive ``window``-TTI blocks; a trailing partial block is dropped
    unless it is the only one."""
    bits = np.asarray(dl_bits, dtype=float)
    n = len(bits) // window
    if n == 0:
        return bits.sum(keepdims=True) / (len(bits) * tti_duration) if len(bits) else bits
    return bits[: n * window].reshape(n, window).sum(axis=1) / (window * tti_duration)


def delayed_fraction(delays, max_delay: float) -> float:
    """Share of VoIP packets whose delay exceeds the bound; 0 when there are none."""
    delays = list(delays)
    if not delays:
        return 0.0
    return sum(exceeds_bound(d, max_delay) for d in delays) / len(delays)


def summarize(cfg: ExperimentConfig, metrics: MetricsLog, policy_name: str, runtime: float) -> RunSummary:
    tti = cfg.grid.tti_duration
    tpt = windowed_throughput(metrics.dl_bits, cfg.eval.tpt_window_ttis, tti)
    p10, p50, p90 = percentiles(tpt) if tpt.size else (0.0, 0.0, 0.0)
    voip = metrics.voip_delays()
    return RunSummary(
        policy=policy_name,
        n_ttis=len(metrics.ttis),
        tpt_p10=p10,
        tpt_p50=p50,
        tpt_p90=p90,
        tpt_mean=float(np.mean(metrics.dl_bits)) / tti if metrics.dl_bits else 0.0,
        voip_packets=int(voip.size),
        delayed_fraction=delayed_fraction(voip, cfg.scenario.voip_max_delay),
        reward_fb_total=float(sum(metrics.reward_fb)),
        reward_voip_total=float(sum(metrics.reward_voip)),
        runtime_s=runtime,
    )


def write_outputs(out_dir, metrics: MetricsLog, summary: RunSummary) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"tti": out / "tti.csv", "delays": out / "delays.csv", "summary": out / "summary.json"}
    with open(paths["tti"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tti", "dl_bits", "ul_bits", "n_scheduled"])
        w.writerows(zip(metrics.ttis, metrics.dl_bits, metrics.ul_bits, metrics.n_scheduled))
    with open(paths["delays"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "created_tti", "delivered_tti", "delay_s"])
        for g, created, delivered, d in metrics.delays:
            w.writerow([g, created, "" if delivered is None else delivered, repr(d)])
    paths["summary"].write_text(summary.to_json() + "\n")
    return paths


def read_delay_csv(path) -> list:
    with open(path, newline="") as fh:
        return [(r["group"], float(r["delay_s"])) for r in csv.DictReader(fh)]


def run_eval(cfg: ExperimentConfig, checkpoint=None, out_dir=None, n_ttis=None, seed=None):
    """Simulate the configured policy greedily; returns (summary, metrics)."""
    n = cfg.eval.eval_ttis if n_ttis is None else n_ttis
    seed = cfg.run.seed + cfg.eval.seed_offset if seed is None else seed
    policy = make_policy(cfg, checkpoint)
    start = time.perf_counter()
    metrics = simulate(cfg, policy, n, seed)
    summary = summarize(cfg, metrics, policy.name, time.perf_counter() - start)
    if out_dir is not None:
        write_outputs(out_dir, metrics, summary)
        if cfg.eval.plots:
            from .report import plot_run

            plot_run(metrics, cfg, Path(out_dir))
    return summary, metrics


def starvation_sweep(cfg: ExperimentConfig, voip_counts, n_ttis=None, seed=None, out_dir=None) -> list:
    """Mean DL throughput (bit/s) of the configured baseline for each VoIP user count."""
    if cfg.run.td_policy == "qadra":
        raise ValueError("the starvation sweep runs a baseline policy")
    n = cfg.eval.eval_ttis if n_ttis is None else n_ttis
    seed = cfg.run.seed if seed is None else seed
    rows = []
    for count in voip_counts:
        c = cfg.replace(scenario={"n_voip": int(count)})
        metrics = simulate(c, make_policy(c), n, seed)
        rows.append((int(count), float(np.mean(metrics.dl_bits)) / cfg.grid.tti_duration if n else 0.0))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n_voip", "mean_dl_bps"])
            w.writerows((c, repr(v)) for c, v in rows)
        if cfg.eval.plots:
            from .report import plot_sweep

            plot_sweep(rows, out / "sweep.png")
    return rows


def toysort_accuracy(ckpt: Checkpoint, cfg: ExperimentConfig, n_lists=None, seed=None) -> float:
    """Share of held-out lists the greedy agent sorts with zero inversions."""
    n_lists = cfg.toysort.eval_lists if n_lists is None else n_lists
    seed = cfg.run.seed + cfg.eval.seed_offset if seed is None else seed
    env = ToySortEnv(cfg.toysort.list_len, cfg.toysort.max_value, seed)
    nets = Networks(ckpt.arch or cfg.arch())
    good = 0
    for _ in range(n_lists):
        values = env.draw()
        order = greedy_order(nets, ckpt.params, ckpt.stats, env.features_of(values))
        good += inversions(values[order]) == 0
    return good / n_lists
