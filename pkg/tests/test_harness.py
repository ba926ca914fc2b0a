import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nrsched.cli import main
from nrsched.config import ExperimentConfig
from nrsched.envs import SchedulingEnv, ToySortEnv, inversions
from nrsched.experiments import (
    delayed_fraction,
    make_policy,
    percentiles,
    read_delay_csv,
    run_eval,
    starvation_sweep,
    toysort_accuracy,
    windowed_throughput,
)
from nrsched.neural import load_checkpoint
from nrsched.sortmdp import RewardNorms
from nrsched.simcore import ResourceGridConfig, TrafficConfig
from nrsched.training import LOG_HEADER, Trainer, run_training

PEAK = 24 * 672 / 0.0005

TINY = ExperimentConfig().replace(
    scenario={"n_voip": 2},
    network={"enc_dense": (8,), "enc_gru": (4,), "q_hidden": (8,)},
    training={"total_ttis": 400, "warmup": 100, "replay_capacity": 1000, "batch_size": 4,
              "explore_horizon": 200, "target_period": 20},
    eval={"eval_ttis": 300},
)


# ----------------------------------------------------------------- percentiles

def test_percentiles_nearest_rank():
    data = [15, 20, 35, 40, 50]
    assert percentiles(data, (0.05, 0.3, 0.4, 0.5, 1.0)) == [15, 20, 20, 35, 50]
    assert percentiles([7.0]) == [7.0, 7.0, 7.0]
    assert percentiles(range(1, 11)) == [1.0, 5.0, 9.0]
    with pytest.raises(ValueError):
        percentiles([])
    with pytest.raises(ValueError):
        percentiles([1.0], (1.5,))


@settings(max_examples=200)
@given(st.lists(st.floats(-1e9, 1e9), min_size=1, max_size=200))
def test_percentiles_monotone_and_members(xs):
    p = percentiles(xs, (0.0, 0.1, 0.5, 0.9, 1.0))
    assert p == sorted(p)
    assert all(v in xs for v in p)
    assert p[-1] == max(xs)


def test_windowed_throughput():
    bits = [10, 20, 30, 40, 50]
    assert list(windowed_throughput(bits, 2, 1.0)) == [15.0, 35.0]
    assert list(windowed_throughput(bits, 1, 0.5)) == [20.0, 40.0, 60.0, 80.0, 100.0]
    assert list(windowed_throughput(bits, 10, 1.0)) == [30.0]
    assert windowed_throughput([], 40, 1.0).size == 0


def test_delayed_fraction():
    assert delayed_fraction([], 0.1) == 0.0
    assert delayed_fraction([0.05, 0.1, 0.1005, 0.3], 0.1) == 0.5


# ----------------------------------------------------------------- evaluation

def test_round_robin_peak_rate(tmp_path):
    cfg = ExperimentConfig().replace(run={"td_policy": "round_robin"}, scenario={"n_voip": 0},
                                     grid={"bler": 0.0})
    summary, metrics = run_eval(cfg, None, tmp_path, n_ttis=500)
    assert summary.tpt_p10 == summary.tpt_p50 == summary.tpt_p90 == summary.tpt_mean == PEAK == 32.256e6
    assert summary.voip_packets == 0 and summary.delayed_fraction == 0.0
    assert (tmp_path / "tti.csv").read_text().splitlines()[0] == "tti,dl_bits,ul_bits,n_scheduled"


def test_empty_scenario(tmp_path):
    cfg = ExperimentConfig().replace(run={"td_policy": "round_robin"},
                                     scenario={"n_voip": 0, "full_buffer": False})
    summary, _ = run_eval(cfg, None, tmp_path, n_ttis=100)
    assert summary.tpt_mean == summary.tpt_p90 == 0.0
    assert summary.voip_packets == 0
    rows = list(csv.reader(open(tmp_path / "delays.csv")))
    assert rows == [["group", "created_tti", "delivered_tti", "delay_s"]]


@pytest.mark.parametrize("policy", ["round_robin", "proportional_fair"])
def test_summary_consistent_with_csv(tmp_path, policy):
    cfg = ExperimentConfig().replace(run={"td_policy": policy}, scenario={"n_voip": 20})
    summary, metrics = run_eval(cfg, None, tmp_path, n_ttis=3000)
    loaded = json.loads((tmp_path / "summary.json").read_text())
    rows = read_delay_csv(tmp_path / "delays.csv")
    voip = [d for g, d in rows if g == "VOIP"]
    assert len(voip) == loaded["voip_packets"] == summary.voip_packets
    assert delayed_fraction(voip, 0.1) == loaded["delayed_fraction"] == summary.delayed_fraction
    tti = list(csv.DictReader(open(tmp_path / "tti.csv")))
    bits = [int(r["dl_bits"]) for r in tti]
    tpt = [sum(bits[i : i + 40]) / (40 * 0.0005) for i in range(0, len(bits) - 39, 40)]
    assert percentiles(tpt) == [loaded["tpt_p10"], loaded["tpt_p50"], loaded["tpt_p90"]]
    assert all(int(r["dl_bits"]) <= 24 * 672 for r in tti)
    assert loaded["tpt_p10"] <= loaded["tpt_p50"] <= loaded["tpt_p90"]
    assert 0.0 <= loaded["delayed_fraction"] <= 1.0


def test_baseline_eval_is_seed_deterministic(tmp_path):
    cfg = ExperimentConfig().replace(run={"td_policy": "proportional_fair"}, scenario={"n_voip": 8})
    run_eval(cfg, None, tmp_path / "a", n_ttis=1000)
    run_eval(cfg, None, tmp_path / "b", n_ttis=1000)
    for name in ("tti.csv", "delays.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_sweep_single_count():
    cfg = ExperimentConfig().replace(run={"td_policy": "round_robin"}, grid={"bler": 0.0})
    assert starvation_sweep(cfg, [0], n_ttis=200) == [(0, PEAK)]
    with pytest.raises(ValueError):
        starvation_sweep(cfg.replace(run={"td_policy": "qadra"}), [0], n_ttis=10)


def test_sweep_non_increasing_small():
    cfg = ExperimentConfig().replace(run={"td_policy": "round_robin"})
    rows = starvation_sweep(cfg, [0, 10, 20], n_ttis=2000)
    tpt = [v for _, v in rows]
    assert tpt == sorted(tpt, reverse=True)


def test_qadra_needs_checkpoint():
    with pytest.raises(ValueError):
        make_policy(ExperimentConfig())


# ----------------------------------------------------------------- environments

def test_inversions_oracle():
    assert inversions([1, 2, 3]) == 0
    assert inversions([3, 2, 1]) == 3
    assert inversions([2, 1, 4, 3]) == 2


def test_toysort_env():
    env = ToySortEnv(4, 100, seed=0)
    X = env.reset()
    values = X[:, 0].copy()
    assert len(set(values)) == 4
    reward, nxt = env.step(np.argsort(values))
    assert reward == 0.0 and nxt.shape == (4, 6)
    env.values = np.array([4, 3, 2, 1])
    assert env.step([0, 1, 2, 3])[0] == -6.0


def test_scheduling_env_reward():
    env = SchedulingEnv(TrafficConfig(n_voip=0), ResourceGridConfig(bler=0.0), (1, 0), RewardNorms(), 16128.0, 0)
    X = env.reset()
    assert X.shape == (1, 6)
    r, _ = env.step([0])
    assert r == pytest.approx(16128 / 200000)


def _discounted_return(first, omega, gamma, n_ttis=1400, start=1000):
    # exact per-step return of a fixed ordering rule: one MDP step per list element,
    # reward on the last step of each TTI, averaged over start TTIs after burn-in
    env = SchedulingEnv(TrafficConfig(n_voip=5), ResourceGridConfig(bler=0.0), omega, RewardNorms(), 16128.0, 3)
    X = env.reset()
    lengths, rewards, tpt = [], [], 0.0
    for _ in range(n_ttis):
        order = sorted(range(len(X)), key=lambda i: (X[i, 1] != first, i))
        r, nxt = env.step(order)
        lengths.append(len(X))
        rewards.append(r)
        tpt += env.last_reward_vector.fb
        X = nxt
    L, R = np.array(lengths), np.array(rewards)
    vals = [np.sum(gamma ** (np.cumsum(L[s:]) - 1) * R[s:]) for s in range(start, start + 200)]
    return float(np.mean(vals)), tpt


@pytest.mark.parametrize("gamma", [0.5, 0.9, 0.99])
def test_step_discount_favours_short_lists(gamma):
    # starving VoIP keeps their flows in every later list, so each TTI costs more
    # discount steps; under the throughput-only reward that outweighs the extra bits
    fb_val, fb_tpt = _discounted_return(0, (1, 0), gamma)
    vo_val, vo_tpt = _discounted_return(1, (1, 0), gamma)
    assert fb_tpt > vo_tpt
    assert vo_val > 2 * fb_val


# ----------------------------------------------------------------- training

def test_zero_budget_training(tmp_path):
    cfg = TINY.replace(training={"total_ttis": 0})
    init = Trainer(cfg).learner.params.flat().copy()
    result = run_training(cfg, tmp_path)
    assert result.learner_steps == 0 and result.log_lines == []
    assert np.array_equal(load_checkpoint(result.checkpoint).params.flat(), init)
    assert (tmp_path / "training_log.csv").read_text() == LOG_HEADER + "\n"


def test_training_log_and_determinism(tmp_path):
    a = run_training(TINY, tmp_path / "a")
    b = run_training(TINY, tmp_path / "b")
    log_a = (tmp_path / "a" / "training_log.csv").read_bytes()
    assert log_a == (tmp_path / "b" / "training_log.csv").read_bytes()
    lines = log_a.decode().splitlines()
    assert lines[0] == LOG_HEADER
    # 100 warm-up TTIs, then one learner step per 4 actor TTIs
    assert a.learner_steps == len(lines) - 1 == (400 - 100) // 4 + 1
    first = lines[1].split(",")
    assert int(first[0]) == 1 and int(first[4]) >= 100
    assert np.array_equal(a.params.flat(), b.params.flat())


def test_warmup_freezes_stats_and_epsilon(tmp_path):
    tr = Trainer(TINY.replace(training={"total_ttis": 99}))
    tr.run()
    assert tr.warmup_end is None and not tr.stats.finalized
    assert all(a.epsilon == 1.0 for a in tr.actors)
    tr = Trainer(TINY)
    tr.run()
    assert tr.warmup_end == 100 and tr.stats.finalized
    assert all(a.epsilon < 1.0 for a in tr.actors)


def test_threaded_training_runs(tmp_path):
    cfg = TINY.replace(run={"deterministic": False})
    result = run_training(cfg, tmp_path)
    assert result.actor_ttis == 400
    assert result.learner_steps >= 1
    ck = load_checkpoint(result.checkpoint)
    assert ck.stats.finalized


def test_periodic_checkpoints(tmp_path):
    run_training(TINY.replace(training={"checkpoint_every": 25}), tmp_path)
    assert (tmp_path / "checkpoint_0000025.npz").exists()
    assert (tmp_path / "checkpoint_0000075.npz").exists()


def test_trained_checkpoint_evaluates(tmp_path):
    result = run_training(TINY, tmp_path / "train")
    summary, _ = run_eval(TINY, result.checkpoint, tmp_path / "eval", n_ttis=200)
    assert summary.policy == "qadra" and summary.n_ttis == 200
    other = TINY.replace(network={"q_hidden": (16,)})
    with pytest.raises(ValueError):
        make_policy(other, result.checkpoint)


def test_toysort_accuracy_runs(tmp_path):
    cfg = TINY.replace(run={"env": "toysort"}, toysort={"eval_lists": 20})
    result = run_training(cfg, tmp_path)
    acc = toysort_accuracy(load_checkpoint(result.checkpoint), cfg)
    assert 0.0 <= acc <= 1.0


# ----------------------------------------------------------------- CLI

def test_cli_baseline_and_sweep(tmp_path, capsys):
    ini = tmp_path / "c.ini"
    ini.write_text("[eval]\neval_ttis = 400\n[scenario]\nn_voip = 3\n")
    assert main(["baseline", "--config", str(ini), "--policy", "round_robin", "--out", str(tmp_path / "b")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["policy"] == "round_robin" and out["n_ttis"] == 400
    assert main(["sweep", "--config", str(ini), "--counts", "0,2", "--ttis", "100",
                 "--out", str(tmp_path / "s")]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "n_voip,mean_dl_bps"
    assert (tmp_path / "s" / "sweep.csv").exists()


def test_cli_train_eval_inspect(tmp_path, capsys):
    ini = tmp_path / "tiny.ini"
    TINY.save(ini)
    out = tmp_path / "run"
    assert main(["train", "--config", str(ini), "--out", str(out), "--deterministic", "--seed", "3"]) == 0
    assert (out / "checkpoint.npz").exists() and (out / "config.ini").exists()
    capsys.readouterr()
    assert main(["eval", "--config", str(ini), "--checkpoint", str(out / "checkpoint.npz"),
                 "--out", str(tmp_path / "ev"), "--ttis", "100"]) == 0
    assert json.loads(capsys.readouterr().out)["policy"] == "qadra"
    assert main(["inspect-checkpoint", str(out / "checkpoint.npz")]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["meta"]["format"] == "nrsched-checkpoint-1"


def test_cli_plots(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[eval]\neval_ttis = 200\n")
    assert main(["baseline", "--config", str(ini), "--policy", "round_robin", "--plots",
                 "--out", str(tmp_path)]) == 0
    assert (tmp_path / "cdfs.png").stat().st_size > 0


@pytest.mark.parametrize("argv", [
    ["baseline", "--config", "/nonexistent.ini"],
    ["eval", "--checkpoint", "/nonexistent.npz"],
    ["inspect-checkpoint", "/nonexistent.npz"],
    ["baseline"],  # default td_policy is qadra, which is not a baseline
])
def test_cli_errors_exit_nonzero(argv, capsys):
    assert main(argv) == 1
    assert "error" in capsys.readouterr().err


def test_cli_bad_config_key(tmp_path, capsys):
    ini = tmp_path / "bad.ini"
    ini.write_text("[training]\nwarmup_ttis = 5\n")
    assert main(["baseline", "--config", str(ini), "--policy", "round_robin"]) == 1
    assert "unknown key" in capsys.readouterr().err
