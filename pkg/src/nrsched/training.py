"""Actor/learner training orchestration (deterministic interleaved or threaded)."""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .envs import SchedulingEnv, ToySortEnv
from .neural import ParamSet, save_checkpoint
from .qadra import Actor, Learner, Networks, exploration_base, learner_step
from .replay import ReplayBuffer
from .sortmdp import FeatureStats

log = logging.getLogger(__name__)

LOG_HEADER = "step,loss,mean_abs_td,epsilon,buffer_size,param_version,stale_updates"


def make_env(cfg: ExperimentConfig, seed):
    if cfg.run.env == "toysort":
        return ToySortEnv(cfg.toysort.list_len, cfg.toysort.max_value, seed)
    return SchedulingEnv(cfg.traffic_config(), cfg.grid_config(), cfg.reward.omega, cfg.reward_norms(),
                         cfg.scenario.fb_saturation_bits, seed)


@dataclass
class TrainResult:
    params: ParamSet
    stats: FeatureStats
    log_lines: list = field(default_factory=list)
    learner_steps: int = 0
    actor_ttis: int = 0
    checkpoint: Path | None = None
    runtime: float = 0.0


class Trainer:
    """Owns the replay buffer, the learner, and ``n_actors`` actors with their environments."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        t = cfg.training
        root = np.random.SeedSequence(cfg.run.seed)
        s_init, s_learn, *s_actors = root.spawn(2 + 2 * t.n_actors)
        self.nets = Networks(cfg.arch())
        params = self.nets.init_params(np.random.default_rng(s_init))
        self.learner = Learner(self.nets, params, lr=t.lr, gamma=t.gamma, target_mode=t.target_mode,
                               target_period=t.target_period, max_grad_norm=t.max_grad_norm,
                               beta1=t.adam_beta1, beta2=t.adam_beta2, eps=t.adam_eps)
        self.learn_rng = np.random.default_rng(s_learn)
        prioritized = t.replay_mode == "prioritized"
        self.buffer = ReplayBuffer(t.replay_capacity, t.warmup, t.alpha if prioritized else 0.0, t.replay_mode)
        self.actors = []
        for i in range(t.n_actors):
            env_seed, act_seed = s_actors[2 * i], s_actors[2 * i + 1]
            env = make_env(cfg, env_seed)
            self.actors.append(Actor(env, self.nets, np.random.default_rng(act_seed), t.sync_every))
        self.stats = FeatureStats()
        self.total_ttis = 0
        self.warmup_end: int | None = None
        self.log_lines: list[str] = []
        self._lock = threading.Lock()
        self._ckpt_dir: Path | None = None

    # ------------------------------------------------------------ pieces
    def _base(self) -> float | None:
        if self.warmup_end is None:
            return None
        t = self.cfg.training
        return exploration_base(self.total_ttis - self.warmup_end, t.explore_horizon, t.explore_start, t.explore_end)

    def _beta(self) -> float:
        t = self.cfg.training
        span = max(t.total_ttis - (self.warmup_end or 0), 1)
        frac = min(max((self.total_ttis - (self.warmup_end or 0)) / span, 0.0), 1.0)
        return t.beta_start + (t.beta_end - t.beta_start) * frac

    def _actor_tti(self, actor: Actor) -> None:
        if actor.ttis % actor.sync_every == 0:
            if self.warmup_end is None:
                actor.sync(None, None, None)
            else:
                with self._lock:
                    snap = self.learner.snapshot()
                actor.sync(snap, self.stats, self._base())
        seq = actor.act()
        if seq is not None:
            self.buffer.push(seq)

    def _maybe_start_learning(self) -> bool:
        if self.warmup_end is None and self.buffer.is_ready() and len(self.buffer) > 0:
            self.stats = FeatureStats.fit(self.buffer.feature_corpus())
            self.warmup_end = self.total_ttis
            log.info("warm-up done after %d TTIs; feature stats frozen", self.total_ttis)
        return self.warmup_end is not None

    def _learn(self) -> None:
        t = self.cfg.training
        with self._lock:
            loss, td = learner_step(self.learner, self.buffer, self.stats, t.batch_size, self._beta(),
                                    self.learn_rng)
            version = self.learner.params.version
        eps = float(np.mean([a.epsilon for a in self.actors]))
        self.log_lines.append(
            f"{self.learner.steps},{loss!r},{float(np.mean(td))!r},{eps!r},{len(self.buffer)},"
            f"{version},{self.buffer.stale_updates}"
        )
        every = t.checkpoint_every
        if every and self.learner.steps % every == 0 and self._ckpt_dir is not None:
            self.save(self._ckpt_dir / f"checkpoint_{self.learner.steps:07d}.npz")

    # ------------------------------------------------------------ drivers
    def run(self, out_dir=None) -> TrainResult:
        start = time.perf_counter()
        self._ckpt_dir = Path(out_dir) if out_dir is not None else None
        if self._ckpt_dir is not None:
            self._ckpt_dir.mkdir(parents=True, exist_ok=True)
        if self.cfg.run.deterministic:
            self._run_interleaved()
        else:
            self._run_threaded()
        result = TrainResult(self.learner.params, self.stats, self.log_lines, self.learner.steps,
                             self.total_ttis, runtime=time.perf_counter() - start)
        if self._ckpt_dir is not None:
            result.checkpoint = self._ckpt_dir / "checkpoint.npz"
            self.save(result.checkpoint)
            (self._ckpt_dir / "training_log.csv").write_text("\n".join([LOG_HEADER, *self.log_lines]) + "\n")
        return result

    def _run_interleaved(self) -> None:
        t = self.cfg.training
        budget = t.total_ttis
        since_learn = 0
        while self.total_ttis < budget:
            for actor in self.actors:
                if self.total_ttis >= budget:
                    break
                self._actor_tti(actor)
                self.total_ttis += 1
                since_learn += 1
                if since_learn >= t.actor_ttis_per_learner_step:
                    since_learn = 0
                    if self._maybe_start_learning():
                        self._learn()

    def _run_threaded(self) -> None:
        t = self.cfg.training
        budget = t.total_ttis
        counter_lock = threading.Lock()
        actors_done = threading.Event()
        failed = threading.Event()
        errors = []
        slack = 2 * t.n_actors  # learner steps actors may run ahead by

        def due() -> int:
            if self.warmup_end is None:
                return 0
            return (self.total_ttis - self.warmup_end) // t.actor_ttis_per_learner_step

        def actor_loop(actor):
            try:
                while not failed.is_set():
                    if due() - self.learner.steps > slack:
                        time.sleep(0.0005)
                        continue
                    with counter_lock:
                        if self.total_ttis >= budget:
                            return
                        self.total_ttis += 1
                    self._actor_tti(actor)
                    if self.warmup_end is None:
                        with counter_lock:
                            self._maybe_start_learning()
            except Exception as exc:  # surfaced after join
                errors.append(exc)
                failed.set()

        def learner_loop():
            try:
                while not failed.is_set():
                    if self.warmup_end is None:
                        if actors_done.is_set():
                            return
                        time.sleep(0.001)
                        continue
                    if self.learner.steps < due():
                        self._learn()
                    elif actors_done.is_set():
                        return
                    else:
                        time.sleep(0.0005)
            except Exception as exc:
                errors.append(exc)
                failed.set()

        threads = [threading.Thread(target=actor_loop, args=(a,), daemon=True) for a in self.actors]
        lt = threading.Thread(target=learner_loop, daemon=True)
        for th in threads:
            th.start()
        lt.start()
        for th in threads:
            th.join()
        actors_done.set()
        lt.join()
        if errors:
            raise errors[0]

    def save(self, path) -> None:
        save_checkpoint(path, self.learner.params, self.stats, self.nets.arch,
                        learner_steps=self.learner.steps, actor_ttis=self.total_ttis, env=self.cfg.run.env)


def run_training(cfg: ExperimentConfig, out_dir=None) -> TrainResult:
    return Trainer(cfg).run(out_dir)
