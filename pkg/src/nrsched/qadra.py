"""Learned time-domain scheduler: epsilon-greedy selection-sort actor and sequence DQN learner."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .neural import Adam, Arch, Encoder, ParamSet, QNet
from .replay import ReplayBuffer, SortSequence
from .sortmdp import FeatureStats, normalize, order_indices


def epsilon_schedule(p: int, a: float) -> float:
    if not 0.0 < a <= 1.0:
        raise ValueError("exploration base must lie in (0, 1]")
    return a ** (1 + p % 8)


def exploration_base(ttis: float, horizon: float, start: float = 1.0, end: float = 0.4) -> float:
    """Exponential decay from ``start`` to ``end`` over ``horizon`` TTIs, then flat."""
    if horizon <= 0:
        return end
    frac = min(max(ttis / horizon, 0.0), 1.0)
    return start * (end / start) ** frac


class Networks:
    """Architecture-bound forward helpers shared by actor and learner."""

    def __init__(self, arch: Arch):
        self.arch = arch
        self.encoder = Encoder(arch)
        self.qnet = QNet(arch)

    def init_params(self, rng) -> ParamSet:
        return ParamSet.initialize(self.arch, rng)

    def encode_list(self, enc_params, X: np.ndarray) -> np.ndarray:
        """Final encoder state for one list X (N, F); zeros for an empty list."""
        if len(X) == 0:
            return np.zeros(self.arch.state_dim)
        return self.encoder.encode(enc_params, X[None])[0]

    def q_values(self, psi, s_i, s_o, X) -> np.ndarray:
        n = len(X)
        Z = np.concatenate([np.broadcast_to(s_i, (n, len(s_i))), np.broadcast_to(s_o, (n, len(s_o))), X], axis=1)
        return self.qnet.predict(psi, Z)


def dqn_target(nets: Networks, s_minus, flows, psi, psi_minus, mode="double") -> float:
    """Bootstrap value of a state over candidate ``flows`` (rows of normalized features).

    ``s_minus`` is the concatenated (input, output) target-network state.
    """
    if len(flows) == 0:
        raise ValueError("bootstrap needs at least one candidate flow")
    S = nets.arch.state_dim
    s_i, s_o = s_minus[:S], s_minus[S:]
    q_target = nets.q_values(psi_minus, s_i, s_o, flows)
    if mode == "vanilla":
        return float(q_target.max())
    if mode == "double":
        j = int(np.argmax(nets.q_values(psi, s_i, s_o, flows)))
        return float(q_target[j])
    raise ValueError(f"unknown target mode {mode!r}")


def actor_sort(nets: Networks, params: ParamSet, X: np.ndarray, epsilon: float, rng) -> list[int]:
    """Epsilon-greedy selection sort of normalized rows X; returns the action trace.

    The input-list state is computed once from the full list; the output
    state advances with every chosen element.  Network work is done lazily,
    so a fully random step costs nothing.
    """
    n = len(X)
    remaining = list(range(n))
    actions = []
    s_i = None
    s_o = np.zeros(nets.arch.state_dim)
    d_o = nets.encoder.zero_state(1)
    fed = 0  # chosen elements already pushed through the output encoder
    chosen = []
    for k in range(n):
        m = len(remaining)
        if m == 1:
            a = 0
        elif epsilon > 0 and rng.random() < epsilon:
            a = int(rng.integers(m))
        else:
            if s_i is None:
                s_i = nets.encode_list(params.phi, X)
            while fed < len(chosen):
                s, d_o = nets.encoder.step(params.theta, X[chosen[fed]][None], d_o)
                s_o = s[0]
                fed += 1
            q = nets.q_values(params.psi, s_i, s_o, X[remaining])
            a = int(np.argmax(q))
        actions.append(a)
        chosen.append(remaining.pop(a))
    return actions


# ---------------------------------------------------------------- learner

@dataclass
class Batch:
    """Padded, normalized learner batch."""

    X: np.ndarray  # (B, T, F) input list in stored order
    Y: np.ndarray  # (B, T, F) same rows in selection order
    mask: np.ndarray  # (B, T)
    lengths: np.ndarray  # (B,)
    Xn: np.ndarray  # (B, Tn, F) next list
    mask_n: np.ndarray
    lengths_n: np.ndarray
    rewards: np.ndarray  # (B,)
    weights: np.ndarray  # (B,) importance weights

    @classmethod
    def build(cls, seqs, stats: FeatureStats, weights=None) -> "Batch":
        B = len(seqs)
        F = seqs[0].features.shape[1]
        lengths = np.array([len(s.features) for s in seqs])
        lengths_n = np.array([len(s.next_features) for s in seqs])
        T, Tn = int(lengths.max()), max(int(lengths_n.max()), 1)
        X = np.zeros((B, T, F))
        Y = np.zeros((B, T, F))
        Xn = np.zeros((B, Tn, F))
        for b, s in enumerate(seqs):
            x = normalize(s.features, stats)
            X[b, : len(x)] = x
            Y[b, : len(x)] = x[order_indices(len(x), s.actions)]
            if len(s.next_features):
                Xn[b, : len(s.next_features)] = normalize(s.next_features, stats)
        mask = np.arange(T)[None, :] < lengths[:, None]
        mask_n = np.arange(Tn)[None, :] < lengths_n[:, None]
        rewards = np.array([s.reward for s in seqs], dtype=float)
        w = np.ones(B) if weights is None else np.asarray(weights, dtype=float)
        return cls(X, Y, mask, lengths, Xn, mask_n, lengths_n, rewards, w)


def compute_targets(nets: Networks, online: ParamSet, target: ParamSet, batch: Batch, gamma: float,
                    mode: str = "double") -> np.ndarray:
    """TD targets y (B, T) for every step of every sequence; zero on padding."""
    enc, qnet = nets.encoder, nets.qnet
    S = nets.arch.state_dim
    B, T, _ = batch.X.shape
    s_i = enc.encode(target.phi, batch.X, batch.mask)
    h_o, _ = enc.forward_seq(target.theta, batch.Y, batch.mask)

    # intermediate step k: next state = (s_i, output state after a_k); candidates Y[k+1:]
    inter = np.zeros((B, T))
    bb, kk, jj = [], [], []
    for b, n in enumerate(batch.lengths):
        k, j = np.triu_indices(int(n), 1)
        bb.append(np.full(len(k), b))
        kk.append(k)
        jj.append(j)
    bb, kk, jj = (np.concatenate(v).astype(np.int64) for v in (bb, kk, jj))
    if len(bb):
        Z = np.concatenate([s_i[bb], h_o[bb, kk], batch.Y[bb, jj]], axis=1)
        inter = _grouped_bootstrap(nets, online, target, Z, bb, kk, jj, (B, T, T), mode)

    # terminal step: fresh input state from the next list, output state reset
    term = np.zeros(B)
    has_next = batch.lengths_n > 0
    if has_next.any():
        s_n = enc.encode(target.phi, batch.Xn, batch.mask_n)
        bn, jn = np.nonzero(batch.mask_n)
        Z = np.concatenate([s_n[bn], np.zeros((len(bn), S)), batch.Xn[bn, jn]], axis=1)
        term = _grouped_bootstrap(nets, online, target, Z, bn, np.zeros_like(bn), jn,
                                  (B, 1, batch.Xn.shape[1]), mode)[:, 0]
        term = np.where(has_next, term, 0.0)

    y = gamma * inter
    last = batch.lengths - 1
    y[np.arange(B), last] = batch.rewards + gamma * term
    return np.where(batch.mask, y, 0.0)


def _grouped_bootstrap(nets, online, target, Z, bb, kk, jj, shape, mode):
    qt = np.full(shape, -np.inf)
    qt[bb, kk, jj] = nets.qnet.predict(target.psi, Z)
    if mode == "vanilla":
        out = qt.max(axis=2)
    elif mode == "double":
        qo = np.full(shape, -np.inf)
        qo[bb, kk, jj] = nets.qnet.predict(online.psi, Z)
        jstar = np.argmax(qo, axis=2)
        out = np.take_along_axis(qt, jstar[..., None], axis=2)[..., 0]
    else:
        raise ValueError(f"unknown target mode {mode!r}")
    return np.where(np.isfinite(out), out, 0.0)


def loss_and_grad(nets: Networks, params: ParamSet, batch: Batch, y: np.ndarray, need_grad: bool = True):
    """Importance-weighted, length-normalized sequence TD loss and its gradient.

    loss = (1/B) sum_b w_b / N_b * sum_k 0.5 * (y_bk - Q(s_bk, x_{a_bk}))^2
    with s_bk = (input-list state, output state after a_b1..a_b(k-1)).
    Returns (loss, grads or None, per-step TD errors (B, T)).
    """
    enc, qnet = nets.encoder, nets.qnet
    S = nets.arch.state_dim
    B, T, F = batch.X.shape
    h_i, c_i = enc.forward_seq(params.phi, batch.X, batch.mask)
    h_o, c_o = enc.forward_seq(params.theta, batch.Y, batch.mask)
    s_i = h_i[:, -1]
    s_o = np.concatenate([np.zeros((B, 1, S)), h_o[:, :-1]], axis=1)
    Zg = np.concatenate([np.broadcast_to(s_i[:, None], (B, T, S)), s_o, batch.Y], axis=2)
    rows = batch.mask
    q, qc = qnet.forward(params.psi, Zg[rows])
    delta = np.zeros((B, T))
    delta[rows] = y[rows] - q
    coef = batch.weights / (B * batch.lengths)
    loss = float(0.5 * np.sum(coef[:, None] * delta * delta))
    if not need_grad:
        return loss, None, delta
    grads = params.zeros_like()
    dq = -(coef[:, None] * delta)[rows]
    dZ = qnet.backward(params.psi, qc, dq, grads.psi)
    dZg = np.zeros((B, T, Zg.shape[2]))
    dZg[rows] = dZ
    dh_i = np.zeros_like(h_i)
    dh_i[:, -1] = dZg[:, :, :S].sum(axis=1)
    enc.backward_seq(params.phi, c_i, dh_i, grads.phi)
    dh_o = np.zeros_like(h_o)
    dh_o[:, :-1] = dZg[:, 1:, S : 2 * S]
    enc.backward_seq(params.theta, c_o, dh_o, grads.theta)
    return loss, grads, delta


class Learner:
    def __init__(self, nets: Networks, params: ParamSet, lr=1e-4, gamma=0.99, target_mode="double",
                 target_period=2500, max_grad_norm=None, beta1=0.9, beta2=0.999, eps=1e-8):
        self.nets = nets
        self.params = params
        self.target = params.copy()
        self.gamma = gamma
        self.target_mode = target_mode
        self.target_period = target_period
        self.opt = Adam(lr, beta1, beta2, eps, max_grad_norm)
        self.steps = 0
        self._snapshot = None

    def refixate(self) -> None:
        self.target = self.params.copy()

    def snapshot(self) -> ParamSet:
        """Read-only copy of the online parameters, shared until the next update."""
        snap = self._snapshot
        if snap is None or snap.version != self.params.version:
            snap = self.params.copy()
            self._snapshot = snap
        return snap

    def step(self, seqs, weights, stats: FeatureStats):
        """One update on a sampled batch; returns (loss, per-sequence mean |TD|)."""
        batch = Batch.build(seqs, stats, weights)
        y = compute_targets(self.nets, self.params, self.target, batch, self.gamma, self.target_mode)
        loss, grads, delta = loss_and_grad(self.nets, self.params, batch, y)
        if not math.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at learner step {self.steps}")
        self.opt.step(self.params, grads)
        self.steps += 1
        if self.target_period and self.steps % self.target_period == 0:
            self.refixate()
        td = np.abs(delta).sum(axis=1) / batch.lengths
        return loss, td


def learner_step(learner: Learner, buffer: ReplayBuffer, stats: FeatureStats, batch_size: int,
                 beta: float, rng, alpha=None):
    """Sample, update, and write back sequence priorities."""
    if not buffer.is_ready():
        raise RuntimeError("replay buffer is not ready")
    seqs, weights, handles = buffer.sample(batch_size, alpha=alpha, beta=beta, rng=rng)
    loss, td = learner.step(seqs, weights, stats)
    buffer.update_priorities(handles, td)
    return loss, td


# ---------------------------------------------------------------- actor

class Actor:
    """Runs one environment, sorting each TTI and pushing sequences to the replay."""

    def __init__(self, env, nets: Networks, rng, sync_every: int = 10):
        self.env = env
        self.nets = nets
        self.rng = rng
        self.sync_every = sync_every
        self.params: ParamSet | None = None
        self.stats: FeatureStats | None = None
        self.epsilon = 1.0
        self.p = 0
        self.ttis = 0
        self.current = env.reset()

    def sync(self, params: ParamSet, stats, base: float | None) -> None:
        """Pull parameters; ``base=None`` keeps epsilon at 1 (warm-up)."""
        self.params = params
        self.stats = stats
        self.epsilon = 1.0 if base is None else epsilon_schedule(self.p, base)
        self.p += 1

    def act(self) -> SortSequence:
        X = self.current
        if len(X) == 0:
            actions = []
        elif self.epsilon >= 1.0 or self.params is None:
            actions = actor_sort(self.nets, self.params, X, 1.0, self.rng)
        else:
            actions = actor_sort(self.nets, self.params, normalize(X, self.stats), self.epsilon, self.rng)
        reward, nxt = self.env.step(order_indices(len(X), actions))
        self.ttis += 1
        self.current = nxt
        if len(X) == 0:
            return None
        return SortSequence(X, actions, reward, nxt)


def greedy_order(nets: Networks, params: ParamSet, stats: FeatureStats, X: np.ndarray) -> np.ndarray:
    if len(X) == 0:
        return np.zeros(0, dtype=int)
    actions = actor_sort(nets, params, normalize(X, stats), 0.0, None)
    return order_indices(len(X), actions)
