"""Dense + GRU list encoders, the Q-network, exact gradients, Adam and checkpoints.

Parameters live in plain dicts of float64 arrays grouped as
``{"phi": input-list encoder, "theta": output-list encoder, "psi": Q-network}``.
Everything is batched over rows; the recurrent passes take a ``(B, T)``
mask so lists of different length can share one padded batch.  Masked
steps carry the hidden state through unchanged.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field

import numpy as np

GROUPS = ("phi", "theta", "psi")


@dataclass(frozen=True)
class Arch:
    feature_dim: int = 6
    enc_dense: tuple = (256, 128)
    enc_gru: tuple = (64, 32, 32)
    q_hidden: tuple = (512, 256, 128, 64)

    @property
    def state_dim(self) -> int:
        return self.enc_gru[-1]

    @property
    def q_input_dim(self) -> int:
        return 2 * self.state_dim + self.feature_dim

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "Arch":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def sigmoid(x):
    # tanh form is overflow-free and cheaper than masked exp
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _glorot(rng, fan_in, fan_out, shape=None):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape or (fan_in, fan_out))


# ---------------------------------------------------------------- dense stacks

def mlp_init(rng, sizes, prefix="") -> dict:
    p = {}
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        p[f"{prefix}dense{i}.W"] = _glorot(rng, a, b)
        p[f"{prefix}dense{i}.b"] = np.zeros(b)
    return p


def mlp_forward(p, prefix, n_layers, x, relu_last):
    cache = []
    a = x
    for i in range(n_layers):
        z = a @ p[f"{prefix}dense{i}.W"] + p[f"{prefix}dense{i}.b"]
        cache.append((a, z))
        a = np.maximum(z, 0.0) if (i < n_layers - 1 or relu_last) else z
    return a, cache


def mlp_backward(p, prefix, n_layers, cache, dout, grads, relu_last):
    d = dout
    for i in reversed(range(n_layers)):
        a, z = cache[i]
        if i < n_layers - 1 or relu_last:
            d = d * (z > 0)
        grads[f"{prefix}dense{i}.W"] += a.T @ d
        grads[f"{prefix}dense{i}.b"] += d.sum(axis=0)
        d = d @ p[f"{prefix}dense{i}.W"].T
    return d


# ---------------------------------------------------------------- GRU layers
#
# z = sig(x Wz + h Uz + bz), r = sig(x Wr + h Ur + br),
# c = tanh(x Wc + (r*h) Uc + bc), h' = (1 - z) h + z c
# W = [Wz | Wr | Wc] (in, 3H), U = [Uz | Ur | Uc] (H, 3H), b (3H,)

def gru_init(rng, n_in, n_hidden, prefix) -> dict:
    H = n_hidden
    W = np.concatenate([_glorot(rng, n_in, H) for _ in range(3)], axis=1)
    U = np.concatenate([_glorot(rng, H, H) for _ in range(3)], axis=1)
    return {f"{prefix}W": W, f"{prefix}U": U, f"{prefix}b": np.zeros(3 * H)}


def gru_cell(p, prefix, x, h):
    W, U, b = p[f"{prefix}W"], p[f"{prefix}U"], p[f"{prefix}b"]
    H = h.shape[1]
    gx = x @ W + b
    gh = h @ U[:, : 2 * H]
    z = sigmoid(gx[:, :H] + gh[:, :H])
    r = sigmoid(gx[:, H : 2 * H] + gh[:, H:])
    c = np.tanh(gx[:, 2 * H :] + (r * h) @ U[:, 2 * H :])
    return h + z * (c - h)


def gru_sequence(p, prefix, inp, mask, n_hidden):
    """Run one GRU layer over ``inp`` (B, T, in); returns states (B, T, H) and a cache."""
    W, U, b = p[f"{prefix}W"], p[f"{prefix}U"], p[f"{prefix}b"]
    B, T, n_in = inp.shape
    H = n_hidden
    gx_all = (inp.reshape(B * T, n_in) @ W + b).reshape(B, T, 3 * H)
    Uzr, Uc = U[:, : 2 * H], U[:, 2 * H :]
    h = np.zeros((B, H))
    out = np.empty((B, T, H))
    steps = []
    for t in range(T):
        gx = gx_all[:, t]
        zr = sigmoid(gx[:, : 2 * H] + h @ Uzr)
        z, r = zr[:, :H], zr[:, H:]
        rh = r * h
        c = np.tanh(gx[:, 2 * H :] + rh @ Uc)
        hn = h + z * (c - h)
        m = mask[:, t]
        if not m.all():
            hn = np.where(m[:, None], hn, h)
        steps.append((h, z, r, rh, c))
        h = hn
        out[:, t] = h
    return out, (inp, mask, steps)


def gru_sequence_backward(p, prefix, cache, dout, grads):
    """BPTT for one layer; accumulates parameter grads and returns d(inp)."""
    inp, mask, steps = cache
    W, U = p[f"{prefix}W"], p[f"{prefix}U"]
    B, T, n_in = inp.shape
    H = U.shape[0]
    Uzr_T, Uc_T = U[:, : 2 * H].T, U[:, 2 * H :].T
    dgx_all = np.zeros((B, T, 3 * H))
    dU = grads[f"{prefix}U"]
    carry = np.zeros((B, H))
    maskf = mask.astype(float)
    for t in reversed(range(T)):
        h, z, r, rh, c = steps[t]
        dh = dout[:, t] + carry
        m = maskf[:, t][:, None]
        dhm = dh * m
        dz = dhm * (c - h)
        dac = dhm * z * (1.0 - c * c)
        drh = dac @ Uc_T
        daz = dz * z * (1.0 - z)
        dar = drh * h * r * (1.0 - r)
        dzr = np.concatenate([daz, dar], axis=1)
        dU[:, : 2 * H] += h.T @ dzr
        dU[:, 2 * H :] += rh.T @ dac
        carry = dh * (1.0 - m) + dhm * (1.0 - z) + drh * r + dzr @ Uzr_T
        dgx_all[:, t, : 2 * H] = dzr
        dgx_all[:, t, 2 * H :] = dac
    flat = dgx_all.reshape(B * T, 3 * H)
    grads[f"{prefix}W"] += inp.reshape(B * T, n_in).T @ flat
    grads[f"{prefix}b"] += flat.sum(axis=0)
    return (flat @ W.T).reshape(B, T, n_in)


# ---------------------------------------------------------------- networks

class Encoder:
    """Dense ReLU stack followed by stacked GRUs; output is the top GRU state."""

    def __init__(self, arch: Arch):
        self.arch = arch
        self.dense_sizes = (arch.feature_dim, *arch.enc_dense)
        self.n_dense = len(arch.enc_dense)
        self.gru_sizes = tuple(arch.enc_gru)

    def init(self, rng) -> dict:
        p = mlp_init(rng, self.dense_sizes)
        n_in = self.dense_sizes[-1]
        for i, H in enumerate(self.gru_sizes):
            p.update(gru_init(rng, n_in, H, f"gru{i}."))
            n_in = H
        return p

    def zero_state(self, batch: int = 1) -> list:
        return [np.zeros((batch, H)) for H in self.gru_sizes]

    def step(self, p, x, state):
        """One list element per row: x (B, F) -> (top state (B, S), new state)."""
        a, _ = mlp_forward(p, "", self.n_dense, x, relu_last=True)
        new = []
        for i, h in enumerate(state):
            a = gru_cell(p, f"gru{i}.", a, h)
            new.append(a)
        return a, new

    def forward_seq(self, p, X, mask):
        """X (B, T, F), mask (B, T) -> top states after each element (B, T, S)."""
        B, T, F = X.shape
        a, dcache = mlp_forward(p, "", self.n_dense, X.reshape(B * T, F), relu_last=True)
        a = a.reshape(B, T, -1)
        gcaches = []
        for i, H in enumerate(self.gru_sizes):
            a, gc = gru_sequence(p, f"gru{i}.", a, mask, H)
            gcaches.append(gc)
        return a, (B, T, dcache, gcaches)

    def backward_seq(self, p, cache, dH, grads) -> None:
        B, T, dcache, gcaches = cache
        d = dH
        for i in reversed(range(len(self.gru_sizes))):
            d = gru_sequence_backward(p, f"gru{i}.", gcaches[i], d, grads)
        mlp_backward(p, "", self.n_dense, dcache, d.reshape(B * T, -1), grads, relu_last=True)

    def encode(self, p, X, mask=None):
        """Final state per row, no cache kept."""
        if mask is None:
            mask = np.ones(X.shape[:2], dtype=bool)
        H, _ = self.forward_seq(p, X, mask)
        return H[:, -1]


class QNet:
    """Feed-forward Q(s_i, s_o, x); ReLU hidden layers, linear scalar output."""

    def __init__(self, arch: Arch):
        self.arch = arch
        self.sizes = (arch.q_input_dim, *arch.q_hidden, 1)
        self.n_layers = len(self.sizes) - 1

    def init(self, rng) -> dict:
        return mlp_init(rng, self.sizes)

    def forward(self, p, Z):
        out, cache = mlp_forward(p, "", self.n_layers, Z, relu_last=False)
        return out[:, 0], cache

    def predict(self, p, Z) -> np.ndarray:
        return self.forward(p, Z)[0]

    def backward(self, p, cache, dq, grads):
        return mlp_backward(p, "", self.n_layers, cache, dq[:, None], grads, relu_last=False)


# ---------------------------------------------------------------- parameter sets

@dataclass
class ParamSet:
    phi: dict
    theta: dict
    psi: dict
    version: int = 0

    @classmethod
    def initialize(cls, arch: Arch, rng) -> "ParamSet":
        enc = Encoder(arch)
        return cls(enc.init(rng), enc.init(rng), QNet(arch).init(rng))

    def groups(self) -> dict:
        return {"phi": self.phi, "theta": self.theta, "psi": self.psi}

    def copy(self) -> "ParamSet":
        return ParamSet(*(copy.deepcopy(g) for g in (self.phi, self.theta, self.psi)), self.version)

    def zeros_like(self) -> "ParamSet":
        return ParamSet(*({k: np.zeros_like(v) for k, v in g.items()} for g in (self.phi, self.theta, self.psi)))

    def items(self):
        for gname, g in self.groups().items():
            for k, v in g.items():
                yield (gname, k), v

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for _, v in self.items()])

    def n_params(self) -> int:
        return sum(v.size for _, v in self.items())

    def scale_(self, s: float) -> "ParamSet":
        for _, v in self.items():
            v *= s
        return self

    def add_(self, other: "ParamSet", s: float = 1.0) -> "ParamSet":
        og = other.groups()
        for (g, k), v in self.items():
            v += s * og[g][k]
        return self

    def shapes(self) -> dict:
        return {f"{g}/{k}": list(v.shape) for (g, k), v in self.items()}


class Adam:
    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, max_norm=None):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.max_norm = max_norm
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: ParamSet, grads: ParamSet) -> ParamSet:
        gflat = grads.flat()
        if not np.all(np.isfinite(gflat)):
            raise FloatingPointError("non-finite gradient passed to Adam")
        scale = 1.0
        if self.max_norm is not None:
            norm = float(np.linalg.norm(gflat))
            if norm > self.max_norm:
                scale = self.max_norm / norm
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        gg = grads.groups()
        for key, w in params.items():
            g = gg[key[0]][key[1]] * scale
            if key not in self.m:
                self.m[key] = np.zeros_like(w)
                self.v[key] = np.zeros_like(w)
            m, v = self.m[key], self.v[key]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            w -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        params.version += 1
        return params


# ---------------------------------------------------------------- checkpoints
#
# Container: numpy .npz (zip of .npy arrays, stored little-endian float64).
#   "<group>/<name>"  parameter arrays, group in {phi, theta, psi}
#   "feature_mean", "feature_std"   normalization statistics (absent if unfitted)
#   "meta"            0-d unicode array holding JSON: {"format", "version", "arch", ...}

CHECKPOINT_FORMAT = "nrsched-checkpoint-1"


def save_checkpoint(path, params: ParamSet, stats=None, arch: Arch | None = None, **meta) -> None:
    arrays = {f"{g}/{k}": np.ascontiguousarray(v, dtype="<f8") for (g, k), v in params.items()}
    if stats is not None and stats.finalized:
        arrays["feature_mean"] = np.asarray(stats.mean, dtype="<f8")
        arrays["feature_std"] = np.asarray(stats.std, dtype="<f8")
    info = {"format": CHECKPOINT_FORMAT, "version": params.version, **meta}
    if arch is not None:
        info["arch"] = arch.to_dict()
    arrays["meta"] = np.array(json.dumps(info, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


@dataclass
class Checkpoint:
    params: ParamSet
    stats: object
    arch: Arch | None
    meta: dict = field(default_factory=dict)


def load_checkpoint(path) -> Checkpoint:
    from .sortmdp import FeatureStats

    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
        groups = {g: {} for g in GROUPS}
        for key in z.files:
            if "/" in key:
                g, name = key.split("/", 1)
                groups[g][name] = z[key].astype(float)
        stats = FeatureStats()
        if "feature_mean" in z.files:
            stats = FeatureStats(z["feature_mean"].astype(float), z["feature_std"].astype(float))
    params = ParamSet(groups["phi"], groups["theta"], groups["psi"], int(meta["version"]))
    arch = Arch.from_dict(meta["arch"]) if "arch" in meta else None
    return Checkpoint(params, stats, arch, meta)


def check_compatible(params: ParamSet, arch: Arch, rng=None) -> None:
    """Raise ValueError if ``params`` do not have the shapes ``arch`` implies."""
    ref = ParamSet.initialize(arch, np.random.default_rng(0) if rng is None else rng)
    want, got = ref.shapes(), params.shapes()
    if want != got:
        missing = sorted(set(want) ^ set(got)) or sorted(k for k in want if want[k] != got.get(k))
        raise ValueError(f"checkpoint does not match architecture: {missing[:5]}")
