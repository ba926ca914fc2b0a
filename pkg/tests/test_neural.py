import math

import numpy as np
import pytest

from nrsched.neural import (
    Adam,
    Arch,
    Encoder,
    ParamSet,
    QNet,
    check_compatible,
    gru_cell,
    load_checkpoint,
    save_checkpoint,
    sigmoid,
)
from nrsched.sortmdp import FeatureStats

SMALL = Arch(6, (8,), (4,), (8,))
FULL = Arch()


def test_full_arch_dimensions():
    assert FULL.state_dim == 32 and FULL.q_input_dim == 70
    p = ParamSet.initialize(FULL, np.random.default_rng(0))
    assert p.phi["dense0.W"].shape == (6, 256)
    assert p.phi["gru0.U"].shape == (64, 192)
    assert p.psi["dense0.W"].shape == (70, 512)
    assert p.psi["dense4.W"].shape == (64, 1)
    enc = sum(v.size for v in p.phi.values())
    assert p.n_params() == 2 * enc + sum(v.size for v in p.psi.values())


def test_glorot_bounds_and_zero_bias():
    p = ParamSet.initialize(FULL, np.random.default_rng(1))
    w = p.psi["dense1.W"]
    assert np.abs(w).max() <= math.sqrt(6 / (512 + 256))
    assert all(np.all(v == 0) for k, v in p.psi.items() if k.endswith(".b"))


def test_sigmoid_is_stable():
    x = np.array([-1000.0, -1.0, 0.0, 1.0, 1000.0])
    y = sigmoid(x)
    assert np.all(np.isfinite(y))
    assert np.allclose(y[1:4], 1 / (1 + np.exp(-x[1:4])), rtol=1e-15, atol=1e-16)


def _zero(params):
    return {k: np.zeros_like(v) for k, v in params.items()}


def test_zero_encoder_outputs_zero():
    enc = Encoder(SMALL)
    p = _zero(enc.init(np.random.default_rng(0)))
    X = np.random.default_rng(1).normal(size=(2, 5, 6))
    assert np.all(enc.encode(p, X) == 0.0)


def test_gru_cell_hand_computed():
    # 2-unit cell, 1 input, every weight written out by hand
    Wz, Wr, Wc = [0.5, -0.3], [0.2, 0.1], [-0.4, 0.7]
    Uz = [[0.1, 0.2], [0.3, -0.1]]
    Ur = [[-0.2, 0.4], [0.0, 0.5]]
    Uc = [[0.6, -0.5], [0.25, 0.15]]
    bz, br, bc = [0.05, -0.05], [0.1, 0.0], [0.0, 0.2]
    p = {
        "g.W": np.array([Wz + Wr + Wc]),
        "g.U": np.concatenate([np.array(Uz), np.array(Ur), np.array(Uc)], axis=1),
        "g.b": np.array(bz + br + bc),
    }
    x, h = 0.8, [0.3, -0.6]

    def sig(v):
        return 1 / (1 + math.exp(-v))

    z = [sig(Wz[j] * x + sum(h[i] * Uz[i][j] for i in range(2)) + bz[j]) for j in range(2)]
    r = [sig(Wr[j] * x + sum(h[i] * Ur[i][j] for i in range(2)) + br[j]) for j in range(2)]
    c = [math.tanh(Wc[j] * x + sum(r[i] * h[i] * Uc[i][j] for i in range(2)) + bc[j]) for j in range(2)]
    expect = [(1 - z[j]) * h[j] + z[j] * c[j] for j in range(2)]
    got = gru_cell(p, "g.", np.array([[x]]), np.array([h]))[0]
    assert np.allclose(got, expect, rtol=1e-14, atol=1e-15)


def test_step_and_sequence_agree():
    enc = Encoder(SMALL)
    rng = np.random.default_rng(2)
    p = enc.init(rng)
    for k in p:
        if k.endswith("b"):
            p[k] = rng.normal(size=p[k].shape)
    X = rng.normal(size=(3, 4, 6))
    H, _ = enc.forward_seq(p, X, np.ones((3, 4), bool))
    state = enc.zero_state(3)
    for t in range(4):
        s, state = enc.step(p, X[:, t], state)
        assert np.allclose(s, H[:, t], rtol=1e-13, atol=1e-14)


def test_padding_mask_holds_state():
    enc = Encoder(SMALL)
    rng = np.random.default_rng(3)
    p = enc.init(rng)
    X = rng.normal(size=(1, 5, 6))
    short = enc.encode(p, X[:, :3])
    mask = np.array([[True, True, True, False, False]])
    assert np.allclose(enc.encode(p, X, mask), short, rtol=0, atol=1e-15)


def test_encoding_is_order_sensitive():
    enc = Encoder(Arch())
    rng = np.random.default_rng(4)
    p = enc.init(rng)
    x = rng.normal(size=(2, 6))
    a = enc.encode(p, x[None])
    b = enc.encode(p, x[::-1][None])
    assert not np.allclose(a, b)


def test_qnet_zero_weights_and_bias_path():
    q = QNet(SMALL)
    p = _zero(q.init(np.random.default_rng(0)))
    Z = np.random.default_rng(1).normal(size=(5, SMALL.q_input_dim))
    assert np.all(q.predict(p, Z) == 0.0)
    p["dense1.b"][:] = 1.25
    assert np.all(q.predict(p, Z) == 1.25)


def test_qnet_matches_independent_oracle():
    q = QNet(FULL)
    rng = np.random.default_rng(5)
    p = q.init(rng)
    for k in p:
        if k.endswith("b"):
            p[k] = rng.normal(scale=0.1, size=p[k].shape)
    Z = rng.normal(size=(7, 70))
    got = q.predict(p, Z)
    for row, val in zip(Z, got):
        a = row
        for i in range(5):
            W, b = p[f"dense{i}.W"], p[f"dense{i}.b"]
            a = np.einsum("i,ij->j", a, W) + b
            if i < 4:
                a = np.where(a > 0, a, 0.0)
        assert abs(a[0] - val) <= 1e-12 * max(1.0, abs(val))


def _fd_check(arch, seed, h=1e-5):
    """Encoder + Q-net loss on a length-3 sequence, every parameter."""
    rng = np.random.default_rng(seed)
    params = ParamSet.initialize(arch, rng)
    for g in params.groups().values():
        for k in g:
            if k.endswith("b"):
                g[k] = rng.normal(scale=0.3, size=g[k].shape)
    enc, qnet = Encoder(arch), QNet(arch)
    X = rng.normal(size=(2, 3, 6))
    mask = np.ones((2, 3), bool)
    target = rng.normal(size=2)

    def loss(p, grads=None):
        hi, ci = enc.forward_seq(p.phi, X, mask)
        ho, co = enc.forward_seq(p.theta, X[:, ::-1].copy(), mask)
        Z = np.concatenate([hi[:, -1], ho[:, 1], X[:, 0]], axis=1)
        qv, qc = qnet.forward(p.psi, Z)
        d = qv - target
        if grads is not None:
            dZ = qnet.backward(p.psi, qc, d, grads.psi)
            dhi = np.zeros_like(hi)
            dhi[:, -1] = dZ[:, :4]
            enc.backward_seq(p.phi, ci, dhi, grads.phi)
            dho = np.zeros_like(ho)
            dho[:, 1] = dZ[:, 4:8]
            enc.backward_seq(p.theta, co, dho, grads.theta)
        return 0.5 * float(d @ d)

    grads = params.zeros_like()
    loss(params, grads)
    worst = 0.0
    gg = grads.groups()
    for (g, k), v in params.items():
        for idx in np.ndindex(v.shape):
            old = v[idx]
            v[idx] = old + h
            lp = loss(params)
            v[idx] = old - h
            lm = loss(params)
            v[idx] = old
            fd = (lp - lm) / (2 * h)
            an = gg[g][k][idx]
            worst = max(worst, abs(fd - an) / max(abs(fd) + abs(an), 1e-7))
    return worst


@pytest.mark.parametrize("seed", range(10))
def test_network_gradients_finite_difference(seed):
    assert _fd_check(SMALL, seed) < 1e-4


def test_gradient_accumulation_is_linear():
    enc = Encoder(SMALL)
    rng = np.random.default_rng(6)
    p = enc.init(rng)
    X = rng.normal(size=(2, 3, 6))
    mask = np.ones((2, 3), bool)
    H, cache = enc.forward_seq(p, X, mask)
    d1, d2 = rng.normal(size=H.shape), rng.normal(size=H.shape)
    g1, g2, g12 = (_zero(p) for _ in range(3))
    enc.backward_seq(p, cache, d1, g1)
    enc.backward_seq(p, cache, d2, g2)
    enc.backward_seq(p, cache, d1 + d2, g12)
    for k in p:
        assert np.allclose(g12[k], g1[k] + g2[k], rtol=1e-12, atol=1e-14)
    g0 = _zero(p)
    enc.backward_seq(p, cache, np.zeros_like(H), g0)
    assert all(np.all(v == 0) for v in g0.values())


# ----------------------------------------------------------------- Adam

def _scalar_params(w):
    return ParamSet({}, {}, {"w": np.array([w], dtype=float)})


def test_adam_zero_gradient_is_noop():
    p = ParamSet.initialize(SMALL, np.random.default_rng(0))
    before = p.flat().copy()
    Adam(lr=0.1).step(p, p.zeros_like())
    assert np.array_equal(p.flat(), before)
    assert p.version == 1


def test_adam_first_step():
    p = _scalar_params(1.0)
    g = _scalar_params(1.0)
    Adam(lr=0.1).step(p, g)
    assert p.psi["w"][0] == pytest.approx(0.9, abs=1e-6)


def test_adam_minimizes_square():
    p = _scalar_params(1.0)
    opt = Adam(lr=0.01)
    for _ in range(2000):
        opt.step(p, _scalar_params(2 * p.psi["w"][0]))
    assert abs(p.psi["w"][0]) < 1e-3


def test_adam_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        Adam().step(_scalar_params(1.0), _scalar_params(np.nan))


def test_adam_max_norm_clip():
    p = _scalar_params(0.0)
    opt = Adam(lr=0.1, max_norm=1e-3)
    opt.step(p, _scalar_params(1e6))
    # Adam normalizes magnitude; clipping must not change the sign or blow up
    assert p.psi["w"][0] == pytest.approx(-0.1, rel=1e-4)


# ----------------------------------------------------------------- parameter sets and checkpoints

def test_copy_is_independent():
    p = ParamSet.initialize(SMALL, np.random.default_rng(0))
    c = p.copy()
    assert np.array_equal(c.flat(), p.flat())
    c.psi["dense0.W"] += 1.0
    assert not np.array_equal(c.flat(), p.flat())


def test_forward_determinism():
    q = QNet(FULL)
    p = q.init(np.random.default_rng(0))
    Z = np.random.default_rng(1).normal(size=(4, 70))
    assert np.array_equal(q.predict(p, Z), q.predict(p, Z))


def test_checkpoint_round_trip(tmp_path):
    p = ParamSet.initialize(SMALL, np.random.default_rng(0))
    p.version = 17
    stats = FeatureStats(np.arange(6.0) * 0.1, np.arange(1, 7.0) / 3)
    path = tmp_path / "ck.npz"
    save_checkpoint(path, p, stats, SMALL, note="x")
    ck = load_checkpoint(path)
    assert ck.arch == SMALL and ck.params.version == 17 and ck.meta["note"] == "x"
    assert np.array_equal(ck.params.flat(), p.flat())
    assert np.array_equal(ck.stats.mean, stats.mean) and np.array_equal(ck.stats.std, stats.std)
    check_compatible(ck.params, SMALL)
    with pytest.raises(ValueError):
        check_compatible(ck.params, FULL)


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "bad.npz"
    np.savez(path, meta=np.array('{"format": "other"}'))
    with pytest.raises(ValueError):
        load_checkpoint(path)
