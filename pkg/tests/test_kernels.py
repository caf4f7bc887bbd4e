from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest

from lemae import kernels

BACKENDS = kernels.backends()


def scalar_walk(u_row, target, p, prior):
    """Oracle: one walk, one uniform per step."""
    x = mk = n = 0
    for v in u_row:
        right = v < p or (prior and mk > 0 and x < mk)
        x += 1 if right else -1
        n += 1
        if prior and mk < x < target:
            mk = x
        if x == target:
            return x, mk, n, True
    return x, mk, n, False


def scalar_td(q, keys, actions, rewards, next_keys, terminal, lr, gamma):
    q = q.copy()
    for t in range(len(keys)):
        target = rewards[t] + (0.0 if terminal[t] else gamma * max(q[next_keys[t]]))
        q[keys[t], actions[t]] += lr * (target - q[keys[t], actions[t]])
    return q


@pytest.mark.parametrize("name", sorted(BACKENDS))
@pytest.mark.parametrize("prior", [False, True])
def test_walk_advance_matches_scalar_oracle(name, prior):
    impl = BACKENDS[name]
    rng = np.random.default_rng(1)
    n, cols, target, p = 300, 40, 5, 0.6
    u = rng.random((n, cols))
    pos = np.zeros(n, dtype=np.int64)
    mk = np.zeros(n, dtype=np.int64)
    steps = np.zeros(n, dtype=np.int64)
    done = np.zeros(n, dtype=np.bool_)
    impl.walk_advance(u, pos, mk, steps, done, target, p, prior)
    for e in range(n):
        assert (pos[e], mk[e], steps[e], bool(done[e])) == scalar_walk(u[e], target, p, prior)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_td_sweep_matches_scalar_oracle(name):
    impl = BACKENDS[name]
    rng = np.random.default_rng(2)
    T, S = 500, 20
    q = rng.normal(size=(S, 4))
    keys = rng.integers(0, S, T)
    nxt = rng.integers(0, S, T)
    acts = rng.integers(0, 4, T)
    rew = rng.normal(size=T)
    term = (rng.random(T) < 0.1).astype(np.uint8)
    want = scalar_td(q, keys, acts, rew, nxt, term, 0.3, 0.95)
    got = q.copy()
    impl.td_sweep(got, keys, acts, rew, nxt, term, 0.3, 0.95)
    assert np.allclose(got, want, rtol=0, atol=1e-12)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_segment_shaping_matches_direct_sum(name):
    impl = BACKENDS[name]
    rng = np.random.default_rng(3)
    states = rng.integers(0, 30, size=(101, 6)).astype(np.int64)
    idx = np.array([0, 3, 5], dtype=np.int64)
    goal = np.array([4.0, 10.0, 29.0])
    out = np.zeros(100)
    impl.segment_shaping(states, 10, 60, idx, goal, out)
    for t in range(100):
        if 10 <= t < 60:
            d0 = sum(abs(states[t][e] - g) for e, g in zip(idx, goal))
            d1 = sum(abs(states[t + 1][e] - g) for e, g in zip(idx, goal))
            assert out[t] == d0 - d1
        else:
            assert out[t] == 0


@pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernels not built")
def test_backends_agree_bit_for_bit():
    py, cy = BACKENDS["python"], BACKENDS["cython"]
    rng = np.random.default_rng(4)
    u = rng.random((64, 128))
    outs = []
    for impl in (py, cy):
        arrs = [np.zeros(64, dtype=np.int64) for _ in range(3)] + [np.zeros(64, dtype=np.bool_)]
        impl.walk_advance(u, *arrs, 7, 0.55, True)
        outs.append([a.copy() for a in arrs])
    for a, b in zip(*outs):
        assert np.array_equal(a, b)
    states = rng.integers(0, 30, size=(301, 5)).astype(np.int64)
    idx = np.array([1, 2], dtype=np.int64)
    goal = np.array([3.0, 17.0])
    o1, o2 = np.zeros(300), np.zeros(300)
    py.segment_shaping(states, 0, 300, idx, goal, o1)
    cy.segment_shaping(states, 0, 300, idx, goal, o2)
    assert np.array_equal(o1, o2)


def test_fallback_selected_by_environment_variable():
    code = "from lemae import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, LEMAE_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    assert kernels.BACKEND in ("python", "cython")
