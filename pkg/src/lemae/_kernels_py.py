"""Pure-Python/numpy implementations of the hot loops.

Same signatures and bit-identical results as the compiled ``_kernels``
extension; used when the extension is not built.
"""

from __future__ import annotations

import numpy as np


def segment_shaping(states, a, b, idx, goal, out):
    """Write ``d(s_t) - d(s_{t+1})`` for ``t`` in ``[a, b)`` into ``out``."""
    if b <= a:
        return
    sub = states[a:b + 1][:, idx].astype(np.float64)
    d = np.abs(sub - goal).sum(axis=1)
    out[a:b] = d[:-1] - d[1:]


def td_sweep(q, keys, actions, rewards, next_keys, terminal, lr, gamma):
    """One-step Q-learning updates applied in time order.

    ``terminal[t]`` set means no bootstrap from ``next_keys[t]``.
    """
    for t in range(len(keys)):
        k = keys[t]
        a = actions[t]
        target = rewards[t]
        if not terminal[t]:
            row = q[next_keys[t]]
            target += gamma * row.max()
        q[k, a] += lr * (target - q[k, a])


def walk_advance(u, pos, maxkey, steps, done, target, p, prior):
    """Advance a batch of one-dimensional walks by up to ``u.shape[1]`` steps.

    Row ``e`` of ``u`` holds the uniforms for walk ``e``; rows with
    ``done[e]`` set are skipped.  One uniform is consumed per step, forced
    or not.  A free step goes right when its uniform is below ``p``.  In
    prior mode ``maxkey`` tracks the furthest key state reached
    (``1..target-1``, 0 for none) and every position left of it steps
    right deterministically.
    """
    active = np.flatnonzero(done == 0)
    if active.size == 0:
        return
    x = pos[active]
    mk = maxkey[active]
    n = steps[active]
    fin = np.zeros(active.size, dtype=bool)
    uu = u[active]
    for col in range(uu.shape[1]):
        live = ~fin
        if not live.any():
            break
        right = uu[:, col] < p
        if prior:
            right |= (mk > 0) & (x < mk)
        x = np.where(live, np.where(right, x + 1, x - 1), x)
        n = np.where(live, n + 1, n)
        if prior:
            mk = np.where(live & (x > mk) & (x < target), x, mk)
        fin |= live & (x == target)
    pos[active] = x
    maxkey[active] = mk
    steps[active] = n
    done[active] = fin
