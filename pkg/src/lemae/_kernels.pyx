# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops.  Semantics match ``_kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def segment_shaping(const long long[:, :] states, Py_ssize_t a, Py_ssize_t b,
                    const long long[:] idx, const double[:] goal, double[:] out):
    cdef Py_ssize_t t, k, m = idx.shape[0]
    cdef double d0, d1
    if b <= a:
        return
    d0 = 0.0
    for k in range(m):
        d0 += abs(<double>states[a, idx[k]] - goal[k])
    for t in range(a, b):
        d1 = 0.0
        for k in range(m):
            d1 += abs(<double>states[t + 1, idx[k]] - goal[k])
        out[t] = d0 - d1
        d0 = d1


def td_sweep(double[:, :] q, const long long[:] keys, const long long[:] actions,
             const double[:] rewards, const long long[:] next_keys,
             const unsigned char[:] terminal, double lr, double gamma):
    cdef Py_ssize_t t, j, k, a, nk, n = keys.shape[0], na = q.shape[1]
    cdef double target, best
    for t in range(n):
        k = keys[t]
        a = actions[t]
        target = rewards[t]
        if not terminal[t]:
            nk = next_keys[t]
            best = q[nk, 0]
            for j in range(1, na):
                if q[nk, j] > best:
                    best = q[nk, j]
            target += gamma * best
        q[k, a] += lr * (target - q[k, a])


def walk_advance(const double[:, :] u, long long[:] pos, long long[:] maxkey,
                 long long[:] steps, cnp.npy_bool[:] done, long long target,
                 double p, bint prior):
    cdef Py_ssize_t e, col, n_rows = u.shape[0], n_cols = u.shape[1]
    cdef long long x, mk, n
    for e in range(n_rows):
        if done[e]:
            continue
        x = pos[e]
        mk = maxkey[e]
        n = steps[e]
        for col in range(n_cols):
            if u[e, col] < p or (prior and mk > 0 and x < mk):
                x += 1
            else:
                x -= 1
            n += 1
            if prior and x > mk and x < target:
                mk = x
            if x == target:
                done[e] = True
                break
        pos[e] = x
        maxkey[e] = mk
        steps[e] = n
