# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: tanh-MLP forward/backward and the GAE recursion.

Contract-identical to pushlab._kernels._ref (the pure-numpy fallback).
All arrays are float64 and C-contiguous.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport tanh

cnp.import_array()

NAME = "cython"


cdef void _matmul_add_bias(double[:, ::1] x, double[:, ::1] w, double[::1] b,
                           double[:, ::1] out) noexcept nogil:
    # out = x @ w + b, accumulated in i-order per (row, col)
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1], m = w.shape[1]
    cdef Py_ssize_t i, j, l
    cdef double xv
    for i in range(n):
        for j in range(m):
            out[i, j] = b[j]
        for l in range(k):
            xv = x[i, l]
            for j in range(m):
                out[i, j] += xv * w[l, j]


cdef void _tanh_inplace(double[:, ::1] a) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            a[i, j] = tanh(a[i, j])


def mlp_forward(x, weights, biases):
    """See pushlab._kernels._ref.mlp_forward."""
    cdef cnp.ndarray[double, ndim=2] h = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] nxt, w
    cdef cnp.ndarray[double, ndim=1] b
    hidden = []
    cdef Py_ssize_t layer, nlayers = len(weights)
    for layer in range(nlayers - 1):
        w = np.ascontiguousarray(weights[layer], dtype=np.float64)
        b = np.ascontiguousarray(biases[layer], dtype=np.float64)
        nxt = np.empty((h.shape[0], w.shape[1]), dtype=np.float64)
        _matmul_add_bias(h, w, b, nxt)
        _tanh_inplace(nxt)
        hidden.append(nxt)
        h = nxt
    w = np.ascontiguousarray(weights[nlayers - 1], dtype=np.float64)
    b = np.ascontiguousarray(biases[nlayers - 1], dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] out = np.empty((h.shape[0], w.shape[1]), dtype=np.float64)
    _matmul_add_bias(h, w, b, out)
    return hidden, out


cdef void _grad_layer(double[:, ::1] inp, double[:, ::1] g,
                      double[:, ::1] gw, double[::1] gb) noexcept nogil:
    # gw = inp.T @ g; gb = g.sum(axis=0)
    cdef Py_ssize_t n = inp.shape[0], k = inp.shape[1], m = g.shape[1]
    cdef Py_ssize_t i, j, l
    cdef double v
    for l in range(k):
        for j in range(m):
            gw[l, j] = 0.0
    for j in range(m):
        gb[j] = 0.0
    for i in range(n):
        for l in range(k):
            v = inp[i, l]
            for j in range(m):
                gw[l, j] += v * g[i, j]
        for j in range(m):
            gb[j] += g[i, j]


cdef void _matmul_t(double[:, ::1] g, double[:, ::1] w, double[:, ::1] out) noexcept nogil:
    # out = g @ w.T
    cdef Py_ssize_t n = g.shape[0], m = g.shape[1], k = w.shape[0]
    cdef Py_ssize_t i, j, l
    cdef double acc
    for i in range(n):
        for l in range(k):
            acc = 0.0
            for j in range(m):
                acc += g[i, j] * w[l, j]
            out[i, l] = acc


def mlp_backward(x, hidden, weights, grad_out):
    """See pushlab._kernels._ref.mlp_backward."""
    cdef cnp.ndarray[double, ndim=2] xarr = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t nlayers = len(weights), nhidden = len(hidden)
    grad_w = [None] * nlayers
    grad_b = [None] * nlayers
    cdef cnp.ndarray[double, ndim=2] g = np.ascontiguousarray(grad_out, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] gw, w
    cdef cnp.ndarray[double, ndim=1] gb
    cdef cnp.ndarray[double, ndim=2] gh, h, prev

    prev = np.ascontiguousarray(hidden[nhidden - 1]) if nhidden > 0 else xarr
    w = np.ascontiguousarray(weights[nlayers - 1], dtype=np.float64)
    gw = np.empty_like(w)
    gb = np.empty(w.shape[1], dtype=np.float64)
    _grad_layer(prev, g, gw, gb)
    grad_w[nlayers - 1] = gw
    grad_b[nlayers - 1] = gb
    gh = np.empty((g.shape[0], w.shape[0]), dtype=np.float64)
    _matmul_t(g, w, gh)

    cdef Py_ssize_t layer, i, j
    for layer in range(nhidden - 1, -1, -1):
        h = np.ascontiguousarray(hidden[layer])
        for i in range(gh.shape[0]):
            for j in range(gh.shape[1]):
                gh[i, j] = gh[i, j] * (1.0 - h[i, j] * h[i, j])
        prev = np.ascontiguousarray(hidden[layer - 1]) if layer > 0 else xarr
        w = np.ascontiguousarray(weights[layer], dtype=np.float64)
        gw = np.empty_like(w)
        gb = np.empty(w.shape[1], dtype=np.float64)
        _grad_layer(prev, gh, gw, gb)
        grad_w[layer] = gw
        grad_b[layer] = gb
        if layer > 0:
            g = gh
            gh = np.empty((g.shape[0], w.shape[0]), dtype=np.float64)
            _matmul_t(g, w, gh)
    return grad_w, grad_b


def gae_advantages(rewards, values, dones, gamma, lam):
    """See pushlab._kernels._ref.gae_advantages."""
    cdef cnp.ndarray[double, ndim=1] r = np.ascontiguousarray(rewards, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] d = np.ascontiguousarray(dones, dtype=np.float64)
    cdef Py_ssize_t n = r.shape[0]
    if v.shape[0] != n + 1 or d.shape[0] != n:
        raise ValueError(
            f"length mismatch: rewards={n}, values={v.shape[0]}, dones={d.shape[0]}"
        )
    cdef cnp.ndarray[double, ndim=1] adv = np.empty(n, dtype=np.float64)
    cdef double acc = 0.0, delta, nonterminal
    cdef double g = gamma, l = lam
    cdef Py_ssize_t t
    for t in range(n - 1, -1, -1):
        nonterminal = 1.0 - d[t]
        delta = r[t] + g * v[t + 1] * nonterminal - v[t]
        acc = delta + g * l * nonterminal * acc
        adv[t] = acc
    return adv
