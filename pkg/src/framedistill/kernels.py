"""Fused LSTM-layer kernels with selectable numba / numpy backends.

The recurrent encoders spend nearly all their time stepping LSTM layers, so
one whole layer pass (all timesteps) is a single fused kernel with a
hand-derived backward; the autodiff graph records it as one node. Two
interchangeable backends implement the same arithmetic:

* ``numba`` -- @njit-compiled loops, the default when numba imports cleanly
* ``numpy`` -- pure-numpy fallback, same results to float64 roundoff

Select with the environment variable ``FRAMEDISTILL_BACKEND`` set to
``numba``, ``numpy`` or ``auto`` (default), or programmatically with
:func:`set_backend`. ``benchmarks/bench_backends.py`` times both.

Layout: gates are packed (i, f, g, o) along the last axis. The weight matrix
``w`` has shape (input_dim + hidden, 4*hidden) and multiplies the
concatenated row [x_t, h_{t-1}]; the bias ``b`` has shape (4*hidden,).
Initial hidden/cell states are zero.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - mirror env always has numba
    HAVE_NUMBA = False

_ACTIVE: str | None = None


def set_backend(name: str) -> None:
    """Force the kernel backend ('numba', 'numpy' or 'auto')."""
    global _ACTIVE
    if name not in ("numba", "numpy", "auto"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise ValueError("numba backend requested but numba is not importable")
    _ACTIVE = None if name == "auto" else name


def active_backend() -> str:
    global _ACTIVE
    if _ACTIVE is None:
        choice = os.environ.get("FRAMEDISTILL_BACKEND", "auto").lower()
        if choice == "numpy":
            _ACTIVE = "numpy"
        elif choice == "numba":
            if not HAVE_NUMBA:
                raise RuntimeError("FRAMEDISTILL_BACKEND=numba but numba is missing")
            _ACTIVE = "numba"
        elif choice == "auto":
            _ACTIVE = "numba" if HAVE_NUMBA else "numpy"
        else:
            raise RuntimeError(f"FRAMEDISTILL_BACKEND={choice!r} not recognized")
    return _ACTIVE


def _lstm_forward_numpy(x, w, b):
    t_len, d_in = x.shape
    h_dim = w.shape[1] // 4
    wx, wh = w[:d_in], w[d_in:]
    pre_x = x @ wx + b
    hs = np.zeros((t_len, h_dim))
    cs = np.zeros((t_len, h_dim))
    acts = np.zeros((t_len, 4 * h_dim))
    h = np.zeros(h_dim)
    c = np.zeros(h_dim)
    for t in range(t_len):
        g = pre_x[t] + h @ wh
        i = 1.0 / (1.0 + np.exp(-g[:h_dim]))
        f = 1.0 / (1.0 + np.exp(-g[h_dim : 2 * h_dim]))
        gg = np.tanh(g[2 * h_dim : 3 * h_dim])
        o = 1.0 / (1.0 + np.exp(-g[3 * h_dim :]))
        c = f * c + i * gg
        h = o * np.tanh(c)
        acts[t, :h_dim] = i
        acts[t, h_dim : 2 * h_dim] = f
        acts[t, 2 * h_dim : 3 * h_dim] = gg
        acts[t, 3 * h_dim :] = o
        cs[t] = c
        hs[t] = h
    return hs, acts, cs


def _lstm_backward_numpy(x, w, hs, acts, cs, dh_out):
    t_len, d_in = x.shape
    h_dim = w.shape[1] // 4
    dpre = np.zeros((t_len, 4 * h_dim))
    dx = np.zeros_like(x)
    dh = np.zeros(h_dim)
    dc = np.zeros(h_dim)
    wt = w.T
    for t in range(t_len - 1, -1, -1):
        dh = dh + dh_out[t]
        i = acts[t, :h_dim]
        f = acts[t, h_dim : 2 * h_dim]
        gg = acts[t, 2 * h_dim : 3 * h_dim]
        o = acts[t, 3 * h_dim :]
        tc = np.tanh(cs[t])
        dc = dc + dh * o * (1.0 - tc * tc)
        c_prev = cs[t - 1] if t > 0 else np.zeros(h_dim)
        dpre[t, :h_dim] = dc * gg * i * (1.0 - i)
        dpre[t, h_dim : 2 * h_dim] = dc * c_prev * f * (1.0 - f)
        dpre[t, 2 * h_dim : 3 * h_dim] = dc * i * (1.0 - gg * gg)
        dpre[t, 3 * h_dim :] = dh * tc * o * (1.0 - o)
        dz = dpre[t] @ wt
        dx[t] = dz[:d_in]
        dh = dz[d_in:]
        dc = dc * f
    zs = np.empty((t_len, d_in + h_dim))
    zs[:, :d_in] = x
    zs[0, d_in:] = 0.0
    zs[1:, d_in:] = hs[:-1]
    dw = zs.T @ dpre
    db = dpre.sum(axis=0)
    return dx, dw, db


if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _lstm_forward_numba(x, w, b):  # pragma: no cover - exercised via dispatch
        t_len, d_in = x.shape
        h_dim = w.shape[1] // 4
        pre_x = np.dot(x, w[:d_in]) + b
        wh = np.ascontiguousarray(w[d_in:])
        hs = np.zeros((t_len, h_dim))
        cs = np.zeros((t_len, h_dim))
        acts = np.zeros((t_len, 4 * h_dim))
        h = np.zeros(h_dim)
        c = np.zeros(h_dim)
        for t in range(t_len):
            g = pre_x[t] + np.dot(h, wh)
            for j in range(h_dim):
                i = 1.0 / (1.0 + np.exp(-g[j]))
                f = 1.0 / (1.0 + np.exp(-g[h_dim + j]))
                gg = np.tanh(g[2 * h_dim + j])
                o = 1.0 / (1.0 + np.exp(-g[3 * h_dim + j]))
                c[j] = f * c[j] + i * gg
                h[j] = o * np.tanh(c[j])
                acts[t, j] = i
                acts[t, h_dim + j] = f
                acts[t, 2 * h_dim + j] = gg
                acts[t, 3 * h_dim + j] = o
                cs[t, j] = c[j]
                hs[t, j] = h[j]
        return hs, acts, cs

    @numba.njit(cache=True)
    def _lstm_backward_numba(x, w, hs, acts, cs, dh_out):  # pragma: no cover
        t_len, d_in = x.shape
        h_dim = w.shape[1] // 4
        dpre = np.zeros((t_len, 4 * h_dim))
        dx = np.zeros_like(x)
        dh = np.zeros(h_dim)
        dc = np.zeros(h_dim)
        wt = np.ascontiguousarray(w.T)
        for t in range(t_len - 1, -1, -1):
            for j in range(h_dim):
                i = acts[t, j]
                f = acts[t, h_dim + j]
                gg = acts[t, 2 * h_dim + j]
                o = acts[t, 3 * h_dim + j]
                tc = np.tanh(cs[t, j])
                dhj = dh[j] + dh_out[t, j]
                dcj = dc[j] + dhj * o * (1.0 - tc * tc)
                c_prev = cs[t - 1, j] if t > 0 else 0.0
                dpre[t, j] = dcj * gg * i * (1.0 - i)
                dpre[t, h_dim + j] = dcj * c_prev * f * (1.0 - f)
                dpre[t, 2 * h_dim + j] = dcj * i * (1.0 - gg * gg)
                dpre[t, 3 * h_dim + j] = dhj * tc * o * (1.0 - o)
                dc[j] = dcj * f
            dz = np.dot(dpre[t], wt)
            for j in range(d_in):
                dx[t, j] = dz[j]
            for j in range(h_dim):
                dh[j] = dz[d_in + j]
        zs = np.empty((t_len, d_in + h_dim))
        for t in range(t_len):
            for j in range(d_in):
                zs[t, j] = x[t, j]
            for j in range(h_dim):
                zs[t, d_in + j] = hs[t - 1, j] if t > 0 else 0.0
        dw = np.dot(zs.T, dpre)
        db = np.zeros(4 * h_dim)
        for t in range(t_len):
            for j in range(4 * h_dim):
                db[j] += dpre[t, j]
        return dx, dw, db


def lstm_forward(x, w, b):
    """Run one LSTM layer over all timesteps. Returns (hs, acts, cs)."""
    if active_backend() == "numba":
        return _lstm_forward_numba(x, w, b)
    return _lstm_forward_numpy(x, w, b)


def lstm_backward(x, w, hs, acts, cs, dh_out):
    """Backward of :func:`lstm_forward` given d(loss)/d(hs). Returns (dx, dw, db)."""
    if active_backend() == "numba":
        return _lstm_backward_numba(x, w, hs, acts, cs, dh_out)
    return _lstm_backward_numpy(x, w, hs, acts, cs, dh_out)
