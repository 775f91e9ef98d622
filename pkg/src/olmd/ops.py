"""Convolution, pooling and recurrent-cell primitives on :class:`Tensor`."""

from __future__ import annotations

import itertools

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, _norm_axes, as_tensor, make, mean, pad, record_branch


def _per_axis(value, rank, name):
    if isinstance(value, (int, np.integer)):
        return (int(value),) * rank
    value = tuple(int(v) for v in value)
    if len(value) != rank:
        raise ShapeError(f"{name} needs {rank} entries, got {value}")
    return value


def _correlate(xp: np.ndarray, w: np.ndarray, stride: tuple):
    """Valid cross-correlation of batched ``xp`` (N, C, *S) with ``w`` (O, C, *K)."""
    r = w.ndim - 2
    k = w.shape[2:]
    sp = tuple(range(2, 2 + r))
    win = sliding_window_view(xp, k, axis=sp)
    if any(s != 1 for s in stride):
        win = win[(slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)]
    out = np.tensordot(win, w, axes=([1] + list(range(2 + r, 2 + 2 * r)), [1] + list(sp)))
    return np.moveaxis(out, -1, 1), win


def conv(x: Tensor, kernel: Tensor, stride=1, padding=0, padding_mode: str = "zero",
         bias: Tensor | None = None) -> Tensor:
    """N-d convolution (cross-correlation, rank 1 to 3).

    ``x`` is ``(N, C_in, *spatial)`` or, unbatched, ``(C_in, *spatial)``;
    ``kernel`` is ``(C_out, C_in, *k)``. Output extent per axis is
    ``(in + 2*pad - k) // stride + 1``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    r = kernel.ndim - 2
    if r not in (1, 2, 3):
        raise ShapeError(f"kernel rank {kernel.ndim} does not describe a 1-3d convolution")
    if x.ndim == r + 1:
        x = x.reshape((1,) + x.shape)
        unbatched = True
    elif x.ndim == r + 2:
        unbatched = False
    else:
        raise ShapeError(f"input of shape {x.shape} does not fit a rank-{r} convolution")
    if x.shape[1] != kernel.shape[1]:
        raise ShapeError(f"channel mismatch: input has {x.shape[1]}, kernel expects {kernel.shape[1]}")
    stride = _per_axis(stride, r, "stride")
    padding = _per_axis(padding, r, "padding")
    if any(padding) and padding_mode == "replicate":
        x = pad(x, [(0, 0), (0, 0)] + [(p, p) for p in padding], mode="replicate")
        padding = (0,) * r
    elif padding_mode not in ("zero", "replicate", "none"):
        raise ValueError(f"unknown padding mode {padding_mode!r}")
    ksz = kernel.shape[2:]
    for n, p, kk in zip(x.shape[2:], padding, ksz):
        if kk > n + 2 * p:
            raise ShapeError(f"kernel {ksz} larger than padded input {x.shape[2:]} (pad {padding})")

    out = _conv_op(x, kernel, stride, padding)
    if bias is not None:
        out = out + as_tensor(bias).reshape((1, -1) + (1,) * r)
    if unbatched:
        out = out.reshape(out.shape[1:])
    return out


def _conv_op(x: Tensor, w: Tensor, stride: tuple, padding: tuple) -> Tensor:
    r = w.ndim - 2
    xd, wd = x.data, w.data
    pointwise = all(k == 1 for k in wd.shape[2:]) and not any(padding) and all(s == 1 for s in stride)
    if pointwise:
        w2 = wd.reshape(wd.shape[:2])
        out = np.moveaxis(np.tensordot(w2, xd, axes=(1, 1)), 0, 1)

        def backward(g):
            gx = np.moveaxis(np.tensordot(w2, g, axes=(0, 1)), 0, 1) if x.requires_grad else None
            gw = None
            if w.requires_grad:
                ax = [0] + list(range(2, 2 + r))
                gw = np.tensordot(g, xd, axes=(ax, ax)).reshape(wd.shape)
            return gx, gw

        return make(out, (x, w), backward, "conv")

    xp = np.pad(xd, [(0, 0), (0, 0)] + [(p, p) for p in padding]) if any(padding) else xd
    out, win = _correlate(xp, wd, stride)

    def backward(g):
        gw = None
        if w.requires_grad:
            ax = [0] + list(range(2, 2 + r))
            gw = np.tensordot(g, win, axes=(ax, ax))
        gx = None
        if x.requires_grad:
            k = wd.shape[2:]
            if any(s != 1 for s in stride):
                dil = tuple(s * (n - 1) + 1 for s, n in zip(stride, g.shape[2:]))
                gd = np.zeros(g.shape[:2] + dil, dtype=g.dtype)
                gd[(slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)] = g
            else:
                gd = g
            widths = [(0, 0), (0, 0)] + [(kk - 1, n - d) for kk, n, d in
                                         zip(k, xp.shape[2:], gd.shape[2:])]
            gpad = np.pad(gd, widths)
            wflip = np.swapaxes(wd[(slice(None), slice(None)) + (slice(None, None, -1),) * r], 0, 1)
            gxp, _ = _correlate(gpad, np.ascontiguousarray(wflip), (1,) * r)
            gx = gxp[(slice(None), slice(None)) +
                     tuple(slice(p, p + n) for p, n in zip(padding, xd.shape[2:]))]
        return gx, gw

    return make(np.ascontiguousarray(out), (x, w), backward, "conv")


def pool(kind: str, x: Tensor, axes, window=None, stride=None) -> Tensor:
    """Average or max pooling over ``axes``.

    With ``window=None`` each listed axis is pooled over its full extent and
    removed. Otherwise ``window``/``stride`` give per-axis sizes and the
    axes keep their (reduced) positions. Max gradients route to the first
    maximum in flat window order.
    """
    if kind not in ("avg", "max"):
        raise ValueError(f"unknown pool kind {kind!r}")
    axes = _norm_axes(axes, x.ndim)
    if window is None:
        if kind == "avg":
            return mean(x, axes)
        return _full_max(x, axes)
    window = _per_axis(window, len(axes), "window")
    stride = window if stride is None else _per_axis(stride, len(axes), "stride")
    for a, w in zip(axes, window):
        if w > x.shape[a]:
            raise ShapeError(f"window {w} exceeds extent {x.shape[a]} of axis {a}")
    return _window_pool(kind, x, axes, window, stride)


def _full_max(x: Tensor, axes: tuple) -> Tensor:
    keep = [i for i in range(x.ndim) if i not in axes]
    moved = np.transpose(x.data, keep + list(axes))
    outer = moved.shape[:len(keep)]
    flat = moved.reshape(outer + (-1,))
    arg = flat.argmax(axis=-1)
    record_branch(arg)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    shape_moved = moved.shape
    inv = np.argsort(keep + list(axes))

    def backward(g):
        gf = np.zeros(flat.shape, dtype=g.dtype)
        np.put_along_axis(gf, arg[..., None], g[..., None], axis=-1)
        return (np.transpose(gf.reshape(shape_moved), inv),)

    return make(out, (x,), backward, "max_pool")


def _window_pool(kind: str, x: Tensor, axes: tuple, window: tuple, stride: tuple) -> Tensor:
    xd = x.data
    win = sliding_window_view(xd, window, axis=axes)
    index = [slice(None)] * xd.ndim
    for a, s in zip(axes, stride):
        index[a] = slice(None, None, s)
    win = win[tuple(index)]
    nd = xd.ndim
    wax = tuple(range(nd, nd + len(axes)))
    out_shape = win.shape[:nd]
    out_shape_axes = [out_shape[a] for a in axes]
    offsets = list(itertools.product(*[range(w) for w in window]))

    if kind == "avg":
        out = win.mean(axis=wax)
        weight = 1.0 / len(offsets)
    else:
        flat = win.reshape(out_shape + (-1,))
        arg = flat.argmax(axis=-1)
        record_branch(arg)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gx = np.zeros_like(xd)
        for j, off in enumerate(offsets):
            sl = [slice(None)] * nd
            for a, o, s, n in zip(axes, off, stride, out_shape_axes):
                sl[a] = slice(o, o + s * (n - 1) + 1, s)
            contrib = g * weight if kind == "avg" else g * (arg == j)
            gx[tuple(sl)] += contrib
        return (gx,)

    return make(np.ascontiguousarray(out), (x,), backward, f"{kind}_pool")


def lstm_cell(gates: Tensor, c_prev: Tensor) -> Tensor:
    """Fused LSTM state update.

    ``gates`` holds the pre-activations ``[i, f, g, o]`` along its last
    axis (width ``4H``); returns a tensor stacking ``(h, c)`` on axis 0.
    """
    hsz = c_prev.shape[-1]
    if gates.shape[-1] != 4 * hsz:
        raise ShapeError(f"gates width {gates.shape[-1]} != 4 * hidden {hsz}")
    a = gates.data
    cp = c_prev.data
    e = np.exp(-np.abs(a))
    sig = np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    i, f, o = sig[..., :hsz], sig[..., hsz:2 * hsz], sig[..., 3 * hsz:]
    gg = np.tanh(a[..., 2 * hsz:3 * hsz])
    c = f * cp + i * gg
    tc = np.tanh(c)
    h = o * tc

    def backward(grad):
        gh, gc = grad[0], grad[1]
        gc = gc + gh * o * (1 - tc * tc)
        da = np.concatenate([gc * gg * i * (1 - i),
                             gc * cp * f * (1 - f),
                             gc * i * (1 - gg * gg),
                             gh * tc * o * (1 - o)], axis=-1)
        return da, gc * f

    out = np.stack([h, c]).astype(gates.dtype, copy=False)
    return make(out, (gates, c_prev), backward, "lstm_cell")
