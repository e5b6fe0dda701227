"""Differentiable primitives for the fixed layer set the engine needs.

Every operation accepts either a single sample (the documented shapes) or a
batch with one extra leading dimension; batched inputs produce batched
outputs except for the loss-style reductions, which return scalars.  Each op
validates shapes eagerly and records a backward closure on the active tape
only when some input actually carries gradient.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, _active_tape


def _as_batched(arr: np.ndarray, sample_ndim: int):
    """View ``arr`` as a batch; returns (batched_view, had_batch_dim)."""
    if arr.ndim == sample_ndim:
        return arr[None], False
    if arr.ndim == sample_ndim + 1:
        return arr, True
    raise ShapeError(f"expected {sample_ndim}-d or {sample_ndim + 1}-d input, got shape {arr.shape}")


def _maybe_record(out, backward_fn, *inputs):
    tape = _active_tape()
    if tape is not None and any(t.requires_grad and not t.frozen for t in inputs):
        out.requires_grad = True
        tape.record(out, backward_fn)
    return out


def _gather_cols(xp: np.ndarray, k: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """im2col: [N,c,hp,wp] -> [N, c*k*k, out_h*out_w]."""
    n, c = xp.shape[:2]
    sn, sc, sh, sw = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp, shape=(n, c, k, k, out_h, out_w),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride), writeable=False)
    return windows.reshape(n, c * k * k, out_h * out_w)


def _scatter_cols(dcols: np.ndarray, xp_shape, k: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """Adjoint of :func:`_gather_cols`."""
    n, c = xp_shape[:2]
    dxp = np.zeros(xp_shape, dtype=np.float64)
    dcols = dcols.reshape(n, c, k, k, out_h, out_w)
    for ki in range(k):
        for kj in range(k):
            dxp[:, :, ki : ki + stride * (out_h - 1) + 1 : stride,
                kj : kj + stride * (out_w - 1) + 1 : stride] += dcols[:, :, ki, kj]
    return dxp


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Dense 2-D convolution (cross-correlation): [c,h,w] * [m,c,k,k] -> [m,h',w']."""
    kd = kernel.data
    if kd.ndim != 4:
        raise ShapeError(f"conv2d kernel must be 4-d [m,c,k,k], got shape {kd.shape}")
    m, ck, kh, kw = kd.shape
    if kh != kw:
        raise ShapeError(f"conv2d kernel must be square, got {kh}x{kw}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if pad < 0:
        raise ShapeError(f"pad must be >= 0, got {pad}")
    xd, batched = _as_batched(x.data, 3)
    n, c, h, w = xd.shape
    if c != ck:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, kernel expects {ck}")
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise ShapeError(f"kernel {kh}x{kw} exceeds padded input {h + 2 * pad}x{w + 2 * pad}")
    if bias is not None and bias.data.shape != (m,):
        raise ShapeError(f"conv2d bias must have shape ({m},), got {bias.data.shape}")

    out_h = (h + 2 * pad - kh) // stride + 1
    out_w = (w + 2 * pad - kw) // stride + 1
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    cols = _gather_cols(xp, kh, stride, out_h, out_w)
    kmat = kd.reshape(m, c * kh * kw)
    out_mat = kmat @ cols
    if bias is not None:
        out_mat = out_mat + bias.data[:, None]
    out_data = out_mat.reshape(n, m, out_h, out_w)
    out = Tensor(out_data if batched else out_data[0])

    need_x = x.requires_grad and not x.frozen
    need_k = kernel.requires_grad and not kernel.frozen
    need_b = bias is not None and bias.requires_grad and not bias.frozen
    xp_shape = xp.shape

    def backward(grad):
        g = grad if batched else grad[None]
        gmat = g.reshape(n, m, out_h * out_w)
        contribs = []
        if need_k:
            dk = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0)
            contribs.append((kernel, dk.reshape(kd.shape)))
        if need_b:
            contribs.append((bias, g.sum(axis=(0, 2, 3))))
        if need_x:
            dcols = np.matmul(kmat.T[None], gmat)
            dxp = _scatter_cols(dcols, xp_shape, kh, stride, out_h, out_w)
            dx = dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp
            contribs.append((x, dx if batched else dx[0]))
        return contribs

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return _maybe_record(out, backward, *inputs)


def depthwise_conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, multiplier: int = 1) -> Tensor:
    """Per-channel convolution with a channel multiplier and same padding.

    Output channel ``j`` convolves only input channel ``j // multiplier``
    with kernel ``j``; spatial dims are preserved (odd kernel, stride 1).
    """
    kd = kernel.data
    if kd.ndim != 3:
        raise ShapeError(f"depthwise kernel must be 3-d [m*mult,k,k], got shape {kd.shape}")
    big_m, kh, kw = kd.shape
    if kh != kw:
        raise ShapeError(f"depthwise kernel must be square, got {kh}x{kw}")
    if kh % 2 == 0:
        raise ShapeError(f"depthwise kernel size must be odd for same padding, got {kh}")
    if multiplier < 1:
        raise ShapeError(f"multiplier must be >= 1, got {multiplier}")
    xd, batched = _as_batched(x.data, 3)
    n, m, h, w = xd.shape
    if big_m != m * multiplier:
        raise ShapeError(
            f"depthwise channel mismatch: kernel has {big_m} filters, expected {m} x {multiplier}")
    if bias is not None and bias.data.shape != (big_m,):
        raise ShapeError(f"depthwise bias must have shape ({big_m},), got {bias.data.shape}")

    pad = kh // 2
    xg = np.repeat(xd, multiplier, axis=1)
    xp = np.pad(xg, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xg
    out_data = np.zeros((n, big_m, h, w), dtype=np.float64)
    for ki in range(kh):
        for kj in range(kw):
            out_data += kd[:, ki, kj][None, :, None, None] * xp[:, :, ki : ki + h, kj : kj + w]
    if bias is not None:
        out_data += bias.data[None, :, None, None]
    out = Tensor(out_data if batched else out_data[0])

    need_x = x.requires_grad and not x.frozen
    need_k = kernel.requires_grad and not kernel.frozen
    need_b = bias is not None and bias.requires_grad and not bias.frozen

    def backward(grad):
        g = grad if batched else grad[None]
        contribs = []
        if need_k:
            dk = np.empty_like(kd)
            for ki in range(kh):
                for kj in range(kw):
                    dk[:, ki, kj] = np.einsum("njhw,njhw->j", g, xp[:, :, ki : ki + h, kj : kj + w])
            contribs.append((kernel, dk))
        if need_b:
            contribs.append((bias, g.sum(axis=(0, 2, 3))))
        if need_x:
            dxp = np.zeros(xp.shape, dtype=np.float64)
            for ki in range(kh):
                for kj in range(kw):
                    dxp[:, :, ki : ki + h, kj : kj + w] += kd[:, ki, kj][None, :, None, None] * g
            dxg = dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp
            dx = dxg.reshape(n, m, multiplier, h, w).sum(axis=2)
            contribs.append((x, dx if batched else dx[0]))
        return contribs

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return _maybe_record(out, backward, *inputs)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map: [d] @ [K,d]^T + [K] -> [K]."""
    wd = weight.data
    if wd.ndim != 2:
        raise ShapeError(f"linear weight must be 2-d [K,d], got shape {wd.shape}")
    k_out, d = wd.shape
    xd, batched = _as_batched(x.data, 1)
    if xd.shape[1] != d:
        raise ShapeError(f"linear dimension mismatch: input has {xd.shape[1]}, weight expects {d}")
    if bias is not None and bias.data.shape != (k_out,):
        raise ShapeError(f"linear bias must have shape ({k_out},), got {bias.data.shape}")

    # einsum without optimization keeps each output entry's reduction order
    # fixed regardless of row count or batch size, so logits of preserved
    # classifier rows stay bit-identical after the head grows
    out_data = np.einsum("nd,kd->nk", xd, wd, optimize=False)
    if bias is not None:
        out_data = out_data + bias.data
    out = Tensor(out_data if batched else out_data[0])

    need_x = x.requires_grad and not x.frozen
    need_w = weight.requires_grad and not weight.frozen
    need_b = bias is not None and bias.requires_grad and not bias.frozen

    def backward(grad):
        g = grad if batched else grad[None]
        contribs = []
        if need_w:
            contribs.append((weight, g.T @ xd))
        if need_b:
            contribs.append((bias, g.sum(axis=0)))
        if need_x:
            dx = g @ wd
            contribs.append((x, dx if batched else dx[0]))
        return contribs

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _maybe_record(out, backward, *inputs)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    mask = x.data > 0

    def backward(grad):
        return [(x, grad * mask)]

    return _maybe_record(out, backward, x)


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean: [c,h,w] -> [c]."""
    xd, batched = _as_batched(x.data, 3)
    n, c, h, w = xd.shape
    out_data = xd.mean(axis=(2, 3))
    out = Tensor(out_data if batched else out_data[0])

    def backward(grad):
        g = grad if batched else grad[None]
        dx = np.broadcast_to(g[:, :, None, None] / (h * w), xd.shape).copy()
        return [(x, dx if batched else dx[0])]

    return _maybe_record(out, backward, x)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data + b.data)

    def backward(grad):
        return [(a, grad), (b, grad)]

    return _maybe_record(out, backward, a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data * b.data)
    ad, bd = a.data, b.data

    def backward(grad):
        return [(a, grad * bd), (b, grad * ad)]

    return _maybe_record(out, backward, a, b)


def scale(x: Tensor, factor: float) -> Tensor:
    out = Tensor(x.data * factor)

    def backward(grad):
        return [(x, grad * factor)]

    return _maybe_record(out, backward, x)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis of [..., c, h, w] feature maps."""
    if a.data.ndim != b.data.ndim or a.data.ndim < 3:
        raise ShapeError(f"concat expects matching feature maps, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[-2:] != b.data.shape[-2:] or a.data.shape[:-3] != b.data.shape[:-3]:
        raise ShapeError(f"concat spatial/batch mismatch: {a.data.shape} vs {b.data.shape}")
    out = Tensor(np.concatenate([a.data, b.data], axis=-3))
    split = a.data.shape[-3]

    def backward(grad):
        ga = grad[..., :split, :, :]
        gb = grad[..., split:, :, :]
        return [(a, ga), (b, gb)]

    return _maybe_record(out, backward, a, b)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis (plain ndarray helper)."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(label: int, num_classes: int) -> np.ndarray:
    if not 0 <= label < num_classes:
        raise ShapeError(f"label {label} out of range for {num_classes} classes")
    v = np.zeros(num_classes, dtype=np.float64)
    v[label] = 1.0
    return v


def _check_one_hot(oh: np.ndarray):
    binary = (oh == 0.0) | (oh == 1.0)
    if not binary.all() or not np.all(oh.sum(axis=-1) == 1.0):
        raise ShapeError("target must be one-hot: a single 1 entry per row, zeros elsewhere")


def softmax_cross_entropy(logits: Tensor, target_one_hot: Tensor | np.ndarray) -> Tensor:
    """Mean cross-entropy -sum(y * log softmax(logits)) over the batch.

    For a single sample ([K] logits) this is exactly the per-sample loss.
    The target is treated as a constant.
    """
    oh = target_one_hot.data if isinstance(target_one_hot, Tensor) else np.asarray(target_one_hot, dtype=np.float64)
    ld, batched = _as_batched(logits.data, 1)
    ohd, oh_batched = _as_batched(oh, 1)
    if ld.shape != ohd.shape:
        raise ShapeError(f"logits/target shape mismatch: {logits.data.shape} vs {oh.shape}")
    _check_one_hot(ohd)

    z = ld - ld.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_q = z - lse
    per_sample = -(ohd * log_q).sum(axis=1)
    n = ld.shape[0]
    out = Tensor(per_sample.mean())
    probs = np.exp(log_q)

    def backward(grad):
        dlogits = (probs - ohd) * (float(grad) / n)
        return [(logits, dlogits if batched else dlogits[0])]

    return _maybe_record(out, backward, logits)


def l2_distance(a: Tensor, b: Tensor) -> Tensor:
    """Euclidean norm of (a - b) over all elements."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"l2_distance shape mismatch: {a.data.shape} vs {b.data.shape}")
    diff = a.data - b.data
    dist = float(np.sqrt((diff * diff).sum()))
    out = Tensor(dist)

    def backward(grad):
        if dist == 0.0:
            # subgradient 0 at the tip of the cone keeps phase-start losses finite
            d = np.zeros_like(diff)
        else:
            d = diff * (float(grad) / dist)
        return [(a, d), (b, -d)]

    return _maybe_record(out, backward, a, b)


def rowwise_l2_distance(a: Tensor, b: Tensor) -> Tensor:
    """Per-row Euclidean distances for [N,d] pairs -> [N]."""
    if a.data.shape != b.data.shape or a.data.ndim != 2:
        raise ShapeError(f"rowwise_l2_distance expects matching [N,d], got {a.data.shape} and {b.data.shape}")
    diff = a.data - b.data
    dists = np.sqrt((diff * diff).sum(axis=1))
    out = Tensor(dists)
    safe = np.where(dists == 0.0, 1.0, dists)
    zero_rows = dists == 0.0

    def backward(grad):
        d = diff * (grad / safe)[:, None]
        d[zero_rows] = 0.0
        return [(a, d), (b, -d)]

    return _maybe_record(out, backward, a, b)


def mean_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.mean())
    n = x.data.size
    shape = x.data.shape

    def backward(grad):
        return [(x, np.full(shape, float(grad) / n))]

    return _maybe_record(out, backward, x)
