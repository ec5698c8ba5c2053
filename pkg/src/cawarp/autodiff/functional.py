"""Image-shaped differentiable operations: convolution, gathers, sampling, pooling."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError, NumericError
from .tensor import Tensor, as_tensor, broadcast_to, mean, reshape


def conv2d(x, weight, bias=None) -> Tensor:
    """Zero-padded, stride-1 2-D cross-correlation that preserves spatial extents.

    ``x`` is ``C_in x H x W`` or batched ``B x C_in x H x W``; ``weight`` is
    ``C_out x C_in x k x k`` with odd ``k``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    batched = x.ndim == 4
    if x.ndim not in (3, 4) or weight.ndim != 4:
        raise DimensionError(f"conv2d expects CxHxW input and 4-d kernels, got {x.shape}, {weight.shape}")
    xd = x.data if batched else x.data[None]
    B, C, H, W = xd.shape
    O, Ck, kh, kw = weight.shape
    if Ck != C:
        raise DimensionError(f"conv2d channel mismatch: input has {C}, kernels expect {Ck}")
    if kh != kw or kh % 2 == 0:
        raise DimensionError(f"conv2d needs odd square kernels, got {kh}x{kw}")
    p = kh // 2
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p)))
    # cols: (C*k*k, B*H*W)
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3)).transpose(1, 4, 5, 0, 2, 3)
    cols = cols.reshape(C * kh * kw, B * H * W)
    wmat = weight.data.reshape(O, -1)
    out = (wmat @ cols).reshape(O, B, H, W).transpose(1, 0, 2, 3)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (O,):
            raise DimensionError(f"conv2d bias shape {bias.shape} != ({O},)")
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out if batched else out[0])
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g4 = g if batched else g[None]
        gm = g4.transpose(1, 0, 2, 3).reshape(O, B * H * W)
        gw = (gm @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (wmat.T @ gm).reshape(C, kh, kw, B, H, W)
            dxp = np.zeros((B, C, H + 2 * p, W + 2 * p), dtype=xd.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + H, j : j + W] += dcols[:, i, j].transpose(1, 0, 2, 3)
            gx = dxp[:, :, p : p + H, p : p + W]
            gx = gx if batched else gx[0]
        grads = (gx, gw)
        if bias is not None:
            grads += (g4.sum(axis=(0, 2, 3)),)
        return grads

    return Tensor._result(out, parents, backward)


def take(x, index: np.ndarray, axis: int = -1) -> Tensor:
    """Gather along ``axis`` with an integer index array (``np.take`` semantics)."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    axis = axis % x.ndim
    shape, dtype = x.shape, x.dtype
    lead = (slice(None),) * axis

    def backward(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, lead + (index,), g)
        return (out,)

    return Tensor._result(np.take(x.data, index, axis=axis), (x,), backward)


def bilinear_sample(image, coords) -> tuple[Tensor, np.ndarray]:
    """Sample ``image`` (C x H x W) at real pixel positions.

    ``coords`` has shape ``2 x ...`` holding (x, y).  Taps falling outside the
    image contribute zero.  Returns the samples (``C x ...``) and a boolean
    mask that is true where the position lies inside ``[0, W-1] x [0, H-1]``.
    """
    image, coords = as_tensor(image), as_tensor(coords)
    if image.ndim != 3 or coords.shape[0] != 2:
        raise DimensionError(f"bilinear_sample expects CxHxW and 2x... coords, got {image.shape}, {coords.shape}")
    if not np.all(np.isfinite(coords.data)):
        raise NumericError("bilinear_sample coordinates contain NaN or inf")
    C, H, W = image.shape
    img = image.data.reshape(C, H * W)
    x, y = coords.data[0], coords.data[1]
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = (x - x0).astype(image.dtype)
    fy = (y - y0).astype(image.dtype)
    x0 = x0.astype(np.intp)
    y0 = y0.astype(np.intp)

    taps = []
    for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
        xi, yi = x0 + dx, y0 + dy
        inside = (xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)
        flat = np.where(inside, yi * W + xi, 0)
        vals = img[:, flat] * inside
        taps.append((flat, inside, vals))
    (f00, i00, v00), (f01, i01, v01), (f10, i10, v10), (f11, i11, v11) = taps
    w00 = (1 - fx) * (1 - fy)
    w01 = fx * (1 - fy)
    w10 = (1 - fx) * fy
    w11 = fx * fy
    out = v00 * w00 + v01 * w01 + v10 * w10 + v11 * w11
    valid = (x >= 0) & (x <= W - 1) & (y >= 0) & (y <= H - 1)

    def backward(g):
        gi = gc = None
        if image.requires_grad:
            acc = np.zeros((C, H * W), dtype=image.dtype)
            gflat = g.reshape(C, -1)
            for flat, inside, w in ((f00, i00, w00), (f01, i01, w01), (f10, i10, w10), (f11, i11, w11)):
                np.add.at(acc, (slice(None), flat.reshape(-1)), gflat * (w * inside).reshape(-1))
            gi = acc.reshape(C, H, W)
        if coords.requires_grad:
            dx_ = (1 - fy) * (v01 - v00) + fy * (v11 - v10)
            dy_ = (1 - fx) * (v10 - v00) + fx * (v11 - v01)
            gc = np.stack([(g * dx_).sum(axis=0), (g * dy_).sum(axis=0)]).astype(coords.dtype)
        return gi, gc

    return Tensor._result(out, (image, coords), backward), valid


def pad2d(x, pad_bottom: int, pad_right: int) -> Tensor:
    """Zero-pad the last two axes at the bottom/right."""
    x = as_tensor(x)
    if pad_bottom == 0 and pad_right == 0:
        return x
    widths = [(0, 0)] * (x.ndim - 2) + [(0, pad_bottom), (0, pad_right)]
    H, W = x.shape[-2:]
    return Tensor._result(np.pad(x.data, widths), (x,), lambda g: (g[..., :H, :W],))


def avg_pool2(x) -> Tensor:
    """2x2 average pooling over the last two (even) axes."""
    x = as_tensor(x)
    *lead, H, W = x.shape
    if H % 2 or W % 2:
        raise DimensionError(f"avg_pool2 needs even extents, got {H}x{W}")
    return mean(reshape(x, (*lead, H // 2, 2, W // 2, 2)), axis=(-3, -1))


def upsample2(x) -> Tensor:
    """Nearest-neighbour 2x upsampling over the last two axes."""
    x = as_tensor(x)
    *lead, H, W = x.shape
    expanded = broadcast_to(reshape(x, (*lead, H, 1, W, 1)), (*lead, H, 2, W, 2))
    return reshape(expanded, (*lead, 2 * H, 2 * W))
