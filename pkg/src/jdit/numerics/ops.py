"""Network-facing operations built on the tensor primitives.

Shapes follow the time-major convention used throughout the package:
``[..., T, C]`` with an optional leading batch axis.
"""

from __future__ import annotations

import numpy as np

from . import tensor as tt
from .tensor import Tensor


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize slices along ``axis`` to mean 0 / variance 1, then scale and shift.

    ``gain`` and ``bias`` are 1-D with the length of the normalized axis.
    """
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"layer_norm axis {axis} invalid for shape {x.shape}")
    length = x.shape[axis]
    if length == 0:
        raise ValueError("layer_norm over a zero-length axis")
    if gain.shape != (length,) or bias.shape != (length,):
        raise ValueError(
            f"gain/bias shapes {gain.shape}/{bias.shape} do not match axis length {length}"
        )
    mu = x.mean(axis=axis, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=axis, keepdims=True)
    normed = centered * (var + eps) ** -0.5
    if axis not in (-1, x.ndim - 1):
        # broadcast gain/bias along the normalized axis
        shape = [1] * x.ndim
        shape[axis] = length
        gain = gain.reshape(shape)
        bias = bias.reshape(shape)
    return normed * gain + bias


def conv1d(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-padded 1-D convolution over the time axis.

    ``x`` is ``[T, C_in]`` or ``[B, T, C_in]``; ``kernel`` is ``[K, C_in, C_out]``
    with odd ``K``; output keeps the time length.
    """
    if kernel.ndim != 3:
        raise ValueError(f"kernel must be [K, C_in, C_out], got shape {kernel.shape}")
    k, c_in, c_out = kernel.shape
    if k % 2 == 0:
        raise ValueError(f"kernel size {k} must be odd for symmetric same-padding")
    if x.ndim not in (2, 3):
        raise ValueError(f"conv1d input must be 2-D or 3-D, got shape {x.shape}")
    if x.shape[-1] != c_in:
        raise ValueError(f"input channels {x.shape[-1]} != kernel C_in {c_in}")
    t_len = x.shape[-2]
    if t_len < 1:
        raise ValueError("conv1d needs at least one time step")
    half = k // 2
    padded = tt.pad_axis(x, x.ndim - 2, half, half)
    # im2col: concatenate the K shifted views on the channel axis, then one matmul
    taps = [padded[..., offset : offset + t_len, :] for offset in range(k)]
    windows = tt.concat(taps, axis=x.ndim - 1)
    out = windows @ kernel.reshape(k * c_in, c_out)
    if bias is not None:
        if bias.shape != (c_out,):
            raise ValueError(f"bias shape {bias.shape} != ({c_out},)")
        out = out + bias
    return out


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Look up rows of ``table`` for an integer id array of any shape."""
    return tt.gather_rows(table, ids)


def masked_mean_over_time(x: Tensor, valid: np.ndarray) -> tuple[Tensor, Tensor]:
    """Per-channel mean/variance over valid time steps.

    ``x`` is ``[B, T, C]`` (or ``[T, C]``), ``valid`` a boolean mask over the
    time axis; population statistics, ignoring masked steps.
    """
    if x.ndim == 2:
        x3 = x.reshape((1,) + x.shape)
        valid3 = np.asarray(valid, dtype=bool).reshape(1, -1)
        m, v = masked_mean_over_time(x3, valid3)
        return m.reshape(m.shape[1:]), v.reshape(v.shape[1:])
    valid = np.asarray(valid, dtype=bool)
    counts = valid.sum(axis=1)
    if (counts == 0).any():
        raise ValueError("an utterance has no valid time steps")
    weights = valid[:, :, None].astype(np.float64)
    inv = Tensor(1.0 / counts[:, None, None])
    mu = (x * Tensor(weights)).sum(axis=1, keepdims=True) * inv
    centered = (x - mu) * Tensor(weights)
    var = (centered * centered).sum(axis=1, keepdims=True) * inv
    return mu, var
