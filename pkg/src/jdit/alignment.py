"""Monotonic attention over phonemes, duration extraction, length regulation.

The attention weights live in row-stochastic ``[T, N]`` matrices (frames by
phonemes). The monotonic re-weighting recursion runs in a compiled kernel
when available (see ``jdit._kernels``); gradients flow through it, but never
through duration extraction.
"""

from __future__ import annotations

import math

import numpy as np

from . import _kernels as kernels
from .numerics import Tensor
from .numerics.tensor import masked_fill, softmax

UNDERFLOW_FLOOR = 1e-20
ROW_SUM_TOLERANCE = 1e-3


def _as_batched(w: Tensor) -> tuple[Tensor, bool]:
    if w.ndim == 2:
        return w.reshape((1,) + w.shape), True
    if w.ndim == 3:
        return w, False
    raise ValueError(f"attention weights must be [T, N] or [B, T, N], got {w.shape}")


def monotonic_attention(
    w: Tensor,
    t_lengths: np.ndarray | None = None,
    n_lengths: np.ndarray | None = None,
    floor: float = UNDERFLOW_FLOOR,
) -> Tensor:
    """Restrict attention rows to monotonic alignment paths.

    Rows are re-weighted recursively: each row is multiplied by the previous
    row's mass at the same and the preceding phoneme, then renormalized, with
    all mass starting on the first phoneme. If a row's pre-normalization sum
    underflows below ``floor``, that floor is added to every valid entry
    before normalizing. Input rows must already be probability distributions.
    """
    batched, squeeze = _as_batched(w)
    b, t_max, n_max = batched.shape
    if t_lengths is None:
        t_lengths = np.full(b, t_max, dtype=np.int64)
    if n_lengths is None:
        n_lengths = np.full(b, n_max, dtype=np.int64)
    t_lengths = np.ascontiguousarray(t_lengths, dtype=np.int64)
    n_lengths = np.ascontiguousarray(n_lengths, dtype=np.int64)

    data = np.ascontiguousarray(batched.data)
    for i in range(b):
        sums = data[i, : t_lengths[i], : n_lengths[i]].sum(axis=1)
        if np.abs(sums - 1.0).max(initial=0.0) > ROW_SUM_TOLERANCE:
            raise ValueError(
                "attention rows must be normalized before monotonic re-weighting "
                f"(utterance {i}: worst row sum {sums[np.abs(sums - 1.0).argmax()]:.6f})"
            )

    alpha_data, norms = kernels.forward_attention_forward(data, t_lengths, n_lengths, floor)

    def build(out: Tensor):
        def bw(g: np.ndarray) -> None:
            grad_w = kernels.forward_attention_backward(
                data, alpha_data, norms, np.ascontiguousarray(g), t_lengths, n_lengths
            )
            batched._accumulate(grad_w)

        return bw

    alpha = Tensor._from_op(alpha_data, (batched,), build, "monotonic_attention")
    return alpha.reshape(alpha.shape[1:]) if squeeze else alpha


def forward_attention(
    w: Tensor,
    h: Tensor,
    t_lengths: np.ndarray | None = None,
    n_lengths: np.ndarray | None = None,
    floor: float = UNDERFLOW_FLOOR,
) -> tuple[Tensor, Tensor]:
    """Monotonic re-weighting plus the context rows ``c_t = sum_n alpha[t,n] h[n]``."""
    alpha = monotonic_attention(w, t_lengths, n_lengths, floor)
    context = alpha @ h
    return alpha, context


def content_attention(h: Tensor, s: Tensor, project_query, project_key, n_valid=None) -> Tensor:
    """Single-head scaled dot-product attention rows of decoder states over phonemes.

    ``project_query``/``project_key`` are callables (linear maps); ``n_valid``
    marks real phoneme positions, padded ones get weight exactly 0.
    """
    q = project_query(s)
    k = project_key(h)
    dim = q.shape[-1]
    axes = tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)
    logits = (q @ k.transpose(axes)) * Tensor(1.0 / math.sqrt(dim))
    if n_valid is not None:
        pad = ~np.asarray(n_valid, dtype=bool)
        if pad.all(axis=-1).any():
            raise ValueError("an utterance has no valid phoneme positions")
        logits = masked_fill(logits, np.expand_dims(pad, axis=-2), -1e30)
    return softmax(logits, axis=-1)


def extract_durations(alpha) -> np.ndarray:
    """Count, per phoneme, the frames whose alignment-row argmax selects it.

    Ties break toward the smaller phoneme index; the result always sums to
    the frame count. Non-differentiable by construction (returns plain ints).
    """
    weights = alpha.data if isinstance(alpha, Tensor) else np.asarray(alpha)
    if weights.ndim != 2:
        raise ValueError(f"expected a [T, N] alignment matrix, got shape {weights.shape}")
    t_len, n_len = weights.shape
    winners = weights.argmax(axis=1)
    return np.bincount(winners, minlength=n_len).astype(np.int64)


def length_regulate(h: Tensor, durations) -> Tensor:
    """Repeat row ``n`` of ``h`` ``durations[n]`` times, order preserved."""
    durations = np.asarray(durations, dtype=np.int64)
    if durations.ndim != 1 or len(durations) != h.shape[0]:
        raise ValueError(
            f"durations must be one per row: got {durations.shape} for {h.shape[0]} rows"
        )
    if (durations < 0).any():
        raise ValueError("durations must be nonnegative")
    total = int(durations.sum())
    if total < 1:
        raise ValueError("total duration must be at least 1 frame")
    indices = np.repeat(np.arange(len(durations)), durations)
    from .numerics.tensor import gather_rows

    return gather_rows(h, indices)


def save_alignment_csv(alpha: np.ndarray, path) -> None:
    """Plain-text rows of alignment weights, frames top-to-bottom."""
    np.savetxt(path, np.asarray(alpha), delimiter=",", fmt="%.10g")


def save_alignment_pgm(alpha: np.ndarray, path) -> None:
    """8-bit grayscale PGM, value = round(255 * weight), frame rows top-to-bottom."""
    weights = np.asarray(alpha)
    t_len, n_len = weights.shape
    gray = np.clip(np.rint(255.0 * weights), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{n_len} {t_len}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())
