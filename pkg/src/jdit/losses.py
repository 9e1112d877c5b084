"""The five training loss terms and their unit-weighted sum.

Two L1 spectrogram losses, an L2 loss on log-domain durations, a CTC
recognizer loss over the decoder states, and a guided-attention penalty
pushing alignment mass toward the diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as kernels
from .numerics import Tensor
from .numerics.tensor import absolute, exp, log, sum_

METRICS_COLUMNS = ("step", "l1_ar", "l1_ff", "l2_dur", "ctc", "guided", "total", "grad_norm", "lr")


class CtcLengthError(ValueError):
    """The frame sequence is too short to emit the target under CTC rules."""


@dataclass
class LossBreakdown:
    l1_ar: float = 0.0
    l1_ff: float = 0.0
    l2_dur: float = 0.0
    ctc: float = 0.0
    guided: float = 0.0
    total: float = 0.0

    def as_row(self) -> tuple[float, ...]:
        return (self.l1_ar, self.l1_ff, self.l2_dur, self.ctc, self.guided, self.total)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def l1_mel(y, y_hat, frame_valid: np.ndarray | None = None) -> Tensor:
    """Mean absolute error over all (valid) frame/bin elements."""
    y = _as_tensor(y)
    y_hat = _as_tensor(y_hat)
    if y.shape != y_hat.shape:
        raise ValueError(f"spectrogram shapes differ: {y.shape} vs {y_hat.shape}")
    diff = absolute(y_hat - y)
    if frame_valid is None:
        return diff.mean()
    valid = np.asarray(frame_valid, dtype=bool)
    count = valid.sum() * y.shape[-1]
    if count == 0:
        raise ValueError("no valid frames to compare")
    keep = Tensor(valid[..., None].astype(np.float64))
    return sum_(diff * keep) * Tensor(1.0 / count)


def l2_log_duration(
    d_ref: np.ndarray, d_pred_log: Tensor, phoneme_valid: np.ndarray | None = None
) -> Tensor:
    """Mean squared error between predicted log-durations and ln(reference + 1).

    The reference counts are constants; no gradient reaches their extractor.
    """
    d_ref = np.asarray(d_ref)
    if d_ref.shape != d_pred_log.shape:
        raise ValueError(f"duration shapes differ: {d_ref.shape} vs {d_pred_log.shape}")
    target = Tensor(np.log1p(d_ref.astype(np.float64)))
    diff = d_pred_log - target
    sq = diff * diff
    if phoneme_valid is None:
        return sq.mean()
    valid = np.asarray(phoneme_valid, dtype=bool)
    count = int(valid.sum())
    if count == 0:
        raise ValueError("all phoneme positions are padded")
    return sum_(sq * Tensor(valid.astype(np.float64))) * Tensor(1.0 / count)


def ctc_required_frames(targets: np.ndarray) -> int:
    """Minimum frame count: one per label plus one per adjacent repeat."""
    targets = np.asarray(targets)
    repeats = int((targets[1:] == targets[:-1]).sum()) if len(targets) > 1 else 0
    return len(targets) + repeats


def log_softmax(logits: Tensor, axis: int = -1) -> Tensor:
    shift = Tensor(logits.data.max(axis=axis, keepdims=True))
    shifted = logits - shift
    return shifted - log(sum_(exp(shifted), axis=axis, keepdims=True))


def ctc_loss(logits: Tensor, targets: np.ndarray, blank: int | None = None) -> Tensor:
    """Negative log-probability of the target under all CTC alignments.

    ``logits`` are ``[T, V+1]`` with the blank as the last class by default.
    Raises :class:`CtcLengthError` when ``T`` cannot fit the target.
    """
    if logits.ndim != 2:
        raise ValueError(f"CTC logits must be [T, classes], got {logits.shape}")
    t_len, n_classes = logits.shape
    if blank is None:
        blank = n_classes - 1
    targets = np.ascontiguousarray(targets, dtype=np.int64)
    if targets.ndim != 1 or len(targets) == 0:
        raise ValueError("CTC target must be a non-empty 1-D label sequence")
    if targets.min() < 0 or targets.max() >= n_classes or (targets == blank).any():
        raise ValueError("CTC target labels must be valid non-blank class indices")
    needed = ctc_required_frames(targets)
    if t_len < needed:
        raise CtcLengthError(
            f"{t_len} frames cannot emit {len(targets)} labels (needs >= {needed})"
        )

    log_probs = log_softmax(logits, axis=-1)
    lp_data = np.ascontiguousarray(log_probs.data)
    loss_value, log_alpha = kernels.ctc_forward(lp_data, targets, blank)

    def build(out: Tensor):
        def bw(g: np.ndarray) -> None:
            grad = kernels.ctc_backward(lp_data, targets, blank, log_alpha, loss_value)
            log_probs._accumulate(float(g) * grad)

        return bw

    return Tensor._from_op(np.asarray(loss_value), (log_probs,), build, "ctc")


def guided_attention_mask(t_len: int, n_len: int, sigma: float = 0.2) -> np.ndarray:
    """Diagonal-band weights: ``1 - exp(-(n/N - t/T)^2 / (2 sigma^2))``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    t_pos = np.arange(t_len)[:, None] / t_len
    n_pos = np.arange(n_len)[None, :] / n_len
    return 1.0 - np.exp(-((n_pos - t_pos) ** 2) / (2.0 * sigma * sigma))


def guided_attention_loss(alpha: Tensor, mask: np.ndarray) -> Tensor:
    """Mean of alignment mass weighted by distance from the diagonal."""
    mask = np.asarray(mask)
    if alpha.shape != mask.shape:
        raise ValueError(f"alignment {alpha.shape} and mask {mask.shape} shapes differ")
    return (alpha * Tensor(mask)).mean()


def total_loss(
    parts: dict[str, Tensor], weights: dict[str, float] | None = None
) -> tuple[Tensor, LossBreakdown]:
    """Weighted sum (unit weights by default) plus per-term values for logging."""
    expected = ("l1_ar", "l1_ff", "l2_dur", "ctc", "guided")
    missing = [k for k in expected if k not in parts]
    if missing:
        raise ValueError(f"missing loss terms: {missing}")
    weights = weights or {}
    total = None
    for key in expected:
        term = parts[key] * Tensor(float(weights.get(key, 1.0)))
        total = term if total is None else total + term
    breakdown = LossBreakdown(
        **{k: float(parts[k].data) for k in expected}, total=float(total.data)
    )
    return total, breakdown
