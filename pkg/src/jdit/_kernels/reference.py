"""Pure-numpy implementations of the sequential hot kernels.

These are the fallback twins of the compiled ``_native`` extension: same
signatures, same numerics, loops over time in Python with vectorized rows.
Both kernels are recursions over frames and cannot be expressed as single
array expressions, which is why a compiled variant exists at all.
"""

from __future__ import annotations

import numpy as np

NEG_INF = -np.inf


def forward_attention_forward(
    w: np.ndarray,
    t_lengths: np.ndarray,
    n_lengths: np.ndarray,
    floor: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Monotonic re-weighting of attention rows.

    ``w`` is ``[B, T, N]`` with each valid row a probability distribution over
    the valid phoneme range (exact zeros on padded columns). Returns the
    re-weighted rows ``alpha`` (zeros outside the valid region) and the
    per-row normalizer sums needed by the backward pass.
    """
    batch, t_max, n_max = w.shape
    alpha = np.zeros((batch, t_max, n_max))
    norms = np.ones((batch, t_max))
    col_valid = np.arange(n_max)[None, :] < n_lengths[:, None]

    prev = np.zeros((batch, n_max))
    prev[:, 0] = 1.0
    for t in range(t_max):
        active = t < t_lengths
        if not active.any():
            break
        shifted = np.zeros_like(prev)
        shifted[:, 1:] = prev[:, :-1]
        u = (prev + shifted) * w[:, t, :]
        row_sum = u.sum(axis=1)
        need_floor = active & (row_sum < floor)
        p = u + np.where(need_floor[:, None], floor, 0.0) * col_valid
        z = p.sum(axis=1)
        z = np.where(active, z, 1.0)
        row = np.where(active[:, None], p / z[:, None], 0.0)
        alpha[:, t, :] = row
        norms[:, t] = z
        prev = np.where(active[:, None], row, prev)
    return alpha, norms


def forward_attention_backward(
    w: np.ndarray,
    alpha: np.ndarray,
    norms: np.ndarray,
    grad_alpha: np.ndarray,
    t_lengths: np.ndarray,
    n_lengths: np.ndarray,
) -> np.ndarray:
    """Gradient of the monotonic re-weighting w.r.t. the raw rows ``w``."""
    batch, t_max, n_max = w.shape
    grad_w = np.zeros_like(w)
    active_any = int(t_lengths.max()) if len(t_lengths) else 0
    col_valid = np.arange(n_max)[None, :] < n_lengths[:, None]

    carried = np.zeros((batch, n_max))
    for t in range(active_any - 1, -1, -1):
        active = t < t_lengths
        g_row = np.where(active[:, None], grad_alpha[:, t, :] + carried, 0.0)
        a_row = alpha[:, t, :]
        z = norms[:, t]
        inner = (g_row * a_row).sum(axis=1, keepdims=True)
        # padded columns are outside the renormalized probability mass
        q = np.where(col_valid, (g_row - inner) / z[:, None], 0.0)
        if t == 0:
            prev = np.zeros((batch, n_max))
            prev[:, 0] = 1.0
        else:
            prev = alpha[:, t - 1, :].copy()
            # rows whose utterance already ended keep their last valid state;
            # they are inactive here anyway
        shifted = np.zeros_like(prev)
        shifted[:, 1:] = prev[:, :-1]
        grad_w[:, t, :] = np.where(active[:, None], q * (prev + shifted), 0.0)
        m = q * w[:, t, :]
        new_carried = m.copy()
        new_carried[:, :-1] += m[:, 1:]
        carried = np.where(active[:, None], new_carried, carried)
    return grad_w


def _extend_labels(labels: np.ndarray, blank: int) -> np.ndarray:
    ext = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    ext[1::2] = labels
    return ext


def ctc_forward(
    log_probs: np.ndarray, labels: np.ndarray, blank: int
) -> tuple[float, np.ndarray]:
    """Log-space forward pass over the blank-extended label lattice.

    Returns the negative log-likelihood and the forward trellis
    (needed by the backward pass).
    """
    t_len, _ = log_probs.shape
    ext = _extend_labels(np.asarray(labels, dtype=np.int64), blank)
    s_len = len(ext)
    skip_ok = np.zeros(s_len, dtype=bool)
    skip_ok[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    log_alpha = np.full((t_len, s_len), NEG_INF)
    log_alpha[0, 0] = log_probs[0, ext[0]]
    if s_len > 1:
        log_alpha[0, 1] = log_probs[0, ext[1]]
    for t in range(1, t_len):
        prev = log_alpha[t - 1]
        stay = prev
        step = np.full(s_len, NEG_INF)
        step[1:] = prev[:-1]
        skip = np.full(s_len, NEG_INF)
        skip[2:] = prev[:-2]
        skip = np.where(skip_ok, skip, NEG_INF)
        merged = np.logaddexp(np.logaddexp(stay, step), skip)
        log_alpha[t] = merged + log_probs[t, ext]

    if s_len > 1:
        log_p = np.logaddexp(log_alpha[-1, -1], log_alpha[-1, -2])
    else:
        log_p = log_alpha[-1, -1]
    return float(-log_p), log_alpha


def ctc_backward(
    log_probs: np.ndarray,
    labels: np.ndarray,
    blank: int,
    log_alpha: np.ndarray,
    loss: float,
) -> np.ndarray:
    """Gradient of the negative log-likelihood w.r.t. ``log_probs``."""
    t_len, n_classes = log_probs.shape
    ext = _extend_labels(np.asarray(labels, dtype=np.int64), blank)
    s_len = len(ext)
    # entering state s+2 from s skips one blank; allowed unless the skipped
    # target is a blank or repeats the current label
    skip_ok_fwd = np.zeros(s_len, dtype=bool)
    skip_ok_fwd[: s_len - 2] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    log_beta = np.full((t_len, s_len), NEG_INF)
    log_beta[-1, -1] = 0.0
    if s_len > 1:
        log_beta[-1, -2] = 0.0
    for t in range(t_len - 2, -1, -1):
        nxt = log_beta[t + 1] + log_probs[t + 1, ext]
        stay = nxt
        step = np.full(s_len, NEG_INF)
        step[:-1] = nxt[1:]
        skip = np.full(s_len, NEG_INF)
        skip[:-2] = nxt[2:]
        skip = np.where(skip_ok_fwd, skip, NEG_INF)
        log_beta[t] = np.logaddexp(np.logaddexp(stay, step), skip)

    log_p = -loss
    grad = np.zeros_like(log_probs)
    occupancy = np.exp(log_alpha + log_beta - log_p)
    for s in range(s_len):
        grad[:, ext[s]] -= occupancy[:, s]
    return grad
