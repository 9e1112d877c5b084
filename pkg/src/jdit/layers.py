"""Network building blocks: attention/convolution blocks, pre-nets, embeddings,
scaled positional encoding.

All blocks take ``[B, L, dim]`` inputs plus boolean validity masks (True =
real position) and are exactly padding-invariant: values at padded positions
never influence valid ones. Sub-layers are post-norm, i.e.
``out = layer_norm(x + dropout(f(x)))``.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from . import alignment
from .numerics import Tensor, conv1d, layer_norm, masked_mean_over_time
from .numerics.tensor import dropout, masked_fill, relu, softmax

MASK_LOGIT = -1e30


class Layer:
    """Minimal module base: parameter discovery plus a train/eval flag."""

    def __init__(self):
        self.training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = ""):
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Layer):
                yield from value.named_parameters(f"{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Layer):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def train(self, mode: bool = True) -> "Layer":
        self.training = mode
        for value in vars(self).values():
            if isinstance(value, Layer):
                value.train(mode)
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Layer):
                        item.train(mode)
        return self

    def eval(self) -> "Layer":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Linear(Layer):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.weight = glorot_uniform(rng, (in_dim, out_dim), in_dim, out_dim)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        return out if self.bias is None else out + self.bias


class Embedding(Layer):
    def __init__(self, count: int, dim: int, rng: np.random.Generator):
        super().__init__()
        self.table = Tensor(rng.normal(size=(count, dim)), requires_grad=True)

    def forward(self, ids: np.ndarray) -> Tensor:
        from .numerics import embedding

        return embedding(self.table, np.asarray(ids, dtype=np.int64))


class Conv1d(Layer):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator):
        super().__init__()
        self.kernel = glorot_uniform(rng, (kernel, in_ch, out_ch), kernel * in_ch, out_ch)
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return conv1d(x, self.kernel, self.bias)


class LayerNorm(Layer):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, axis=-1, eps=self.eps)


class TimeChannelNorm(Layer):
    """Per-channel normalization over an utterance's valid time steps.

    Batch-norm stand-in that never couples utterances: statistics are taken
    over the time axis of each sequence separately.
    """

    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def forward(self, x: Tensor, valid: np.ndarray) -> Tensor:
        mu, var = masked_mean_over_time(x, valid)
        normed = (x - mu) * (var + Tensor(self.eps)) ** -0.5
        return normed * self.gain + self.bias


@lru_cache(maxsize=8)
def _sinusoid_table(length: int, dim: int) -> np.ndarray:
    position = np.arange(length)[:, None]
    index = np.arange(dim)[None, :]
    angle = position / np.power(10000.0, (2.0 * (index // 2)) / dim)
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(angle[:, 0::2])
    table[:, 1::2] = np.cos(angle[:, 1::2])
    return table


def sinusoid_position_table(length: int, dim: int) -> np.ndarray:
    """Fixed sinusoidal position table (row 0 is [0, 1, 0, 1, ...])."""
    return _sinusoid_table(length, dim).copy()


class ScaledPositionalEncoding(Layer):
    """Adds ``scale * PE`` with a trainable scalar ``scale`` initialized to 1."""

    def __init__(self):
        super().__init__()
        self.scale = Tensor(1.0, requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        table = Tensor(_sinusoid_table(x.shape[-2], x.shape[-1]))
        return x + self.scale * table


class MultiHeadAttention(Layer):
    def __init__(self, dim: int, num_heads: int, rng: np.random.Generator):
        super().__init__()
        if dim % num_heads != 0:
            raise ValueError(f"model dim {dim} not divisible by {num_heads} heads")
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)

    def forward(
        self,
        x_q: Tensor,
        x_kv: Tensor,
        key_valid: np.ndarray | None = None,
        causal: bool = False,
    ) -> tuple[Tensor, Tensor]:
        """Returns (output, attention weights [B, heads, Lq, Lk])."""
        b, lq, dim = x_q.shape
        lk = x_kv.shape[1]
        h, hd = self.num_heads, self.head_dim

        def split(t: Tensor, length: int) -> Tensor:
            return t.reshape((b, length, h, hd)).transpose((0, 2, 1, 3))

        q = split(self.wq(x_q), lq)
        k = split(self.wk(x_kv), lk)
        v = split(self.wv(x_kv), lk)
        scores = (q @ k.transpose((0, 1, 3, 2))) * Tensor(1.0 / math.sqrt(hd))
        if key_valid is not None:
            pad = ~np.asarray(key_valid, dtype=bool)
            if pad.all(axis=1).any():
                raise ValueError("attention over an utterance with no valid positions")
            scores = masked_fill(scores, pad[:, None, None, :], MASK_LOGIT)
        if causal:
            future = np.triu(np.ones((lq, lk), dtype=bool), k=1)
            scores = masked_fill(scores, future[None, None, :, :], MASK_LOGIT)
        attn = softmax(scores, axis=-1)
        out = (attn @ v).transpose((0, 2, 1, 3)).reshape((b, lq, dim))
        return self.wo(out), attn


class FftBlock(Layer):
    """Self-attention plus a single same-padded convolution, both post-norm."""

    def __init__(
        self,
        dim: int,
        num_heads: int,
        conv_kernel: int,
        dropout_rate: float,
        rng: np.random.Generator,
    ):
        super().__init__()
        self.attention = MultiHeadAttention(dim, num_heads, rng)
        self.conv = Conv1d(dim, dim, conv_kernel, rng)
        self.norm_att = LayerNorm(dim)
        self.norm_conv = LayerNorm(dim)
        self.dropout_rate = dropout_rate
        self.rng = rng

    def forward(self, x: Tensor, valid: np.ndarray) -> Tensor:
        valid = np.asarray(valid, dtype=bool)
        att, _ = self.attention(x, x, key_valid=valid)
        x = self.norm_att(x + dropout(att, self.dropout_rate, self.rng, self.training))
        # zero padded rows so convolution taps cannot leak them into valid frames
        conv_in = x * Tensor(valid[:, :, None].astype(np.float64))
        c = relu(self.conv(conv_in))
        return self.norm_conv(x + dropout(c, self.dropout_rate, self.rng, self.training))


class FeedForward(Layer):
    """Position-wise two-layer network with ReLU."""

    def __init__(self, dim: int, inner_dim: int, rng: np.random.Generator):
        super().__init__()
        self.expand = Linear(dim, inner_dim, rng)
        self.contract = Linear(inner_dim, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.contract(relu(self.expand(x)))


class DecoderBlock(Layer):
    """Causally masked self-attention, monotonic encoder attention, position-wise FFN.

    Returns the block output and the monotonic alignment rows; the alignment
    context is a convex combination of raw encoder rows.
    """

    def __init__(
        self,
        dim: int,
        num_heads: int,
        ffn_dim: int,
        dropout_rate: float,
        rng: np.random.Generator,
    ):
        super().__init__()
        self.self_attention = MultiHeadAttention(dim, num_heads, rng)
        self.query_proj = Linear(dim, dim, rng, bias=False)
        self.key_proj = Linear(dim, dim, rng, bias=False)
        self.ffn = FeedForward(dim, ffn_dim, rng)
        self.norm_self = LayerNorm(dim)
        self.norm_ctx = LayerNorm(dim)
        self.norm_ffn = LayerNorm(dim)
        self.dropout_rate = dropout_rate
        self.rng = rng

    def forward(
        self,
        y_in: Tensor,
        h: Tensor,
        t_lengths: np.ndarray,
        n_lengths: np.ndarray,
        n_valid: np.ndarray,
    ) -> tuple[Tensor, Tensor]:
        if y_in.shape[1] < 1 or h.shape[1] < 1:
            raise ValueError("decoder needs at least one frame and one phoneme")
        rate, rng, training = self.dropout_rate, self.rng, self.training
        att, _ = self.self_attention(y_in, y_in, causal=True)
        x = self.norm_self(y_in + dropout(att, rate, rng, training))
        w = alignment.content_attention(h, x, self.query_proj, self.key_proj, n_valid)
        alpha, context = alignment.forward_attention(w, h, t_lengths, n_lengths)
        x = self.norm_ctx(x + dropout(context, rate, rng, training))
        f = self.ffn(x)
        x = self.norm_ffn(x + dropout(f, rate, rng, training))
        return x, alpha


class EncoderPrenet(Layer):
    """Three same-padded convolutions with per-utterance time normalization."""

    def __init__(
        self,
        in_dim: int,
        dim: int,
        rng: np.random.Generator,
        kernel: int = 5,
        dropout_rate: float = 0.5,
    ):
        super().__init__()
        self.convs = [
            Conv1d(in_dim if i == 0 else dim, dim, kernel, rng) for i in range(3)
        ]
        self.norms = [TimeChannelNorm(dim) for _ in range(3)]
        self.out = Linear(dim, dim, rng)
        self.dropout_rate = dropout_rate
        self.rng = rng

    def forward(self, x: Tensor, valid: np.ndarray) -> Tensor:
        valid = np.asarray(valid, dtype=bool)
        keep = Tensor(valid[:, :, None].astype(np.float64))
        for conv, norm in zip(self.convs, self.norms):
            x = conv(x * keep)
            x = relu(norm(x, valid))
            x = dropout(x, self.dropout_rate, self.rng, self.training)
        return self.out(x)


class DecoderPrenet(Layer):
    """Two fully connected layers with ReLU and dropout, then a projection."""

    def __init__(
        self, in_dim: int, dim: int, rng: np.random.Generator, dropout_rate: float = 0.5
    ):
        super().__init__()
        self.fc1 = Linear(in_dim, dim, rng)
        self.fc2 = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)
        self.dropout_rate = dropout_rate
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        x = dropout(relu(self.fc1(x)), self.dropout_rate, self.rng, self.training)
        x = dropout(relu(self.fc2(x)), self.dropout_rate, self.rng, self.training)
        return self.out(x)


class DurationPredictor(Layer):
    """Convolutional head predicting one log-domain duration per phoneme."""

    def __init__(
        self,
        dim: int,
        rng: np.random.Generator,
        kernel: int = 3,
        num_layers: int = 2,
        dropout_rate: float = 0.1,
    ):
        super().__init__()
        self.convs = [Conv1d(dim, dim, kernel, rng) for _ in range(num_layers)]
        self.norms = [LayerNorm(dim) for _ in range(num_layers)]
        self.out = Linear(dim, 1, rng)
        self.dropout_rate = dropout_rate
        self.rng = rng

    def forward(self, h: Tensor, valid: np.ndarray) -> Tensor:
        valid = np.asarray(valid, dtype=bool)
        keep = Tensor(valid[..., None].astype(np.float64))
        x = h
        for conv, norm in zip(self.convs, self.norms):
            x = norm(relu(conv(x * keep)))
            x = dropout(x, self.dropout_rate, self.rng, self.training)
        log_d = self.out(x).reshape(h.shape[:-1])
        return log_d * Tensor(valid.astype(np.float64))
