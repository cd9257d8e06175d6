"""Neural-network layers shared by the sentiment model and the intensity heads.

All layers are pure functions of (parameters, input, rng) built on the
autodiff ops, so one backward pass reaches every parameter. Single-instance
signatures take 1-d inputs; the ``*_batch`` variants run whole minibatches
through the same math.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    add,
    concat,
    make_op,
    matmul,
    mul,
    relu,
    reshape,
    narrow,
    sigmoid,
    tanh,
)

ACTIVATIONS = {
    "none": lambda t: t,
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
}


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class LstmParams:
    """Weights of one LSTM direction: four gates, input + recurrent + bias."""

    w_xi: Tensor
    w_xf: Tensor
    w_xo: Tensor
    w_xg: Tensor
    w_hi: Tensor
    w_hf: Tensor
    w_ho: Tensor
    w_hg: Tensor
    b_i: Tensor
    b_f: Tensor
    b_o: Tensor
    b_g: Tensor

    def __post_init__(self):
        d, u = self.w_xi.shape
        for name in ("w_xf", "w_xo", "w_xg"):
            if getattr(self, name).shape != (d, u):
                raise ShapeError(f"{name} shape {getattr(self, name).shape} != ({d}, {u})")
        for name in ("w_hi", "w_hf", "w_ho", "w_hg"):
            if getattr(self, name).shape != (u, u):
                raise ShapeError(f"{name} shape {getattr(self, name).shape} != ({u}, {u})")
        for name in ("b_i", "b_f", "b_o", "b_g"):
            if getattr(self, name).shape != (u,):
                raise ShapeError(f"{name} shape {getattr(self, name).shape} != ({u},)")

    @property
    def input_dim(self) -> int:
        return self.w_xi.shape[0]

    @property
    def units(self) -> int:
        return self.w_xi.shape[1]

    def tensors(self) -> list[Tensor]:
        return [
            self.w_xi, self.w_xf, self.w_xo, self.w_xg,
            self.w_hi, self.w_hf, self.w_ho, self.w_hg,
            self.b_i, self.b_f, self.b_o, self.b_g,
        ]

    def named(self, prefix: str) -> dict[str, Tensor]:
        names = ["w_xi", "w_xf", "w_xo", "w_xg", "w_hi", "w_hf", "w_ho", "w_hg",
                 "b_i", "b_f", "b_o", "b_g"]
        return {f"{prefix}.{n}": t for n, t in zip(names, self.tensors())}

    @staticmethod
    def create(d: int, u: int, rng: np.random.Generator) -> "LstmParams":
        """Glorot-uniform weights, zero biases, forget bias 1.0."""
        def wx():
            return Tensor(glorot_uniform(rng, d, u, (d, u)), requires_grad=True)

        def wh():
            return Tensor(glorot_uniform(rng, u, u, (u, u)), requires_grad=True)

        def bias(value=0.0):
            return Tensor(np.full(u, value), requires_grad=True)

        return LstmParams(
            w_xi=wx(), w_xf=wx(), w_xo=wx(), w_xg=wx(),
            w_hi=wh(), w_hf=wh(), w_ho=wh(), w_hg=wh(),
            b_i=bias(), b_f=bias(1.0), b_o=bias(), b_g=bias(),
        )


@dataclass
class Conv1dParams:
    """Cross-correlation kernels [out_channels, in_channels, kernel_size] + bias."""

    kernels: Tensor
    bias: Tensor

    def __post_init__(self):
        if self.kernels.ndim != 3:
            raise ShapeError(f"kernels must be 3-d, got shape {self.kernels.shape}")
        if self.kernel_size % 2 == 0:
            raise ShapeError(f"kernel_size must be odd for same padding, got {self.kernel_size}")
        if self.bias.shape != (self.out_channels,):
            raise ShapeError(f"bias shape {self.bias.shape} != ({self.out_channels},)")

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.kernels.shape[2]

    def tensors(self) -> list[Tensor]:
        return [self.kernels, self.bias]

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.kernels": self.kernels, f"{prefix}.bias": self.bias}

    @staticmethod
    def create(in_channels: int, out_channels: int, kernel_size: int,
               rng: np.random.Generator) -> "Conv1dParams":
        fan_in = in_channels * kernel_size
        fan_out = out_channels * kernel_size
        kernels = glorot_uniform(rng, fan_in, fan_out, (out_channels, in_channels, kernel_size))
        return Conv1dParams(
            kernels=Tensor(kernels, requires_grad=True),
            bias=Tensor(np.zeros(out_channels), requires_grad=True),
        )


def init_dense(fan_in: int, fan_out: int, rng: np.random.Generator) -> tuple[Tensor, Tensor]:
    w = Tensor(glorot_uniform(rng, fan_in, fan_out, (fan_in, fan_out)), requires_grad=True)
    b = Tensor(np.zeros(fan_out), requires_grad=True)
    return w, b


# ---------------------------------------------------------------------------
# recurrent layers
# ---------------------------------------------------------------------------

def lstm_cell_step(
    p: LstmParams, x_t: Tensor, h_prev: Tensor, m_prev: Tensor
) -> tuple[Tensor, Tensor]:
    """One LSTM step: sigmoid gates i/f/o, tanh candidate g,
    m_t = f*m_prev + i*g, h_t = o*tanh(m_t).

    Accepts a single instance ([d], [u], [u]) or a batch ([n,d], [n,u], [n,u]).
    """
    single = x_t.ndim == 1
    if single:
        x_t = reshape(x_t, (1, x_t.shape[0]))
        h_prev = reshape(h_prev, (1, h_prev.shape[0]))
        m_prev = reshape(m_prev, (1, m_prev.shape[0]))
    if x_t.shape[1] != p.input_dim or h_prev.shape[1] != p.units or m_prev.shape[1] != p.units:
        raise ShapeError(
            f"lstm_cell_step: x {x_t.shape}, h {h_prev.shape}, m {m_prev.shape} "
            f"do not match params d={p.input_dim}, u={p.units}"
        )

    i = sigmoid(add(add(matmul(x_t, p.w_xi), matmul(h_prev, p.w_hi)), p.b_i))
    f = sigmoid(add(add(matmul(x_t, p.w_xf), matmul(h_prev, p.w_hf)), p.b_f))
    o = sigmoid(add(add(matmul(x_t, p.w_xo), matmul(h_prev, p.w_ho)), p.b_o))
    g = tanh(add(add(matmul(x_t, p.w_xg), matmul(h_prev, p.w_hg)), p.b_g))
    m_t = add(mul(f, m_prev), mul(i, g))
    h_t = mul(o, tanh(m_t))

    if single:
        u = p.units
        return reshape(h_t, (u,)), reshape(m_t, (u,))
    return h_t, m_t


def lstm_run(p: LstmParams, steps: Sequence[Tensor], reverse: bool = False) -> Tensor:
    """Run the cell over per-timestep batches [n, d]; returns the final h [n, u]."""
    if not steps:
        raise ShapeError("lstm_run: empty sequence")
    n = steps[0].shape[0]
    h = Tensor(np.zeros((n, p.units)))
    m = Tensor(np.zeros((n, p.units)))
    order = reversed(steps) if reverse else steps
    for x_t in order:
        h, m = lstm_cell_step(p, x_t, h, m)
    return h


def bilstm_forward(p_fwd: LstmParams, p_bwd: LstmParams, seq: Tensor) -> Tensor:
    """Final forward and backward hidden states of a [s, d] sequence,
    concatenated into one [2u] vector. Initial states are zero."""
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise ShapeError(f"bilstm_forward needs a non-empty [s, d] sequence, got {seq.shape}")
    steps = [narrow(seq, 0, t, 1) for t in range(seq.shape[0])]
    out = bilstm_forward_batch(p_fwd, p_bwd, steps)
    return reshape(out, (out.shape[1],))


def bilstm_forward_batch(
    p_fwd: LstmParams, p_bwd: LstmParams, steps: Sequence[Tensor]
) -> Tensor:
    """Batched BiLSTM over per-timestep inputs [n, d] -> [n, 2u]."""
    h_fwd = lstm_run(p_fwd, steps)
    h_bwd = lstm_run(p_bwd, steps, reverse=True)
    return concat([h_fwd, h_bwd], axis=1)


def rnn_cell_step(w_xh: Tensor, w_hh: Tensor, b: Tensor, x_t: Tensor, h_prev: Tensor) -> Tensor:
    """Vanilla tanh recurrence h_t = tanh(x_t W_xh + h_prev W_hh + b).

    x_t and h_prev may be single vectors or [n, ·] batches.
    """
    single = x_t.ndim == 1
    if single:
        x_t = reshape(x_t, (1, x_t.shape[0]))
        h_prev = reshape(h_prev, (1, h_prev.shape[0]))
    h = tanh(add(add(matmul(x_t, w_xh), matmul(h_prev, w_hh)), b))
    if single:
        h = reshape(h, (h.shape[1],))
    return h


# ---------------------------------------------------------------------------
# feedforward layers
# ---------------------------------------------------------------------------

def dense_forward(w: Tensor, b: Tensor, x: Tensor, activation: str = "none") -> Tensor:
    """activation(x @ w + b); x may be [n, in] or [in]."""
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    single = x.ndim == 1
    if single:
        x = reshape(x, (1, x.shape[0]))
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense_forward: input {x.shape} does not match weights {w.shape}")
    out = ACTIVATIONS[activation](add(matmul(x, w), b))
    if single:
        return reshape(out, (out.shape[1],))
    return out


def conv1d_forward(p: Conv1dParams, x: Tensor) -> Tensor:
    """Same-padded 1-d cross-correlation along the length axis.

    x is [len, in_channels] or batched [n, len, in_channels]; the length is
    preserved, channels become ``p.out_channels``.
    """
    single = x.ndim == 2
    data = x.data[None] if single else x.data
    if data.ndim != 3 or data.shape[2] != p.in_channels:
        raise ShapeError(
            f"conv1d_forward: input shape {x.shape} does not match in_channels={p.in_channels}"
        )
    n, length, _ = data.shape
    ks = p.kernel_size
    pad = (ks - 1) // 2
    kern = p.kernels.data

    padded = np.zeros((n, length + 2 * pad, p.in_channels))
    padded[:, pad:pad + length] = data
    windows = np.lib.stride_tricks.sliding_window_view(padded, ks, axis=1)
    out = np.einsum("nlik,oik->nlo", windows, kern) + p.bias.data

    def backward(g):
        if single:
            g = g[None]
        d_kern = np.einsum("nlik,nlo->oik", windows, g)
        d_bias = g.sum(axis=(0, 1))
        d_padded = np.zeros_like(padded)
        for j in range(ks):
            d_padded[:, j:j + length] += np.einsum("nlo,oi->nli", g, kern[:, :, j])
        d_x = d_padded[:, pad:pad + length]
        return (d_kern, d_bias, d_x[0] if single else d_x)

    return make_op([p.kernels, p.bias, x], out[0] if single else out, backward)


def maxpool1d_forward(x: Tensor, pool: int) -> Tensor:
    """Non-overlapping max pooling along the length axis; a partial tail
    window is pooled as-is. Gradient goes to the first maximal position."""
    if pool < 1:
        raise ValueError(f"pool window must be >= 1, got {pool}")
    single = x.ndim == 2
    data = x.data[None] if single else x.data
    if data.ndim != 3:
        raise ShapeError(f"maxpool1d_forward needs [len, ch] or [n, len, ch], got {x.shape}")
    n, length, ch = data.shape
    out_len = -(-length // pool)
    out = np.empty((n, out_len, ch))
    argmax = np.empty((n, out_len, ch), dtype=np.intp)
    for w in range(out_len):
        lo, hi = w * pool, min((w + 1) * pool, length)
        window = data[:, lo:hi]
        idx = window.argmax(axis=1)  # first occurrence on ties
        out[:, w] = np.take_along_axis(window, idx[:, None, :], axis=1)[:, 0]
        argmax[:, w] = lo + idx

    def backward(g):
        if single:
            g = g[None]
        d_x = np.zeros_like(data)
        for w in range(out_len):
            np.put_along_axis(d_x, argmax[:, w:w + 1, :], g[:, w:w + 1, :], axis=1)
        return (d_x[0] if single else d_x,)

    return make_op([x], out[0] if single else out, backward)


def dropout_forward(
    x: Tensor, rate: float, training: bool, rng: Optional[np.random.Generator] = None
) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale survivors by
    1/(1-rate). With training=False the input is returned untouched."""
    if not (0.0 <= rate < 1.0):
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training:
        return x
    if rng is None:
        raise ValueError("dropout_forward needs an rng when training=True")
    scale = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def backward(g):
        return (g * scale,)

    return make_op([x], x.data * scale, backward)


def softmax(z: Tensor) -> Tensor:
    """Row-wise softmax with max-shift for overflow safety; [k] or [n, k]."""
    if not np.all(np.isfinite(z.data)):
        raise ValueError("softmax: input contains non-finite entries")
    single = z.ndim == 1
    logits = z.data[None] if single else z.data
    if logits.ndim != 2 or logits.shape[1] < 1:
        raise ShapeError(f"softmax needs [k] or [n, k], got {z.shape}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        if single:
            g = g[None]
        d = y * (g - (g * y).sum(axis=1, keepdims=True))
        return (d[0] if single else d,)

    return make_op([z], y[0] if single else y, backward)


def embedding_rows(
    table: Tensor, indices: np.ndarray, frozen_rows: Optional[Iterable[int]] = None
) -> Tensor:
    """Gather rows of an embedding table [V, d] -> [n, d].

    The backward rule scatter-adds into the table; rows listed in
    ``frozen_rows`` (any iterable of ints) receive zero gradient and therefore
    never move under any gradient-based optimizer.
    """
    idx = np.asarray(indices, dtype=np.intp)
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be [V, d], got {table.shape}")
    if idx.ndim != 1:
        raise ShapeError(f"indices must be 1-d, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"embedding index out of range for table with {table.shape[0]} rows")

    frozen = None
    if frozen_rows is not None:
        frozen = np.fromiter(frozen_rows, dtype=np.intp) if not isinstance(
            frozen_rows, np.ndarray) else frozen_rows.astype(np.intp)

    def backward(g):
        d_table = np.zeros_like(table.data)
        np.add.at(d_table, idx, g)
        if frozen is not None and frozen.size:
            d_table[frozen] = 0.0
        return (d_table,)

    return make_op([table], table.data[idx].copy(), backward)
