"""Typhoon category classifier heads over the combined feature vector.

Three interchangeable heads: a two-stage 1-d CNN (the main head), a dense
network, and a recurrent head that reads the feature vector as a scalar
sequence. All emit probabilities over the four intensity categories
TD < TS < TY < ST (tropical depression, tropical storm, typhoon, super
typhoon), ordered by increasing intensity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autodiff import ShapeError, Tensor, relu, reshape
from .layers import (
    Conv1dParams,
    conv1d_forward,
    dense_forward,
    dropout_forward,
    glorot_uniform,
    init_dense,
    maxpool1d_forward,
    rnn_cell_step,
    softmax,
)

CATEGORIES = ("TD", "TS", "TY", "ST")

CNN_CHANNELS = (32, 16)
CNN_KERNEL = 3
CNN_DROPOUT = (0.30, 0.20)
CNN_POOL = 2
DNN_HIDDEN = (64, 32)
RNN_UNITS = 32


def _pooled_length(length: int, pool: int) -> int:
    return -(-length // pool)


@dataclass
class ClassifierHead:
    """One classifier head; ``params`` maps names to trainable tensors."""

    kind: str
    input_len: int
    k: int
    params: dict[str, Tensor] = field(default_factory=dict)

    def named(self, prefix: str = "classifier") -> dict[str, Tensor]:
        return {f"{prefix}.{name}": t for name, t in self.params.items()}

    def conv_params(self, stage: int) -> Conv1dParams:
        return Conv1dParams(kernels=self.params[f"conv{stage}.kernels"],
                            bias=self.params[f"conv{stage}.bias"])


def build_head(kind: str, input_len: int, k: int = len(CATEGORIES),
               seed: int = 0) -> ClassifierHead:
    """Freshly initialized head; the same seed gives identical parameters."""
    if input_len < 1:
        raise ValueError(f"input_len must be >= 1, got {input_len}")
    if k < 2:
        raise ValueError(f"need at least two categories, got {k}")
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    if kind == "cnn":
        conv1 = Conv1dParams.create(1, CNN_CHANNELS[0], CNN_KERNEL, rng)
        conv2 = Conv1dParams.create(CNN_CHANNELS[0], CNN_CHANNELS[1], CNN_KERNEL, rng)
        params["conv1.kernels"], params["conv1.bias"] = conv1.kernels, conv1.bias
        params["conv2.kernels"], params["conv2.bias"] = conv2.kernels, conv2.bias
        flat = _pooled_length(_pooled_length(input_len, CNN_POOL), CNN_POOL) * CNN_CHANNELS[1]
        params["out.w"], params["out.b"] = init_dense(flat, k, rng)
    elif kind == "dnn":
        params["fc1.w"], params["fc1.b"] = init_dense(input_len, DNN_HIDDEN[0], rng)
        params["fc2.w"], params["fc2.b"] = init_dense(DNN_HIDDEN[0], DNN_HIDDEN[1], rng)
        params["out.w"], params["out.b"] = init_dense(DNN_HIDDEN[1], k, rng)
    elif kind == "rnn":
        params["w_xh"] = Tensor(glorot_uniform(rng, 1, RNN_UNITS, (1, RNN_UNITS)),
                                requires_grad=True)
        params["w_hh"] = Tensor(glorot_uniform(rng, RNN_UNITS, RNN_UNITS,
                                               (RNN_UNITS, RNN_UNITS)),
                                requires_grad=True)
        params["b_h"] = Tensor(np.zeros(RNN_UNITS), requires_grad=True)
        params["out.w"], params["out.b"] = init_dense(RNN_UNITS, k, rng)
    else:
        raise ValueError(f"unknown classifier kind {kind!r}; expected cnn, dnn, or rnn")
    return ClassifierHead(kind=kind, input_len=input_len, k=k, params=params)


def _cnn_forward(head: ClassifierHead, x: Tensor, training: bool,
                 rng: Optional[np.random.Generator]) -> Tensor:
    n = x.shape[0]
    h = reshape(x, (n, head.input_len, 1))
    h = relu(conv1d_forward(head.conv_params(1), h))
    h = maxpool1d_forward(h, CNN_POOL)
    h = dropout_forward(h, CNN_DROPOUT[0], training=training, rng=rng)
    h = relu(conv1d_forward(head.conv_params(2), h))
    h = maxpool1d_forward(h, CNN_POOL)
    h = dropout_forward(h, CNN_DROPOUT[1], training=training, rng=rng)
    h = reshape(h, (n, h.shape[1] * h.shape[2]))
    return dense_forward(head.params["out.w"], head.params["out.b"], h)


def _dnn_forward(head: ClassifierHead, x: Tensor, training: bool,
                 rng: Optional[np.random.Generator]) -> Tensor:
    h = dense_forward(head.params["fc1.w"], head.params["fc1.b"], x, activation="relu")
    h = dense_forward(head.params["fc2.w"], head.params["fc2.b"], h, activation="relu")
    return dense_forward(head.params["out.w"], head.params["out.b"], h)


def _rnn_forward(head: ClassifierHead, x: Tensor, training: bool,
                 rng: Optional[np.random.Generator]) -> Tensor:
    n = x.shape[0]
    h = Tensor(np.zeros((n, RNN_UNITS)))
    for t in range(head.input_len):
        step = x.narrow(1, t, 1)
        h = rnn_cell_step(head.params["w_xh"], head.params["w_hh"],
                          head.params["b_h"], step, h)
    return dense_forward(head.params["out.w"], head.params["out.b"], h)


_FORWARDS = {"cnn": _cnn_forward, "dnn": _dnn_forward, "rnn": _rnn_forward}


def classify_forward(head: ClassifierHead, x: Tensor, training: bool = False,
                     rng: Optional[np.random.Generator] = None) -> Tensor:
    """Category probabilities for a feature vector [m+3] or batch [n, m+3]."""
    single = x.ndim == 1
    if single:
        x = reshape(x, (1, x.shape[0]))
    if x.shape[1] != head.input_len:
        raise ShapeError(
            f"classify_forward: input length {x.shape[1]} does not match "
            f"head input_len {head.input_len}")
    logits = _FORWARDS[head.kind](head, x, training, rng)
    probs = softmax(logits)
    if single:
        return reshape(probs, (head.k,))
    return probs


def predict_category(probs) -> str:
    """Label of the highest-probability class; ties go to the lowest index."""
    values = probs.data if isinstance(probs, Tensor) else np.asarray(probs, dtype=np.float64)
    if values.ndim != 1 or values.shape[0] != len(CATEGORIES):
        raise ShapeError(f"expected a vector of {len(CATEGORIES)} probabilities, "
                         f"got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError("probabilities must be finite")
    return CATEGORIES[int(np.argmax(values))]
