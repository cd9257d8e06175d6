"""Tweet-side feature extraction.

A BiLSTM sentiment head turns each embedded tweet into negative/positive
probabilities; per-batch statistics (tweet count plus the population variance
of each polarity series) are then combined with normalized environmental
features into the classifier input vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .autodiff import Tensor, concat, mul, reshape, sub
from .layers import (
    LstmParams,
    bilstm_forward,
    bilstm_forward_batch,
    dense_forward,
    dropout_forward,
    glorot_uniform,
    softmax,
)


@dataclass
class SentimentModel:
    """BiLSTM (64 units per direction) + dropout + dense(2) + softmax."""

    fwd: LstmParams
    bwd: LstmParams
    w_out: Tensor
    b_out: Tensor
    dropout_rate: float = 0.25

    @classmethod
    def create(cls, input_dim: int, units: int = 64, dropout_rate: float = 0.25,
               rng: Optional[np.random.Generator] = None) -> "SentimentModel":
        rng = rng if rng is not None else np.random.default_rng(0)
        fwd = LstmParams.create(input_dim, units, rng)
        bwd = LstmParams.create(input_dim, units, rng)
        w_out = Tensor(glorot_uniform(rng, 2 * units, 2, (2 * units, 2)),
                       requires_grad=True)
        b_out = Tensor(np.zeros(2), requires_grad=True)
        return cls(fwd=fwd, bwd=bwd, w_out=w_out, b_out=b_out,
                   dropout_rate=dropout_rate)

    @property
    def units(self) -> int:
        return self.fwd.units

    def named(self, prefix: str = "sentiment") -> dict[str, Tensor]:
        out = self.fwd.named(f"{prefix}.fwd")
        out.update(self.bwd.named(f"{prefix}.bwd"))
        out[f"{prefix}.w_out"] = self.w_out
        out[f"{prefix}.b_out"] = self.b_out
        return out


def sentiment_forward(model: SentimentModel, m: Tensor, training: bool = False,
                      rng: Optional[np.random.Generator] = None) -> Tensor:
    """Sentiment probabilities [2] for one embedded tweet [s, d].

    Index 0 is the negative and index 1 the positive probability.
    """
    state = bilstm_forward(model.fwd, model.bwd, m)
    state = dropout_forward(state, model.dropout_rate, training=training, rng=rng)
    return softmax(dense_forward(model.w_out, model.b_out, state, activation="none"))


def sentiment_forward_batch(model: SentimentModel, steps: Sequence[Tensor],
                            training: bool = False,
                            rng: Optional[np.random.Generator] = None) -> Tensor:
    """Batched variant: per-timestep inputs [n, d] -> probabilities [n, 2]."""
    state = bilstm_forward_batch(model.fwd, model.bwd, steps)
    state = dropout_forward(state, model.dropout_rate, training=training, rng=rng)
    return softmax(dense_forward(model.w_out, model.b_out, state, activation="none"))


@dataclass(frozen=True)
class StatFeatures:
    """Per-slot tweet statistics: count and per-polarity sentiment variances.

    The count is an integer in practice; fractional values are accepted so the
    scaling arithmetic stays exact under algebraic test inputs.
    """

    c: float
    v_neg: float
    v_pos: float

    def __post_init__(self):
        if self.c < 0:
            raise ValueError(f"tweet count must be nonnegative, got {self.c}")
        if self.v_neg < 0 or self.v_pos < 0:
            raise ValueError("variances must be nonnegative")
        if self.c == 0 and (self.v_neg != 0 or self.v_pos != 0):
            raise ValueError("an empty batch must carry zero variances")


def _hard_indicators(pairs: np.ndarray) -> np.ndarray:
    """Map probability pairs to {0,1} indicators per polarity (strict winner)."""
    hard = np.zeros_like(pairs)
    hard[:, 0] = pairs[:, 0] > pairs[:, 1]
    hard[:, 1] = pairs[:, 1] > pairs[:, 0]
    return hard


def batch_statistics(sentiments, hard_labels: bool = False) -> StatFeatures:
    """Count and population variances over a slot's sentiment pairs.

    Each element is a (p_neg, p_pos) pair. The variance of each polarity
    series uses that series' own mean and divides by the count. An empty
    batch yields (0, 0, 0). With ``hard_labels`` the scores are first
    collapsed to {0,1} winner indicators (ties count for neither side).
    """
    pairs = np.asarray(list(sentiments), dtype=np.float64)
    if pairs.size == 0:
        return StatFeatures(0, 0.0, 0.0)
    if hard_labels:
        pairs = _hard_indicators(pairs)
    # fsum keeps the result independent of tweet order within the batch.
    n = len(pairs)
    variances = []
    for col in range(2):
        mu = math.fsum(pairs[:, col]) / n
        variances.append(math.fsum((s - mu) ** 2 for s in pairs[:, col]) / n)
    return StatFeatures(float(n), variances[0], variances[1])


def batch_statistics_tensor(probs: Tensor, hard_labels: bool = False):
    """Differentiable variant over a [n, 2] probability tensor.

    Returns (count, v_neg, v_pos) where the variances are scalar tensors.
    The count is a plain number: it is integer-valued and carries no
    gradient. In hard-label mode the indicators are constants, so no
    gradient flows either.
    """
    n = probs.shape[0]
    if n == 0:
        return 0, Tensor(0.0), Tensor(0.0)
    if hard_labels:
        probs = Tensor(_hard_indicators(probs.data))
    variances = []
    for col in range(2):
        series = probs.narrow(1, col, 1)
        centered = sub(series, series.mean())
        variances.append(mul(centered, centered).mean())
    return n, variances[0], variances[1]


@dataclass
class NormState:
    """Feature normalization fitted on the training split only.

    Environmental features are min-max normalized; the tweet count is mapped
    to log(1+c) divided by the training maximum of log(1+c). A feature that
    is constant on the training split normalizes to 0.
    """

    env_min: np.ndarray
    env_max: np.ndarray
    log_count_max: float

    @classmethod
    def fit(cls, env_rows: np.ndarray, counts: Sequence[float]) -> "NormState":
        env_rows = np.asarray(env_rows, dtype=np.float64)
        if env_rows.ndim != 2 or env_rows.shape[0] == 0:
            raise ValueError(f"need a nonempty [n, m] feature matrix, got {env_rows.shape}")
        log_counts = np.log1p(np.asarray(list(counts), dtype=np.float64))
        return cls(env_min=env_rows.min(axis=0), env_max=env_rows.max(axis=0),
                   log_count_max=float(log_counts.max()) if log_counts.size else 0.0)

    @property
    def m(self) -> int:
        return self.env_min.shape[0]

    def apply_env(self, env: np.ndarray) -> np.ndarray:
        env = np.asarray(env, dtype=np.float64)
        if env.shape[-1] != self.m:
            raise ValueError(f"expected {self.m} environmental features, got {env.shape[-1]}")
        span = self.env_max - self.env_min
        safe = np.where(span > 0, span, 1.0)
        out = (env - self.env_min) / safe
        return np.where(span > 0, out, 0.0)

    def apply_count(self, c: float) -> float:
        if self.log_count_max <= 0:
            return 0.0
        return float(np.log1p(c) / self.log_count_max)


def combine_features(env: np.ndarray, stats: StatFeatures, norm: NormState) -> np.ndarray:
    """Classifier input [m+3]: normalized env, scaled count, v_neg, v_pos."""
    head = norm.apply_env(env)
    return np.concatenate([head, [norm.apply_count(stats.c), stats.v_neg, stats.v_pos]])


def combine_features_tensor(env: np.ndarray, c: float, v_neg: Tensor,
                            v_pos: Tensor, norm: NormState) -> Tensor:
    """Differentiable combine: only the two variances carry gradient."""
    head = np.concatenate([norm.apply_env(env), [norm.apply_count(c)]])
    return concat([Tensor(head), reshape(v_neg, (1,)), reshape(v_pos, (1,))], axis=0)
