"""Joint optimization of the sentiment extractor and the intensity classifier.

Both networks contribute to a single weighted loss; one backward pass and one
ADAM step move both parameter sets together, so the extractor adapts not only
to its own supervision but to whatever helps the classifier downstream. Also
provides the standalone baselines (environmental features only, or the
sentiment network alone) used to measure what the coupling buys.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .autodiff import (
    Tape,
    Tensor,
    add,
    clamp,
    concat,
    log,
    mul,
    narrow,
    no_grad,
    reduce_mean,
    reshape,
    sub,
)
from .classifier import CATEGORIES, ClassifierHead, build_head, classify_forward
from .data import PairedInstance, smote_oversample, train_test_split
from .embeddings import EmbeddingTable, gazetteer_from_table, sequence_indices
from .features import (
    NormState,
    SentimentModel,
    batch_statistics,
    batch_statistics_tensor,
    combine_features,
    combine_features_tensor,
    sentiment_forward_batch,
)
from .layers import embedding_rows
from .text import RawTweet, compute_fixed_length, pad_or_truncate, preprocess_tweet

MODES = ("joint", "standalone_env_only", "feature_extractor_only")

PROB_FLOOR = 1e-12


@dataclass
class JointConfig:
    """Loss weights, optimizer hyperparameters, and training schedule."""

    lambda_f1: float = 1.0
    lambda_f2: float = 1.0
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    mode: str = "joint"
    # labeled sentiment tweets added to each step, capped at this many
    sentiment_sample: int = 256
    # global-norm gradient ceiling; zero or negative disables clipping
    grad_clip: float = 5.0
    # sentiment-only pretraining epochs before minority oversampling
    warmup_epochs: int = 2
    hard_labels: bool = False
    oversample: bool = True
    smote_neighbors: int = 5

    def __post_init__(self):
        if self.lambda_f1 < 0 or self.lambda_f2 < 0:
            raise ValueError(
                f"loss weights must be >= 0, got ({self.lambda_f1}, {self.lambda_f2})")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ValueError(
                f"beta1 and beta2 must lie in [0, 1), got ({self.beta1}, {self.beta2})")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.sentiment_sample < 0:
            raise ValueError(f"sentiment_sample must be >= 0, got {self.sentiment_sample}")
        if self.warmup_epochs < 0:
            raise ValueError(f"warmup_epochs must be >= 0, got {self.warmup_epochs}")
        if self.smote_neighbors < 1:
            raise ValueError(f"smote_neighbors must be >= 1, got {self.smote_neighbors}")


@dataclass
class AdamState:
    """First and second moment accumulators, one pair per parameter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def create(cls, params: Mapping[str, Tensor]) -> "AdamState":
        return cls(m={name: np.zeros_like(p.data) for name, p in params.items()},
                   v={name: np.zeros_like(p.data) for name, p in params.items()})


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray],
              state: AdamState, cfg: JointConfig) -> None:
    """One bias-corrected ADAM update applied in place to every parameter."""
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for name, p in params.items():
        if name not in state.m:
            raise ValueError(f"optimizer state is missing parameter {name!r}")
        g = np.asarray(grads[name]) if grads.get(name) is not None \
            else np.zeros_like(p.data)
        if g.shape != state.m[name].shape or g.shape != p.data.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match state "
                f"{state.m[name].shape} for parameter {name!r}")
        state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        p.data -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)


def clip_gradients(params: Mapping[str, Tensor], max_norm: float) -> float:
    """Scale all gradients down so their global norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        g = p.grad
        if g is not None:
            total += float((g * g).sum())
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params.values():
            if p._grad is not None:
                p._grad *= scale
    return norm


def _target_labels(target, n: int, k: int) -> np.ndarray:
    if isinstance(target, (int, np.integer)):
        if n != 1:
            raise ValueError(f"a single label cannot supervise {n} rows")
        labels = np.array([int(target)], dtype=np.intp)
    else:
        arr = np.asarray(target, dtype=np.float64)
        if arr.shape == (n, k) or (n == 1 and arr.shape == (k,)):
            rows = arr.reshape(n, k)
            if not np.all((rows == 0.0) | (rows == 1.0)) or \
                    not np.all(rows.sum(axis=1) == 1.0):
                raise ValueError("one-hot targets need exactly one 1 per row")
            labels = np.argmax(rows, axis=1).astype(np.intp)
        elif arr.shape == (n,):
            if not np.all(arr == np.floor(arr)):
                raise ValueError(f"label targets must be integers, got {target}")
            labels = arr.astype(np.intp)
        else:
            raise ValueError(
                f"target shape {arr.shape} fits neither labels [{n}] "
                f"nor one-hot [{n}, {k}]")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"target out of range for {k} classes: {target}")
    return labels


def cross_entropy(probs: Tensor, target) -> Tensor:
    """Mean cross-entropy of predicted probabilities against targets.

    ``probs`` is [k] or [n, k]; ``target`` is an integer label, a label
    sequence, or one-hot rows. Probabilities are clamped to
    [1e-12, 1 - 1e-12] before the log. For two classes this is the binary
    form -(1/n) sum[y log H + (1 - y) log(1 - H)] with H the probability of
    class 1; for more classes the categorical -(1/n) sum log p(target).
    """
    p = probs if probs.ndim == 2 else reshape(probs, (1, probs.shape[0]))
    n, k = p.shape
    labels = _target_labels(target, n, k)
    clamped = clamp(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
    if k == 2:
        h = reshape(narrow(clamped, 1, 1, 1), (n,))
        y = Tensor(labels.astype(np.float64))
        hit = mul(y, log(h))
        miss = mul(sub(Tensor(1.0), y), log(sub(Tensor(1.0), h)))
        return mul(Tensor(-1.0), reduce_mean(add(hit, miss)))
    mask = np.zeros((n, k))
    mask[np.arange(n), labels] = 1.0
    picked = mul(clamped, Tensor(mask)).sum(axis=1)
    return mul(Tensor(-1.0), reduce_mean(log(picked)))


def joint_loss(l_f1, l_f2, cfg: JointConfig) -> Tensor:
    """Weighted sum of the two losses on one tape, so backward reaches both."""
    terms = []
    for name, value in (("l_f1", l_f1), ("l_f2", l_f2)):
        t = value if isinstance(value, Tensor) else Tensor(float(value))
        if not math.isfinite(t.item()):
            raise ValueError(f"{name} must be finite, got {t.item()}")
        terms.append(t)
    return add(mul(Tensor(cfg.lambda_f1), terms[0]),
               mul(Tensor(cfg.lambda_f2), terms[1]))


# ---------------------------------------------------------------------------
# dataset assembly
# ---------------------------------------------------------------------------

@dataclass
class TrainInstance:
    """One classifier example: a real slot, or an interpolated feature row."""

    label_index: int
    env: Optional[np.ndarray]
    token_indices: np.ndarray
    fixed_features: Optional[np.ndarray] = None
    timestamp: float = 0.0
    storm_id: str = ""


@dataclass
class SentimentExample:
    """One labeled tweet as vocabulary indices; 0 = negative, 1 = positive."""

    indices: np.ndarray
    label: int


@dataclass
class JointDataset:
    """Everything a training run consumes, already split and index-encoded."""

    train: list[TrainInstance]
    test: list[TrainInstance]
    pool_train: list[SentimentExample]
    pool_eval: list[SentimentExample]
    norm: NormState
    seq_length: int
    k: int = len(CATEGORIES)


def build_joint_dataset(
    paired: Sequence[PairedInstance],
    sentiment_rows: Sequence[tuple[RawTweet, int]],
    table: EmbeddingTable,
    split_ratio: float = 0.8,
    seed: int = 0,
    pool_eval_fraction: float = 0.2,
    seq_length: Optional[int] = None,
    norm: Optional[NormState] = None,
) -> JointDataset:
    """Tokenize, index, split, and fit normalization from the train side.

    ``sentiment_rows`` pairs each separately labeled tweet with 0 (negative)
    or 1 (positive). The fixed sequence length is the mean token count over
    all tweets seen here, and the environment/count scaling is fitted on the
    training split only. Passing ``seq_length`` or ``norm`` pins those values
    instead, so a saved model can be re-applied with the exact padding and
    scaling it was trained with.
    """
    if not paired:
        raise ValueError("cannot build a dataset from zero paired instances")
    gazetteer = gazetteer_from_table(table)
    slot_seqs = [[preprocess_tweet(t, gazetteer) for t in inst.tweets]
                 for inst in paired]
    pool_seqs = [preprocess_tweet(t, gazetteer) for t, _ in sentiment_rows]
    all_seqs = [seq for seqs in slot_seqs for seq in seqs] + pool_seqs
    if seq_length is not None:
        if seq_length < 1:
            raise ValueError(f"seq_length must be >= 1, got {seq_length}")
        s = int(seq_length)
    else:
        s = compute_fixed_length(all_seqs) if all_seqs else 1

    def encode(seq) -> np.ndarray:
        return sequence_indices(table, pad_or_truncate(seq, s))

    instances = []
    for inst, seqs in zip(paired, slot_seqs):
        rows = np.stack([encode(q) for q in seqs]) if seqs \
            else np.zeros((0, s), dtype=np.intp)
        instances.append(TrainInstance(
            label_index=CATEGORIES.index(inst.observation.label),
            env=inst.observation.env_vector(),
            token_indices=rows,
            timestamp=inst.observation.timestamp,
            storm_id=inst.observation.storm_id))

    labels = [CATEGORIES[i.label_index] for i in instances]
    train, test = train_test_split(instances, ratio=split_ratio, seed=seed,
                                   labels=labels)
    if not train:
        raise ValueError("training split came out empty; need more paired instances")
    if norm is None:
        norm = NormState.fit(
            np.stack([i.env for i in train]),
            [float(len(i.token_indices)) for i in train])

    pool = [SentimentExample(indices=encode(seq), label=int(label))
            for seq, (_, label) in zip(pool_seqs, sentiment_rows)]
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pool))
    n_eval = int(math.floor(pool_eval_fraction * len(pool)))
    pool_eval = [pool[i] for i in order[:n_eval]]
    pool_train = [pool[i] for i in order[n_eval:]]
    return JointDataset(train=train, test=test, pool_train=pool_train,
                        pool_eval=pool_eval, norm=norm, seq_length=s)


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

@dataclass
class JointModels:
    """The trainable pieces a mode needs; absent parts stay None."""

    head: Optional[ClassifierHead] = None
    sentiment: Optional[SentimentModel] = None
    embedding: Optional[Tensor] = None
    frozen_rows: np.ndarray = field(
        default_factory=lambda: np.zeros(0, dtype=np.intp))

    @classmethod
    def create(cls, mode: str, table: Optional[EmbeddingTable] = None,
               env_dim: int = 5, k: int = len(CATEGORIES),
               head_kind: str = "cnn", units: int = 64,
               seed: int = 0) -> "JointModels":
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        if mode == "standalone_env_only":
            return cls(head=build_head(head_kind, env_dim, k, seed=seed))
        if table is None:
            raise ValueError(f"mode {mode!r} needs an embedding table")
        embedding = Tensor(table.vectors.copy(), requires_grad=True)
        frozen = np.asarray(sorted({0} | set(table.entity_marks)), dtype=np.intp)
        rng = np.random.default_rng(seed)
        sentiment = SentimentModel.create(table.d, units=units, rng=rng)
        if mode == "feature_extractor_only":
            return cls(sentiment=sentiment, embedding=embedding, frozen_rows=frozen)
        head = build_head(head_kind, env_dim + 3, k, seed=seed + 1)
        return cls(head=head, sentiment=sentiment, embedding=embedding,
                   frozen_rows=frozen)

    def trainable(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        if self.embedding is not None:
            params["embedding.table"] = self.embedding
        if self.sentiment is not None:
            params.update(self.sentiment.named("sentiment"))
        if self.head is not None:
            params.update(self.head.named("classifier"))
        return params

    def extractor_params(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        if self.embedding is not None:
            params["embedding.table"] = self.embedding
        if self.sentiment is not None:
            params.update(self.sentiment.named("sentiment"))
        return params


def _sentiment_probs(models: JointModels, idx_matrix: np.ndarray,
                     training: bool, rng) -> Tensor:
    steps = [embedding_rows(models.embedding, idx_matrix[:, t], models.frozen_rows)
             for t in range(idx_matrix.shape[1])]
    return sentiment_forward_batch(models.sentiment, steps,
                                   training=training, rng=rng)


def compute_losses(
    instances: Sequence[TrainInstance],
    sentiment_examples: Sequence[SentimentExample],
    models: JointModels,
    norm: NormState,
    cfg: JointConfig,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> tuple[Tensor, Tensor]:
    """Forward both networks once and return (l_f1, l_f2) on the active tape.

    Tweets from every slot plus the labeled sentiment sample run through the
    extractor in a single batch; per-slot sentiment variances feed the
    combined features, so the classifier loss backpropagates into the
    extractor. Slots carrying precomputed feature rows (minority
    interpolations) enter the classifier as constants.
    """
    use_extractor = models.sentiment is not None and cfg.mode != "standalone_env_only"
    rows: list[np.ndarray] = []
    spans: list[Optional[tuple[int, int]]] = []
    for inst in instances:
        if use_extractor and inst.fixed_features is None and len(inst.token_indices):
            spans.append((len(rows), len(inst.token_indices)))
            rows.extend(inst.token_indices)
        else:
            spans.append(None)
    sent_start = len(rows)
    if use_extractor:
        rows.extend(ex.indices for ex in sentiment_examples)
    probs = _sentiment_probs(models, np.stack(rows), training, rng) if rows else None

    if use_extractor and sentiment_examples:
        tail = narrow(probs, 0, sent_start, len(sentiment_examples))
        l_f1 = cross_entropy(tail, [ex.label for ex in sentiment_examples])
    else:
        l_f1 = Tensor(0.0)

    if instances:
        feature_rows = []
        for inst, span in zip(instances, spans):
            if inst.fixed_features is not None:
                feature_rows.append(Tensor(inst.fixed_features.reshape(1, -1)))
                continue
            if cfg.mode == "standalone_env_only":
                feature_rows.append(Tensor(norm.apply_env(inst.env).reshape(1, -1)))
                continue
            if span is None:
                count, v_neg, v_pos = 0, Tensor(0.0), Tensor(0.0)
            else:
                slot = narrow(probs, 0, span[0], span[1])
                count, v_neg, v_pos = batch_statistics_tensor(
                    slot, hard_labels=cfg.hard_labels)
            row = combine_features_tensor(inst.env, float(count), v_neg, v_pos, norm)
            feature_rows.append(reshape(row, (1, row.shape[0])))
        x = concat(feature_rows, axis=0) if len(feature_rows) > 1 else feature_rows[0]
        clf_probs = classify_forward(models.head, x, training=training, rng=rng)
        l_f2 = cross_entropy(clf_probs, [inst.label_index for inst in instances])
    else:
        l_f2 = Tensor(0.0)
    return l_f1, l_f2


@dataclass(frozen=True)
class StepLosses:
    l_f1: float
    l_f2: float
    l_joint: float


def train_step(
    instances: Sequence[TrainInstance],
    sentiment_examples: Sequence[SentimentExample],
    models: JointModels,
    state: AdamState,
    cfg: JointConfig,
    norm: NormState,
    rng: np.random.Generator,
) -> StepLosses:
    """One optimization step: forward, one backward, one ADAM update.

    The update covers every trainable parameter the mode owns, so in joint
    mode the extractor and the classifier move together.
    """
    if not instances and not sentiment_examples:
        raise ValueError("empty batch")
    params = models.trainable()
    for p in params.values():
        p.zero_grad()
    with Tape() as tape:
        l_f1, l_f2 = compute_losses(instances, sentiment_examples, models,
                                    norm, cfg, training=True, rng=rng)
        total = joint_loss(l_f1, l_f2, cfg)
    tape.backward(total)
    if cfg.grad_clip > 0:
        clip_gradients(params, cfg.grad_clip)
    adam_step(params, {name: p.grad for name, p in params.items()}, state, cfg)
    return StepLosses(l_f1=l_f1.item(), l_f2=l_f2.item(), l_joint=total.item())


# ---------------------------------------------------------------------------
# prediction helpers
# ---------------------------------------------------------------------------

def instance_features(inst: TrainInstance, models: JointModels,
                      norm: NormState, cfg: JointConfig) -> np.ndarray:
    """Classifier input row for one instance with the current extractor."""
    if inst.fixed_features is not None:
        return inst.fixed_features.copy()
    if cfg.mode == "standalone_env_only":
        return norm.apply_env(inst.env)
    with no_grad():
        if len(inst.token_indices):
            probs = _sentiment_probs(models, inst.token_indices,
                                     training=False, rng=None)
            pairs = probs.data
        else:
            pairs = np.zeros((0, 2))
        stats = batch_statistics(pairs, hard_labels=cfg.hard_labels)
    return combine_features(inst.env, stats, norm)


def slot_sentiment_pairs(inst: TrainInstance, models: JointModels) -> np.ndarray:
    """Soft (p_neg, p_pos) pairs for one slot's tweets, dropout off."""
    if models.sentiment is None or not len(inst.token_indices):
        return np.zeros((0, 2))
    with no_grad():
        probs = _sentiment_probs(models, inst.token_indices,
                                 training=False, rng=None)
    return probs.data.copy()


def predict_instances(instances: Sequence[TrainInstance], models: JointModels,
                      norm: NormState, cfg: JointConfig,
                      slots_per_chunk: int = 256) -> np.ndarray:
    """Predicted label indices with dropout off and no gradient recording.

    Slots are scored in stacked chunks so the per-tweet recurrent pass runs
    over one large matrix per chunk instead of one small matrix per slot.
    """
    if not instances:
        return np.zeros(0, dtype=np.intp)
    with no_grad():
        slot_pairs: dict[int, np.ndarray] = {}
        if models.sentiment is not None and cfg.mode != "standalone_env_only":
            todo = [(i, inst.token_indices) for i, inst in enumerate(instances)
                    if inst.fixed_features is None and len(inst.token_indices)]
            for lo in range(0, len(todo), slots_per_chunk):
                part = todo[lo:lo + slots_per_chunk]
                stacked = np.concatenate([m for _, m in part], axis=0)
                probs = _sentiment_probs(models, stacked,
                                         training=False, rng=None).data
                offset = 0
                for i, m in part:
                    slot_pairs[i] = probs[offset:offset + len(m)]
                    offset += len(m)
        rows = []
        for i, inst in enumerate(instances):
            if inst.fixed_features is not None:
                rows.append(inst.fixed_features)
            elif cfg.mode == "standalone_env_only":
                rows.append(norm.apply_env(inst.env))
            else:
                pairs = slot_pairs.get(i, np.zeros((0, 2)))
                stats = batch_statistics(pairs, hard_labels=cfg.hard_labels)
                rows.append(combine_features(inst.env, stats, norm))
        out = classify_forward(models.head, Tensor(np.stack(rows)),
                               training=False)
    return np.argmax(out.data, axis=1).astype(np.intp)


def _accuracy(instances: Sequence[TrainInstance], models: JointModels,
              norm: NormState, cfg: JointConfig) -> float:
    if not instances:
        return 0.0
    preds = predict_instances(instances, models, norm, cfg)
    truth = np.array([inst.label_index for inst in instances])
    return float((preds == truth).mean())


def _sentiment_accuracy(examples: Sequence[SentimentExample],
                        models: JointModels, chunk: int = 512) -> float:
    if not examples:
        return 0.0
    hits = 0
    with no_grad():
        for lo in range(0, len(examples), chunk):
            part = examples[lo:lo + chunk]
            idx = np.stack([ex.indices for ex in part])
            probs = _sentiment_probs(models, idx, training=False, rng=None)
            pred = np.argmax(probs.data, axis=1)
            hits += int((pred == np.array([ex.label for ex in part])).sum())
    return hits / len(examples)


# ---------------------------------------------------------------------------
# the training loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EpochRow:
    epoch: int
    l_f1: float
    l_f2: float
    l_joint: float
    train_acc: float
    test_acc: float


@dataclass
class TrainingReport:
    """Per-epoch loss and accuracy curves, exportable as CSV."""

    rows: list[EpochRow]
    warmup_losses: list[float] = field(default_factory=list)

    def final(self) -> EpochRow:
        return self.rows[-1]

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "l_f1", "l_f2", "l_joint",
                             "train_acc", "test_acc"])
            for r in self.rows:
                writer.writerow([r.epoch, repr(r.l_f1), repr(r.l_f2),
                                 repr(r.l_joint), repr(r.train_acc),
                                 repr(r.test_acc)])

    @classmethod
    def from_csv(cls, path) -> "TrainingReport":
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            rows = [EpochRow(epoch=int(r["epoch"]), l_f1=float(r["l_f1"]),
                             l_f2=float(r["l_f2"]), l_joint=float(r["l_joint"]),
                             train_acc=float(r["train_acc"]),
                             test_acc=float(r["test_acc"]))
                    for r in reader]
        return cls(rows=rows)


def _sentiment_epoch(pool: Sequence[SentimentExample], models: JointModels,
                     state: AdamState, cfg: JointConfig,
                     rng: np.random.Generator) -> float:
    """One pass over the labeled pool, updating extractor parameters only."""
    params = models.extractor_params()
    order = rng.permutation(len(pool))
    losses = []
    for lo in range(0, len(pool), cfg.batch_size):
        batch = [pool[i] for i in order[lo:lo + cfg.batch_size]]
        for p in params.values():
            p.zero_grad()
        with Tape() as tape:
            idx = np.stack([ex.indices for ex in batch])
            probs = _sentiment_probs(models, idx, training=True, rng=rng)
            loss = cross_entropy(probs, [ex.label for ex in batch])
        tape.backward(loss)
        if cfg.grad_clip > 0:
            clip_gradients(params, cfg.grad_clip)
        adam_step(params, {name: p.grad for name, p in params.items()},
                  state, cfg)
        losses.append(loss.item())
    return float(np.mean(losses)) if losses else 0.0


def _augment_minority(dataset: JointDataset, models: JointModels,
                      cfg: JointConfig) -> list[TrainInstance]:
    """Oversample the training split in combined-feature space.

    Feature rows are computed with the current extractor; interpolated rows
    enter later steps as constants, so only real slots keep feeding gradient
    to the extractor.
    """
    feats = np.stack([instance_features(inst, models, dataset.norm, cfg)
                      for inst in dataset.train])
    labels = [CATEGORIES[inst.label_index] for inst in dataset.train]
    out_f, out_l, mask = smote_oversample(feats, labels, k=cfg.smote_neighbors,
                                          seed=cfg.seed)
    train = list(dataset.train)
    empty = np.zeros((0, dataset.seq_length), dtype=np.intp)
    for row, lab in zip(out_f[mask], out_l[mask]):
        train.append(TrainInstance(label_index=CATEGORIES.index(str(lab)),
                                   env=None, token_indices=empty,
                                   fixed_features=np.asarray(row)))
    return train


def _sample_sentiment(pool: Sequence[SentimentExample],
                      batch: Sequence[TrainInstance], cfg: JointConfig,
                      rng: np.random.Generator) -> list[SentimentExample]:
    if cfg.mode != "joint" or not pool:
        return []
    tweet_count = sum(len(inst.token_indices) for inst in batch)
    size = min(tweet_count, cfg.sentiment_sample, len(pool))
    if size == 0:
        return []
    picks = rng.choice(len(pool), size=size, replace=False)
    return [pool[i] for i in picks]


def fit(dataset: JointDataset, models: JointModels,
        cfg: JointConfig) -> TrainingReport:
    """Full training run: optional warmup, minority oversampling, epochs.

    Shuffles batches with a generator seeded from the config, evaluates both
    splits after every epoch with dropout off, and returns the whole curve.
    The same config and seed produce an identical report.
    """
    if cfg.mode == "feature_extractor_only":
        return _fit_extractor(dataset, models, cfg)
    if not dataset.train:
        raise ValueError("empty training split")
    rng = np.random.default_rng(cfg.seed)

    warmup_losses = []
    if cfg.mode == "joint" and cfg.warmup_epochs > 0 and dataset.pool_train:
        wstate = AdamState.create(models.extractor_params())
        for _ in range(cfg.warmup_epochs):
            warmup_losses.append(
                _sentiment_epoch(dataset.pool_train, models, wstate, cfg, rng))

    train = _augment_minority(dataset, models, cfg) if cfg.oversample \
        else list(dataset.train)
    state = AdamState.create(models.trainable())
    rows = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train))
        sums = np.zeros(3)
        steps = 0
        for lo in range(0, len(train), cfg.batch_size):
            batch = [train[i] for i in order[lo:lo + cfg.batch_size]]
            sample = _sample_sentiment(dataset.pool_train, batch, cfg, rng)
            losses = train_step(batch, sample, models, state, cfg,
                                dataset.norm, rng)
            sums += (losses.l_f1, losses.l_f2, losses.l_joint)
            steps += 1
        rows.append(EpochRow(
            epoch=epoch, l_f1=float(sums[0] / steps),
            l_f2=float(sums[1] / steps), l_joint=float(sums[2] / steps),
            train_acc=_accuracy(train, models, dataset.norm, cfg),
            test_acc=_accuracy(dataset.test, models, dataset.norm, cfg)))
    return TrainingReport(rows=rows, warmup_losses=warmup_losses)


def _fit_extractor(dataset: JointDataset, models: JointModels,
                   cfg: JointConfig) -> TrainingReport:
    if not dataset.pool_train:
        raise ValueError("empty training split")
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.create(models.extractor_params())
    rows = []
    for epoch in range(1, cfg.epochs + 1):
        mean_loss = _sentiment_epoch(dataset.pool_train, models, state, cfg, rng)
        rows.append(EpochRow(
            epoch=epoch, l_f1=float(mean_loss), l_f2=0.0,
            l_joint=float(cfg.lambda_f1 * mean_loss),
            train_acc=_sentiment_accuracy(dataset.pool_train, models),
            test_acc=_sentiment_accuracy(dataset.pool_eval, models)))
    return TrainingReport(rows=rows)
