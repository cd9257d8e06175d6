"""Word embeddings for tweet text.

Trains a continuous skip-gram model with negative sampling on the token
corpus, merges in pre-trained semantic entity vectors from a knowledge-graph
export, and builds the per-tweet embedding matrix consumed by the sentiment
network. Vocabulary index 0 is reserved for padding and stays all-zero.
"""

from __future__ import annotations

import json
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .autodiff import Tensor
from .text import PAD, PAD_TEXT, TokenSeq


@dataclass
class SkipgramConfig:
    d: int = 200
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    min_count: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.negatives < 1:
            raise ValueError(f"negatives must be >= 1, got {self.negatives}")
        if self.min_count < 1:
            raise ValueError(f"min_count must be >= 1, got {self.min_count}")


@dataclass
class EmbeddingTable:
    """Token -> row mapping over a [V, d] matrix.

    ``entity_marks`` lists row indices whose vectors were copied verbatim from
    the semantic source; those rows are frozen during downstream training.
    """

    vocab: dict[str, int]
    vectors: np.ndarray
    d: int
    entity_marks: set[int] = field(default_factory=set)
    epoch_losses: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.shape != (len(self.vocab), self.d):
            raise ValueError(
                f"vectors shape {self.vectors.shape} does not match "
                f"vocab size {len(self.vocab)} x d {self.d}")
        if self.vocab.get(PAD_TEXT, 0) != 0:
            raise ValueError("padding token must sit at index 0")
        if np.any(self.vectors[0] != 0.0):
            raise ValueError("padding row must be all zeros")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("embedding vectors must be finite")

    def index_of(self, token: str) -> int:
        """Index for a token; unknown tokens map to the PAD row (0)."""
        return self.vocab.get(token, 0)


def build_vocab(corpus: Sequence[TokenSeq], min_count: int = 1) -> dict[str, int]:
    """Frequency-cutoff vocabulary with PAD reserved at index 0.

    Tokens with frequency >= min_count are indexed from 1, sorted by
    (frequency descending, token ascending) so the mapping is deterministic.
    """
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts = Counter(
        tok.text for seq in corpus for tok in seq.tokens if tok.kind != PAD)
    kept = sorted(
        (token for token, c in counts.items() if c >= min_count),
        key=lambda token: (-counts[token], token))
    if not kept:
        raise ValueError(f"no token reaches min_count={min_count}")
    vocab = {PAD_TEXT: 0}
    for i, token in enumerate(kept, start=1):
        vocab[token] = i
    return vocab


def _encode_corpus(corpus: Sequence[TokenSeq], vocab: Mapping[str, int]) -> list[np.ndarray]:
    sentences = []
    for seq in corpus:
        idx = [vocab[t.text] for t in seq.tokens
               if t.kind != PAD and t.text in vocab]
        if len(idx) >= 2:
            sentences.append(np.asarray(idx, dtype=np.intp))
    return sentences


def train_skipgram(corpus: Sequence[TokenSeq], config: SkipgramConfig) -> EmbeddingTable:
    """Skip-gram with negative sampling; single-threaded, bitwise reproducible.

    For each (center, context) pair inside the window the objective
    log sigmoid(v_c . u_o) + sum over negatives of log sigmoid(-v_c . u_neg)
    is maximized by SGD; negatives are drawn from the unigram distribution
    raised to the 3/4 power. The learning rate decays linearly over all
    scheduled pairs. Center vectors become the table rows.
    """
    vocab = build_vocab(corpus, config.min_count)
    if len(vocab) < 3:  # PAD plus at least two real tokens
        raise ValueError("skip-gram needs at least two distinct trainable tokens")
    sentences = _encode_corpus(corpus, vocab)
    if not sentences:
        raise ValueError("no sentence has two or more in-vocabulary tokens")

    counts = np.zeros(len(vocab))
    for sent in sentences:
        np.add.at(counts, sent, 1.0)
    weights = counts ** 0.75
    weights[0] = 0.0
    cdf = np.cumsum(weights / weights.sum())

    rng = np.random.default_rng(config.seed)
    vectors = rng.uniform(-0.5 / config.d, 0.5 / config.d,
                          size=(len(vocab), config.d))
    vectors[0] = 0.0
    context = np.zeros_like(vectors)

    total_pairs = config.epochs * sum(
        sum(min(i, config.window) + min(len(s) - 1 - i, config.window)
            for i in range(len(s)))
        for s in sentences)
    lr0 = config.learning_rate
    lr_floor = min(1e-4, lr0)
    seen = 0
    epoch_losses = []

    for _ in range(config.epochs):
        loss_sum = 0.0
        loss_n = 0
        for sent in sentences:
            for i, center in enumerate(sent):
                lo = max(0, i - config.window)
                hi = min(len(sent), i + config.window + 1)
                targets = np.concatenate([sent[lo:i], sent[i + 1:hi]])
                if targets.size == 0:
                    continue
                lr = max(lr_floor, lr0 * (1.0 - seen / max(1, total_pairs)))
                seen += targets.size
                negs = np.searchsorted(
                    cdf, rng.random((targets.size, config.negatives)))
                keep = negs != targets[:, None]
                rows = np.concatenate([targets, negs[keep]])
                labels = np.zeros(rows.size)
                labels[:targets.size] = 1.0
                v = vectors[center]
                u = context[rows]
                scores = 1.0 / (1.0 + np.exp(-np.clip(u @ v, -50.0, 50.0)))
                loss_sum -= float(np.log(np.clip(
                    np.where(labels == 1.0, scores, 1.0 - scores),
                    1e-12, None)).sum())
                loss_n += targets.size
                g = (labels - scores) * lr
                np.add.at(context, rows, g[:, None] * v)
                vectors[center] = v + g @ u
        epoch_losses.append(loss_sum / max(1, loss_n))

    vectors[0] = 0.0
    return EmbeddingTable(vocab=vocab, vectors=vectors, d=config.d,
                          epoch_losses=epoch_losses)


def load_semantic_vectors(path, expected_d: int) -> dict[str, np.ndarray]:
    """Parse a word2vec-text file into a phrase -> vector map.

    The file starts with a "V d" header, then one line per entry: the phrase
    (spaces replaced by underscores) followed by d floats. Every vector must
    have exactly ``expected_d`` components.
    """
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header:
            warnings.warn(f"{path}: empty semantic-vector file")
            return {}
        parts = header.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:1: header must be 'count dim', got {header!r}")
        declared_d = int(parts[1])
        if declared_d != expected_d:
            raise ValueError(
                f"{path}:1: vector dimension {declared_d} does not match expected {expected_d}")
        out: dict[str, np.ndarray] = {}
        for line_no, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != expected_d + 1:
                raise ValueError(
                    f"{path}:{line_no}: expected phrase + {expected_d} floats, "
                    f"got {len(fields)} fields")
            try:
                vec = np.array([float(x) for x in fields[1:]])
            except ValueError as exc:
                raise ValueError(f"{path}:{line_no}: malformed float: {exc}") from exc
            out[fields[0]] = vec
    return out


def gazetteer_from_semantic(semantic: Mapping[str, np.ndarray]) -> set[str]:
    """Gazetteer phrases (1-4 lower-case words) from semantic-vector keys."""
    phrases = set()
    for key in semantic:
        phrase = key.replace("_", " ").lower()
        if 1 <= len(phrase.split()) <= 4:
            phrases.add(phrase)
    return phrases


def gazetteer_from_table(table: EmbeddingTable) -> set[str]:
    """Recover the entity gazetteer from a merged table's marked rows."""
    by_index = {idx: tok for tok, idx in table.vocab.items()}
    return {by_index[i].replace("_", " ") for i in table.entity_marks}


def merge_tables(word_table: EmbeddingTable,
                 semantic: Mapping[str, np.ndarray]) -> EmbeddingTable:
    """Overlay semantic entity vectors onto a trained word table.

    Every semantic phrase is added (or, if the token already exists,
    overwritten) with its semantic vector and recorded in entity_marks; all
    other word vectors are preserved bit-exactly. Marked rows are excluded
    from gradient updates downstream.
    """
    for phrase, vec in semantic.items():
        if np.asarray(vec).shape != (word_table.d,):
            raise ValueError(
                f"semantic vector for {phrase!r} has shape {np.asarray(vec).shape}, "
                f"expected ({word_table.d},)")
    vocab = dict(word_table.vocab)
    marks = set(word_table.entity_marks)
    new_phrases = [p for p in sorted(semantic) if p not in vocab]
    vectors = np.vstack([
        word_table.vectors,
        np.zeros((len(new_phrases), word_table.d)),
    ]) if new_phrases else word_table.vectors.copy()
    for phrase in new_phrases:
        vocab[phrase] = len(vocab)
    for phrase in sorted(semantic):
        idx = vocab[phrase]
        vectors[idx] = np.asarray(semantic[phrase], dtype=np.float64)
        marks.add(idx)
    return EmbeddingTable(vocab=vocab, vectors=vectors, d=word_table.d,
                          entity_marks=marks,
                          epoch_losses=list(word_table.epoch_losses))


def sequence_indices(table: EmbeddingTable, seq: TokenSeq) -> np.ndarray:
    """Vocabulary indices for a token sequence; PAD and OOV map to 0."""
    return np.asarray([table.index_of(t.text) if t.kind != PAD else 0
                       for t in seq.tokens], dtype=np.intp)


def lookup_sequence(table: EmbeddingTable, seq: TokenSeq) -> Tensor:
    """Embedding matrix [s, d] for an already-shaped sequence.

    Row i holds the vector of token i; PAD and out-of-vocabulary tokens
    contribute zero rows.
    """
    return Tensor(table.vectors[sequence_indices(table, seq)].copy())


# ---------------------------------------------------------------------------
# persistence: word2vec text + JSON sidecar
# ---------------------------------------------------------------------------

def _sidecar_path(path) -> str:
    return str(path) + ".json"


def export_table(table: EmbeddingTable, path) -> None:
    """Write the table as word2vec text plus a JSON sidecar.

    Lines appear in index order so that import reconstructs identical
    indices; the sidecar records entity_marks and training losses.
    """
    ordered = sorted(table.vocab, key=table.vocab.get)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(ordered)} {table.d}\n")
        for token in ordered:
            row = table.vectors[table.vocab[token]]
            fh.write(token + " " + " ".join(repr(float(x)) for x in row) + "\n")
    sidecar = {
        "entity_marks": sorted(table.entity_marks),
        "epoch_losses": table.epoch_losses,
        "d": table.d,
    }
    with open(_sidecar_path(path), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(sidecar, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def import_table(path) -> EmbeddingTable:
    with open(_sidecar_path(path), "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    d = int(sidecar["d"])
    raw = load_semantic_vectors(path, d)
    vocab = {token: i for i, token in enumerate(raw)}
    vectors = np.zeros((len(vocab), d))
    for token, i in vocab.items():
        vectors[i] = raw[token]
    return EmbeddingTable(
        vocab=vocab, vectors=vectors, d=d,
        entity_marks=set(int(i) for i in sidecar["entity_marks"]),
        epoch_losses=[float(x) for x in sidecar["epoch_losses"]])
