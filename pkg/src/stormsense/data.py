"""Dataset plumbing.

Parses best-track environmental records, pairs tweets into observation time
slots, rebalances classes with SMOTE, splits train/test, and generates
synthetic desk-scale datasets whose Bayes-optimal accuracies are computed by
numeric integration and written into a ground-truth report.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .classifier import CATEGORIES
from .text import RawTweet, parse_timestamp

ENV_FEATURES = ("lat", "lon", "vmax", "rad", "mslp")
BESTTRACK_COLUMNS = ("storm_id", "timestamp", "lat", "lon", "vmax", "rad", "mslp", "label")


@dataclass(frozen=True)
class TyphoonObservation:
    """One best-track record: position, intensity measurements, category."""

    storm_id: str
    timestamp: float
    lat: float
    lon: float
    vmax: float
    rad: float
    mslp: float
    label: str

    def env_vector(self) -> np.ndarray:
        return np.array([self.lat, self.lon, self.vmax, self.rad, self.mslp])


@dataclass
class PairedInstance:
    """An observation plus the tweets posted during its time slot."""

    observation: TyphoonObservation
    tweets: list[RawTweet] = field(default_factory=list)


def _validate_row(row: dict) -> Optional[str]:
    """Reason the row is invalid, or None if it passes."""
    for name in BESTTRACK_COLUMNS:
        if row.get(name) in (None, ""):
            return "missing_field"
    try:
        parse_timestamp(row["timestamp"])
        values = {name: float(row[name]) for name in ENV_FEATURES}
    except ValueError:
        return "unparseable_value"
    if not all(math.isfinite(v) for v in values.values()):
        return "unparseable_value"
    if values["vmax"] < 0:
        return "invalid_vmax"
    if not 800.0 < values["mslp"] < 1100.0:
        return "invalid_mslp"
    if row["label"] not in CATEGORIES:
        return "unknown_label"
    return None


def parse_besttrack(path) -> tuple[list[TyphoonObservation], dict[str, int]]:
    """Read and validate a best-track CSV.

    Returns observations sorted by (storm_id, timestamp) and a rejection
    report counting dropped rows by reason. Rows with missing or unparseable
    fields, out-of-range values, unknown labels, or a duplicated timestamp
    within a storm are dropped, mirroring the removal of noisy records.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(BESTTRACK_COLUMNS) <= set(reader.fieldnames):
            missing = sorted(set(BESTTRACK_COLUMNS) - set(reader.fieldnames or ()))
            raise ValueError(f"{path}: missing best-track columns: {', '.join(missing)}")
        rejections: dict[str, int] = {}
        rows = []
        for row in reader:
            reason = _validate_row(row)
            if reason is not None:
                rejections[reason] = rejections.get(reason, 0) + 1
                continue
            rows.append(TyphoonObservation(
                storm_id=row["storm_id"],
                timestamp=parse_timestamp(row["timestamp"]),
                lat=float(row["lat"]), lon=float(row["lon"]),
                vmax=float(row["vmax"]), rad=float(row["rad"]),
                mslp=float(row["mslp"]), label=row["label"]))
    rows.sort(key=lambda o: (o.storm_id, o.timestamp))
    kept: list[TyphoonObservation] = []
    for obs in rows:
        if kept and kept[-1].storm_id == obs.storm_id and kept[-1].timestamp == obs.timestamp:
            rejections["duplicate_timestamp"] = rejections.get("duplicate_timestamp", 0) + 1
            continue
        kept.append(obs)
    return kept, rejections


def pair_tweet_batches(
    observations: Sequence[TyphoonObservation],
    tweets: Sequence[RawTweet],
    slot_length: float = 6 * 3600.0,
) -> tuple[list[PairedInstance], int]:
    """Assign each tweet to the observation whose slot [t, t+slot) contains it.

    Returns the paired instances (one per observation, in observation order;
    empty batches allowed) and the count of discarded tweets that fall in no
    slot. When slots of different storms overlap, the earliest observation in
    (storm_id, timestamp) order wins, so every kept tweet lands in exactly
    one instance.
    """
    if slot_length <= 0:
        raise ValueError(f"slot_length must be positive, got {slot_length}")
    order = sorted(range(len(observations)),
                   key=lambda i: (observations[i].storm_id, observations[i].timestamp))
    starts = sorted((observations[i].timestamp, rank, i)
                    for rank, i in enumerate(order))
    start_times = [s[0] for s in starts]
    instances = [PairedInstance(observation=obs) for obs in observations]
    discarded = 0
    for tweet in sorted(tweets, key=lambda t: (t.timestamp, t.id)):
        # candidate slots start within (ts - slot, ts]
        lo = np.searchsorted(start_times, tweet.timestamp - slot_length, side="right")
        hi = np.searchsorted(start_times, tweet.timestamp, side="right")
        candidates = [starts[j] for j in range(lo, hi)
                      if starts[j][0] <= tweet.timestamp < starts[j][0] + slot_length]
        if not candidates:
            discarded += 1
            continue
        winner = min(candidates, key=lambda s: s[1])
        instances[winner[2]].tweets.append(tweet)
    return instances, discarded


_SENTIMENT_CODES = {"neg": 0, "pos": 1}


def read_sentiment_jsonl(path) -> list[tuple[RawTweet, int]]:
    """Read separately labeled tweets: fields id, timestamp, text, sentiment.

    The sentiment field must be "pos" or "neg"; the returned label is 1 or 0.
    """
    rows: list[tuple[RawTweet, int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                tweet = RawTweet(id=str(obj["id"]),
                                 timestamp=parse_timestamp(obj["timestamp"]),
                                 text=str(obj["text"]))
                label = _SENTIMENT_CODES[obj["sentiment"]]
            except (KeyError, ValueError) as exc:
                raise ValueError(
                    f"{path}:{line_no}: bad sentiment record: {exc}") from exc
            rows.append((tweet, label))
    return rows


def smote_oversample(
    features: np.ndarray,
    labels: Sequence[str],
    k: int = 5,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Balance classes by interpolating synthetic minority points.

    Each synthetic point is x + u * (x_nn - x) with u ~ Uniform(0, 1) and
    x_nn one of the k nearest same-class neighbors of x (Euclidean distance
    over the full feature vector). Classes are topped up to the majority
    count. Returns (features, labels, synthetic_mask) with synthetic rows
    appended after the originals. Apply to the training split only.
    """
    if k < 1:
        raise ValueError(f"neighbor count must be >= 1, got {k}")
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(list(labels))
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise ValueError(
            f"features {features.shape} and labels {labels.shape} do not align")
    classes = sorted(set(labels.tolist()),
                     key=lambda c: (CATEGORIES.index(c) if c in CATEGORIES else len(CATEGORIES), c))
    counts = {c: int((labels == c).sum()) for c in classes}
    majority = max(counts.values())
    rng = np.random.default_rng(seed)
    new_rows, new_labels = [], []
    for c in classes:
        need = majority - counts[c]
        if need == 0:
            continue
        if counts[c] < 2:
            raise ValueError(
                f"class {c!r} has a single instance; SMOTE cannot interpolate — "
                "lower k, merge classes, or drop the class")
        members = features[labels == c]
        # pairwise distances within the class; self excluded via inf diagonal
        deltas = members[:, None, :] - members[None, :, :]
        dists = np.sqrt((deltas ** 2).sum(axis=2))
        np.fill_diagonal(dists, np.inf)
        k_eff = min(k, counts[c] - 1)
        neighbors = np.argsort(dists, axis=1, kind="stable")[:, :k_eff]
        for j in range(need):
            base = j % counts[c]
            pick = neighbors[base][rng.integers(0, k_eff)]
            u = rng.uniform()
            new_rows.append(members[base] + u * (members[pick] - members[base]))
            new_labels.append(c)
    if not new_rows:
        return features.copy(), labels.copy(), np.zeros(len(labels), dtype=bool)
    out_features = np.vstack([features, np.asarray(new_rows)])
    out_labels = np.concatenate([labels, np.asarray(new_labels)])
    mask = np.zeros(len(out_labels), dtype=bool)
    mask[len(labels):] = True
    return out_features, out_labels, mask


def train_test_split(
    items: Sequence,
    ratio: float = 0.8,
    seed: int = 0,
    stratified: bool = True,
    labels: Optional[Sequence[str]] = None,
) -> tuple[list, list]:
    """Seeded shuffle-and-split; train size is floor(ratio * n).

    Stratified mode (the default) apportions the train quota per class by
    largest remainder, keeping per-class proportions within one instance.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must lie in (0, 1), got {ratio}")
    n = len(items)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    n_train = int(math.floor(ratio * n))
    if not stratified:
        order = rng.permutation(n)
        return ([items[i] for i in order[:n_train]],
                [items[i] for i in order[n_train:]])
    if labels is None:
        labels = [item.observation.label for item in items]
    labels = list(labels)
    if len(labels) != n:
        raise ValueError("labels must align with items")
    classes = sorted(set(labels))
    by_class = {c: [i for i, lab in enumerate(labels) if lab == c] for c in classes}
    shares = {c: ratio * len(by_class[c]) for c in classes}
    quota = {c: int(math.floor(shares[c])) for c in classes}
    leftover = n_train - sum(quota.values())
    by_remainder = sorted(classes, key=lambda c: (-(shares[c] - quota[c]), c))
    for c in by_remainder[:leftover]:
        quota[c] += 1
    train_idx, test_idx = [], []
    for c in classes:
        order = rng.permutation(len(by_class[c]))
        chosen = [by_class[c][j] for j in order]
        train_idx.extend(chosen[:quota[c]])
        test_idx.extend(chosen[quota[c]:])
    train_order = rng.permutation(len(train_idx))
    test_order = rng.permutation(len(test_idx))
    return ([items[train_idx[j]] for j in train_order],
            [items[test_idx[j]] for j in test_order])


# ---------------------------------------------------------------------------
# synthetic dataset generation
# ---------------------------------------------------------------------------

POSITIVE_WORDS = ("hope", "safe", "relief", "rescued", "grateful")
NEGATIVE_WORDS = ("flood", "destroyed", "terrified", "devastation", "trapped")
NEUTRAL_WORDS = ("typhoon", "storm", "weather", "island", "report",
                 "update", "wind", "rain", "news", "coast")


@dataclass
class SynthSpec:
    """Generating parameters for the synthetic dataset.

    Class signal enters through exactly two channels: vmax (per-class
    truncated Gaussians) and the positive-tweet rate (a per-class constant
    spread around ``pos_rate_center`` and scaled by ``tweet_signal``). All
    remaining environmental features are class-independent noise, and the
    tweets-per-slot count is constant, so the Bayes bounds reported by the
    generator are exact one-dimensional computations.
    """

    n: int = 2000
    seed: int = 42
    class_priors: tuple = (0.4, 0.3, 0.2, 0.1)
    vmax_means: tuple = (35.0, 60.0, 95.0, 140.0)
    vmax_std: float = 19.0
    tweet_signal: float = 1.0
    tweets_per_slot: int = 24
    tweet_len: int = 8
    pos_rate_center: float = 0.25
    pos_rate_spread: float = 0.48
    labeled_tweets: int = 1500
    slot_length: float = 6 * 3600.0

    def __post_init__(self):
        k = len(CATEGORIES)
        if self.n < k:
            raise ValueError(f"need at least {k} instances, got {self.n}")
        if len(self.class_priors) != k or len(self.vmax_means) != k:
            raise ValueError(f"class_priors and vmax_means must have {k} entries")
        if abs(sum(self.class_priors) - 1.0) > 1e-9 or min(self.class_priors) <= 0:
            raise ValueError("class_priors must be positive and sum to 1")
        if self.vmax_std <= 0:
            raise ValueError("vmax_std must be positive")
        if self.tweets_per_slot < 1 or self.tweet_len < 2:
            raise ValueError("need at least one tweet per slot and two words per tweet")
        if not 0.0 <= self.tweet_signal <= 1.0:
            raise ValueError("tweet_signal must lie in [0, 1]")
        rates = self.positive_rates()
        if min(rates) <= 0.0 or max(rates) > 0.5:
            raise ValueError(
                "positive-tweet rates must lie in (0, 0.5] so the variance "
                f"features stay monotone in the class index; got {rates}")

    def positive_rates(self) -> tuple:
        """Per-class probability that a tweet carries a positive word.

        Rates stay at or below 0.5 so the sentiment variance p(1-p) is an
        increasing function of the rate, keeping the tweet signal recoverable
        from the variance features. tweet_signal=0 collapses all rates to the
        center value (no tweet information).
        """
        k = len(CATEGORIES)
        return tuple(
            self.pos_rate_center
            + self.pos_rate_spread * self.tweet_signal * (c / (k - 1) - 0.5)
            for c in range(k))


def _truncated_normal_mass(mu: float, sigma: float) -> float:
    """P(X > 0) for X ~ N(mu, sigma); the renormalizer of the truncation."""
    return 0.5 * (1.0 + math.erf(mu / (sigma * math.sqrt(2.0))))


def _truncated_normal_pdf(x: np.ndarray, mu: float, sigma: float) -> np.ndarray:
    z = (x - mu) / sigma
    pdf = np.exp(-0.5 * z * z) / (sigma * math.sqrt(2.0 * math.pi))
    return np.where(x >= 0, pdf / _truncated_normal_mass(mu, sigma), 0.0)


def _binom_pmf(b: int, n: int, p: float) -> float:
    return math.comb(n, b) * p ** b * (1.0 - p) ** (n - b)


def bayes_accuracies(spec: SynthSpec, grid_points: int = 20001) -> dict[str, float]:
    """Bayes-optimal accuracy bounds by numeric integration.

    env_only integrates max_c pi_c * f_c(vmax) over the vmax mixture (the
    other environmental features carry no class information by construction).
    combined extends the observation with the per-slot positive-tweet count,
    folded to min(b, n-b) because the variance features cannot distinguish a
    rate p from 1-p; the fold is the information actually available to a
    classifier reading [env, count, v_neg, v_pos].
    """
    sigma = spec.vmax_std
    hi = max(spec.vmax_means) + 10.0 * sigma
    x = np.linspace(0.0, hi, grid_points)
    densities = np.stack([
        prior * _truncated_normal_pdf(x, mu, sigma)
        for prior, mu in zip(spec.class_priors, spec.vmax_means)])
    env_only = float(np.trapezoid(densities.max(axis=0), x))

    n_tw = spec.tweets_per_slot
    rates = spec.positive_rates()
    combined = 0.0
    for fold in range(n_tw // 2 + 1):
        group = {fold, n_tw - fold}
        pmf = np.array([sum(_binom_pmf(b, n_tw, r) for b in group) for r in rates])
        combined += float(np.trapezoid((densities * pmf[:, None]).max(axis=0), x))
    return {"env_only": env_only, "combined": combined}


def _make_tweet_text(rng: np.random.Generator, positive: bool, length: int) -> str:
    words = list(rng.choice(NEUTRAL_WORDS, size=length - 1))
    pool = POSITIVE_WORDS if positive else NEGATIVE_WORDS
    words.insert(int(rng.integers(0, length)), str(rng.choice(pool)))
    return " ".join(words)


def synth_generate(spec: SynthSpec, out_dir) -> dict:
    """Write a synthetic dataset and its ground-truth report.

    Produces besttrack.csv, tweets.jsonl, sentiment.jsonl (a separately
    labeled sentiment corpus), and ground_truth.json holding the generating
    parameters and the Bayes accuracy bounds. Returns the report dict.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    k = len(CATEGORIES)
    rates = spec.positive_rates()

    # class labels per slot, iid from the priors
    classes = rng.choice(k, size=spec.n, p=np.asarray(spec.class_priors))
    base_time = parse_timestamp("2013-01-01T00:00:00Z")
    slots_per_storm = 20
    tweet_rows = []
    with open(out / "besttrack.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BESTTRACK_COLUMNS)
        for i, c in enumerate(classes):
            storm = i // slots_per_storm
            step = i % slots_per_storm
            # separate storms by 30 days so slots never overlap
            ts = base_time + storm * 30 * 86400.0 + step * spec.slot_length
            vmax = -1.0
            while vmax < 0.0:
                vmax = rng.normal(spec.vmax_means[c], spec.vmax_std)
            obs = {
                "storm_id": f"SYN{storm:04d}",
                "timestamp": _iso(ts),
                "lat": f"{rng.normal(15.0, 5.0):.3f}",
                "lon": f"{rng.normal(130.0, 8.0):.3f}",
                "vmax": f"{vmax:.2f}",
                "rad": f"{max(0.0, rng.normal(30.0, 10.0)):.2f}",
                "mslp": f"{float(np.clip(rng.normal(980.0, 20.0), 805.0, 1095.0)):.2f}",
                "label": CATEGORIES[c],
            }
            writer.writerow([obs[col] for col in BESTTRACK_COLUMNS])
            for j in range(spec.tweets_per_slot):
                positive = bool(rng.random() < rates[c])
                tweet_rows.append({
                    "id": f"t{i:06d}_{j:02d}",
                    "timestamp": _iso(ts + rng.uniform(0.0, spec.slot_length)),
                    "text": _make_tweet_text(rng, positive, spec.tweet_len),
                })

    with open(out / "tweets.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for row in tweet_rows:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")

    with open(out / "sentiment.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for i in range(spec.labeled_tweets):
            positive = bool(i % 2)
            fh.write(json.dumps({
                "id": f"s{i:06d}",
                "timestamp": _iso(base_time - 86400.0 * 365 + 60.0 * i),
                "text": _make_tweet_text(rng, positive, spec.tweet_len),
                "sentiment": "pos" if positive else "neg",
            }, sort_keys=True, separators=(",", ":")) + "\n")

    report = {
        "n": spec.n,
        "seed": spec.seed,
        "class_priors": list(spec.class_priors),
        "class_counts": {CATEGORIES[c]: int((classes == c).sum()) for c in range(k)},
        "vmax_means": list(spec.vmax_means),
        "vmax_std": spec.vmax_std,
        "tweet_signal": spec.tweet_signal,
        "tweets_per_slot": spec.tweets_per_slot,
        "positive_rates": list(rates),
        "labeled_tweets": spec.labeled_tweets,
        "slot_length": spec.slot_length,
        "bayes_accuracy": bayes_accuracies(spec),
        "note": ("only vmax and the positive-tweet rate carry class signal; "
                 "lat/lon/rad/mslp are class-independent noise and the tweet "
                 "count per slot is constant"),
    }
    with open(out / "ground_truth.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report


def _iso(ts: float) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
