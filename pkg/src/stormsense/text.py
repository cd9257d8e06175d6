"""Deterministic tweet preprocessing.

Cleanup, tokenization, gazetteer entity recognition, and fixed-length shaping.
Every function here is pure: identical input text yields identical output on
every run and platform, and output ordering follows input ordering.
"""

from __future__ import annotations

import json
import math
import re
import string
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Sequence

WORD = "word"
ENTITY = "entity"
PAD = "pad"

# Surface form of the reserved padding token. It maps to vocabulary index 0
# and an all-zero, non-trainable embedding.
PAD_TEXT = "<pad>"

_URL_PREFIXES = ("http://", "https://", "www.")
_DOMAIN_RE = re.compile(r"^(?:[a-z0-9-]+\.)+[a-z]{2,}$")
_PAREN_RE = re.compile(r"\([^()]*\)")
_LEADING_WRAPPERS = "\"'([{<"


@dataclass(frozen=True)
class RawTweet:
    """One tweet as read from input: opaque id, UTC timestamp (seconds), text."""

    id: str
    timestamp: float
    text: str


@dataclass(frozen=True)
class Token:
    """A single token: ``kind`` is word, entity, or pad.

    Entity tokens carry their canonical multi-word surface form joined by
    underscores (e.g. ``red_cross``).
    """

    text: str
    kind: str = WORD


@dataclass
class TokenSeq:
    """Ordered tokens from one tweet."""

    tokens: list[Token] = field(default_factory=list)
    source_id: str = ""

    def __len__(self) -> int:
        return len(self.tokens)

    def texts(self) -> list[str]:
        return [t.text for t in self.tokens]


def _is_url_token(token: str) -> bool:
    lowered = token.lower().lstrip(_LEADING_WRAPPERS)
    if lowered.startswith(_URL_PREFIXES):
        return True
    return bool(_DOMAIN_RE.match(lowered.strip(string.punctuation)))


def _drop_token(token: str) -> bool:
    core = token.lstrip(_LEADING_WRAPPERS)
    if core.startswith("@") or core.startswith("#"):
        return True
    if any(ord(ch) > 127 for ch in token):
        return True
    return _is_url_token(token)


def clean_tweet(text: str) -> str:
    """Strip URLs, @usernames, #hashtags, and non-ASCII words from a tweet.

    A parenthetical group that contains a URL (a "(link: ...)" attachment) is
    removed wholesale. Remaining tokens are dropped individually when they are
    URLs (http/https/www prefixes or bare domain.tld forms), @usernames,
    #hashtags, or contain non-ASCII characters. Whitespace collapses to single
    spaces. Stop words are deliberately preserved. Empty output is allowed.
    """
    def _strip_url_parens(match: re.Match) -> str:
        inner = match.group(0)
        return " " if any(_is_url_token(tok) for tok in inner.split()) else inner

    text = _PAREN_RE.sub(_strip_url_parens, text)
    kept = [tok for tok in text.split() if not _drop_token(tok)]
    return " ".join(kept)


def tokenize(text: str) -> list[str]:
    """Split cleaned text into lower-case words.

    Splits on whitespace, strips leading/trailing punctuation from each token,
    lower-cases, and drops tokens that end up empty.
    """
    out = []
    for raw in text.split():
        word = raw.strip(string.punctuation).lower()
        if word:
            out.append(word)
    return out


def recognize_entities(
    tokens: Sequence[str], gazetteer: set[str], source_id: str = ""
) -> TokenSeq:
    """Collapse gazetteer phrases into entity tokens, greedy longest-match.

    Scans left to right; at each position the longest gazetteer phrase
    (1-4 words, lower-case) starting there becomes a single entity token with
    words joined by underscores. Non-matching words pass through unchanged, so
    the relative order of surviving tokens is preserved.
    """
    result: list[Token] = []
    i = 0
    n = len(tokens)
    while i < n:
        matched = 0
        for length in range(min(4, n - i), 0, -1):
            phrase = " ".join(tokens[i : i + length])
            if phrase in gazetteer:
                result.append(Token("_".join(tokens[i : i + length]), ENTITY))
                matched = length
                break
        if not matched:
            result.append(Token(tokens[i], WORD))
            matched = 1
        i += matched
    return TokenSeq(tokens=result, source_id=source_id)


def pad_or_truncate(seq: TokenSeq, s: int) -> TokenSeq:
    """Shape a sequence to exactly ``s`` tokens.

    Longer sequences keep their first ``s`` tokens; shorter ones are
    right-padded with the reserved PAD token.
    """
    if s < 1:
        raise ValueError(f"fixed length must be >= 1, got {s}")
    tokens = list(seq.tokens[:s])
    tokens.extend(Token(PAD_TEXT, PAD) for _ in range(s - len(tokens)))
    return TokenSeq(tokens=tokens, source_id=seq.source_id)


def compute_fixed_length(corpus: Sequence[TokenSeq]) -> int:
    """Fixed sequence length: mean token count, rounded half up, minimum 1."""
    if not corpus:
        raise ValueError("cannot compute fixed length of an empty corpus")
    mean = sum(len(seq) for seq in corpus) / len(corpus)
    return max(1, math.floor(mean + 0.5))


def preprocess_tweet(raw: RawTweet, gazetteer: set[str]) -> TokenSeq:
    """Full pipeline for one tweet: clean, tokenize, recognize entities."""
    return recognize_entities(tokenize(clean_tweet(raw.text)), gazetteer, raw.id)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def parse_timestamp(value) -> float:
    """ISO-8601 string or numeric seconds -> UTC seconds since the epoch."""
    if isinstance(value, (int, float)):
        return float(value)
    stamp = str(value).strip()
    if stamp.endswith(("Z", "z")):
        stamp = stamp[:-1] + "+00:00"
    parsed = datetime.fromisoformat(stamp)
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return parsed.timestamp()


def read_tweets_jsonl(path) -> list[RawTweet]:
    """Read tweets from a JSON-lines file with fields id, timestamp, text."""
    tweets = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                tweets.append(RawTweet(
                    id=str(obj["id"]),
                    timestamp=parse_timestamp(obj["timestamp"]),
                    text=str(obj["text"]),
                ))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{line_no}: bad tweet record: {exc}") from exc
    return tweets


def write_token_seqs_jsonl(path, seqs: Iterable[TokenSeq]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for seq in seqs:
            record = {
                "source_id": seq.source_id,
                "tokens": [{"text": t.text, "kind": t.kind} for t in seq.tokens],
            }
            fh.write(json.dumps(record, separators=(",", ":"), sort_keys=True))
            fh.write("\n")


def read_token_seqs_jsonl(path) -> list[TokenSeq]:
    seqs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            seqs.append(TokenSeq(
                tokens=[Token(t["text"], t["kind"]) for t in obj["tokens"]],
                source_id=obj["source_id"],
            ))
    return seqs
