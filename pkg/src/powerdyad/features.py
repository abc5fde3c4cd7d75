"""Tokenization, pre-trained embedding lookup and structural features.

Turns masked email text into model-ready inputs: lowercased punctuation-split
tokens mapped through a fixed embedding table with a per-email length cap,
plus the two per-sender structural features (average recipient count and
average email length in tokens).
"""

from __future__ import annotations

import hashlib
import logging
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import MASK_TOKEN, DyadInstance, Email
from .errors import ConfigurationError, DataContractError

logger = logging.getLogger(__name__)

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
SEP_TOKEN = "<sep>"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, MASK_TOKEN, SEP_TOKEN)
PAD_ID, UNK_ID, MASK_ID, SEP_ID = range(4)

OOV_POLICIES = ("zero_vector", "shared_unk")

# Reserved tokens survive tokenization as themselves; everything else is
# lowercased and split into alphanumeric runs or single punctuation marks.
_TOKEN_RE = re.compile(
    "|".join(re.escape(t) for t in SPECIAL_TOKENS) + r"|[a-z0-9]+|[^\sa-z0-9]"
)


def tokenize(text: str) -> list[str]:
    """Deterministic lowercase tokenizer; punctuation marks are kept as tokens."""
    return _TOKEN_RE.findall(text.lower())


def _special_vector(token: str, dimension: int) -> np.ndarray:
    # Deterministic small gaussian per reserved token; keeps the mask/sep
    # symbols visible to the convolution without training embeddings.
    digest = hashlib.sha256(f"powerdyad-special:{token}:{dimension}".encode()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return (rng.standard_normal(dimension) * 0.1).astype(np.float32)


@dataclass
class EmbeddingTable:
    """Token to vector map with a never-failing lookup.

    Unknown tokens resolve through ``oov_policy``: ``zero_vector`` maps them
    to zeros, ``shared_unk`` to one designated UNK vector. Reserved tokens
    (pad/unk/mask/sep) occupy the first rows of the id space.
    """

    dimension: int
    vectors: dict[str, np.ndarray]
    oov_policy: str = "zero_vector"
    duplicate_tokens: int = 0
    _index: dict[str, int] = field(init=False, repr=False)
    _matrix: np.ndarray | None = field(default=None, init=False, repr=False)
    _fingerprint: str | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.oov_policy not in OOV_POLICIES:
            raise ConfigurationError(f"unknown oov policy {self.oov_policy!r}")
        if self.dimension < 1:
            raise ConfigurationError("embedding dimension must be positive")
        for token, vec in self.vectors.items():
            if vec.shape != (self.dimension,) or not np.all(np.isfinite(vec)):
                raise DataContractError(f"bad embedding vector for token {token!r}")
        self._index = {t: i for i, t in enumerate(SPECIAL_TOKENS)}
        for token in sorted(self.vectors):
            if token not in self._index:
                self._index[token] = len(self._index)

    @property
    def mask_token_vector(self) -> np.ndarray:
        return self.matrix()[MASK_ID]

    def token_id(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def matrix(self) -> np.ndarray:
        """Row-per-id embedding matrix; row 0 (pad) is all zeros."""
        if self._matrix is None:
            mat = np.zeros((len(self._index), self.dimension), dtype=np.float32)
            if self.oov_policy == "shared_unk":
                mat[UNK_ID] = _special_vector(UNK_TOKEN, self.dimension)
            mat[MASK_ID] = (
                self.vectors[MASK_TOKEN]
                if MASK_TOKEN in self.vectors
                else _special_vector(MASK_TOKEN, self.dimension)
            )
            mat[SEP_ID] = _special_vector(SEP_TOKEN, self.dimension)
            for token, vec in self.vectors.items():
                if token in (MASK_TOKEN, PAD_TOKEN):
                    continue  # mask handled above; the pad row stays all-zero
                mat[self._index[token]] = vec
            self._matrix = mat
        return self._matrix

    def lookup(self, token: str) -> np.ndarray:
        """Vector for any token; never fails."""
        return self.matrix()[self.token_id(token)]

    def encode(self, tokens: Sequence[str], cap: int) -> np.ndarray:
        """Token ids padded/truncated to ``cap``; tokens beyond cap drop from the tail."""
        ids = np.full(cap, PAD_ID, dtype=np.int32)
        for i, token in enumerate(tokens[:cap]):
            ids[i] = self.token_id(token)
        return ids

    def fingerprint(self) -> str:
        """Content hash binding checkpoints to the table they trained with."""
        if self._fingerprint is None:
            h = hashlib.sha256()
            h.update(f"dim={self.dimension};oov={self.oov_policy};".encode())
            for token in sorted(self.vectors):
                h.update(token.encode("utf-8") + b"\x00")
                h.update(self.vectors[token].astype("<f4").tobytes())
            self._fingerprint = h.hexdigest()
        return self._fingerprint


def load_embeddings(path: Path, dimension: int, oov_policy: str = "zero_vector") -> EmbeddingTable:
    """Read a text embedding file: one token per line, then ``dimension`` decimals.

    A line with the wrong component count is fatal and names the line;
    duplicate tokens keep the first occurrence and are counted in a warning.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"embedding file not found: {path}")
    vectors: dict[str, np.ndarray] = {}
    duplicates = 0
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split()
            if len(parts) != dimension + 1:
                raise DataContractError(
                    f"{path}:{lineno}: expected {dimension} components, got {len(parts) - 1}"
                )
            token = parts[0]
            if token in vectors:
                duplicates += 1
                continue
            try:
                vec = np.asarray([float(x) for x in parts[1:]], dtype=np.float32)
            except ValueError as exc:
                raise DataContractError(f"{path}:{lineno}: non-numeric component") from exc
            if not np.all(np.isfinite(vec)):
                raise DataContractError(f"{path}:{lineno}: non-finite component")
            vectors[token] = vec
    if duplicates:
        logger.warning("embedding file %s had %d duplicate tokens (first kept)", path, duplicates)
    return EmbeddingTable(
        dimension=dimension, vectors=vectors, oov_policy=oov_policy, duplicate_tokens=duplicates
    )


def embed_email(tokens: Sequence[str], table: EmbeddingTable, cap: int) -> np.ndarray:
    """(cap, dimension) matrix: embeddings for the first ``cap`` tokens, zero-padded."""
    if cap < 1:
        raise ConfigurationError("cap must be >= 1")
    out = np.zeros((cap, table.dimension), dtype=np.float32)
    for i, token in enumerate(tokens[:cap]):
        out[i] = table.lookup(token)
    return out


@dataclass(frozen=True)
class TokenizedEmail:
    """A capped token-id sequence; padding only ever appears as a suffix."""

    email_id: str
    token_ids: tuple[int, ...]
    cap: int
    pad_length: int

    @classmethod
    def build(cls, email_id: str, tokens: Sequence[str], table: EmbeddingTable, cap: int):
        kept = min(len(tokens), cap)
        ids = tuple(int(table.token_id(t)) for t in tokens[:cap])
        return cls(email_id=email_id, token_ids=ids, cap=cap, pad_length=cap - kept)


# ---------------------------------------------------------------------------
# Structural (non-lexical) features
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StructuralFeatures:
    """Per-sender averages over that sender's emails in the instance."""

    avg_recipients: float
    avg_words: float
    empty: bool = False

    def as_array(self) -> np.ndarray:
        return np.asarray([self.avg_recipients, self.avg_words], dtype=np.float64)


def structural_features(emails: Sequence[Email]) -> StructuralFeatures:
    """Average recipient count and average token count over one sender's emails.

    Word counts use the masked, tokenized text. An empty email list yields
    (0, 0) with the degenerate-input flag set.
    """
    if not emails:
        return StructuralFeatures(0.0, 0.0, empty=True)
    n = len(emails)
    recipients = sum(len(e.recipients) for e in emails) / n
    words = sum(len(tokenize(e.text())) for e in emails) / n
    return StructuralFeatures(avg_recipients=recipients, avg_words=words)


@dataclass
class FeatureStandardizer:
    """Zero-mean unit-variance scaling fit on train-split statistics.

    Both directions of every train instance contribute samples, so the same
    affine map applies to the A and B slots and direction swaps stay pure
    permutations of the fused feature vector.
    """

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, instances: Sequence[DyadInstance]) -> "FeatureStandardizer":
        rows = []
        for inst in instances:
            rows.append(structural_features(inst.emails_a_to_b).as_array())
            rows.append(structural_features(inst.emails_b_to_a).as_array())
        if not rows:
            return cls.identity()
        data = np.stack(rows)
        mean = data.mean(axis=0)
        std = data.std(axis=0)
        std[std == 0.0] = 1.0
        return cls(mean=mean, std=std)

    @classmethod
    def identity(cls) -> "FeatureStandardizer":
        return cls(mean=np.zeros(2), std=np.ones(2))

    def transform(self, feats: StructuralFeatures) -> np.ndarray:
        return ((feats.as_array() - self.mean) / self.std).astype(np.float32)

    def to_dict(self) -> dict:
        return {"mean": [float(x) for x in self.mean], "std": [float(x) for x in self.std]}

    @classmethod
    def from_dict(cls, data: Mapping) -> "FeatureStandardizer":
        return cls(mean=np.asarray(data["mean"], dtype=np.float64),
                   std=np.asarray(data["std"], dtype=np.float64))


# ---------------------------------------------------------------------------
# Optional token-id cache
# ---------------------------------------------------------------------------

_CACHE_MAGIC = b"PDTC"
_CACHE_VERSION = 1


def write_token_cache(path: Path, entries: Mapping[str, Sequence[int]]) -> None:
    """Binary record file keyed by email id; format is versioned."""
    with Path(path).open("wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<II", _CACHE_VERSION, len(entries)))
        for email_id in sorted(entries):
            raw_id = email_id.encode("utf-8")
            ids = np.asarray(entries[email_id], dtype="<i4")
            fh.write(struct.pack("<II", len(raw_id), ids.size))
            fh.write(raw_id)
            fh.write(ids.tobytes())


def read_token_cache(path: Path) -> dict[str, list[int]]:
    data = Path(path).read_bytes()
    if data[:4] != _CACHE_MAGIC:
        raise DataContractError(f"{path}: not a token cache file")
    version, count = struct.unpack_from("<II", data, 4)
    if version != _CACHE_VERSION:
        raise DataContractError(f"{path}: unsupported token cache version {version}")
    out: dict[str, list[int]] = {}
    offset = 12
    for _ in range(count):
        id_len, n = struct.unpack_from("<II", data, offset)
        offset += 8
        email_id = data[offset : offset + id_len].decode("utf-8")
        offset += id_len
        ids = np.frombuffer(data, dtype="<i4", count=n, offset=offset)
        offset += 4 * n
        out[email_id] = [int(x) for x in ids]
    return out
