"""The three dyadic power-prediction architectures over a shared layer kit.

Every architecture encodes each direction of a correspondent pair (A's emails
to B, B's to A), fuses the two encodings with the per-sender structural
features in a fixed order (A-branch, B-branch, A-structural, B-structural,
absent flags), and scores the fused vector with a dense ReLU layer and a
sigmoid output. They differ only in how a direction's emails are aggregated:

* batched: all emails of a direction concatenated into one document,
  separator tokens between emails, encoded by a single text CNN;
* separated: each email encoded by a shared per-email CNN, then combined with
  a presence-mask-aware mean (or max), which is order-invariant;
* sequential: per-email CNN outputs fed chronologically to an LSTM whose
  final hidden state represents the direction, which is order-sensitive.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
from torch import nn

from .corpus import DyadInstance, Email
from .errors import ConfigurationError, DataContractError
from .features import (
    SEP_TOKEN,
    EmbeddingTable,
    FeatureStandardizer,
    StructuralFeatures,
    structural_features,
    tokenize,
)

BATCHED_CNN = "batched_cnn"
SEPARATED_CNN = "separated_cnn"
SEQUENTIAL_CNN_LSTM = "sequential_cnn_lstm"
ARCHITECTURES = (BATCHED_CNN, SEPARATED_CNN, SEQUENTIAL_CNN_LSTM)

LABEL_A_SUPERIOR = "a_superior"
LABEL_B_SUPERIOR = "b_superior"

LOSS_EPS = 1e-7


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    """Architecture choice plus every tunable hyperparameter."""

    architecture: str
    embedding_dim: int = 100
    email_cap: int = 200
    max_emails_per_direction: int = 16
    conv_filters: int = 64
    kernel_widths: tuple[int, ...] = (3, 4, 5)
    pooling: str = "global_max"
    email_merge: str = "mean"  # separated only: mean or max
    lstm_hidden: int = 64  # sequential only
    dense_hidden: int = 64
    dense_activation: str = "relu"
    dropout_rate: float = 0.2
    seed: int = 0
    shared_encoder: bool = True
    doc_cap_multiplier: int = 4  # batched document cap = multiplier * email_cap

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigurationError(f"unknown architecture {self.architecture!r}")
        positive = (
            ("embedding_dim", self.embedding_dim),
            ("email_cap", self.email_cap),
            ("max_emails_per_direction", self.max_emails_per_direction),
            ("conv_filters", self.conv_filters),
            ("dense_hidden", self.dense_hidden),
            ("doc_cap_multiplier", self.doc_cap_multiplier),
        )
        for name, value in positive:
            if value < 1:
                raise ConfigurationError(f"{name} must be positive, got {value}")
        if not self.kernel_widths or any(w < 1 for w in self.kernel_widths):
            raise ConfigurationError("kernel_widths must be non-empty positive ints")
        if self.email_cap < max(self.kernel_widths):
            raise ConfigurationError("email_cap must be at least the widest kernel")
        if self.pooling != "global_max":
            raise ConfigurationError(f"unsupported pooling {self.pooling!r}")
        if self.architecture == SEPARATED_CNN and self.email_merge not in ("mean", "max"):
            raise ConfigurationError(f"email_merge must be mean or max, got {self.email_merge!r}")
        if self.architecture == SEQUENTIAL_CNN_LSTM and self.lstm_hidden < 1:
            raise ConfigurationError("lstm_hidden must be >= 1 for the sequential model")
        if self.dense_activation != "relu":
            raise ConfigurationError(f"unsupported dense activation {self.dense_activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError("dropout_rate must lie in [0, 1)")

    @property
    def doc_cap(self) -> int:
        return self.doc_cap_multiplier * self.email_cap

    @property
    def encoder_out_dim(self) -> int:
        return self.conv_filters * len(self.kernel_widths)

    @property
    def direction_dim(self) -> int:
        if self.architecture == SEQUENTIAL_CNN_LSTM:
            return self.lstm_hidden
        return self.encoder_out_dim

    @property
    def fused_dim(self) -> int:
        # A-branch, B-branch, A-structural(2), B-structural(2), absent flags(2).
        return 2 * self.direction_dim + 6

    def to_dict(self) -> dict:
        data = asdict(self)
        data["kernel_widths"] = list(self.kernel_widths)
        return data

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelConfig":
        kwargs = dict(data)
        if "kernel_widths" in kwargs:
            kwargs["kernel_widths"] = tuple(kwargs["kernel_widths"])
        return cls(**kwargs)


def config_hash(payload: Mapping) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    ).hexdigest()


# ---------------------------------------------------------------------------
# Scores and loss
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerScore:
    probability: float
    predicted_label: str

    def __post_init__(self):
        if not 0.0 < self.probability < 1.0:
            raise DataContractError(f"probability must lie in (0,1), got {self.probability}")
        expected = LABEL_A_SUPERIOR if self.probability >= 0.5 else LABEL_B_SUPERIOR
        if self.predicted_label != expected:
            raise DataContractError("predicted_label inconsistent with probability")

    @classmethod
    def from_probability(cls, probability: float) -> "PowerScore":
        label = LABEL_A_SUPERIOR if probability >= 0.5 else LABEL_B_SUPERIOR
        return cls(probability=probability, predicted_label=label)


def bce_loss(probabilities: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Binary cross-entropy on probabilities, clamped away from log(0)."""
    p = probabilities.clamp(LOSS_EPS, 1.0 - LOSS_EPS)
    return -(labels * torch.log(p) + (1.0 - labels) * torch.log(1.0 - p)).mean()


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


class EmailEncoder(nn.Module):
    """Text CNN: per-width 1-D convolution over tokens, ReLU, global max pool."""

    def __init__(self, embedding_dim: int, conv_filters: int, kernel_widths: Sequence[int]):
        super().__init__()
        self.convs = nn.ModuleList(
            nn.Conv1d(embedding_dim, conv_filters, w) for w in kernel_widths
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (batch, tokens, dim) -> (batch, filters * n_widths)
        x = x.transpose(1, 2)
        pooled = [torch.relu(conv(x)).max(dim=2).values for conv in self.convs]
        return torch.cat(pooled, dim=1)


def masked_mean(vectors: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Presence-mask-aware mean over the email axis.

    Summation runs over per-column sorted values so the reduction order is
    canonical: permuting the emails of a direction leaves the output
    bit-identical, not merely close.
    """
    masked = vectors * mask.unsqueeze(-1)
    ordered, _ = torch.sort(masked, dim=1, descending=True)
    total = ordered.sum(dim=1)
    count = mask.sum(dim=1, keepdim=True).clamp(min=1.0)
    return total / count


def masked_max(vectors: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Presence-mask-aware max over the email axis; empty directions yield zeros."""
    neg_inf = torch.full_like(vectors, float("-inf"))
    filled = torch.where(mask.unsqueeze(-1).bool(), vectors, neg_inf)
    out = filled.max(dim=1).values
    any_real = mask.sum(dim=1, keepdim=True) > 0
    return torch.where(any_real, out, torch.zeros_like(out))


class SequenceAggregator(nn.Module):
    """LSTM over per-email vectors; padding steps leave the state untouched."""

    def __init__(self, input_dim: int, hidden: int):
        super().__init__()
        self.hidden = hidden
        self.cell = nn.LSTMCell(input_dim, hidden)

    def forward(self, seq: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        # seq: (batch, emails, dim), mask: (batch, emails) -> (batch, hidden)
        batch = seq.shape[0]
        h = seq.new_zeros((batch, self.hidden))
        c = seq.new_zeros((batch, self.hidden))
        for t in range(seq.shape[1]):
            h_new, c_new = self.cell(seq[:, t], (h, c))
            m = mask[:, t].unsqueeze(1)
            h = m * h_new + (1.0 - m) * h
            c = m * c_new + (1.0 - m) * c
        return h


class _PowerModelBase(nn.Module):
    """Shared fusion head; subclasses provide the two direction encodings."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder_a = EmailEncoder(config.embedding_dim, config.conv_filters, config.kernel_widths)
        self.encoder_b = self.encoder_a if config.shared_encoder else EmailEncoder(
            config.embedding_dim, config.conv_filters, config.kernel_widths
        )
        self.dropout_enc = nn.Dropout(config.dropout_rate)
        self.dense = nn.Linear(config.fused_dim, config.dense_hidden)
        self.dropout_dense = nn.Dropout(config.dropout_rate)
        self.out = nn.Linear(config.dense_hidden, 1)

    def fuse_and_score(
        self,
        enc_a: torch.Tensor,
        enc_b: torch.Tensor,
        structural: torch.Tensor,
        absent: torch.Tensor,
    ) -> torch.Tensor:
        enc_a = self.dropout_enc(enc_a)
        enc_b = self.dropout_enc(enc_b)
        fused = torch.cat([enc_a, enc_b, structural, absent], dim=1)
        hidden = torch.relu(self.dense(fused))
        hidden = self.dropout_dense(hidden)
        return torch.sigmoid(self.out(hidden).squeeze(1))

    def _encode_emails(self, emails: torch.Tensor, encoder: EmailEncoder) -> torch.Tensor:
        # (batch, slots, tokens, dim) -> (batch, slots, enc_dim)
        batch, slots, tokens, dim = emails.shape
        flat = encoder(emails.reshape(batch * slots, tokens, dim))
        return flat.reshape(batch, slots, -1)


class BatchedCNN(_PowerModelBase):
    """Each direction's emails concatenated into one document and CNN-encoded."""

    def forward(self, doc_a, doc_b, structural, absent):
        return self.fuse_and_score(
            self.encoder_a(doc_a), self.encoder_b(doc_b), structural, absent
        )


class SeparatedCNN(_PowerModelBase):
    """Per-email CNN encodings combined by an order-invariant reduction."""

    def forward(self, emails_a, mask_a, emails_b, mask_b, structural, absent):
        merge = masked_mean if self.config.email_merge == "mean" else masked_max
        enc_a = merge(self._encode_emails(emails_a, self.encoder_a), mask_a)
        enc_b = merge(self._encode_emails(emails_b, self.encoder_b), mask_b)
        return self.fuse_and_score(enc_a, enc_b, structural, absent)


class SequentialCNNLSTM(_PowerModelBase):
    """Per-email CNN encodings aggregated chronologically by an LSTM."""

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        self.lstm_a = SequenceAggregator(config.encoder_out_dim, config.lstm_hidden)
        self.lstm_b = self.lstm_a if config.shared_encoder else SequenceAggregator(
            config.encoder_out_dim, config.lstm_hidden
        )

    def forward(self, emails_a, mask_a, emails_b, mask_b, structural, absent):
        enc_a = self.lstm_a(self._encode_emails(emails_a, self.encoder_a), mask_a)
        enc_b = self.lstm_b(self._encode_emails(emails_b, self.encoder_b), mask_b)
        return self.fuse_and_score(enc_a, enc_b, structural, absent)


_MODEL_CLASSES = {
    BATCHED_CNN: BatchedCNN,
    SEPARATED_CNN: SeparatedCNN,
    SEQUENTIAL_CNN_LSTM: SequentialCNNLSTM,
}


def build_model(config: ModelConfig) -> _PowerModelBase:
    """Construct a freshly initialized model; init is deterministic under config.seed."""
    torch.manual_seed(config.seed)
    return _MODEL_CLASSES[config.architecture](config)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


# ---------------------------------------------------------------------------
# Instance tensorization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DirectionInput:
    """Model-ready view of one direction of a dyad.

    ``email_matrices`` holds token-id rows (slots, cap) padded with all-pad
    rows up to max_emails_per_direction; ``presence`` marks the real emails.
    """

    email_ids: np.ndarray  # (slots, cap) int32
    presence: np.ndarray  # (slots,) float32
    structural: StructuralFeatures
    absent: bool


class InstanceTensorizer:
    """Turns DyadInstances into the tensors each architecture consumes.

    Token-id sequences are cached per email id; embedding lookup happens at
    batch time through the table's id matrix, so instances stay cheap to hold.
    """

    def __init__(
        self,
        table: EmbeddingTable,
        config: ModelConfig,
        standardizer: FeatureStandardizer | None = None,
    ):
        if table.dimension != config.embedding_dim:
            raise ConfigurationError(
                f"embedding table dimension {table.dimension} does not match "
                f"model embedding_dim {config.embedding_dim}"
            )
        self.table = table
        self.config = config
        self.standardizer = standardizer or FeatureStandardizer.identity()
        self._matrix = table.matrix()
        self._token_cache: dict[str, list[str]] = {}

    def _tokens(self, email: Email) -> list[str]:
        cached = self._token_cache.get(email.id)
        if cached is None:
            cached = tokenize(email.text())
            self._token_cache[email.id] = cached
        return cached

    def direction_input(self, emails: Sequence[Email]) -> DirectionInput:
        """Most recent ``max_emails_per_direction`` emails, original order kept."""
        cfg = self.config
        kept = list(emails)[-cfg.max_emails_per_direction :]
        ids = np.zeros((cfg.max_emails_per_direction, cfg.email_cap), dtype=np.int32)
        presence = np.zeros(cfg.max_emails_per_direction, dtype=np.float32)
        for slot, email in enumerate(kept):
            ids[slot] = self.table.encode(self._tokens(email), cfg.email_cap)
            presence[slot] = 1.0
        return DirectionInput(
            email_ids=ids,
            presence=presence,
            structural=structural_features(emails),
            absent=not emails,
        )

    def document_ids(self, emails: Sequence[Email]) -> np.ndarray:
        """Concatenated per-email tokens with separator tokens, capped as one document."""
        cfg = self.config
        tokens: list[str] = []
        for i, email in enumerate(emails):
            if i > 0:
                tokens.append(SEP_TOKEN)
            tokens.extend(self._tokens(email)[: cfg.email_cap])
        return self.table.encode(tokens, cfg.doc_cap)

    def encode_instance(self, inst: DyadInstance) -> dict:
        if not inst.emails_a_to_b and not inst.emails_b_to_a:
            raise DataContractError(f"instance {inst.id} has no emails; refusing to score")
        dir_a = self.direction_input(inst.emails_a_to_b)
        dir_b = self.direction_input(inst.emails_b_to_a)
        structural = np.concatenate(
            [self.standardizer.transform(dir_a.structural), self.standardizer.transform(dir_b.structural)]
        )
        absent = np.asarray([float(dir_a.absent), float(dir_b.absent)], dtype=np.float32)
        encoded = {
            "id": inst.id,
            "label": float(inst.label),
            "structural": structural.astype(np.float32),
            "absent": absent,
        }
        if self.config.architecture == BATCHED_CNN:
            encoded["doc_a"] = self.document_ids(inst.emails_a_to_b)
            encoded["doc_b"] = self.document_ids(inst.emails_b_to_a)
        else:
            encoded["emails_a"] = dir_a.email_ids
            encoded["mask_a"] = dir_a.presence
            encoded["emails_b"] = dir_b.email_ids
            encoded["mask_b"] = dir_b.presence
        return encoded

    def _embed_ids(self, ids: np.ndarray) -> torch.Tensor:
        return torch.from_numpy(self._matrix[ids])

    def batch(self, instances: Sequence[DyadInstance]) -> dict[str, torch.Tensor | list[str]]:
        """Stack instances into the keyword tensors of the configured architecture."""
        encoded = [self.encode_instance(inst) for inst in instances]
        out: dict[str, torch.Tensor | list[str]] = {
            "ids": [e["id"] for e in encoded],
            "labels": torch.tensor([e["label"] for e in encoded], dtype=torch.float32),
            "structural": torch.from_numpy(np.stack([e["structural"] for e in encoded])),
            "absent": torch.from_numpy(np.stack([e["absent"] for e in encoded])),
        }
        if self.config.architecture == BATCHED_CNN:
            out["doc_a"] = self._embed_ids(np.stack([e["doc_a"] for e in encoded]))
            out["doc_b"] = self._embed_ids(np.stack([e["doc_b"] for e in encoded]))
        else:
            out["emails_a"] = self._embed_ids(np.stack([e["emails_a"] for e in encoded]))
            out["mask_a"] = torch.from_numpy(np.stack([e["mask_a"] for e in encoded]))
            out["emails_b"] = self._embed_ids(np.stack([e["emails_b"] for e in encoded]))
            out["mask_b"] = torch.from_numpy(np.stack([e["mask_b"] for e in encoded]))
        return out


def model_inputs(batch: Mapping[str, torch.Tensor | list[str]]) -> dict[str, torch.Tensor]:
    return {k: v for k, v in batch.items() if k not in ("ids", "labels")}  # type: ignore[return-value]


def predict_instance(
    model: _PowerModelBase, inst: DyadInstance, tensorizer: InstanceTensorizer
) -> PowerScore:
    model.eval()
    with torch.no_grad():
        batch = tensorizer.batch([inst])
        prob = model(**model_inputs(batch))
    return PowerScore.from_probability(float(prob[0]))


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_CHECKPOINT_FORMAT = "powerdyad-checkpoint"
_CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    """Versioned binary container for a trained model.

    Holds the config record, named parameter tensors, the fingerprint of the
    embedding table used in training, the training seed and the structural
    standardizer. Contains no timestamps, so equal runs serialize to equal
    bytes.
    """

    config: ModelConfig
    tensors: dict[str, np.ndarray]
    train_seed: int
    embedding_fingerprint: str
    standardizer: FeatureStandardizer

    @classmethod
    def capture(
        cls,
        model: _PowerModelBase,
        train_seed: int,
        embedding_fingerprint: str,
        standardizer: FeatureStandardizer,
    ) -> "Checkpoint":
        tensors = {
            name: param.detach().cpu().numpy().copy()
            for name, param in model.state_dict().items()
        }
        return cls(
            config=model.config,
            tensors=tensors,
            train_seed=train_seed,
            embedding_fingerprint=embedding_fingerprint,
            standardizer=standardizer,
        )

    def to_bytes(self) -> bytes:
        names = sorted(self.tensors)
        little = {name: self.tensors[name].astype(self.tensors[name].dtype.newbyteorder("<")) for name in names}
        header = {
            "format": _CHECKPOINT_FORMAT,
            "version": _CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "train_seed": self.train_seed,
            "embedding_fingerprint": self.embedding_fingerprint,
            "standardizer": self.standardizer.to_dict(),
            "tensors": [
                {"name": name, "dtype": little[name].dtype.str, "shape": list(little[name].shape)}
                for name in names
            ],
        }
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n"
        buffers = b"".join(np.ascontiguousarray(little[name]).tobytes() for name in names)
        return blob + buffers

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        newline = raw.index(b"\n")
        try:
            header = json.loads(raw[:newline].decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise DataContractError("not a checkpoint file") from exc
        if header.get("format") != _CHECKPOINT_FORMAT:
            raise DataContractError("not a checkpoint file")
        if header.get("version") != _CHECKPOINT_VERSION:
            raise DataContractError(f"unsupported checkpoint version {header.get('version')}")
        config = ModelConfig.from_dict(header["config"])
        tensors: dict[str, np.ndarray] = {}
        offset = newline + 1
        for spec in header["tensors"]:
            dtype = np.dtype(spec["dtype"])
            shape = tuple(spec["shape"])
            count = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(shape)
            tensors[spec["name"]] = arr.copy()
            offset += dtype.itemsize * count
        return cls(
            config=config,
            tensors=tensors,
            train_seed=header["train_seed"],
            embedding_fingerprint=header["embedding_fingerprint"],
            standardizer=FeatureStandardizer.from_dict(header["standardizer"]),
        )

    def save(self, path: Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: Path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())

    def restore_model(self) -> _PowerModelBase:
        """Rebuild the model and load weights, verifying names and shapes."""
        model = build_model(self.config)
        expected = model.state_dict()
        if set(expected) != set(self.tensors):
            raise DataContractError(
                "checkpoint tensors do not match the configured architecture"
            )
        state = {}
        for name, ref in expected.items():
            arr = self.tensors[name]
            if tuple(arr.shape) != tuple(ref.shape):
                raise DataContractError(
                    f"checkpoint tensor {name} has shape {tuple(arr.shape)}, "
                    f"config implies {tuple(ref.shape)}"
                )
            state[name] = torch.from_numpy(arr.copy())
        model.load_state_dict(state)
        return model
