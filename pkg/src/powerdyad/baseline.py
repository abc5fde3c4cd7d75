"""Linear max-margin baseline over word-ngram counts of per-direction text.

Each instance's A-to-B and B-to-A texts are concatenated per direction and
vectorized into two separate ngram blocks (direction-tagged feature space).
A hinge-loss linear classifier is trained on the train split with the
regularization strength selected on dev. For the grouped formulation the two
structural features per direction are appended, standardized with train-split
statistics, keeping the comparison with the neural models feature-fair.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse
from sklearn.svm import LinearSVC

from .corpus import GROUPED, DyadInstance
from .errors import ConfigurationError, DataContractError
from .features import FeatureStandardizer, structural_features, tokenize

_MODEL_FORMAT = "powerdyad-baseline"
_MODEL_VERSION = 1


@dataclass(frozen=True)
class BaselineConfig:
    n_min: int = 1
    n_max: int = 2
    max_features: int = 50_000
    weighting: str = "count"  # count | binary
    include_structural: bool | None = None  # None: on for grouped, off for per_thread
    c_grid: tuple[float, ...] = (0.01, 0.1, 1.0, 10.0)
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n_min <= self.n_max:
            raise ConfigurationError("need 1 <= n_min <= n_max")
        if self.weighting not in ("count", "binary"):
            raise ConfigurationError(f"unknown weighting {self.weighting!r}")
        if self.max_features < 1:
            raise ConfigurationError("max_features must be positive")
        if not self.c_grid:
            raise ConfigurationError("c_grid must be non-empty")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["c_grid"] = list(self.c_grid)
        return data

    @classmethod
    def from_dict(cls, data: Mapping) -> "BaselineConfig":
        kwargs = dict(data)
        if "c_grid" in kwargs:
            kwargs["c_grid"] = tuple(kwargs["c_grid"])
        return cls(**kwargs)


class NgramVectorizer:
    """Word-ngram counter with a train-split-fit vocabulary.

    Transforming unseen ngrams is a no-op: they simply contribute nothing.
    """

    def __init__(self, n_min: int = 1, n_max: int = 2, max_features: int = 50_000,
                 weighting: str = "count"):
        self.n_min = n_min
        self.n_max = n_max
        self.max_features = max_features
        self.weighting = weighting
        self.vocabulary: dict[str, int] = {}

    def _ngrams(self, tokens: Sequence[str]) -> Iterable[str]:
        for n in range(self.n_min, self.n_max + 1):
            for i in range(len(tokens) - n + 1):
                yield " ".join(tokens[i : i + n])

    def fit(self, token_lists: Iterable[Sequence[str]]) -> "NgramVectorizer":
        counts: Counter = Counter()
        for tokens in token_lists:
            counts.update(self._ngrams(tokens))
        # Most frequent first; lexicographic tie-break keeps the fit deterministic.
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[: self.max_features]
        kept = sorted(ngram for ngram, _ in ranked)
        self.vocabulary = {ngram: idx for idx, ngram in enumerate(kept)}
        return self

    @property
    def width(self) -> int:
        return len(self.vocabulary)

    def transform(self, tokens: Sequence[str]) -> sparse.csr_matrix:
        if not self.vocabulary:
            raise DataContractError("vectorizer not fitted")
        cols: Counter = Counter()
        for ngram in self._ngrams(tokens):
            idx = self.vocabulary.get(ngram)
            if idx is not None:
                cols[idx] += 1
        indices = sorted(cols)
        data = [1.0 if self.weighting == "binary" else float(cols[i]) for i in indices]
        return sparse.csr_matrix(
            (data, (np.zeros(len(indices), dtype=np.int32), indices)),
            shape=(1, self.width),
        )


def _direction_tokens(emails) -> list[str]:
    tokens: list[str] = []
    for email in emails:
        tokens.extend(tokenize(email.text()))
    return tokens


@dataclass
class PairFeaturizer:
    """Direction-tagged ngram blocks, optionally followed by structural features."""

    vectorizer: NgramVectorizer
    include_structural: bool
    standardizer: FeatureStandardizer = field(default_factory=FeatureStandardizer.identity)

    @classmethod
    def fit(cls, instances: Sequence[DyadInstance], config: BaselineConfig) -> "PairFeaturizer":
        include_structural = config.include_structural
        if include_structural is None:
            include_structural = bool(instances) and instances[0].formulation == GROUPED
        vectorizer = NgramVectorizer(
            n_min=config.n_min,
            n_max=config.n_max,
            max_features=config.max_features,
            weighting=config.weighting,
        )
        texts = []
        for inst in instances:
            texts.append(_direction_tokens(inst.emails_a_to_b))
            texts.append(_direction_tokens(inst.emails_b_to_a))
        vectorizer.fit(texts)
        standardizer = (
            FeatureStandardizer.fit(instances) if include_structural else FeatureStandardizer.identity()
        )
        return cls(vectorizer=vectorizer, include_structural=include_structural,
                   standardizer=standardizer)

    def featurize_pair(self, inst: DyadInstance) -> sparse.csr_matrix:
        block_a = self.vectorizer.transform(_direction_tokens(inst.emails_a_to_b))
        block_b = self.vectorizer.transform(_direction_tokens(inst.emails_b_to_a))
        parts = [block_a, block_b]
        if self.include_structural:
            extra = np.concatenate(
                [
                    self.standardizer.transform(structural_features(inst.emails_a_to_b)),
                    self.standardizer.transform(structural_features(inst.emails_b_to_a)),
                ]
            ).astype(np.float64)
            parts.append(sparse.csr_matrix(extra.reshape(1, -1)))
        return sparse.hstack(parts, format="csr")

    def matrix(self, instances: Sequence[DyadInstance]) -> sparse.csr_matrix:
        return sparse.vstack([self.featurize_pair(inst) for inst in instances], format="csr")


@dataclass
class BaselineModel:
    featurizer: PairFeaturizer
    config: BaselineConfig
    coef: np.ndarray
    intercept: float
    regularization_c: float

    def margins(self, instances: Sequence[DyadInstance]) -> np.ndarray:
        features = self.featurizer.matrix(instances)
        return np.asarray(features @ self.coef + self.intercept).ravel()

    def predict(self, instances: Sequence[DyadInstance]) -> np.ndarray:
        return (self.margins(instances) >= 0).astype(int)

    def probabilities(self, instances: Sequence[DyadInstance]) -> np.ndarray:
        # Margin squashed through a logistic for report uniformity; the 0.5
        # threshold coincides exactly with the sign of the margin.
        return 1.0 / (1.0 + np.exp(-self.margins(instances)))

    def accuracy(self, instances: Sequence[DyadInstance]) -> float:
        predictions = self.predict(instances)
        gold = np.asarray([inst.label for inst in instances])
        return float((predictions == gold).mean())

    # -- versioned text format ---------------------------------------------

    def save(self, path: Path) -> None:
        lines = [f"{_MODEL_FORMAT} v{_MODEL_VERSION}"]
        lines.append(json.dumps(self.config.to_dict(), sort_keys=True))
        lines.append(
            json.dumps(
                {
                    "include_structural": self.featurizer.include_structural,
                    "standardizer": self.featurizer.standardizer.to_dict(),
                    "intercept": self.intercept,
                    "regularization_c": self.regularization_c,
                    "n_min": self.featurizer.vectorizer.n_min,
                    "n_max": self.featurizer.vectorizer.n_max,
                    "max_features": self.featurizer.vectorizer.max_features,
                    "weighting": self.featurizer.vectorizer.weighting,
                },
                sort_keys=True,
            )
        )
        vocab = self.featurizer.vectorizer.vocabulary
        lines.append(str(len(vocab)))
        for ngram, idx in sorted(vocab.items(), key=lambda kv: kv[1]):
            lines.append(f"{ngram}\t{idx}")
        lines.append(str(self.coef.size))
        for value in self.coef:
            lines.append(repr(float(value)))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "BaselineModel":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != f"{_MODEL_FORMAT} v{_MODEL_VERSION}":
            raise DataContractError(f"{path}: not a baseline model file")
        config = BaselineConfig.from_dict(json.loads(lines[1]))
        meta = json.loads(lines[2])
        vocab_size = int(lines[3])
        vocab: dict[str, int] = {}
        for line in lines[4 : 4 + vocab_size]:
            ngram, idx = line.rsplit("\t", 1)
            vocab[ngram] = int(idx)
        cursor = 4 + vocab_size
        coef_size = int(lines[cursor])
        coef = np.asarray([float(x) for x in lines[cursor + 1 : cursor + 1 + coef_size]])
        vectorizer = NgramVectorizer(
            n_min=meta["n_min"], n_max=meta["n_max"],
            max_features=meta["max_features"], weighting=meta["weighting"],
        )
        vectorizer.vocabulary = vocab
        featurizer = PairFeaturizer(
            vectorizer=vectorizer,
            include_structural=meta["include_structural"],
            standardizer=FeatureStandardizer.from_dict(meta["standardizer"]),
        )
        return cls(
            featurizer=featurizer,
            config=config,
            coef=coef,
            intercept=meta["intercept"],
            regularization_c=meta["regularization_c"],
        )


def train_baseline(
    train_instances: Sequence[DyadInstance],
    dev_instances: Sequence[DyadInstance],
    config: BaselineConfig | None = None,
) -> tuple[BaselineModel, float]:
    """Fit the hinge-loss linear classifier; C is selected on dev accuracy."""
    config = config or BaselineConfig()
    if not train_instances:
        raise DataContractError("empty train split")
    y_train = np.asarray([inst.label for inst in train_instances])
    if len(set(y_train.tolist())) < 2:
        raise DataContractError(
            "degenerate train split: only one class present "
            f"(labels={sorted(set(y_train.tolist()))}, n={len(y_train)})"
        )
    featurizer = PairFeaturizer.fit(train_instances, config)
    x_train = featurizer.matrix(train_instances)
    x_dev = featurizer.matrix(dev_instances)
    y_dev = np.asarray([inst.label for inst in dev_instances])

    best: tuple[float, float, BaselineModel] | None = None
    for c in config.c_grid:
        clf = LinearSVC(C=c, loss="hinge", max_iter=20_000, random_state=config.seed)
        clf.fit(x_train, y_train)
        model = BaselineModel(
            featurizer=featurizer,
            config=config,
            coef=clf.coef_.ravel().copy(),
            intercept=float(clf.intercept_[0]),
            regularization_c=float(c),
        )
        dev_acc = float((model.predict(dev_instances) == y_dev).mean()) if len(y_dev) else 0.0
        # Strict > keeps the smallest C on ties, favouring stronger regularization.
        if best is None or dev_acc > best[0]:
            best = (dev_acc, c, model)
    assert best is not None
    return best[2], best[0]
