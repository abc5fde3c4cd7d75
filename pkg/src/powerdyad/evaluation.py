"""Evaluation reports: accuracy, per-instance predictions and exemplars.

One report covers one (model, formulation, split) cell. Reports serialize to
line-delimited records for machines and a fixed-width table for humans; the
machine form round-trips exactly. Accuracy is always correct rows over total
rows, computed here and nowhere else, so training-time dev accuracy and CLI
evaluation can never disagree.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from .corpus import DyadInstance
from .errors import DataContractError, UsageError
from .models import InstanceTensorizer, model_inputs

EXEMPLAR_CATEGORIES = (
    "most_confident_correct",
    "least_confident_correct",
    "most_confident_incorrect",
    "least_confident_incorrect",
)

EVAL_BATCH_SIZE = 64  # fixed so training-time and CLI evaluation batch identically

_SNIPPET_CHARS = 160


@dataclass(frozen=True)
class PredictionRow:
    instance_id: str
    gold: int
    predicted: int
    probability: float


@dataclass(frozen=True)
class ExemplarRow:
    category: str
    rank: int
    instance_id: str
    gold: int
    predicted: int
    probability: float
    snippet: str


@dataclass
class EvalReport:
    model_name: str
    formulation: str
    split: str
    accuracy: float
    rows: list[PredictionRow]
    exemplars: list[ExemplarRow] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    # -- machine-readable form (line-delimited, exact round trip) ----------

    def to_json_lines(self) -> str:
        lines = [
            json.dumps(
                {
                    "kind": "header",
                    "model": self.model_name,
                    "formulation": self.formulation,
                    "split": self.split,
                    "accuracy": self.accuracy,
                    "metadata": self.metadata,
                },
                sort_keys=True,
            )
        ]
        for row in self.rows:
            lines.append(
                json.dumps(
                    {
                        "kind": "row",
                        "id": row.instance_id,
                        "gold": row.gold,
                        "pred": row.predicted,
                        "probability": row.probability,
                    },
                    sort_keys=True,
                )
            )
        for ex in self.exemplars:
            payload = {"kind": "exemplar"}
            payload.update(asdict(ex))
            lines.append(json.dumps(payload, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_json_lines(cls, text: str) -> "EvalReport":
        header = None
        rows: list[PredictionRow] = []
        exemplars: list[ExemplarRow] = []
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.get("kind")
            if kind == "header":
                header = rec
            elif kind == "row":
                rows.append(
                    PredictionRow(
                        instance_id=rec["id"],
                        gold=rec["gold"],
                        predicted=rec["pred"],
                        probability=rec["probability"],
                    )
                )
            elif kind == "exemplar":
                rec.pop("kind")
                exemplars.append(ExemplarRow(**rec))
            else:
                raise DataContractError(f"unknown report record kind {kind!r}")
        if header is None:
            raise DataContractError("report has no header record")
        return cls(
            model_name=header["model"],
            formulation=header["formulation"],
            split=header["split"],
            accuracy=header["accuracy"],
            rows=rows,
            exemplars=exemplars,
            metadata=header.get("metadata", {}),
        )

    # -- human-readable form ------------------------------------------------

    def to_text(self) -> str:
        out = [
            f"model: {self.model_name}   formulation: {self.formulation}   split: {self.split}",
            f"instances: {len(self.rows)}   accuracy: {self.accuracy:.4f}",
            "",
            format_summary_table({(self.model_name, self.formulation): self.accuracy}),
        ]
        if self.exemplars:
            out.append("")
            out.append("exemplars (mechanical selection by |p - 0.5|):")
            for ex in self.exemplars:
                out.append(
                    f"  [{ex.category} #{ex.rank}] id={ex.instance_id} "
                    f"gold={ex.gold} pred={ex.predicted} p={ex.probability:.4f}"
                )
                out.append(f"    {ex.snippet}")
        return "\n".join(out) + "\n"

    def save(self, prefix: Path) -> tuple[Path, Path]:
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        jsonl = prefix.with_suffix(".jsonl")
        txt = prefix.with_suffix(".txt")
        jsonl.write_text(self.to_json_lines(), encoding="utf-8")
        txt.write_text(self.to_text(), encoding="utf-8")
        return jsonl, txt


def exact_accuracy(rows: Sequence[PredictionRow]) -> float:
    if not rows:
        raise DataContractError("cannot compute accuracy of an empty report")
    return sum(1 for r in rows if r.gold == r.predicted) / len(rows)


def _snippet(inst: DyadInstance) -> str:
    emails = sorted(
        inst.emails_a_to_b + inst.emails_b_to_a, key=lambda e: (e.timestamp, e.id)
    )
    text = emails[0].text().replace("\n", " / ") if emails else ""
    return text[:_SNIPPET_CHARS]


def select_exemplars(
    rows: Sequence[PredictionRow],
    instances_by_id: Mapping[str, DyadInstance],
    k: int = 5,
) -> list[ExemplarRow]:
    """Top-k most and least confident rows, correct and incorrect.

    Confidence is |probability - 0.5|; ties break on instance id so the
    selection is deterministic.
    """
    correct = [r for r in rows if r.gold == r.predicted]
    incorrect = [r for r in rows if r.gold != r.predicted]
    buckets = {
        "most_confident_correct": sorted(
            correct, key=lambda r: (-abs(r.probability - 0.5), r.instance_id)
        ),
        "least_confident_correct": sorted(
            correct, key=lambda r: (abs(r.probability - 0.5), r.instance_id)
        ),
        "most_confident_incorrect": sorted(
            incorrect, key=lambda r: (-abs(r.probability - 0.5), r.instance_id)
        ),
        "least_confident_incorrect": sorted(
            incorrect, key=lambda r: (abs(r.probability - 0.5), r.instance_id)
        ),
    }
    out: list[ExemplarRow] = []
    for category in EXEMPLAR_CATEGORIES:
        for rank, row in enumerate(buckets[category][:k], start=1):
            inst = instances_by_id.get(row.instance_id)
            out.append(
                ExemplarRow(
                    category=category,
                    rank=rank,
                    instance_id=row.instance_id,
                    gold=row.gold,
                    predicted=row.predicted,
                    probability=row.probability,
                    snippet=_snippet(inst) if inst is not None else "",
                )
            )
    return out


# ---------------------------------------------------------------------------
# Scoring neural models
# ---------------------------------------------------------------------------


def predict_probabilities(
    model, instances: Sequence[DyadInstance], tensorizer: InstanceTensorizer
) -> np.ndarray:
    """Inference-mode probabilities, batched at the fixed evaluation size."""
    model.eval()
    probs: list[float] = []
    with torch.no_grad():
        for start in range(0, len(instances), EVAL_BATCH_SIZE):
            batch = tensorizer.batch(instances[start : start + EVAL_BATCH_SIZE])
            out = model(**model_inputs(batch))
            probs.extend(float(p) for p in out)
    return np.asarray(probs, dtype=np.float64)


def rows_from_probabilities(
    instances: Sequence[DyadInstance], probabilities: Sequence[float]
) -> list[PredictionRow]:
    rows = []
    for inst, prob in zip(instances, probabilities):
        rows.append(
            PredictionRow(
                instance_id=inst.id,
                gold=inst.label,
                predicted=1 if prob >= 0.5 else 0,
                probability=float(prob),
            )
        )
    return rows


def split_accuracy(model, instances: Sequence[DyadInstance], tensorizer: InstanceTensorizer) -> float:
    """The accuracy number training reports; identical to a saved report's."""
    probs = predict_probabilities(model, instances, tensorizer)
    return exact_accuracy(rows_from_probabilities(instances, probs))


def evaluate_model(
    model,
    instances: Sequence[DyadInstance],
    tensorizer: InstanceTensorizer,
    model_name: str,
    split: str,
    exemplar_k: int = 5,
    metadata: Mapping | None = None,
) -> EvalReport:
    if not instances:
        raise DataContractError("cannot evaluate on an empty instance list")
    probs = predict_probabilities(model, instances, tensorizer)
    rows = rows_from_probabilities(instances, probs)
    by_id = {inst.id: inst for inst in instances}
    return EvalReport(
        model_name=model_name,
        formulation=instances[0].formulation,
        split=split,
        accuracy=exact_accuracy(rows),
        rows=rows,
        exemplars=select_exemplars(rows, by_id, k=exemplar_k),
        metadata=dict(metadata or {}),
    )


def build_report(
    model_name: str,
    formulation: str,
    split: str,
    instances: Sequence[DyadInstance],
    probabilities: Sequence[float],
    exemplar_k: int = 5,
    metadata: Mapping | None = None,
) -> EvalReport:
    """Report from externally computed probabilities (used by the baseline)."""
    rows = rows_from_probabilities(instances, probabilities)
    by_id = {inst.id: inst for inst in instances}
    return EvalReport(
        model_name=model_name,
        formulation=formulation,
        split=split,
        accuracy=exact_accuracy(rows),
        rows=rows,
        exemplars=select_exemplars(rows, by_id, k=exemplar_k),
        metadata=dict(metadata or {}),
    )


# ---------------------------------------------------------------------------
# Merged summaries (accuracy grid over models x formulations)
# ---------------------------------------------------------------------------


def merge_reports(reports: Sequence[EvalReport]) -> dict[tuple[str, str], float]:
    if not reports:
        raise UsageError("no reports to merge")
    grid: dict[tuple[str, str], float] = {}
    for report in reports:
        key = (report.model_name, report.formulation)
        if key in grid:
            raise DataContractError(
                f"duplicate report for model={key[0]!r} formulation={key[1]!r}"
            )
        grid[key] = report.accuracy
    return grid


def format_summary_table(grid: Mapping[tuple[str, str], float]) -> str:
    """Fixed-width accuracy table; each model's best formulation is starred."""
    models = sorted({m for m, _ in grid})
    formulations = sorted({f for _, f in grid})
    width = max([len("model")] + [len(m) for m in models]) + 2
    col = max([10] + [len(f) + 2 for f in formulations])
    header = "model".ljust(width) + "".join(f.rjust(col) for f in formulations)
    lines = [header, "-" * len(header)]
    for model in models:
        cells = []
        accs = {f: grid.get((model, f)) for f in formulations}
        present = {f: a for f, a in accs.items() if a is not None}
        best = max(present.values()) if present else None
        for f in formulations:
            a = accs[f]
            if a is None:
                cells.append("-".rjust(col))
            else:
                text = f"*{100 * a:.1f}*" if a == best and len(present) > 1 else f"{100 * a:.1f}"
                cells.append(text.rjust(col))
        lines.append(model.ljust(width) + "".join(cells))
    return "\n".join(lines)


def summary_json_lines(grid: Mapping[tuple[str, str], float]) -> str:
    lines = []
    for (model, formulation) in sorted(grid):
        lines.append(
            json.dumps(
                {"model": model, "formulation": formulation, "accuracy": grid[(model, formulation)]},
                sort_keys=True,
            )
        )
    return "\n".join(lines) + "\n"


def parse_summary_json_lines(text: str) -> dict[tuple[str, str], float]:
    grid: dict[tuple[str, str], float] = {}
    for line in text.splitlines():
        if line.strip():
            rec = json.loads(line)
            grid[(rec["model"], rec["formulation"])] = rec["accuracy"]
    return grid


def canonical_json_bytes(payload: Mapping, exclude: Sequence[str] = ("wall_time", "created_at")) -> bytes:
    """Canonical bytes of a JSON record with timestamp-like fields removed.

    Used to compare run outputs for the determinism contract, which excludes
    timestamps.
    """

    def strip(obj):
        if isinstance(obj, dict):
            return {k: strip(v) for k, v in obj.items() if k not in exclude}
        if isinstance(obj, list):
            return [strip(v) for v in obj]
        return obj

    return json.dumps(strip(dict(payload)), sort_keys=True, separators=(",", ":")).encode("utf-8")
