"""Synthetic corpora and fixtures.

The licensed annotated corpus cannot be redistributed, so the toolkit ships
generators that exercise every pipeline stage without it: a small hand-built
fixture corpus in the on-disk interchange formats, a dataset with planted
lexical power markers (linearly separable), and an order-contrast dataset
whose label is encoded only in the temporal order of two marker emails, which
separates order-sensitive from order-invariant aggregation.
"""

from __future__ import annotations

import hashlib
import json
import random
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import GROUPED, PER_THREAD, DyadInstance, Email
from .features import EmbeddingTable

_T0 = datetime(2001, 3, 1, 9, 0, tzinfo=timezone.utc)

NEUTRAL_VOCAB = (
    "meeting", "schedule", "report", "project", "update", "budget", "draft",
    "call", "review", "numbers", "office", "friday", "contract", "team",
    "notes", "agenda", "client", "quarter", "plan", "file",
)
SUPERIOR_MARKERS = ("proceed", "immediately", "approve")
SUBORDINATE_MARKERS = ("awaiting", "status", "request")
ORDER_VOCAB = ("alpha", "beta", "noted")


def _email(eid: str, thread_id: str, sender: str, recipient: str, minute: int, text: str) -> Email:
    return Email(
        id=eid,
        thread_id=thread_id,
        sender=sender,
        recipients=(recipient,),
        timestamp=_T0 + timedelta(minutes=minute),
        body=text,
        masked_body=text,
    )


def build_embedding_table(vocab: Sequence[str], dimension: int = 16, seed: int = 0) -> EmbeddingTable:
    """Deterministic random embeddings for a synthetic vocabulary."""
    vectors = {}
    for token in sorted(set(vocab)):
        digest = hashlib.sha256(f"synth-embedding:{seed}:{token}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        vectors[token] = (rng.standard_normal(dimension) * 0.5).astype(np.float32)
    return EmbeddingTable(dimension=dimension, vectors=vectors)


def write_embedding_file(path: Path, table: EmbeddingTable) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for token in sorted(table.vectors):
            values = " ".join(repr(float(x)) for x in table.vectors[token])
            fh.write(f"{token} {values}\n")


# ---------------------------------------------------------------------------
# Planted lexical signal (linearly separable)
# ---------------------------------------------------------------------------


def _marker_text(rng: random.Random, markers: Sequence[str], n_filler: int) -> str:
    words = [rng.choice(NEUTRAL_VOCAB) for _ in range(n_filler)]
    words.extend(markers)
    rng.shuffle(words)
    return " ".join(words)


def make_signal_instances(
    count: int, seed: int = 0, formulation: str = GROUPED, emails_per_direction: int = 2
) -> list[DyadInstance]:
    """Dyads where the superior's emails carry superior marker tokens.

    Labels alternate so any contiguous slice stays balanced.
    """
    rng = random.Random(seed)
    instances = []
    for i in range(count):
        label = i % 2
        pa, pb = f"sig{i}a", f"sig{i}b"
        thread_id = f"sigt{i}"
        markers_a = SUPERIOR_MARKERS if label == 1 else SUBORDINATE_MARKERS
        markers_b = SUBORDINATE_MARKERS if label == 1 else SUPERIOR_MARKERS
        a_to_b = tuple(
            _email(f"sig{i}-a{j}", thread_id, pa, pb, 2 * j,
                   _marker_text(rng, markers_a, n_filler=4))
            for j in range(emails_per_direction)
        )
        b_to_a = tuple(
            _email(f"sig{i}-b{j}", thread_id, pb, pa, 2 * j + 1,
                   _marker_text(rng, markers_b, n_filler=4))
            for j in range(emails_per_direction)
        )
        instances.append(
            DyadInstance(
                id=f"sig::{i}",
                formulation=formulation,
                thread_id=thread_id if formulation == PER_THREAD else None,
                person_a=pa,
                person_b=pb,
                emails_a_to_b=a_to_b,
                emails_b_to_a=b_to_a,
                label=label,
            )
        )
    return instances


def signal_vocab() -> list[str]:
    return sorted(set(NEUTRAL_VOCAB) | set(SUPERIOR_MARKERS) | set(SUBORDINATE_MARKERS))


# ---------------------------------------------------------------------------
# Order-contrast dataset
# ---------------------------------------------------------------------------


def make_order_instances(count: int, seed: int = 0) -> list[DyadInstance]:
    """Dyads whose label is encoded only in the temporal order of two emails.

    Each A-to-B direction holds the same two fixed emails; person A is the
    superior exactly when the alpha email precedes the beta email. Content
    multisets and structural features are identical across classes, so any
    order-invariant aggregation carries zero label information, while an
    order-preserving aggregation separates the classes completely.
    """
    del seed  # content is fixed; labels alternate deterministically
    x_text = "alpha alpha alpha alpha"
    y_text = "beta beta beta beta"
    instances = []
    for i in range(count):
        label = i % 2
        pa, pb = f"ord{i}a", f"ord{i}b"
        thread_id = f"ordt{i}"
        first, second = (x_text, y_text) if label == 1 else (y_text, x_text)
        a_to_b = (
            _email(f"ord{i}-a0", thread_id, pa, pb, 0, first),
            _email(f"ord{i}-a1", thread_id, pa, pb, 5, second),
        )
        b_to_a = (_email(f"ord{i}-b0", thread_id, pb, pa, 2, "noted noted"),)
        instances.append(
            DyadInstance(
                id=f"ord::{i}",
                formulation=PER_THREAD,
                thread_id=thread_id,
                person_a=pa,
                person_b=pb,
                emails_a_to_b=a_to_b,
                emails_b_to_a=b_to_a,
                label=label,
            )
        )
    return instances


def order_vocab() -> list[str]:
    return sorted(ORDER_VOCAB)


# ---------------------------------------------------------------------------
# Hand-built fixture corpus in the interchange formats
# ---------------------------------------------------------------------------

# Three threads, four people. Dominance: alice > bob, bob > carol,
# alice > carol. dave and erin interact in thread t3 but are absent from the
# dominance file (peers), so their pair is excluded.
#
# Related interacting pairs by thread (per-thread instances, 4 total):
#   t1: (alice, bob)
#   t2: (alice, bob), (bob, carol)
#   t3: (alice, carol)
# Grouped instances (3): (alice, bob), (bob, carol), (alice, carol).

_FIXTURE_MESSAGES = [
    {
        "id": "m1", "thread_id": "t1", "sender": "alice", "recipients": ["bob"],
        "timestamp": "2001-05-01T09:00:00+00:00",
        "body": "Hi Bob,\nPlease send the Q3 report by Friday.\nThanks,\nAlice",
    },
    {
        "id": "m2", "thread_id": "t1", "sender": "bob", "recipients": ["alice"],
        "timestamp": "2001-05-01T10:30:00+00:00",
        "body": "Hello Alice,\nThe report is nearly completed.\nRegards,\nBob",
    },
    {
        "id": "m3", "thread_id": "t1", "sender": "alice", "recipients": ["bob"],
        "timestamp": "2001-05-01T11:00:00+00:00",
        "body": "Good. I would like to see the results before the meeting.",
    },
    {
        "id": "m4", "thread_id": "t2", "sender": "bob", "recipients": ["carol", "alice"],
        "timestamp": "2001-05-02T09:15:00+00:00",
        "body": "Carol,\nWe need to end all payments by December.\nBob",
    },
    {
        "id": "m5", "thread_id": "t2", "sender": "carol", "recipients": ["bob"],
        "timestamp": "2001-05-02T09:45:00+00:00",
        "body": "Understood. Awaiting your confirmation on the list of vendors.",
    },
    {
        "id": "m6", "thread_id": "t3", "sender": "carol", "recipients": ["alice", "dave"],
        "timestamp": "2001-05-03T14:00:00+00:00",
        "body": "Here is the draft letter for your consideration.",
    },
    {
        "id": "m7", "thread_id": "t3", "sender": "dave", "recipients": ["erin"],
        "timestamp": "2001-05-03T15:00:00+00:00",
        "body": "Erin, can you check the ftp site while I am away?",
    },
]

_FIXTURE_DOMINANCE = [("alice", "bob"), ("bob", "carol"), ("alice", "carol")]

FIXTURE_THREAD_COUNT = 3
FIXTURE_PER_THREAD_INSTANCES = 4
FIXTURE_GROUPED_INSTANCES = 3


def write_fixture_corpus(out_dir: Path) -> Path:
    """Materialize the fixture corpus in the on-disk interchange formats."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "messages.jsonl").open("w", encoding="utf-8") as fh:
        for record in _FIXTURE_MESSAGES:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    with (out_dir / "dominance.tsv").open("w", encoding="utf-8") as fh:
        for superior, subordinate in _FIXTURE_DOMINANCE:
            fh.write(f"{superior}\t{subordinate}\n")
    return out_dir


def fixture_vocab() -> list[str]:
    tokens = set()
    from .features import tokenize

    for record in _FIXTURE_MESSAGES:
        tokens.update(tokenize(record["body"]))
    return sorted(tokens)
