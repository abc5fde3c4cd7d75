"""Email corpus ingestion, boilerplate masking, dyad extraction and splits.

The corpus arrives pre-threaded: one JSON record per message in one or more
``*.jsonl`` files, plus a tab-separated dominance file giving ground-truth
superior/subordinate edges. From these the module materializes prediction
instances in two formulations: one instance per (thread, related interacting
pair), or one instance per related pair pooling all their email corpus-wide.
All outputs are deterministic under a seed.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigurationError, DataContractError

logger = logging.getLogger(__name__)

MASK_TOKEN = "<mask>"

PER_THREAD = "per_thread"
GROUPED = "grouped"
FORMULATIONS = (PER_THREAD, GROUPED)

SPLIT_NAMES = ("train", "dev", "test")

MESSAGES_FILENAME = "messages.jsonl"
DOMINANCE_FILENAME = "dominance.tsv"


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Email:
    """One message. ``masked_body`` is absent until masking is applied."""

    id: str
    thread_id: str
    sender: str
    recipients: tuple[str, ...]
    timestamp: datetime
    body: str
    masked_body: str | None = None

    def text(self) -> str:
        """Masked body when available, raw body otherwise."""
        return self.body if self.masked_body is None else self.masked_body

    def to_record(self) -> dict:
        rec = {
            "id": self.id,
            "thread_id": self.thread_id,
            "sender": self.sender,
            "recipients": list(self.recipients),
            "timestamp": self.timestamp.isoformat(),
            "body": self.body,
        }
        if self.masked_body is not None:
            rec["masked_body"] = self.masked_body
        return rec


@dataclass(frozen=True)
class Thread:
    """Time-ordered emails sharing a thread id.

    Emails are sorted ascending by (timestamp, id); the id tie-break makes
    the ordering total and deterministic.
    """

    id: str
    emails: tuple[Email, ...]

    @classmethod
    def build(cls, thread_id: str, emails: Iterable[Email]) -> "Thread":
        ordered = tuple(sorted(emails, key=lambda e: (e.timestamp, e.id)))
        return cls(id=thread_id, emails=ordered)


@dataclass(frozen=True)
class DominanceRecord:
    """One ground-truth superior/subordinate edge from the org hierarchy."""

    superior: str
    subordinate: str


@dataclass(frozen=True)
class DyadInstance:
    """A prediction instance for one ordered participant pair.

    ``label`` is 1 when ``person_a`` is the superior. The (a, b) role
    assignment is randomized at construction under a seed so that label
    marginals sit near 0.5 over any split.
    """

    id: str
    formulation: str
    thread_id: str | None
    person_a: str
    person_b: str
    emails_a_to_b: tuple[Email, ...]
    emails_b_to_a: tuple[Email, ...]
    label: int

    def __post_init__(self):
        if self.formulation not in FORMULATIONS:
            raise DataContractError(f"unknown formulation {self.formulation!r}")
        if (self.thread_id is None) != (self.formulation == GROUPED):
            raise DataContractError("thread_id must be set iff formulation is per_thread")
        if self.person_a == self.person_b:
            raise DataContractError(f"self-pair in instance {self.id}")
        if not self.emails_a_to_b and not self.emails_b_to_a:
            raise DataContractError(f"instance {self.id} has no emails in either direction")
        if self.label not in (0, 1):
            raise DataContractError(f"label must be 0 or 1, got {self.label!r}")

    def pair_key(self) -> tuple[str, str]:
        """Unordered participant pair, sorted for determinism."""
        return tuple(sorted((self.person_a, self.person_b)))  # type: ignore[return-value]

    def flipped(self) -> "DyadInstance":
        """The same dyad with roles and label swapped; always a valid instance."""
        return replace(
            self,
            person_a=self.person_b,
            person_b=self.person_a,
            emails_a_to_b=self.emails_b_to_a,
            emails_b_to_a=self.emails_a_to_b,
            label=1 - self.label,
        )


@dataclass
class SplitManifest:
    """Exhaustive, disjoint assignment of instance ids to train/dev/test."""

    assignments: dict[str, str]
    seed: int | None = None
    source: str = "ratio"

    def split_of(self, instance_id: str) -> str:
        return self.assignments[instance_id]

    def counts(self) -> dict[str, int]:
        c = Counter(self.assignments.values())
        return {name: c.get(name, 0) for name in SPLIT_NAMES}

    def to_tsv(self) -> str:
        lines = [f"{iid}\t{split}" for iid, split in sorted(self.assignments.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_tsv(cls, text: str, source: str = "external") -> "SplitManifest":
        assignments: dict[str, str] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2 or not parts[0] or parts[1] not in SPLIT_NAMES:
                raise DataContractError(f"malformed split manifest line {lineno}: {line!r}")
            if parts[0] in assignments:
                raise DataContractError(f"duplicate instance id in split manifest: {parts[0]}")
            assignments[parts[0]] = parts[1]
        return cls(assignments=assignments, seed=None, source=source)


@dataclass
class IngestReport:
    """Counts of what was parsed and what was skipped, with reasons."""

    messages_parsed: int = 0
    skipped: Counter = field(default_factory=Counter)
    threads_built: int = 0
    dominance_records: int = 0

    def to_dict(self) -> dict:
        return {
            "messages_parsed": self.messages_parsed,
            "skipped": dict(sorted(self.skipped.items())),
            "threads_built": self.threads_built,
            "dominance_records": self.dominance_records,
        }


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------


def _parse_timestamp(raw: str) -> datetime:
    # ISO-8601; a trailing Z is normalized for Python 3.10's fromisoformat.
    ts = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _parse_message_record(raw: str) -> Email:
    try:
        rec = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ValueError(f"unparseable_json: {exc}") from exc
    if not isinstance(rec, dict):
        raise ValueError("unparseable_json: record is not an object")
    for key in ("id", "thread_id", "sender", "body"):
        value = rec.get(key)
        if not isinstance(value, str) or (not value and key != "body"):
            raise ValueError(f"bad_field: {key}")
    recipients = rec.get("recipients")
    if not isinstance(recipients, list) or not all(isinstance(r, str) and r for r in recipients):
        raise ValueError("bad_field: recipients")
    # Self-addressed copies are dropped from the recipient list; an email
    # whose only recipient was its sender carries no dyadic interaction.
    recipients = [r for r in recipients if r != rec["sender"]]
    if not recipients:
        raise ValueError("no_recipients")
    try:
        ts = _parse_timestamp(rec["timestamp"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError("bad_timestamp") from exc
    return Email(
        id=rec["id"],
        thread_id=rec["thread_id"],
        sender=rec["sender"],
        recipients=tuple(recipients),
        timestamp=ts,
        body=rec["body"],
        masked_body=rec.get("masked_body"),
    )


def read_dominance_file(path: Path) -> list[DominanceRecord]:
    """Read `superior<TAB>subordinate` records and validate the relation.

    The relation must be irreflexive and antisymmetric; violations are fatal
    because dominance is ground truth.
    """
    if not path.is_file():
        raise ConfigurationError(f"dominance file not found: {path}")
    records: list[DominanceRecord] = []
    seen: dict[tuple[str, str], int] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise DataContractError(f"malformed dominance record at {path}:{lineno}: {line!r}")
        sup, sub = parts
        if sup == sub:
            raise DataContractError(f"reflexive dominance record at {path}:{lineno}: {sup!r}")
        if (sub, sup) in seen:
            raise DataContractError(
                f"antisymmetry violation at {path}:{lineno}: "
                f"({sup}, {sub}) conflicts with line {seen[(sub, sup)]}"
            )
        if (sup, sub) not in seen:
            seen[(sup, sub)] = lineno
            records.append(DominanceRecord(superior=sup, subordinate=sub))
    return records


def ingest_corpus(source: Path) -> tuple[list[Thread], list[DominanceRecord], IngestReport]:
    """Read a corpus directory into threads plus the dominance relation.

    ``source`` must contain the dominance file and zero or more ``*.jsonl``
    message files. A missing dominance file is a fatal configuration error;
    a malformed individual message is skipped and counted, not fatal.
    """
    source = Path(source)
    if not source.is_dir():
        raise ConfigurationError(f"corpus source is not a directory: {source}")
    dominance = read_dominance_file(source / DOMINANCE_FILENAME)

    report = IngestReport(dominance_records=len(dominance))
    emails_by_thread: dict[str, list[Email]] = defaultdict(list)
    seen_ids: set[str] = set()
    message_files = sorted(source.glob("*.jsonl"))
    if not message_files:
        logger.warning("no message files (*.jsonl) found under %s", source)
    for path in message_files:
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                email = _parse_message_record(line)
            except ValueError as exc:
                reason = str(exc).split(":", 1)[0]
                report.skipped[reason] += 1
                logger.warning("skipping message at %s:%d (%s)", path.name, lineno, exc)
                continue
            if email.id in seen_ids:
                report.skipped["duplicate_id"] += 1
                logger.warning("skipping duplicate message id %r at %s:%d", email.id, path.name, lineno)
                continue
            seen_ids.add(email.id)
            emails_by_thread[email.thread_id].append(email)
            report.messages_parsed += 1

    threads = [Thread.build(tid, emails) for tid, emails in sorted(emails_by_thread.items())]
    report.threads_built = len(threads)
    return threads, dominance, report


# ---------------------------------------------------------------------------
# Boilerplate masking
# ---------------------------------------------------------------------------

_PARAM_RE = re.compile(r"^([km])\s*=\s*(\d+)$")
_SECTION_RE = re.compile(r"^\[(greeting|signature)\]$")


@dataclass(frozen=True)
class MaskingRules:
    """Declarative greeting/signature detector.

    ``greeting_window`` (k) and ``signature_window`` (m) bound where the two
    pattern groups may fire. Line content is replaced wholesale by
    ``mask_token``; line count is always preserved.
    """

    greeting_patterns: tuple[re.Pattern, ...]
    signature_patterns: tuple[re.Pattern, ...]
    greeting_window: int
    signature_window: int
    mask_token: str = MASK_TOKEN

    @classmethod
    def from_text(cls, text: str) -> "MaskingRules":
        params: dict[str, int] = {}
        sections: dict[str, list[re.Pattern]] = {"greeting": [], "signature": []}
        current: str | None = None
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            m = _PARAM_RE.match(line)
            if m:
                params[m.group(1)] = int(m.group(2))
                continue
            m = _SECTION_RE.match(line)
            if m:
                current = m.group(1)
                continue
            if current is None:
                raise ConfigurationError(f"ruleset line {lineno} outside any section: {raw!r}")
            try:
                sections[current].append(re.compile(line))
            except re.error as exc:
                raise ConfigurationError(f"bad pattern at ruleset line {lineno}: {exc}") from exc
        if "k" not in params or "m" not in params:
            raise ConfigurationError("ruleset must define integer parameters k and m")
        return cls(
            greeting_patterns=tuple(sections["greeting"]),
            signature_patterns=tuple(sections["signature"]),
            greeting_window=params["k"],
            signature_window=params["m"],
        )

    @classmethod
    def from_file(cls, path: Path) -> "MaskingRules":
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"masking ruleset not found: {path}")
        return cls.from_text(path.read_text(encoding="utf-8"))

    @classmethod
    def default(cls) -> "MaskingRules":
        text = resources.files("powerdyad").joinpath("rulesets/default.rules").read_text("utf-8")
        return cls.from_text(text)


def default_ruleset_text() -> str:
    return resources.files("powerdyad").joinpath("rulesets/default.rules").read_text("utf-8")


def mask_boilerplate(email: Email, rules: MaskingRules) -> Email:
    """Return the email with greeting/signature lines replaced by the mask token.

    The masked body is always recomputed from ``body``, which makes the
    operation idempotent. Line count is preserved exactly.
    """
    lines = email.body.split("\n")
    n = len(lines)
    out: list[str] = []
    for idx, line in enumerate(lines):
        candidate = line.rstrip("\r")
        masked = False
        if idx < rules.greeting_window:
            masked = any(p.search(candidate) for p in rules.greeting_patterns)
        if not masked and idx >= n - rules.signature_window:
            masked = any(p.search(candidate) for p in rules.signature_patterns)
        out.append(rules.mask_token if masked else line)
    return replace(email, masked_body="\n".join(out))


def mask_thread(thread: Thread, rules: MaskingRules) -> Thread:
    return Thread(id=thread.id, emails=tuple(mask_boilerplate(e, rules) for e in thread.emails))


# ---------------------------------------------------------------------------
# Pair extraction
# ---------------------------------------------------------------------------


def _dominance_lookup(dominance: Sequence[DominanceRecord]) -> dict[tuple[str, str], str]:
    """Map each unordered related pair to its superior; validates the relation."""
    lookup: dict[tuple[str, str], str] = {}
    for rec in dominance:
        if rec.superior == rec.subordinate:
            raise DataContractError(f"reflexive dominance record: {rec.superior!r}")
        key = tuple(sorted((rec.superior, rec.subordinate)))
        prior = lookup.get(key)
        if prior is not None and prior != rec.superior:
            raise DataContractError(
                f"antisymmetry violation: pair {key} appears in both directions"
            )
        lookup[key] = rec.superior
    return lookup


def _assign_roles(pair: tuple[str, str], seed: int, key: str) -> tuple[str, str]:
    # Seeded per-instance hash keeps the arbitrary (a, b) assignment stable
    # across runs while leaving label marginals near 0.5.
    digest = hashlib.sha256(f"{seed}:{key}".encode("utf-8")).digest()
    first, second = sorted(pair)
    return (first, second) if digest[0] % 2 == 0 else (second, first)


def _direction(emails: Iterable[Email], sender: str, recipient: str) -> tuple[Email, ...]:
    picked = [e for e in emails if e.sender == sender and recipient in e.recipients]
    return tuple(sorted(picked, key=lambda e: (e.timestamp, e.id)))


def per_thread_instance_id(thread_id: str, pair: tuple[str, str]) -> str:
    first, second = sorted(pair)
    return f"pt::{thread_id}::{first}::{second}"


def grouped_instance_id(pair: tuple[str, str]) -> str:
    first, second = sorted(pair)
    return f"gp::{first}::{second}"


def extract_pairs(
    threads: Sequence[Thread],
    dominance: Sequence[DominanceRecord],
    formulation: str,
    seed: int,
) -> tuple[list[DyadInstance], dict[str, int]]:
    """Materialize instances for every related interacting pair.

    Interacting pairs absent from the dominance relation (peers or unrelated
    people) are excluded and counted in the returned skip report.
    """
    if formulation not in FORMULATIONS:
        raise ConfigurationError(f"unknown formulation {formulation!r}")
    superior_of = _dominance_lookup(dominance)

    # Unordered interacting pairs, per thread and corpus-wide.
    pairs_by_thread: dict[str, set[tuple[str, str]]] = defaultdict(set)
    for thread in threads:
        for email in thread.emails:
            for recipient in email.recipients:
                if recipient == email.sender:
                    continue
                pairs_by_thread[thread.id].add(tuple(sorted((email.sender, recipient))))

    skipped = Counter()
    instances: list[DyadInstance] = []

    if formulation == PER_THREAD:
        threads_by_id = {t.id: t for t in threads}
        for thread_id in sorted(pairs_by_thread):
            thread = threads_by_id[thread_id]
            for pair in sorted(pairs_by_thread[thread_id]):
                if pair not in superior_of:
                    skipped["pair_not_in_dominance"] += 1
                    continue
                iid = per_thread_instance_id(thread_id, pair)
                a, b = _assign_roles(pair, seed, iid)
                instances.append(
                    DyadInstance(
                        id=iid,
                        formulation=PER_THREAD,
                        thread_id=thread_id,
                        person_a=a,
                        person_b=b,
                        emails_a_to_b=_direction(thread.emails, a, b),
                        emails_b_to_a=_direction(thread.emails, b, a),
                        label=1 if superior_of[pair] == a else 0,
                    )
                )
    else:
        all_pairs: set[tuple[str, str]] = set()
        for pairs in pairs_by_thread.values():
            all_pairs.update(pairs)
        all_emails = [e for t in threads for e in t.emails]
        for pair in sorted(all_pairs):
            if pair not in superior_of:
                skipped["pair_not_in_dominance"] += 1
                continue
            iid = grouped_instance_id(pair)
            a, b = _assign_roles(pair, seed, iid)
            instances.append(
                DyadInstance(
                    id=iid,
                    formulation=GROUPED,
                    thread_id=None,
                    person_a=a,
                    person_b=b,
                    emails_a_to_b=_direction(all_emails, a, b),
                    emails_b_to_a=_direction(all_emails, b, a),
                    label=1 if superior_of[pair] == a else 0,
                )
            )

    instances.sort(key=lambda inst: inst.id)
    return instances, dict(skipped)


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


def _target_sizes(total: int, ratios: tuple[float, float, float]) -> list[int]:
    # Largest-remainder apportionment so the three sizes sum to total.
    raw = [total * r for r in ratios]
    sizes = [int(x) for x in raw]
    remainder = total - sum(sizes)
    order = sorted(range(3), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[:remainder]:
        sizes[i] += 1
    return sizes


def make_splits(
    instances: Sequence[DyadInstance],
    ratios: tuple[float, float, float],
    seed: int,
    external_manifest: Path | None = None,
) -> SplitManifest:
    """Partition instances into train/dev/test.

    All instances of the same unordered pair land in the same split, which
    prevents the model from memorizing participant identities across splits.
    When ``external_manifest`` is given it is loaded verbatim (ratio logic is
    bypassed); it must cover exactly the given instance ids.
    """
    instance_ids = {inst.id for inst in instances}
    if external_manifest is not None:
        path = Path(external_manifest)
        if not path.is_file():
            raise ConfigurationError(f"split manifest not found: {path}")
        manifest = SplitManifest.from_tsv(path.read_text(encoding="utf-8"))
        unknown = sorted(set(manifest.assignments) - instance_ids)
        if unknown:
            raise DataContractError(
                f"split manifest references unknown instance ids (first few): {unknown[:5]}"
            )
        missing = sorted(instance_ids - set(manifest.assignments))
        if missing:
            raise DataContractError(
                f"split manifest does not cover all instances (first few): {missing[:5]}"
            )
        _warn_on_pair_leakage(instances, manifest)
        return manifest

    if not instances:
        raise DataContractError("cannot split an empty instance list")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigurationError(f"split ratios must sum to 1, got {ratios}")

    groups: dict[tuple[str, str], list[str]] = defaultdict(list)
    for inst in instances:
        groups[inst.pair_key()].append(inst.id)
    group_keys = sorted(groups)
    random.Random(seed).shuffle(group_keys)

    targets = _target_sizes(len(instances), ratios)
    assigned = [0, 0, 0]
    assignments: dict[str, str] = {}
    for key in group_keys:
        deficits = [targets[i] - assigned[i] for i in range(3)]
        choice = max(range(3), key=lambda i: (deficits[i], -i))
        for iid in groups[key]:
            assignments[iid] = SPLIT_NAMES[choice]
        assigned[choice] += len(groups[key])
    return SplitManifest(assignments=assignments, seed=seed, source="ratio")


def _warn_on_pair_leakage(instances: Sequence[DyadInstance], manifest: SplitManifest) -> None:
    # External manifests are taken verbatim, but cross-split pairs are worth
    # flagging because they leak participant identity between splits.
    splits_by_pair: dict[tuple[str, str], set[str]] = defaultdict(set)
    for inst in instances:
        splits_by_pair[inst.pair_key()].add(manifest.assignments[inst.id])
    leaky = sum(1 for s in splits_by_pair.values() if len(s) > 1)
    if leaky:
        logger.warning("external manifest places %d pairs in multiple splits", leaky)


def split_instances(
    instances: Sequence[DyadInstance], manifest: SplitManifest
) -> dict[str, list[DyadInstance]]:
    out: dict[str, list[DyadInstance]] = {name: [] for name in SPLIT_NAMES}
    for inst in instances:
        out[manifest.split_of(inst.id)].append(inst)
    return out


# ---------------------------------------------------------------------------
# Stores (serialized pipeline stages)
# ---------------------------------------------------------------------------


def write_corpus_store(
    out_dir: Path,
    threads: Sequence[Thread],
    dominance: Sequence[DominanceRecord],
    report: IngestReport,
    ruleset_text: str,
) -> None:
    """Persist masked threads, the dominance copy, the skip report and the
    ruleset snapshot. All files are byte-deterministic."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    emails = sorted((e for t in threads for e in t.emails), key=lambda e: e.id)
    with (out_dir / MESSAGES_FILENAME).open("w", encoding="utf-8") as fh:
        for email in emails:
            fh.write(json.dumps(email.to_record(), sort_keys=True) + "\n")
    with (out_dir / DOMINANCE_FILENAME).open("w", encoding="utf-8") as fh:
        for rec in dominance:
            fh.write(f"{rec.superior}\t{rec.subordinate}\n")
    (out_dir / "ingest_report.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out_dir / "ruleset.rules").write_text(ruleset_text, encoding="utf-8")


def read_corpus_store(store_dir: Path) -> tuple[list[Thread], list[DominanceRecord]]:
    store_dir = Path(store_dir)
    threads, dominance, report = ingest_corpus(store_dir)
    if report.skipped:
        raise DataContractError(f"corpus store is corrupt: {dict(report.skipped)}")
    return threads, dominance


def _email_from_record(rec: dict) -> Email:
    return Email(
        id=rec["id"],
        thread_id=rec["thread_id"],
        sender=rec["sender"],
        recipients=tuple(rec["recipients"]),
        timestamp=_parse_timestamp(rec["timestamp"]),
        body=rec["body"],
        masked_body=rec.get("masked_body"),
    )


def write_instance_store(
    out_dir: Path, instances: Sequence[DyadInstance], manifest: SplitManifest
) -> None:
    """Persist instances (emails stored once, referenced by id) plus splits."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    emails: dict[str, Email] = {}
    for inst in instances:
        for email in inst.emails_a_to_b + inst.emails_b_to_a:
            emails[email.id] = email
    with (out_dir / "emails.jsonl").open("w", encoding="utf-8") as fh:
        for eid in sorted(emails):
            fh.write(json.dumps(emails[eid].to_record(), sort_keys=True) + "\n")
    with (out_dir / "instances.jsonl").open("w", encoding="utf-8") as fh:
        for inst in sorted(instances, key=lambda i: i.id):
            rec = {
                "id": inst.id,
                "formulation": inst.formulation,
                "thread_id": inst.thread_id,
                "person_a": inst.person_a,
                "person_b": inst.person_b,
                "emails_a_to_b": [e.id for e in inst.emails_a_to_b],
                "emails_b_to_a": [e.id for e in inst.emails_b_to_a],
                "label": inst.label,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    (out_dir / "splits.tsv").write_text(manifest.to_tsv(), encoding="utf-8")


def read_instance_store(store_dir: Path) -> tuple[list[DyadInstance], SplitManifest]:
    store_dir = Path(store_dir)
    emails: dict[str, Email] = {}
    for line in (store_dir / "emails.jsonl").read_text(encoding="utf-8").splitlines():
        if line.strip():
            email = _email_from_record(json.loads(line))
            emails[email.id] = email
    instances: list[DyadInstance] = []
    for line in (store_dir / "instances.jsonl").read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        try:
            a_to_b = tuple(emails[eid] for eid in rec["emails_a_to_b"])
            b_to_a = tuple(emails[eid] for eid in rec["emails_b_to_a"])
        except KeyError as exc:
            raise DataContractError(f"instance {rec['id']} references unknown email {exc}") from exc
        instances.append(
            DyadInstance(
                id=rec["id"],
                formulation=rec["formulation"],
                thread_id=rec["thread_id"],
                person_a=rec["person_a"],
                person_b=rec["person_b"],
                emails_a_to_b=a_to_b,
                emails_b_to_a=b_to_a,
                label=rec["label"],
            )
        )
    manifest = SplitManifest.from_tsv((store_dir / "splits.tsv").read_text(encoding="utf-8"))
    ids = {inst.id for inst in instances}
    if set(manifest.assignments) != ids:
        raise DataContractError("instance store splits.tsv does not match instances.jsonl")
    return instances, manifest
