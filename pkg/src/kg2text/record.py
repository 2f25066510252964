"""Generalized dictionary format for structured inputs.

A :class:`KnowledgeRecord` is an ordered list of entities, each a subject
string plus ordered (predicate, object) pairs.  RDF triple sets, slot-value
meaning representations, and infobox-style tables all convert into it, so
the rest of the pipeline only ever sees one input shape.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence, TextIO

from .errors import (
    EmptyInput,
    EmptyName,
    EmptyTriples,
    InvalidRecord,
    MalformedTriple,
)

Triple = tuple[str, str]


@dataclass(frozen=True)
class Entity:
    """One subject with its ordered (predicate, object) pairs.

    Duplicate (predicate, object) pairs are dropped silently, keeping the
    first occurrence; empty components are rejected.
    """

    subject: str
    triples: tuple[Triple, ...]

    def __init__(self, subject: str, triples: Iterable[Sequence[str]]):
        if not subject:
            raise EmptyName("entity subject must be a non-empty string")
        seen: set[Triple] = set()
        clean: list[Triple] = []
        for t in triples:
            if len(t) != 2:
                raise MalformedTriple(f"expected (predicate, object), got {t!r}")
            pred, obj = t
            if not pred or not obj:
                raise MalformedTriple(
                    f"empty predicate or object in entity {subject!r}: {(pred, obj)!r}"
                )
            key = (pred, obj)
            if key in seen:
                continue
            seen.add(key)
            clean.append(key)
        if not clean:
            raise EmptyTriples(f"entity {subject!r} has no triples")
        object.__setattr__(self, "subject", subject)
        object.__setattr__(self, "triples", tuple(clean))


@dataclass(frozen=True)
class KnowledgeRecord:
    """Ordered entities under an opaque identifier.

    Entity order and per-entity triple order are stable: serialization
    round-trips preserve them exactly.
    """

    entities: tuple[Entity, ...]
    id: str = ""

    def __init__(self, entities: Iterable[Entity], id: str = ""):
        ents = tuple(entities)
        if not ents:
            raise EmptyInput("a KnowledgeRecord needs at least one entity")
        for e in ents:
            if not isinstance(e, Entity):
                raise InvalidRecord(f"not an Entity: {e!r}")
        object.__setattr__(self, "entities", ents)
        object.__setattr__(self, "id", id or _content_id(ents))

    def content_key(self) -> str:
        """Canonical serialization of the entities, independent of the id.

        Used by the contamination guard to compare records across corpora.
        """
        return json.dumps(
            [[e.subject, [list(t) for t in e.triples]] for e in self.entities],
            ensure_ascii=False,
            separators=(",", ":"),
        )


@dataclass(frozen=True)
class GroundedPair:
    """A record paired with a target sentence and a grounding score.

    ``score`` is None until the grounding stage assigns it.
    """

    record: KnowledgeRecord
    text: str
    score: float | None = None

    def __post_init__(self):
        if self.score is not None and not (0.0 <= self.score <= 1.0):
            raise InvalidRecord(f"grounding score {self.score} outside [0, 1]")


def _content_id(entities: tuple[Entity, ...]) -> str:
    payload = json.dumps(
        [[e.subject, [list(t) for t in e.triples]] for e in entities],
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return "r" + hashlib.sha1(payload.encode("utf-8")).hexdigest()[:12]


def from_rdf_triples(
    triples: Sequence[Sequence[str]], id: str = ""
) -> KnowledgeRecord:
    """Group (subject, predicate, object) triples into a record.

    Subjects become entities in first-appearance order; within a subject the
    original triple order is preserved and duplicates are dropped.
    """
    if not triples:
        raise EmptyInput("empty triple list")
    grouped: dict[str, list[Triple]] = {}
    order: list[str] = []
    for t in triples:
        if len(t) != 3:
            raise MalformedTriple(f"expected (subject, predicate, object), got {t!r}")
        subj, pred, obj = t
        if not subj or not pred or not obj:
            raise MalformedTriple(f"empty component in {t!r}")
        if subj not in grouped:
            grouped[subj] = []
            order.append(subj)
        grouped[subj].append((pred, obj))
    return KnowledgeRecord(
        [Entity(subj, grouped[subj]) for subj in order], id=id
    )


def from_slot_values(
    name: str, slots: Sequence[Sequence[str]], id: str = ""
) -> KnowledgeRecord:
    """Convert a dialog-act meaning representation: one entity, name as subject."""
    if not name:
        raise EmptyName("meaning representation has no name")
    return KnowledgeRecord([Entity(name, slots)], id=id)


def from_table(
    title: str, rows: Sequence[Sequence[str]], id: str = ""
) -> KnowledgeRecord:
    """Convert an infobox-style table: title as subject, empty-valued rows dropped."""
    if not title:
        raise EmptyName("table has no title")
    kept = [r for r in rows if len(r) == 2 and r[1]]
    if not kept:
        raise EmptyTriples(f"table {title!r} has no non-empty rows")
    return KnowledgeRecord([Entity(title, kept)], id=id)


# --- JSON-lines serialization -------------------------------------------------
#
# One object per line, UTF-8, LF endings:
#   {"id": str, "entities": [{"subject": str, "triples": [[str, str], ...]}, ...]}
# GroundedPair adds {"text": str, "score": float}.


def record_to_obj(record: KnowledgeRecord) -> dict:
    return {
        "id": record.id,
        "entities": [
            {"subject": e.subject, "triples": [list(t) for t in e.triples]}
            for e in record.entities
        ],
    }


def record_from_obj(obj: dict) -> KnowledgeRecord:
    try:
        entities = [Entity(e["subject"], e["triples"]) for e in obj["entities"]]
        return KnowledgeRecord(entities, id=obj.get("id", ""))
    except (KeyError, TypeError) as exc:
        raise InvalidRecord(f"bad record object: {exc}") from exc


def pair_to_obj(pair: GroundedPair) -> dict:
    obj = record_to_obj(pair.record)
    obj["text"] = pair.text
    if pair.score is not None:
        obj["score"] = pair.score
    return obj


def pair_from_obj(obj: dict) -> GroundedPair:
    return GroundedPair(
        record=record_from_obj(obj),
        text=obj.get("text", ""),
        score=obj.get("score"),
    )


def dump_jsonl(objs: Iterable[dict], fp: TextIO) -> None:
    for obj in objs:
        fp.write(json.dumps(obj, ensure_ascii=False) + "\n")


def load_jsonl(fp: TextIO) -> Iterator[dict]:
    for line in fp:
        line = line.strip()
        if line:
            yield json.loads(line)


def write_pairs(path, pairs: Iterable[GroundedPair]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        dump_jsonl((pair_to_obj(p) for p in pairs), fp)


def read_pairs(path) -> list[GroundedPair]:
    with open(path, encoding="utf-8") as fp:
        return [pair_from_obj(obj) for obj in load_jsonl(fp)]


def write_records(path, records: Iterable[KnowledgeRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        dump_jsonl((record_to_obj(r) for r in records), fp)


def read_records(path) -> list[KnowledgeRecord]:
    with open(path, encoding="utf-8") as fp:
        return [record_from_obj(obj) for obj in load_jsonl(fp)]
