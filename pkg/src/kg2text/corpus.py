"""Distantly supervised corpus construction.

Aligns annotated sentences with knowledge subgraphs from a local KB:
candidate extraction with length/anchor filters and multi-hop bridging,
a lexical grounding score to filter noisy alignments, threshold selection,
deterministic splits, and corpus statistics.
"""

from __future__ import annotations

import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    EmptyCorpus,
    InsufficientData,
    InvalidRecord,
    NoAnchors,
    UnresolvedEntity,
)
from .record import Entity, GroundedPair, KnowledgeRecord, load_jsonl

# Length filter matches the crawling setup: sentences of 10..50 tokens with
# at least `min_anchors` links.
DEFAULT_MIN_ANCHORS = 2
DEFAULT_MIN_LEN = 10
DEFAULT_MAX_LEN = 50
DEFAULT_THRESHOLD = 0.13


@dataclass(frozen=True)
class Anchor:
    start: int
    end: int  # exclusive token index
    entity_id: str


@dataclass(frozen=True)
class AnnotatedSentence:
    """Tokenized sentence with (token-span, entity-id) anchor annotations."""

    tokens: tuple[str, ...]
    anchors: tuple[Anchor, ...]

    def __init__(self, tokens: Sequence[str], anchors: Iterable[Anchor | Sequence]):
        toks = tuple(tokens)
        parsed = tuple(
            a if isinstance(a, Anchor) else Anchor(int(a[0]), int(a[1]), str(a[2]))
            for a in anchors
        )
        last_end = -1
        for a in sorted(parsed, key=lambda a: a.start):
            if not (0 <= a.start < a.end <= len(toks)):
                raise InvalidRecord(f"anchor span {a} out of bounds for {len(toks)} tokens")
            if a.start < last_end:
                raise InvalidRecord(f"overlapping anchor at {a}")
            if not a.entity_id:
                raise InvalidRecord("anchor with empty entity id")
            last_end = a.end
        object.__setattr__(self, "tokens", toks)
        object.__setattr__(self, "anchors", parsed)

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass(frozen=True)
class KbObject:
    """Triple object: either a literal string or a reference to another entity."""

    literal: str | None = None
    ref: str | None = None

    def __post_init__(self):
        if (self.literal is None) == (self.ref is None):
            raise InvalidRecord("KB object must be exactly one of literal/ref")


@dataclass(frozen=True)
class KbEntity:
    label: str
    triples: tuple[tuple[str, KbObject], ...]


class KnowledgeBase:
    """Local KB: entity-id -> (label, outgoing triples).

    Every entity reference inside an object must resolve; that is checked
    at construction time.
    """

    def __init__(self, entities: dict[str, KbEntity]):
        self.entities = dict(entities)
        for eid, ent in self.entities.items():
            for _, obj in ent.triples:
                if obj.ref is not None and obj.ref not in self.entities:
                    raise UnresolvedEntity(
                        f"entity {eid!r} references unknown entity {obj.ref!r}"
                    )

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self.entities

    def __len__(self) -> int:
        return len(self.entities)

    def label(self, entity_id: str) -> str:
        return self.entities[entity_id].label

    def triples(self, entity_id: str) -> tuple[tuple[str, KbObject], ...]:
        return self.entities[entity_id].triples

    def object_surface(self, obj: KbObject) -> str:
        """Render a triple object as text: the literal, or the referent's label."""
        return obj.literal if obj.literal is not None else self.label(obj.ref)

    @classmethod
    def from_jsonl(cls, fp) -> "KnowledgeBase":
        entities = {}
        for obj in load_jsonl(fp):
            triples = []
            for pred, raw in obj["triples"]:
                if isinstance(raw, dict):
                    triples.append((pred, KbObject(ref=raw["ref"])))
                else:
                    triples.append((pred, KbObject(literal=str(raw))))
            entities[obj["id"]] = KbEntity(obj["label"], tuple(triples))
        return cls(entities)


def read_documents(fp) -> list[AnnotatedSentence]:
    """Parse document JSONL: {"tokens": [...], "anchors": [[start, end, id], ...]}."""
    return [AnnotatedSentence(obj["tokens"], obj["anchors"]) for obj in load_jsonl(fp)]


@dataclass
class CorpusStats:
    sentence_count: int
    mean_length: float
    distinct_entity_count: int
    distinct_predicate_count: int
    triple_count: int
    mean_entities_per_sentence: float
    predicate_histogram: list[tuple[str, int]] = field(default_factory=list)

    def to_obj(self) -> dict:
        return {
            "sentence_count": self.sentence_count,
            "mean_length": self.mean_length,
            "distinct_entity_count": self.distinct_entity_count,
            "distinct_predicate_count": self.distinct_predicate_count,
            "triple_count": self.triple_count,
            "mean_entities_per_sentence": self.mean_entities_per_sentence,
            "predicate_histogram": [[p, c] for p, c in self.predicate_histogram],
        }

    def histogram_tsv(self) -> str:
        lines = ["predicate\tcount"]
        lines += [f"{p}\t{c}" for p, c in self.predicate_histogram]
        return "\n".join(lines) + "\n"


_STOPWORDS: frozenset[str] | None = None


def stopwords() -> frozenset[str]:
    """Built-in list of English function words (versioned data file)."""
    global _STOPWORDS
    if _STOPWORDS is None:
        text = resources.files("kg2text.data").joinpath("stopwords.txt").read_text("utf-8")
        words = [w.strip() for w in text.splitlines() if w.strip() and not w.startswith("#")]
        _STOPWORDS = frozenset(words)
    return _STOPWORDS


def _label_in_tokens(label: str, lowered_tokens: list[str]) -> bool:
    """Case-insensitive contiguous-subsequence match of a label's tokens."""
    parts = label.lower().split()
    if not parts or len(parts) > len(lowered_tokens):
        return False
    n, k = len(lowered_tokens), len(parts)
    return any(lowered_tokens[i : i + k] == parts for i in range(n - k + 1))


def _candidate_record(
    sentence: AnnotatedSentence, kb: KnowledgeBase, rec_id: str
) -> KnowledgeRecord:
    lowered = [t.lower() for t in sentence.tokens]
    ordered_ids: list[str] = []
    for a in sentence.anchors:
        if a.entity_id not in kb:
            raise UnresolvedEntity(f"anchor entity {a.entity_id!r} not in KB")
        if a.entity_id not in ordered_ids:
            ordered_ids.append(a.entity_id)

    entities: list[Entity] = []
    included = set(ordered_ids)
    bridged: list[str] = []
    for eid in ordered_ids:
        triples = [
            (pred, kb.object_surface(obj)) for pred, obj in kb.triples(eid)
        ]
        entities.append(Entity(kb.label(eid), triples))
        # 1-hop bridging: an object entity whose label occurs in the sentence
        # brings its own triples into the record.
        for _, obj in kb.triples(eid):
            if obj.ref is None or obj.ref in included or obj.ref in bridged:
                continue
            if _label_in_tokens(kb.label(obj.ref), lowered):
                bridged.append(obj.ref)
    for eid in bridged:
        triples = [(pred, kb.object_surface(obj)) for pred, obj in kb.triples(eid)]
        entities.append(Entity(kb.label(eid), triples))
    return KnowledgeRecord(entities, id=rec_id)


def extract_candidates(
    doc: Sequence[AnnotatedSentence],
    kb: KnowledgeBase,
    min_anchors: int = DEFAULT_MIN_ANCHORS,
    min_len: int = DEFAULT_MIN_LEN,
    max_len: int = DEFAULT_MAX_LEN,
    threads: int = 1,
) -> list[GroundedPair]:
    """Filter sentences and build candidate (record, sentence) pairs.

    Keeps sentences with at least `min_anchors` anchors and a token length
    in [min_len, max_len].  Scores are left unset.  Output order follows
    input order regardless of `threads`.
    """
    kept = [
        (i, s)
        for i, s in enumerate(doc)
        if len(s.anchors) >= min_anchors and min_len <= len(s.tokens) <= max_len
    ]

    def build(item: tuple[int, AnnotatedSentence]) -> GroundedPair:
        i, s = item
        return GroundedPair(
            record=_candidate_record(s, kb, rec_id=f"s{i:06d}"),
            text=s.text,
            score=None,
        )

    if threads > 1 and len(kept) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(build, kept))
    return [build(item) for item in kept]


def _unigrams(words: Iterable[str], stop: frozenset[str]) -> set[str]:
    out = set()
    for w in words:
        lw = w.lower()
        if lw and lw not in stop:
            out.add(lw)
    return out


def grounding_score(
    sentence: AnnotatedSentence,
    record: KnowledgeRecord,
    kb: KnowledgeBase,
) -> float:
    """Lexical overlap between a sentence and its anchored entities' KB neighborhoods.

    One matching round per anchored entity: the round score is the fraction of
    the sentence's non-stopword unigrams covered by the unigrams of that
    entity's neighboring predicates and objects.  The final score is the mean
    over rounds, so it always lands in [0, 1].
    """
    if not record.entities:
        raise NoAnchors("record has no entities")
    anchor_ids = []
    for a in sentence.anchors:
        if a.entity_id not in anchor_ids:
            anchor_ids.append(a.entity_id)
    if not anchor_ids:
        raise NoAnchors("sentence has no anchors")

    stop = stopwords()
    sent_unigrams = _unigrams(sentence.tokens, stop)
    if not sent_unigrams:
        return 0.0

    rounds = []
    for eid in anchor_ids:
        if eid not in kb:
            raise UnresolvedEntity(f"anchor entity {eid!r} not in KB")
        neighbor_words: list[str] = []
        for pred, obj in kb.triples(eid):
            neighbor_words.extend(pred.split())
            neighbor_words.extend(kb.object_surface(obj).split())
        neighbor_unigrams = _unigrams(neighbor_words, stop)
        matched = sent_unigrams & neighbor_unigrams
        rounds.append(len(matched) / len(sent_unigrams))
    return sum(rounds) / len(rounds)


def score_candidates(
    doc: Sequence[AnnotatedSentence],
    kb: KnowledgeBase,
    min_anchors: int = DEFAULT_MIN_ANCHORS,
    min_len: int = DEFAULT_MIN_LEN,
    max_len: int = DEFAULT_MAX_LEN,
    threads: int = 1,
) -> list[GroundedPair]:
    """extract_candidates + grounding_score in one pass."""
    kept = [
        s
        for s in doc
        if len(s.anchors) >= min_anchors and min_len <= len(s.tokens) <= max_len
    ]
    pairs = extract_candidates(doc, kb, min_anchors, min_len, max_len, threads)
    return [
        GroundedPair(p.record, p.text, grounding_score(s, p.record, kb))
        for s, p in zip(kept, pairs)
    ]


def select(
    pairs: Sequence[GroundedPair], threshold: float = DEFAULT_THRESHOLD
) -> list[GroundedPair]:
    """Retain pairs whose grounding score is at least `threshold`, order preserved."""
    return [p for p in pairs if p.score is not None and p.score >= threshold]


def split(
    pairs: Sequence[GroundedPair], n_val: int, n_test: int, seed: int = 0
) -> tuple[list[GroundedPair], list[GroundedPair], list[GroundedPair]]:
    """Deterministic seeded shuffle into disjoint (train, val, test) of exact sizes."""
    if n_val + n_test >= len(pairs):
        raise InsufficientData(
            f"cannot hold out {n_val}+{n_test} from {len(pairs)} pairs"
        )
    perm = np.random.default_rng(seed).permutation(len(pairs))
    val = [pairs[i] for i in perm[:n_val]]
    test = [pairs[i] for i in perm[n_val : n_val + n_test]]
    train = [pairs[i] for i in perm[n_val + n_test :]]
    return train, val, test


def stats(pairs: Sequence[GroundedPair]) -> CorpusStats:
    """Corpus statistics with a descending predicate histogram."""
    if not pairs:
        raise EmptyCorpus("no pairs to summarize")
    lengths = []
    subjects: set[str] = set()
    predicates: Counter[str] = Counter()
    ents_per_sent = []
    for p in pairs:
        lengths.append(len(p.text.split()))
        ents_per_sent.append(len(p.record.entities))
        for e in p.record.entities:
            subjects.add(e.subject)
            for pred, _ in e.triples:
                predicates[pred] += 1
    histogram = sorted(predicates.items(), key=lambda kv: (-kv[1], kv[0]))
    triple_count = sum(predicates.values())
    return CorpusStats(
        sentence_count=len(pairs),
        mean_length=float(np.mean(lengths)),
        distinct_entity_count=len(subjects),
        distinct_predicate_count=len(predicates),
        triple_count=triple_count,
        mean_entities_per_sentence=float(np.mean(ents_per_sent)),
        predicate_histogram=histogram,
    )


def write_stats(stats_obj: CorpusStats, json_path, tsv_path=None) -> None:
    with open(json_path, "w", encoding="utf-8") as fp:
        json.dump(stats_obj.to_obj(), fp, ensure_ascii=False, indent=2)
        fp.write("\n")
    if tsv_path is not None:
        with open(tsv_path, "w", encoding="utf-8", newline="\n") as fp:
            fp.write(stats_obj.histogram_tsv())
