"""Synthetic record/text corpora for experiments and demos.

Two template families share their function-word skeleton ("X is a Y in Z .")
and two predicate names but draw subjects and object values from disjoint
invented-word pools, so a model pretrained on family "a" meets family "b"
with familiar structure and entirely novel content words.  The text of a
record is a deterministic function of its predicate combination, which makes
the mapping fully learnable.

Word pools are built once from a fixed internal seed; caller seeds only
choose which pool entries a corpus uses.
"""

from __future__ import annotations

import numpy as np

from .corpus import Anchor, AnnotatedSentence, KbEntity, KbObject, KnowledgeBase
from .errors import InsufficientData, UsageError
from .record import Entity, GroundedPair, KnowledgeRecord

_POOL_SEED = 0xC0FFEE
_CONSONANTS = list("bdfgklmnprstvz")
_VOWELS = list("aeiou")


def _make_words(rng: np.random.Generator, count: int, syllables: int) -> list[str]:
    words: list[str] = []
    seen = set()
    while len(words) < count:
        w = "".join(
            rng.choice(_CONSONANTS) + rng.choice(_VOWELS) for _ in range(syllables)
        )
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def _build_pools() -> dict:
    # value pools are wide on purpose: with only a few dozen object values a
    # model can memorize them all through the vocabulary route and never
    # learn to copy, which is the behavior the transfer experiments probe
    rng = np.random.default_rng(_POOL_SEED)
    name_words = _make_words(rng, 320, 2)
    value_words = _make_words(rng, 2400, 3)
    return {
        "a": {
            "first": name_words[:80],
            "last": name_words[80:160],
            "kind": value_words[:400],     # occupation-like values
            "place": value_words[400:800],
            "origin": value_words[800:1200],
        },
        "b": {
            "first": name_words[160:240],
            "last": name_words[240:320],
            "kind": value_words[1200:1600],  # venue-type-like values
            "place": value_words[1600:2000],
            "origin": value_words[2000:2400],
        },
    }


_POOLS = _build_pools()

# predicate combination -> template; "kind" uses a family-specific predicate
# name while "area"/"origin" are shared across families
_VARIANTS = (
    (("kind", "area"), "{s} is a {kind} in {area} ."),
    (("kind", "origin"), "{s} is a {kind} from {origin} ."),
    (("kind", "area", "origin"), "{s} is a {kind} in {area} from {origin} ."),
)

_KIND_PRED = {"a": "occupation", "b": "eat_type"}
_FAMILY_OFFSET = {"a": 1, "b": 2}


def synth_pairs(family: str, n: int, seed: int) -> list[GroundedPair]:
    """Generate `n` record/text pairs; subjects are unique within a corpus."""
    if family not in _POOLS:
        raise UsageError(f"unknown family {family!r}, expected 'a' or 'b'")
    pool = _POOLS[family]
    max_subjects = len(pool["first"]) * len(pool["last"])
    if n > max_subjects:
        raise InsufficientData(
            f"family {family} supports at most {max_subjects} unique subjects"
        )
    rng = np.random.default_rng([seed, _FAMILY_OFFSET[family]])
    subj_codes = rng.choice(max_subjects, size=n, replace=False)
    kind_pred = _KIND_PRED[family]
    pairs: list[GroundedPair] = []
    for i, code in enumerate(subj_codes):
        first = pool["first"][code // len(pool["last"])]
        last = pool["last"][code % len(pool["last"])]
        subject = f"{first} {last}"
        slots, template = _VARIANTS[int(rng.integers(len(_VARIANTS)))]
        values = {
            "s": subject,
            "kind": pool["kind"][int(rng.integers(len(pool["kind"])))],
            "area": pool["place"][int(rng.integers(len(pool["place"])))],
            "origin": pool["origin"][int(rng.integers(len(pool["origin"])))],
        }
        triples = []
        for slot in slots:
            pred = kind_pred if slot == "kind" else slot
            triples.append((pred, values[slot]))
        text = template.format(**values)
        record = KnowledgeRecord([Entity(subject, triples)], id=f"{family}{i:05d}")
        pairs.append(GroundedPair(record, text, score=1.0))
    return pairs


def synth_documents(pairs: list[GroundedPair]) -> tuple[list[AnnotatedSentence], KnowledgeBase]:
    """Mirror pairs back into annotated sentences plus a knowledge base.

    Each sentence anchors its subject entity at the start; the first triple's
    value gets its own KB entity and anchor so a two-anchor minimum filter
    stays satisfiable.  Together with synth_pairs this exercises the whole
    corpus-building pipeline on data with a known right answer.
    """
    sentences: list[AnnotatedSentence] = []
    kb_entities: dict[str, KbEntity] = {}
    for p in pairs:
        ent = p.record.entities[0]
        eid = "e_" + ent.subject.replace(" ", "_")
        kb_entities.setdefault(
            eid,
            KbEntity(
                ent.subject,
                tuple((pred, KbObject(literal=obj)) for pred, obj in ent.triples),
            ),
        )
        tokens = p.text.split()
        n_subj = len(ent.subject.split())
        anchors = [Anchor(0, n_subj, eid)]
        val = ent.triples[0][1]
        vid = "v_" + val
        kb_entities.setdefault(
            vid, KbEntity(val, (("label", KbObject(literal=val)),))
        )
        for j, tok in enumerate(tokens):
            if tok == val:
                anchors.append(Anchor(j, j + 1, vid))
                break
        sentences.append(AnnotatedSentence(tuple(tokens), tuple(anchors)))
    return sentences, KnowledgeBase(kb_entities)
