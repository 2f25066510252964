import numpy as np
import pytest

from kg2text.record import Entity, KnowledgeRecord
from kg2text.tokenizer import train_bpe, record_surfaces


def make_random_record(rng: np.random.Generator, max_entities=3, max_triples=3,
                       rec_id="r0") -> KnowledgeRecord:
    words = ["alpha", "beta", "gamma", "delta", "rho", "sigma", "tau", "nu"]
    entities = []
    for e in range(rng.integers(1, max_entities + 1)):
        subject = " ".join(rng.choice(words, size=rng.integers(1, 3), replace=False))
        n_t = int(rng.integers(1, max_triples + 1))
        triples = []
        seen = set()
        while len(triples) < n_t:
            pred = str(rng.choice(["kind", "place", "src", "made"]))
            obj = " ".join(rng.choice(words, size=rng.integers(1, 3), replace=True))
            if (pred, obj) not in seen:
                seen.add((pred, obj))
                triples.append((pred, obj))
        entities.append(Entity(f"{subject} {e}", triples))
    return KnowledgeRecord(entities, id=rec_id)


@pytest.fixture(scope="session")
def tiny_pairs():
    records = [
        KnowledgeRecord(
            [Entity("bela rota", [("type", "vono"), ("area", "mirel")])], id="p0"
        ),
        KnowledgeRecord(
            [Entity("kedo nam", [("type", "lipo"), ("origin", "sater")])], id="p1"
        ),
    ]
    texts = ["bela rota is a vono in mirel .", "kedo nam is a lipo from sater ."]
    return records, texts


@pytest.fixture(scope="session")
def tiny_vocab(tiny_pairs):
    records, texts = tiny_pairs
    corpus = list(texts)
    for r in records:
        corpus.extend(record_surfaces(r))
    return train_bpe(corpus, 300)
