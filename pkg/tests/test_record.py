import io
import json

import pytest
from hypothesis import given, settings, strategies as st

from kg2text.errors import (
    EmptyInput,
    EmptyName,
    EmptyTriples,
    InvalidRecord,
    MalformedTriple,
)
from kg2text.record import (
    Entity,
    GroundedPair,
    KnowledgeRecord,
    from_rdf_triples,
    from_slot_values,
    from_table,
    pair_from_obj,
    pair_to_obj,
    record_from_obj,
    record_to_obj,
)


class TestFromRdfTriples:
    def test_two_triples_one_subject(self):
        rec = from_rdf_triples(
            [("Roma F.C.", "country", "Italy"), ("Roma F.C.", "inception", "7 June 1927")]
        )
        assert len(rec.entities) == 1
        ent = rec.entities[0]
        assert ent.subject == "Roma F.C."
        assert ent.triples == (("country", "Italy"), ("inception", "7 June 1927"))

    def test_singleton(self):
        rec = from_rdf_triples([("A", "p", "x")])
        assert len(rec.entities) == 1
        assert rec.entities[0].triples == (("p", "x"),)

    def test_grouping_keeps_first_appearance_order(self):
        rec = from_rdf_triples([("A", "p", "x"), ("B", "q", "y"), ("A", "r", "z")])
        assert [e.subject for e in rec.entities] == ["A", "B"]
        assert rec.entities[0].triples == (("p", "x"), ("r", "z"))
        assert rec.entities[1].triples == (("q", "y"),)

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            from_rdf_triples([])

    @pytest.mark.parametrize("bad", [("", "p", "x"), ("A", "", "x"), ("A", "p", "")])
    def test_malformed_component(self, bad):
        with pytest.raises(MalformedTriple):
            from_rdf_triples([bad])

    @given(st.lists(
        st.tuples(st.sampled_from("ABCD"), st.sampled_from("pqrs"), st.sampled_from("wxyz")),
        min_size=1, max_size=12,
    ))
    @settings(max_examples=60, deadline=None)
    def test_grouping_matches_brute_force(self, triples):
        rec = from_rdf_triples(triples)
        order = []
        groups = {}
        for s, p, o in triples:
            if s not in groups:
                groups[s] = []
                order.append(s)
            if (p, o) not in groups[s]:
                groups[s].append((p, o))
        assert [e.subject for e in rec.entities] == order
        for ent in rec.entities:
            assert list(ent.triples) == groups[ent.subject]

    def test_interleaving_invariance(self):
        a = [("A", "p", "1"), ("B", "q", "2"), ("A", "r", "3"), ("B", "s", "4")]
        b = [("A", "p", "1"), ("A", "r", "3"), ("B", "q", "2"), ("B", "s", "4")]
        ra, rb = from_rdf_triples(a), from_rdf_triples(b)
        assert {e.subject: set(e.triples) for e in ra.entities} == {
            e.subject: set(e.triples) for e in rb.entities
        }


class TestFromSlotValues:
    def test_direct_mapping(self):
        rec = from_slot_values("Blue Spice", [("eatType", "pub")])
        assert len(rec.entities) == 1
        assert rec.entities[0].subject == "Blue Spice"
        assert rec.entities[0].triples == (("eatType", "pub"),)

    def test_no_slots(self):
        with pytest.raises(EmptyTriples):
            from_slot_values("X", [])

    def test_duplicate_slot_dropped(self):
        rec = from_slot_values("X", [("a", "1"), ("b", "2"), ("a", "1")])
        assert rec.entities[0].triples == (("a", "1"), ("b", "2"))

    def test_empty_name(self):
        with pytest.raises(EmptyName):
            from_slot_values("", [("a", "1")])


class TestFromTable:
    def test_single_row(self):
        rec = from_table("Moses Malone", [("Gender", "Male")])
        assert rec.entities[0].subject == "Moses Malone"
        assert rec.entities[0].triples == (("Gender", "Male"),)

    def test_empty_value_dropped(self):
        rec = from_table("T", [("f", ""), ("g", "v")])
        assert rec.entities[0].triples == (("g", "v"),)

    def test_five_rows_two_empty(self):
        rows = [("a", "1"), ("b", ""), ("c", "3"), ("d", ""), ("e", "5")]
        rec = from_table("T", rows)
        assert rec.entities[0].triples == (("a", "1"), ("c", "3"), ("e", "5"))

    def test_all_rows_empty(self):
        with pytest.raises(EmptyTriples):
            from_table("T", [("f", ""), ("g", "")])

    def test_empty_title(self):
        with pytest.raises(EmptyName):
            from_table("", [("a", "1")])


class TestRecordInvariants:
    def test_empty_entities_rejected(self):
        with pytest.raises(EmptyInput):
            KnowledgeRecord([])

    def test_empty_subject_rejected(self):
        with pytest.raises(EmptyName):
            Entity("", [("p", "x")])

    def test_entity_without_triples_rejected(self):
        with pytest.raises(EmptyTriples):
            Entity("A", [])

    def test_duplicate_triple_rejected_or_dropped(self):
        # An entity never carries a duplicated (predicate, object) pair.
        ent = Entity("A", [("p", "x"), ("p", "x")])
        assert len(set(ent.triples)) == len(ent.triples)

    def test_score_range(self):
        rec = from_rdf_triples([("A", "p", "x")])
        with pytest.raises(InvalidRecord):
            GroundedPair(rec, "text", 1.5)
        with pytest.raises(InvalidRecord):
            GroundedPair(rec, "text", -0.1)
        assert GroundedPair(rec, "text", 0.5).score == 0.5

    @given(st.data())
    @settings(max_examples=40, deadline=None)
    def test_converters_satisfy_invariants(self, data):
        which = data.draw(st.sampled_from(["rdf", "slots", "table"]))
        name = data.draw(st.text(alphabet="abcXY ", min_size=1).filter(str.strip))
        rows = data.draw(st.lists(
            st.tuples(st.sampled_from(["p", "q", "r"]), st.sampled_from(["1", "2"])),
            min_size=1, max_size=5,
        ))
        if which == "rdf":
            rec = from_rdf_triples([(name, p, v) for p, v in rows])
        elif which == "slots":
            rec = from_slot_values(name, rows)
        else:
            rec = from_table(name, rows)
        assert rec.entities
        for ent in rec.entities:
            assert ent.subject
            assert ent.triples
            assert len(set(ent.triples)) == len(ent.triples)
            for p, o in ent.triples:
                assert p and o


class TestSerialization:
    def test_round_trip_example(self):
        rec = from_rdf_triples(
            [("Roma F.C.", "country", "Italy"), ("AS Roma", "city", "Rome")]
        )
        again = record_from_obj(record_to_obj(rec))
        assert again == rec
        assert record_to_obj(again) == record_to_obj(rec)

    def test_pair_round_trip(self):
        rec = from_slot_values("Blue Spice", [("eatType", "pub"), ("area", "riverside")])
        pair = GroundedPair(rec, "Blue Spice is a pub .", 0.42)
        again = pair_from_obj(pair_to_obj(pair))
        assert again.record == pair.record
        assert again.text == pair.text
        assert again.score == pair.score

    def test_order_preserved(self):
        rec = from_rdf_triples([("A", "z", "1"), ("A", "a", "2"), ("B", "m", "3")])
        obj = record_to_obj(rec)
        assert [e["subject"] for e in obj["entities"]] == ["A", "B"]
        assert obj["entities"][0]["triples"] == [["z", "1"], ["a", "2"]]

    def test_unicode_survives(self):
        rec = from_table("Zaragoza", [("río", "Ebro"), ("país", "España")])
        blob = json.dumps(record_to_obj(rec), ensure_ascii=False)
        assert record_from_obj(json.loads(blob)) == rec

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_round_trip_random(self, seed):
        import numpy as np
        from conftest import make_random_record

        rec = make_random_record(np.random.default_rng(seed))
        assert record_from_obj(record_to_obj(rec)) == rec


def test_content_key_ignores_id():
    a = from_rdf_triples([("A", "p", "x")])
    b = KnowledgeRecord(list(a.entities), id="other")
    assert a.content_key() == b.content_key()
    c = from_rdf_triples([("A", "p", "y")])
    assert a.content_key() != c.content_key()
