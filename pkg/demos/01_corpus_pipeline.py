"""Walk a miniature corpus through anchoring, grounding, and selection.

Run:  python3 demos/01_corpus_pipeline.py
"""

from kg2text.corpus import (
    Anchor,
    AnnotatedSentence,
    KbEntity,
    KbObject,
    KnowledgeBase,
    grounding_score,
    score_candidates,
    select,
    stats,
)

kb = KnowledgeBase({
    "Q1": KbEntity("Roma F.C.", (
        ("country", KbObject(ref="Q2")),
        ("inception", KbObject(literal="1927")),
        ("league", KbObject(literal="Serie A")),
    )),
    "Q2": KbEntity("Italy", (
        ("capital", KbObject(literal="Rome")),
        ("continent", KbObject(literal="Europe")),
    )),
})

sentences = [
    AnnotatedSentence(
        tuple("roma f.c. is a serie a club from italy founded in 1927".split()),
        (Anchor(0, 2, "Q1"), Anchor(8, 9, "Q2")),
    ),
    AnnotatedSentence(
        tuple("roma f.c. fans watched the weather turn cold last night".split()),
        (Anchor(0, 2, "Q1"), Anchor(5, 6, "Q2")),
    ),
    AnnotatedSentence(
        tuple("italy sits in europe and its capital is rome".split()),
        (Anchor(0, 1, "Q2"), Anchor(3, 4, "Q2")),
    ),
]

print("Scoring", len(sentences), "annotated sentences against the KB...\n")
pairs = score_candidates(sentences, kb, min_anchors=2, min_len=5, max_len=30)

for pair in pairs:
    subjects = [e.subject for e in pair.record.entities]
    print(f"  score {pair.score:.3f}  subjects {subjects}")
    print(f"         {pair.text!r}")

print("\nThe weather sentence anchors two entities but shares almost no")
print("content words with their KB neighborhoods, so its score is low.")

selected = select(pairs, threshold=0.13)
print(f"\nAt the default 0.13 threshold, {len(selected)} of {len(pairs)} survive.")

st = stats(selected)
print(f"Selected corpus: {st.sentence_count} sentences, "
      f"{st.triple_count} triples, mean length {st.mean_length:.1f}")
print("Predicate histogram:")
for pred, count in st.predicate_histogram:
    print(f"  {count:3d}  {pred}")

one = sentences[0]
print("\nPer-entity rounds behind the first score:",
      f"{grounding_score(one, pairs[0].record, kb):.3f}")
