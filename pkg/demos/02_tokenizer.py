"""Train a byte-level subword vocabulary and poke at its behavior.

Run:  python3 demos/02_tokenizer.py
"""

from kg2text.synth import synth_pairs
from kg2text.tokenizer import N_BASE, N_SPECIALS, record_surfaces, train_bpe

pairs = synth_pairs("a", 200, seed=3)
texts = [p.text for p in pairs]
for p in pairs:
    texts.extend(record_surfaces(p.record))

vocab = train_bpe(texts, vocab_size=400)
print(f"Trained on {len(texts)} strings: {vocab.size} tokens total")
print(f"  {N_SPECIALS} specials + 256 bytes = {N_BASE} fixed, "
      f"{len(vocab.merges)} learned merges\n")

print("First ten merges (most frequent pair first):")
for left, right in vocab.merges[:10]:
    print(f"  {left!r} + {right!r} -> {(left + right)!r}")

sample = pairs[0].text
ids = vocab.encode(sample)
print(f"\n{sample!r}")
print(f"  {len(sample.encode('utf-8'))} bytes -> {len(ids)} subwords")
print("  pieces:", [vocab.decode([i]) for i in ids])

assert vocab.decode(ids) == sample
print("  round trip exact")

weird = "café ≠ cafe !"
assert vocab.decode(vocab.encode(weird)) == weird
print(f"\nUnseen unicode also survives: {weird!r}")
print("(unknown bytes fall back to the 256 byte tokens, so nothing is lost)")
