"""Train a small graph-attention model until it reproduces its corpus.

Takes a minute or two on one core.

Run:  python3 demos/04_tiny_model.py
"""

import numpy as np

from kg2text.decoder import batch_nll, generate_batch, nll_loss
from kg2text.encoder import ModelConfig, init_params
from kg2text.numerics import Adam, clip_global_norm, no_grad, zero_grads
from kg2text.synth import synth_pairs
from kg2text.tokenizer import record_surfaces, train_bpe

pairs = synth_pairs("a", 8, seed=42)
records = [p.record for p in pairs]
texts = [p.text for p in pairs]

corpus = list(texts)
for r in records:
    corpus.extend(record_surfaces(r))
vocab = train_bpe(corpus, 320)

config = ModelConfig(vocab_size=vocab.size, hidden=64, heads=4,
                     enc_layers=2, dec_layers=2, encoder="graph")
params = init_params(config, seed=0)
opt = Adam(params, lr=2e-3)

print("record ->", records[0].entities[0].subject,
      records[0].entities[0].triples)
print("target ->", texts[0], "\n")

for step in range(1, 501):
    loss, _ = nll_loss(records, texts, vocab, params, config)
    zero_grads(params)
    loss.backward()
    clip_global_norm(params, 1.0)
    opt.step()
    if step % 50 == 0:
        with no_grad():
            nll, ntok = batch_nll(records, texts, vocab, params, config)
        print(f"step {step:3d}  loss {loss.item():.4f}  "
              f"ppl {np.exp(nll / ntok):.4f}")

hyps = generate_batch(records, vocab, params, config, max_len=48)
exact = sum(h == t for h, t in zip(hyps, texts))
print(f"\ngreedy decoding reproduces {exact}/{len(texts)} references")
for h, t in zip(hyps[:3], texts[:3]):
    marker = "==" if h == t else "!="
    print(f"  {marker} {h!r}")
