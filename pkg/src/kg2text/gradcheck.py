"""Gradient verification suites for the autodiff primitives and full models.

Every differentiable operation gets a standalone finite-difference check;
the model suite runs the complete training loss (both encoders, the four
copy/copy-loss ablation combinations) through the same machinery.  All
checks run in float64 with central differences.
"""

from __future__ import annotations

import numpy as np

from . import numerics as nm
from .decoder import nll_loss
from .encoder import ModelConfig, init_params
from .record import Entity, KnowledgeRecord
from .tokenizer import N_BASE, train_bpe

TOLERANCE = 1e-4


def _weighted_sum(out: nm.Tensor, rng: np.random.Generator) -> nm.Tensor:
    """Reduce to a scalar with fixed random weights so gradients stay generic."""
    w = rng.normal(size=out.data.shape)
    return nm.reduce_sum(nm.mul(out, w))


def check_primitives(seed: int = 0) -> dict[str, float]:
    """Max relative error of analytic vs numeric gradients, per primitive."""
    rng = np.random.default_rng(seed)

    def randp(*shape, lo=None):
        data = rng.normal(size=shape)
        if lo is not None:
            # keep inputs away from kinks/poles
            data = np.where(np.abs(data) < lo, lo + np.abs(data), data)
        return nm.parameter(data)

    results: dict[str, float] = {}

    def run(name, loss_fn, params):
        results[name] = nm.grad_check(loss_fn, params, max_elements=8, seed=seed)

    a, b = randp(3, 4), randp(3, 4)
    run("add", lambda: _weighted_sum(nm.add(a, b), np.random.default_rng(2)), {"a": a, "b": b})
    bb = randp(4)
    run("add_broadcast", lambda: _weighted_sum(nm.add(a, bb), np.random.default_rng(3)), {"a": a, "b": bb})
    run("mul", lambda: _weighted_sum(nm.mul(a, b), np.random.default_rng(4)), {"a": a, "b": b})
    c = randp(2, 3, lo=0.5)
    run("power", lambda: _weighted_sum(nm.power(nm.mul(c, c), 1.5), np.random.default_rng(5)), {"c": c})
    run("exp", lambda: _weighted_sum(nm.exp(a), np.random.default_rng(6)), {"a": a})
    pos = randp(3, 3, lo=0.5)
    run("log", lambda: _weighted_sum(nm.log(nm.mul(pos, pos)), np.random.default_rng(7)), {"p": pos})
    run("tanh", lambda: _weighted_sum(nm.tanh(a), np.random.default_rng(8)), {"a": a})
    run("sigmoid", lambda: _weighted_sum(nm.sigmoid(a), np.random.default_rng(9)), {"a": a})
    k = randp(3, 4, lo=0.3)  # relu/clamp probed away from their kinks
    run("relu", lambda: _weighted_sum(nm.relu(k), np.random.default_rng(10)), {"k": k})
    run("gelu", lambda: _weighted_sum(nm.gelu(a), np.random.default_rng(11)), {"a": a})
    run("clamp_min", lambda: _weighted_sum(nm.clamp_min(k, 0.1), np.random.default_rng(12)), {"k": k})
    run("reshape", lambda: _weighted_sum(nm.reshape(a, (4, 3)), np.random.default_rng(13)), {"a": a})
    t3 = randp(2, 3, 4)
    run("transpose", lambda: _weighted_sum(nm.transpose(t3, (2, 0, 1)), np.random.default_rng(14)), {"t": t3})
    run("concat", lambda: _weighted_sum(nm.concat([a, b], axis=1), np.random.default_rng(15)), {"a": a, "b": b})
    run("getitem_slice", lambda: _weighted_sum(a[1:, :2], np.random.default_rng(16)), {"a": a})
    idx = np.array([0, 2, 2])
    run("getitem_fancy", lambda: _weighted_sum(nm.getitem(a, idx), np.random.default_rng(17)), {"a": a})
    run("reduce_sum", lambda: _weighted_sum(nm.reduce_sum(t3, axis=1), np.random.default_rng(18)), {"t": t3})
    run("reduce_mean", lambda: _weighted_sum(nm.reduce_mean(t3, axis=(0, 2)), np.random.default_rng(19)), {"t": t3})
    m1, m2 = randp(2, 3, 4), randp(4, 5)
    run("matmul", lambda: _weighted_sum(nm.matmul(m1, m2), np.random.default_rng(20)), {"a": m1, "b": m2})
    run("softmax", lambda: _weighted_sum(nm.softmax(a), np.random.default_rng(21)), {"a": a})
    mask = np.random.default_rng(0).random((3, 4)) < 0.4
    run("masked_fill", lambda: _weighted_sum(nm.softmax(nm.masked_fill(a, mask, -1e9)), np.random.default_rng(22)), {"a": a})
    g, be = randp(4), randp(4)
    run("layer_norm", lambda: _weighted_sum(nm.layer_norm(a, g, be), np.random.default_rng(23)), {"x": a, "g": g, "b": be})
    table = randp(6, 4)
    ids = np.array([[0, 3], [5, 3]])
    run("embedding", lambda: _weighted_sum(nm.embedding(table, ids), np.random.default_rng(24)), {"t": table})
    rows = randp(4, 5)
    ridx = np.array([1, 0, 4, 2])
    run("take_rows", lambda: _weighted_sum(nm.take_rows(rows, ridx), np.random.default_rng(25)), {"r": rows})
    wts = randp(3, 4)
    cols = np.array([[0, 2, 2, 5], [1, 1, 3, 0], [4, 0, 2, 2]])
    run("scatter_add_cols", lambda: _weighted_sum(nm.scatter_add_cols(wts, cols, 6), np.random.default_rng(26)), {"w": wts})
    src = randp(2, 4, 3)
    gidx = np.array([[0, 2, 2], [3, 1, 0]])
    run("batched_gather", lambda: _weighted_sum(nm.batched_gather(src, gidx), np.random.default_rng(27)), {"s": src})
    logits = randp(4, 6)
    targets = np.array([2, 0, 5, 2])
    run("cross_entropy", lambda: nm.reduce_mean(nm.cross_entropy(logits, targets)), {"l": logits})
    return results


def _tiny_fixture(seed: int):
    texts = [
        "bela rota is a vono in mirel .",
        "kedo nam is a lipo from sater .",
    ]
    records = [
        KnowledgeRecord([Entity("bela rota", [("type", "vono"), ("area", "mirel")])]),
        KnowledgeRecord([Entity("kedo nam", [("type", "lipo"), ("origin", "sater")])]),
    ]
    vocab = train_bpe(texts + ["type area origin vono lipo mirel sater"], N_BASE + 6)
    return records, texts, vocab


def check_full_loss(seed: int = 0) -> dict[str, float]:
    """Grad-check the complete loss: both encoders x four ablation modes."""
    records, texts, vocab = _tiny_fixture(seed)
    results: dict[str, float] = {}
    for enc in ("graph", "sequence"):
        for copy, copy_loss in ((True, True), (True, False), (False, True), (False, False)):
            config = ModelConfig(
                vocab_size=vocab.size, hidden=8, heads=2, enc_layers=1,
                dec_layers=1, ffn_mult=2, encoder=enc, copy=copy, copy_loss=copy_loss,
            )
            params = init_params(config, seed=seed, dtype=np.float64)
            # Check at a generic random point, not the training init: zero
            # biases and 0.02-scale weights park many relu pre-activations
            # within finite-difference reach of the kink, where central
            # differences are meaningless.
            rng = np.random.default_rng([seed, 17])
            for p in params.values():
                p.data = rng.normal(scale=0.3, size=p.data.shape)

            def loss_fn():
                return nll_loss(records, texts, vocab, params, config)[0]

            name = f"loss[{enc},copy={'on' if copy else 'off'},closs={'on' if copy_loss else 'off'}]"
            results[name] = nm.grad_check(loss_fn, params, max_elements=3, seed=seed)
    return results


def run_all(seed: int = 0) -> dict[str, float]:
    results = check_primitives(seed)
    results.update(check_full_loss(seed))
    return results
