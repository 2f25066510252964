"""Transformer decoder with a gated copy mechanism.

Each layer runs masked self-attention then cross-attention to the encoder
states, both followed by the shared LayerNorm(MLP(·+x)) block.  The output
distribution mixes the vocabulary softmax with a copy distribution over the
source subwords through a sigmoid gate:

    P(w) = p_gen * P_voc(w) + (1 - p_gen) * sum_{j: x_j = w} alpha_j

where alpha is a softmax over raw dot products between the decoder state
and the copy-view vectors.  A config switch removes the copy path entirely;
another adds an auxiliary loss that pushes probability through it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numerics as nm
from .encoder import (
    EncoderOutput,
    ModelConfig,
    encode_batch,
    multi_head_attention,
    residual_block,
)
from .errors import EmptyBatch, EmptyEncoderOutput, LengthMismatch
from .numerics import Tensor
from .record import KnowledgeRecord
from .tokenizer import BOS, EOS, PAD, SubwordVocab

PROB_FLOOR = 1e-30  # keeps log() finite; far below any reachable probability


@dataclass
class StepDistribution:
    """One decoding step's output distribution and its copy internals."""

    probs: np.ndarray            # (V,)
    copy_attn: np.ndarray | None  # (S,) over copy-view positions, None when copy is off
    p_gen: float | None

    def __post_init__(self):
        if abs(float(self.probs.sum()) - 1.0) > 1e-4:
            raise LengthMismatch("step distribution does not sum to 1")


# -- teacher-forced forward ------------------------------------------------


def _decoder_hidden(
    inp_ids: np.ndarray,
    inp_mask: np.ndarray,
    enc: EncoderOutput,
    params: dict[str, Tensor],
    config: ModelConfig,
) -> Tensor:
    """Hidden states o for every prefix position, (B, T, D)."""
    b, t = inp_ids.shape
    x = nm.embedding(params["emb.token"], inp_ids)
    x = nm.add(x, nm.embedding(params["dec.emb.position"], np.arange(t)))
    causal = np.tril(np.ones((t, t), dtype=bool))
    self_mask = causal[None, :, :] & inp_mask[:, None, :]
    cross_mask = np.broadcast_to(
        enc.state_mask[:, None, :], (b, t, enc.state_mask.shape[1])
    )
    scale = 1.0 / math.sqrt(config.hidden)
    for l in range(config.dec_layers):
        attn = multi_head_attention(
            x, x, params, f"dec.d{l}.self", config.heads, self_mask, scale
        )
        x = residual_block(attn, x, params, f"dec.d{l}.self")
        attn = multi_head_attention(
            x, enc.states, params, f"dec.d{l}.cross", config.heads, cross_mask, scale
        )
        x = residual_block(attn, x, params, f"dec.d{l}.cross")
    return x


def _gate(o: Tensor, params: dict[str, Tensor]) -> Tensor:
    h = nm.relu(nm.add(nm.matmul(o, params["dec.gate.w1"]), params["dec.gate.b1"]))
    return nm.sigmoid(nm.add(nm.matmul(h, params["dec.gate.w2"]), params["dec.gate.b2"]))


def _copy_attention(
    o: Tensor, enc: EncoderOutput, config: ModelConfig
) -> Tensor:
    """alpha over copy-view positions: softmax of raw o·C dot products, (B, T, S)."""
    scores = nm.matmul(o, nm.transpose(enc.copy_states, (0, 2, 1)))
    if config.scale_copy_attention:
        scores = nm.mul(scores, 1.0 / math.sqrt(config.hidden))
    scores = nm.masked_fill(scores, ~enc.copy_mask[:, None, :], -1e9)
    return nm.softmax(scores, axis=-1)


def _mixture(
    o: Tensor,
    enc: EncoderOutput,
    params: dict[str, Tensor],
    config: ModelConfig,
) -> tuple[Tensor, Tensor | None, Tensor | None, Tensor | None]:
    """Distribution (B, T, V) plus the copy internals (alpha, p_gen, copy_dist)."""
    b, t, _ = o.data.shape
    v = config.vocab_size
    logits = nm.add(nm.matmul(o, params["out.w"]), params["out.b"])
    p_voc = nm.softmax(logits, axis=-1)
    if not config.copy:
        return p_voc, None, None, None
    alpha = _copy_attention(o, enc, config)
    p_gen = _gate(o, params)
    alpha_flat = nm.reshape(alpha, (b * t, alpha.data.shape[-1]))
    col_ids = np.repeat(enc.copy_ids, t, axis=0)
    copy_dist = nm.reshape(nm.scatter_add_cols(alpha_flat, col_ids, v), (b, t, v))
    probs = nm.add(
        nm.mul(p_gen, p_voc), nm.mul(nm.add(1.0, nm.mul(p_gen, -1.0)), copy_dist)
    )
    return probs, alpha, p_gen, copy_dist


# -- targets and loss ------------------------------------------------------


def target_arrays(
    texts: Sequence[str], vocab: SubwordVocab, config: ModelConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(decoder inputs, gold next-tokens, validity mask), each (B, T)."""
    seqs = []
    for text in texts:
        ids = [BOS] + vocab.encode(text)[: config.max_target_tokens - 2] + [EOS]
        seqs.append(ids)
    t = max(len(s) for s in seqs) - 1
    b = len(seqs)
    inp = np.full((b, t), PAD, dtype=np.int64)
    gold = np.full((b, t), PAD, dtype=np.int64)
    mask = np.zeros((b, t), dtype=bool)
    for i, s in enumerate(seqs):
        n = len(s) - 1
        inp[i, :n] = s[:-1]
        gold[i, :n] = s[1:]
        mask[i, :n] = True
    return inp, gold, mask


def nll_loss(
    records: Sequence[KnowledgeRecord],
    texts: Sequence[str],
    vocab: SubwordVocab,
    params: dict[str, Tensor],
    config: ModelConfig,
) -> tuple[Tensor, int]:
    """Mean per-token negative log-likelihood over the batch.

    With the copy path on, the likelihood is the gated mixture; the optional
    auxiliary term supervises the copy channel itself on steps whose gold
    token occurs among the source subwords, weighted by copy_loss_weight.
    Returns the scalar loss and the number of scored tokens.
    """
    if not records:
        raise EmptyBatch("empty training batch")
    if len(records) != len(texts):
        raise LengthMismatch(f"{len(records)} records vs {len(texts)} texts")
    enc = encode_batch(records, vocab, params, config)
    inp, gold, mask = target_arrays(texts, vocab, config)
    o = _decoder_hidden(inp, mask, enc, params, config)
    b, t, _ = o.data.shape
    n_tokens = int(mask.sum())
    fmask = mask.astype(o.data.dtype)

    if not config.copy:
        logits = nm.add(nm.matmul(o, params["out.w"]), params["out.b"])
        flat = nm.reshape(logits, (b * t, config.vocab_size))
        nll = nm.cross_entropy(flat, gold.reshape(-1))
        loss = nm.mul(nm.reduce_sum(nm.mul(nll, fmask.reshape(-1))), 1.0 / n_tokens)
        return loss, n_tokens

    probs, _, p_gen, copy_dist = _mixture(o, enc, params, config)
    flat_probs = nm.reshape(probs, (b * t, config.vocab_size))
    gold_p = nm.take_rows(flat_probs, gold.reshape(-1))
    nll = nm.mul(nm.log(nm.clamp_min(gold_p, PROB_FLOOR)), -1.0)
    loss = nm.mul(nm.reduce_sum(nm.mul(nll, fmask.reshape(-1))), 1.0 / n_tokens)

    if config.copy_loss:
        # copiable steps: gold token present among this record's source subwords
        present = (enc.copy_ids[:, None, :] == gold[:, :, None]) & enc.copy_mask[:, None, :]
        copiable = (present.any(axis=-1) & mask).astype(o.data.dtype)
        n_copiable = float(copiable.sum())
        if n_copiable > 0:
            mass = nm.take_rows(
                nm.reshape(copy_dist, (b * t, config.vocab_size)), gold.reshape(-1)
            )
            gate_flat = nm.reshape(nm.add(1.0, nm.mul(p_gen, -1.0)), (b * t,))
            copy_path = nm.mul(gate_flat, mass)
            term = nm.mul(nm.log(nm.clamp_min(copy_path, PROB_FLOOR)), -1.0)
            term = nm.mul(nm.reduce_sum(nm.mul(term, copiable.reshape(-1))), 1.0 / n_copiable)
            loss = nm.add(loss, nm.mul(term, config.copy_loss_weight))
    return loss, n_tokens


def batch_nll(
    records: Sequence[KnowledgeRecord],
    texts: Sequence[str],
    vocab: SubwordVocab,
    params: dict[str, Tensor],
    config: ModelConfig,
) -> tuple[float, int]:
    """Summed plain NLL and token count, for perplexity."""
    with nm.no_grad():
        enc = encode_batch(records, vocab, params, config)
        inp, gold, mask = target_arrays(texts, vocab, config)
        o = _decoder_hidden(inp, mask, enc, params, config)
        b, t, _ = o.data.shape
        probs, _, _, _ = _mixture(o, enc, params, config)
        flat = probs.data.reshape(b * t, config.vocab_size)
        gold_p = np.maximum(flat[np.arange(b * t), gold.reshape(-1)], PROB_FLOOR)
        nll = -np.log(gold_p) * mask.reshape(-1)
        return float(nll.sum()), int(mask.sum())


# -- single-instance stepping ---------------------------------------------


@dataclass
class DecoderState:
    """Incremental state for one instance: prefix plus per-layer input caches."""

    prefix: list[int]
    layer_inputs: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.prefix or self.prefix[0] != BOS:
            raise LengthMismatch("decoder prefix must begin with BOS")


def init_state() -> DecoderState:
    return DecoderState([BOS])


def decode_step(
    state: DecoderState,
    enc: EncoderOutput,
    params: dict[str, Tensor],
    config: ModelConfig,
) -> StepDistribution:
    """Distribution over the next token after the state's prefix.

    Caches each layer's input sequence so a step costs one position of new
    attention; the caller appends the chosen token to `state.prefix`.
    """
    if enc.states.data.shape[1] == 0 or not enc.state_mask.any():
        raise EmptyEncoderOutput("encoder output has no states to attend to")
    with nm.no_grad():
        t = len(state.prefix)
        if not state.layer_inputs:
            state.layer_inputs = [
                np.zeros((0, config.hidden), dtype=params["emb.token"].data.dtype)
                for _ in range(config.dec_layers)
            ]
        cached = state.layer_inputs[0].shape[0]
        # replay any prefix positions not yet in the cache (t - cached of them)
        new_ids = np.asarray(state.prefix[cached:], dtype=np.int64)
        x = nm.embedding(params["emb.token"], new_ids[None, :])
        pos = nm.embedding(params["dec.emb.position"], np.arange(cached, t))
        x = nm.add(x, nm.reshape(pos, (1, t - cached, config.hidden)))
        scale = 1.0 / math.sqrt(config.hidden)
        for l in range(config.dec_layers):
            full = np.concatenate([state.layer_inputs[l], x.data[0]], axis=0)
            state.layer_inputs[l] = full
            n_new, n_all = x.data.shape[1], full.shape[0]
            causal = np.tril(np.ones((n_all, n_all), dtype=bool))[None, -n_new:, :]
            attn = multi_head_attention(
                x, Tensor(full[None, :, :]), params, f"dec.d{l}.self",
                config.heads, causal, scale,
            )
            x = residual_block(attn, x, params, f"dec.d{l}.self")
            cross_mask = np.broadcast_to(
                enc.state_mask[:1, None, :], (1, n_new, enc.state_mask.shape[1])
            )
            attn = multi_head_attention(
                x, enc.states, params, f"dec.d{l}.cross", config.heads, cross_mask, scale
            )
            x = residual_block(attn, x, params, f"dec.d{l}.cross")
        o_last = Tensor(x.data[:, -1:, :])
        probs, alpha, p_gen, _ = _mixture(o_last, enc, params, config)
        return StepDistribution(
            probs.data[0, 0].copy(),
            alpha.data[0, 0].copy() if alpha is not None else None,
            float(p_gen.data[0, 0, 0]) if p_gen is not None else None,
        )


# -- generation ------------------------------------------------------------


def _batched_step(
    inp_ids: np.ndarray,
    caches: list[np.ndarray],
    enc: EncoderOutput,
    params: dict[str, Tensor],
    config: ModelConfig,
    step: int,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """One decoding step for a whole batch; returns (B, V) probabilities."""
    b = inp_ids.shape[0]
    x = nm.embedding(params["emb.token"], inp_ids[:, None])
    x = nm.add(x, nm.reshape(nm.embedding(params["dec.emb.position"], np.array([step])), (1, 1, config.hidden)))
    scale = 1.0 / math.sqrt(config.hidden)
    new_caches = []
    for l in range(config.dec_layers):
        full = np.concatenate([caches[l], x.data], axis=1) if caches else x.data
        new_caches.append(full)
        mask = np.ones((b, 1, full.shape[1]), dtype=bool)
        attn = multi_head_attention(
            x, Tensor(full), params, f"dec.d{l}.self", config.heads, mask, scale
        )
        x = residual_block(attn, x, params, f"dec.d{l}.self")
        cross_mask = enc.state_mask[:, None, :]
        attn = multi_head_attention(
            x, enc.states, params, f"dec.d{l}.cross", config.heads, cross_mask, scale
        )
        x = residual_block(attn, x, params, f"dec.d{l}.cross")
    probs, _, _, _ = _mixture(x, enc, params, config)
    return probs.data[:, 0, :], new_caches


def generate_batch(
    records: Sequence[KnowledgeRecord],
    vocab: SubwordVocab,
    params: dict[str, Tensor],
    config: ModelConfig,
    max_len: int = 64,
) -> list[str]:
    """Greedy argmax decoding for a batch; ties go to the lower token id."""
    if not records:
        return []
    max_len = min(max_len, config.max_target_tokens - 1)
    with nm.no_grad():
        enc = encode_batch(records, vocab, params, config)
        b = len(records)
        cur = np.full(b, BOS, dtype=np.int64)
        caches: list[np.ndarray] = []
        outputs: list[list[int]] = [[] for _ in range(b)]
        alive = np.ones(b, dtype=bool)
        for step in range(max_len):
            probs, caches = _batched_step(cur, caches, enc, params, config, step)
            nxt = probs.argmax(axis=-1).astype(np.int64)  # argmax takes first max: lowest id
            for i in range(b):
                if alive[i]:
                    if nxt[i] == EOS:
                        alive[i] = False
                    else:
                        outputs[i].append(int(nxt[i]))
            if not alive.any():
                break
            cur = np.where(alive, nxt, PAD)
    return [vocab.decode(ids) for ids in outputs]


def _beam_search(
    record: KnowledgeRecord,
    vocab: SubwordVocab,
    params: dict[str, Tensor],
    config: ModelConfig,
    width: int,
    max_len: int,
) -> list[int]:
    """Length-normalized beam search for one record; returns token ids."""
    with nm.no_grad():
        enc = encode_batch([record], vocab, params, config)
        # beams: (ids, logprob, caches); caches per active beam
        beams: list[tuple[list[int], float, list[np.ndarray]]] = [([BOS], 0.0, [])]
        done: list[tuple[float, list[int]]] = []
        for step in range(max_len):
            if not beams:
                break
            cur = np.array([b[0][-1] for b in beams], dtype=np.int64)
            cache_sets = [b[2] for b in beams]
            if cache_sets[0]:
                caches = [
                    np.concatenate([cs[l] for cs in cache_sets], axis=0)
                    for l in range(config.dec_layers)
                ]
            else:
                caches = []
            k = len(beams)
            enc_k = EncoderOutput(
                Tensor(np.repeat(enc.states.data, k, axis=0)),
                np.repeat(enc.state_mask, k, axis=0),
                Tensor(np.repeat(enc.copy_states.data, k, axis=0)),
                np.repeat(enc.copy_ids, k, axis=0),
                np.repeat(enc.copy_mask, k, axis=0),
            )
            probs, new_caches = _batched_step(cur, caches, enc_k, params, config, step)
            logp = np.log(np.maximum(probs, PROB_FLOOR))
            candidates: list[tuple[float, int, int, float]] = []
            for bi, (ids, lp, _) in enumerate(beams):
                length = len(ids)  # BOS included: equals the scored-token count after appending
                for tok in range(config.vocab_size):
                    total = lp + float(logp[bi, tok])
                    candidates.append((-(total / length), tok, bi, total))
            candidates.sort(key=lambda c: (c[0], c[1], c[2]))
            next_beams = []
            for neg_norm, tok, bi, total in candidates:
                ids = beams[bi][0] + [tok]
                if tok == EOS:
                    done.append((-neg_norm, ids))
                else:
                    cset = [new_caches[l][bi : bi + 1] for l in range(config.dec_layers)]
                    next_beams.append((ids, total, cset))
                if len(next_beams) >= width:
                    break
            beams = next_beams
        for ids, lp, _ in beams:
            done.append((lp / max(len(ids) - 1, 1), ids))
        if not done:
            return []
        done.sort(key=lambda d: (-d[0], d[1]))
        return done[0][1]


def generate(
    record: KnowledgeRecord,
    vocab: SubwordVocab,
    params: dict[str, Tensor],
    config: ModelConfig,
    mode: str = "greedy",
    beam_width: int = 4,
    max_len: int = 64,
) -> str:
    """Decode one record to text; greedy or length-normalized beam search."""
    max_len = min(max_len, config.max_target_tokens - 1)
    if mode == "greedy":
        return generate_batch([record], vocab, params, config, max_len)[0]
    if mode != "beam":
        raise LengthMismatch(f"unknown generation mode {mode!r}")
    ids = _beam_search(record, vocab, params, config, max(1, beam_width), max_len)
    core = [i for i in ids if i not in (BOS, EOS)]
    return vocab.decode(core)
