"""Input encoders over knowledge records.

Two interchangeable encoders produce the state matrix the decoder attends
to: a hierarchical graph-attention encoder that propagates information
through pseudo nodes in four fixed stages, and a flat sequence encoder that
marks structure with entity/triple/property embeddings.  Both also emit a
"copy view": one vector per linearized source subword, aligned with the
subword id it would copy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nm
from .errors import CapsExceeded, ConfigMismatch, EmptyBatch
from .numerics import Tensor
from .record import Entity, KnowledgeRecord
from .tokenizer import ENT, PAD, TRIPLE, SubwordVocab

PROP_S, PROP_P, PROP_O = 0, 1, 2

MASK_VALUE = -1e9  # large enough that softmax underflows masked slots to exactly 0.0


@dataclass(frozen=True)
class ModelConfig:
    """Shared shape/ablation knobs for encoders and decoder."""

    vocab_size: int
    hidden: int = 128
    heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    ffn_mult: int = 4
    encoder: str = "graph"  # "graph" or "sequence"
    copy: bool = True
    copy_loss: bool = True
    copy_loss_weight: float = 1.0
    scale_graph_attention: bool = False
    scale_copy_attention: bool = False
    max_entities: int = 8
    max_triples: int = 8
    max_source_tokens: int = 256
    max_target_tokens: int = 128

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise ConfigMismatch(
                f"hidden size {self.hidden} not divisible by head count {self.heads}"
            )
        if self.encoder not in ("graph", "sequence"):
            raise ConfigMismatch(f"unknown encoder kind {self.encoder!r}")


# -- graph structure ------------------------------------------------------

ENT_NODE, TRIPLE_NODE, LEAF_NODE = "ent", "triple", "leaf"


@dataclass(frozen=True)
class GraphNode:
    kind: str
    surface: str | None  # None for pseudo nodes
    entity: int
    triple: int  # -1 on entity nodes
    role: str | None = None  # "s" | "p" | "o" on leaves


@dataclass(frozen=True)
class GraphStructure:
    nodes: tuple[GraphNode, ...]
    # four stages of directed (src, dst) edges:
    #   0: leaf -> leaf inside a triple, 1: leaf -> triple marker,
    #   2: triple marker -> entity marker, 3: entity marker <-> entity marker
    stage_edges: tuple[tuple[tuple[int, int], ...], ...]

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)


def clamp_record(record: KnowledgeRecord, config: ModelConfig) -> KnowledgeRecord:
    """Drop entities/triples beyond the caps; identity when already within."""
    ents = record.entities[: config.max_entities]
    clamped = []
    changed = len(ents) != len(record.entities)
    for e in ents:
        if len(e.triples) > config.max_triples:
            clamped.append(Entity(e.subject, list(e.triples[: config.max_triples])))
            changed = True
        else:
            clamped.append(e)
    if not changed:
        return record
    return KnowledgeRecord(clamped, id=record.id)


def build_graph(record: KnowledgeRecord, config: ModelConfig) -> GraphStructure:
    if len(record.entities) > config.max_entities:
        raise CapsExceeded(
            f"{len(record.entities)} entities exceeds cap {config.max_entities}"
        )
    nodes: list[GraphNode] = []
    ent_ids: list[int] = []
    stages: tuple[list[tuple[int, int]], ...] = ([], [], [], [])
    for ei, ent in enumerate(record.entities):
        if len(ent.triples) > config.max_triples:
            raise CapsExceeded(
                f"entity {ent.subject!r} has {len(ent.triples)} triples, cap {config.max_triples}"
            )
        ent_node = len(nodes)
        ent_ids.append(ent_node)
        nodes.append(GraphNode(ENT_NODE, None, ei, -1))
        for ti, (pred, obj) in enumerate(ent.triples):
            trip_node = len(nodes)
            nodes.append(GraphNode(TRIPLE_NODE, None, ei, ti))
            leaves = []
            for role, surface in (("s", ent.subject), ("p", pred), ("o", obj)):
                leaves.append(len(nodes))
                nodes.append(GraphNode(LEAF_NODE, surface, ei, ti, role))
            for a in leaves:
                for b in leaves:
                    if a != b:
                        stages[0].append((a, b))
            for a in leaves:
                stages[1].append((a, trip_node))
            stages[2].append((trip_node, ent_node))
    for a in ent_ids:
        for b in ent_ids:
            if a != b:
                stages[3].append((a, b))
    return GraphStructure(tuple(nodes), tuple(tuple(s) for s in stages))


# -- linearization --------------------------------------------------------


@dataclass(frozen=True)
class LinearizedInput:
    token_ids: tuple[int, ...]
    entity_idx: tuple[int, ...]
    triple_idx: tuple[int, ...]
    property_idx: tuple[int, ...]
    positions: tuple[int, ...]
    surfaces: tuple[str, ...]
    truncated: bool
    # graph leaf index owning each position, filled when pairing with build_graph
    owner_leaf: tuple[int, ...] = ()

    def __post_init__(self):
        n = len(self.token_ids)
        for name in ("entity_idx", "triple_idx", "property_idx", "positions", "surfaces"):
            if len(getattr(self, name)) != n:
                raise ConfigMismatch(f"linearized field {name} length mismatch")


def linearize(
    record: KnowledgeRecord, vocab: SubwordVocab, config: ModelConfig
) -> LinearizedInput:
    """Flatten a record entity by entity.

    Subject subwords come once per entity with property S and triple index 0;
    triple j (1-based) contributes its predicate (P) then object (O) subwords.
    The parallel owner list maps every position onto the graph leaf whose
    final vector backs it when the graph encoder is in use: subject positions
    onto the first triple's subject leaf.
    """
    record = clamp_record(record, config)
    ids: list[int] = []
    ent_i: list[int] = []
    trip_i: list[int] = []
    prop_i: list[int] = []
    surfaces: list[str] = []
    owners: list[int] = []
    truncated = False
    node_cursor = 0  # mirrors build_graph's node numbering
    for ei, ent in enumerate(record.entities):
        ent_node = node_cursor
        node_cursor += 1
        first_subj_leaf = ent_node + 2  # ENT, TRIPLE, subject leaf
        segments: list[tuple[str, int, int, int]] = [(ent.subject, 0, PROP_S, first_subj_leaf)]
        for ti, (pred, obj) in enumerate(ent.triples):
            trip_node = node_cursor
            node_cursor += 4  # TRIPLE + 3 leaves
            segments.append((pred, ti + 1, PROP_P, trip_node + 2))
            segments.append((obj, ti + 1, PROP_O, trip_node + 3))
        for surface, tj, prop, leaf in segments:
            for tok in vocab.encode(surface):
                if len(ids) >= config.max_source_tokens:
                    truncated = True
                    break
                ids.append(tok)
                ent_i.append(ei)
                trip_i.append(tj)
                prop_i.append(prop)
                surfaces.append(vocab.decode([tok]))
                owners.append(leaf)
            if truncated:
                break
        if truncated:
            break
    return LinearizedInput(
        tuple(ids), tuple(ent_i), tuple(trip_i), tuple(prop_i),
        tuple(range(len(ids))), tuple(surfaces), truncated, tuple(owners),
    )


# -- parameters -----------------------------------------------------------


def _block_names(prefix: str) -> list[str]:
    return [f"{prefix}.{n}" for n in ("wq", "wk", "wv", "w1", "b1", "w2", "b2", "ln_g", "ln_b")]


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Full parameter manifest; iteration order is the canonical storage order."""
    d, f, v = config.hidden, config.ffn_mult * config.hidden, config.vocab_size
    shapes: dict[str, tuple[int, ...]] = {
        "emb.token": (v, d),
        "emb.position": (config.max_source_tokens, d),
        "emb.entity": (config.max_entities, d),
        "emb.triple": (config.max_triples + 1, d),
        "emb.property": (3, d),
        "graph.ent_order": (config.max_entities, d),
    }

    def block(prefix: str) -> None:
        shapes[f"{prefix}.wq"] = (d, d)
        shapes[f"{prefix}.wk"] = (d, d)
        shapes[f"{prefix}.wv"] = (d, d)
        shapes[f"{prefix}.w1"] = (d, f)
        shapes[f"{prefix}.b1"] = (f,)
        shapes[f"{prefix}.w2"] = (f, d)
        shapes[f"{prefix}.b2"] = (d,)
        shapes[f"{prefix}.ln_g"] = (d,)
        shapes[f"{prefix}.ln_b"] = (d,)

    for r in range(config.enc_layers):
        if config.encoder == "graph":
            for s in range(4):
                block(f"graph.r{r}.s{s}")
        else:
            block(f"seq.k{r}")
    shapes["dec.emb.position"] = (config.max_target_tokens, d)
    for l in range(config.dec_layers):
        block(f"dec.d{l}.self")
        block(f"dec.d{l}.cross")
    shapes["dec.gate.w1"] = (d, d)
    shapes["dec.gate.b1"] = (d,)
    shapes["dec.gate.w2"] = (d, 1)
    shapes["dec.gate.b2"] = (1,)
    shapes["out.w"] = (d, v)
    shapes["out.b"] = (v,)
    return shapes


def init_params(
    config: ModelConfig, seed: int, dtype=np.float32
) -> dict[str, Tensor]:
    """Weights ~ N(0, 0.02²), biases and LN shifts zero, LN scales one."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(("ln_g",)):
            data = np.ones(shape, dtype=dtype)
        elif name.endswith(("ln_b", ".b1", ".b2")) or name == "out.b":
            data = np.zeros(shape, dtype=dtype)
        else:
            data = rng.normal(0.0, 0.02, size=shape).astype(dtype)
        params[name] = nm.parameter(data)
    return params


# -- attention plumbing ---------------------------------------------------


def multi_head_attention(
    q_in: Tensor,
    kv_in: Tensor,
    params: dict[str, Tensor],
    prefix: str,
    heads: int,
    mask: np.ndarray,
    scale: float | None,
) -> Tensor:
    """Masked multi-head dot-product attention; returns concatenated heads.

    `mask` is (B, Nq, Nk) with True marking attendable keys.  Fully masked
    query rows come out as a uniform mix; callers gate those away.
    """
    b, nq, d = q_in.data.shape
    nk = kv_in.data.shape[1]
    dh = d // heads
    q = nm.matmul(q_in, params[f"{prefix}.wq"])
    k = nm.matmul(kv_in, params[f"{prefix}.wk"])
    v = nm.matmul(kv_in, params[f"{prefix}.wv"])
    q = nm.transpose(nm.reshape(q, (b, nq, heads, dh)), (0, 2, 1, 3))
    k = nm.transpose(nm.reshape(k, (b, nk, heads, dh)), (0, 2, 1, 3))
    v = nm.transpose(nm.reshape(v, (b, nk, heads, dh)), (0, 2, 1, 3))
    scores = nm.matmul(q, nm.transpose(k, (0, 1, 3, 2)))
    if scale is not None:
        scores = nm.mul(scores, scale)
    scores = nm.masked_fill(scores, ~mask[:, None, :, :], MASK_VALUE)
    probs = nm.softmax(scores, axis=-1)
    out = nm.matmul(probs, v)
    return nm.reshape(nm.transpose(out, (0, 2, 1, 3)), (b, nq, d))


def residual_block(
    attn_out: Tensor, x: Tensor, params: dict[str, Tensor], prefix: str
) -> Tensor:
    """LayerNorm(MLP(attention + input)): the update rule shared by every block."""
    h = nm.add(attn_out, x)
    h = nm.relu(nm.add(nm.matmul(h, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    h = nm.add(nm.matmul(h, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])
    return nm.layer_norm(h, params[f"{prefix}.ln_g"], params[f"{prefix}.ln_b"])


def gated_update(new: Tensor, old: Tensor, update_mask: np.ndarray) -> Tensor:
    """Keep `old` rows where update_mask is false (nodes with no in-edges)."""
    m = update_mask.astype(old.data.dtype)[:, :, None]
    return nm.add(nm.mul(new, m), nm.mul(old, 1.0 - m))


# -- encoder output -------------------------------------------------------


@dataclass
class EncoderOutput:
    """States the decoder attends to plus the aligned copy view."""

    states: Tensor          # (B, N, D)
    state_mask: np.ndarray  # (B, N) bool
    copy_states: Tensor     # (B, S, D)
    copy_ids: np.ndarray    # (B, S) int64, PAD on padding
    copy_mask: np.ndarray   # (B, S) bool

    def __post_init__(self):
        if self.states.data.shape[1] == 0:
            raise EmptyBatch("encoder produced zero states")
        if self.copy_states.data.shape[1] != self.copy_ids.shape[1]:
            raise ConfigMismatch("copy view misaligned with its token ids")


def _pad_linearizations(
    lins: Sequence[LinearizedInput], config: ModelConfig
) -> tuple[np.ndarray, ...]:
    b = len(lins)
    s = max(len(l.token_ids) for l in lins)
    ids = np.full((b, s), PAD, dtype=np.int64)
    ent = np.zeros((b, s), dtype=np.int64)
    trip = np.zeros((b, s), dtype=np.int64)
    prop = np.zeros((b, s), dtype=np.int64)
    pos = np.zeros((b, s), dtype=np.int64)
    own = np.zeros((b, s), dtype=np.int64)
    mask = np.zeros((b, s), dtype=bool)
    for i, l in enumerate(lins):
        n = len(l.token_ids)
        ids[i, :n] = l.token_ids
        ent[i, :n] = l.entity_idx
        trip[i, :n] = l.triple_idx
        prop[i, :n] = l.property_idx
        pos[i, :n] = l.positions
        own[i, :n] = l.owner_leaf
        mask[i, :n] = True
    return ids, ent, trip, prop, pos, own, mask


# -- graph encoder --------------------------------------------------------


def _graph_batch_arrays(
    graphs: Sequence[GraphStructure], vocab: SubwordVocab, config: ModelConfig
):
    """Dense per-batch node/token index arrays for the graph encoder."""
    b = len(graphs)
    n = max(g.n_nodes for g in graphs)
    tok_lists: list[list[list[int]]] = []
    tmax = 1
    for g in graphs:
        per_node = []
        for node in g.nodes:
            if node.kind == ENT_NODE:
                per_node.append([ENT])
            elif node.kind == TRIPLE_NODE:
                per_node.append([TRIPLE])
            else:
                enc = vocab.encode(node.surface)
                per_node.append(enc if enc else [PAD])
        tok_lists.append(per_node)
        tmax = max(tmax, max(len(t) for t in per_node))
    tok_ids = np.full((b, n, tmax), PAD, dtype=np.int64)
    tok_mask = np.zeros((b, n, tmax), dtype=np.float64)
    ent_order = np.zeros((b, n), dtype=np.int64)
    ent_mask = np.zeros((b, n), dtype=np.float64)
    node_mask = np.zeros((b, n), dtype=bool)
    adj = np.zeros((4, b, n, n), dtype=bool)
    upd = np.zeros((4, b, n), dtype=bool)
    for i, g in enumerate(graphs):
        node_mask[i, : g.n_nodes] = True
        for j, node in enumerate(g.nodes):
            toks = tok_lists[i][j]
            tok_ids[i, j, : len(toks)] = toks
            tok_mask[i, j, : len(toks)] = 1.0
            if node.kind == ENT_NODE:
                ent_order[i, j] = node.entity
                ent_mask[i, j] = 1.0
        for s, edges in enumerate(g.stage_edges):
            for src, dst in edges:
                adj[s, i, dst, src] = True  # query=dst attends to key=src
                upd[s, i, dst] = True
    return tok_ids, tok_mask, ent_order, ent_mask, node_mask, adj, upd


def init_node_embeddings(
    tok_ids: np.ndarray,
    tok_mask: np.ndarray,
    ent_order: np.ndarray,
    ent_mask: np.ndarray,
    params: dict[str, Tensor],
) -> Tensor:
    """Mean of each node's subword embeddings; entity markers add an order signal."""
    emb = nm.embedding(params["emb.token"], tok_ids)  # (B, N, T, D)
    mask = tok_mask[:, :, :, None]
    counts = np.maximum(tok_mask.sum(axis=2), 1.0)[:, :, None]
    mean = nm.mul(nm.reduce_sum(nm.mul(emb, mask), axis=2), 1.0 / counts)
    order = nm.embedding(params["graph.ent_order"], ent_order)
    return nm.add(mean, nm.mul(order, ent_mask[:, :, None]))


def encode_graph_batch(
    records: Sequence[KnowledgeRecord],
    vocab: SubwordVocab,
    params: dict[str, Tensor],
    config: ModelConfig,
) -> EncoderOutput:
    """Hierarchical propagation: leaf↔leaf, leaf→triple, triple→entity, entity↔entity.

    Each of the `enc_layers` rounds runs the four stages in that order with
    stage-specific parameters; nodes a stage gives no in-edges keep their
    vectors.  The copy view gathers each linearized position's owning leaf
    vector, so copying operates over the same subword layout as the sequence
    encoder.  The position's own token and position embeddings are added on
    top: the bare leaf vector is shared by all of the leaf's subwords, which
    would force copy attention to stay uniform inside a multi-subword
    surface, and without the position term two equal subwords in one surface
    are indistinguishable, so spelled-out copying of a novel string could
    never walk the chain in order.
    """
    if not records:
        raise EmptyBatch("no records to encode")
    records = [clamp_record(r, config) for r in records]
    graphs = [build_graph(r, config) for r in records]
    tok_ids, tok_mask, ent_order, ent_mask, node_mask, adj, upd = _graph_batch_arrays(
        graphs, vocab, config
    )
    x = init_node_embeddings(tok_ids, tok_mask, ent_order, ent_mask, params)
    scale = 1.0 / math.sqrt(config.hidden) if config.scale_graph_attention else None
    for r in range(config.enc_layers):
        for s in range(4):
            prefix = f"graph.r{r}.s{s}"
            attn = multi_head_attention(
                x, x, params, prefix, config.heads, adj[s], scale
            )
            updated = residual_block(attn, x, params, prefix)
            x = gated_update(updated, x, upd[s])

    lins = [linearize(r, vocab, config) for r in records]
    ids, _, _, _, pos, own, cmask = _pad_linearizations(lins, config)
    copy_states = nm.add(
        nm.add(nm.batched_gather(x, own), nm.embedding(params["emb.token"], ids)),
        nm.embedding(params["emb.position"], pos),
    )
    return EncoderOutput(x, node_mask, copy_states, ids, cmask)


# -- sequence encoder -----------------------------------------------------


def encode_sequence_batch(
    records: Sequence[KnowledgeRecord],
    vocab: SubwordVocab,
    params: dict[str, Tensor],
    config: ModelConfig,
) -> EncoderOutput:
    """Flat self-attention encoder over the linearization.

    Input embeddings sum token, position, entity, triple, and property
    tables, so structure survives without any graph.  Scores scale by 1/√D.
    The final states double as the copy view.
    """
    if not records:
        raise EmptyBatch("no records to encode")
    lins = [linearize(r, vocab, config) for r in records]
    ids, ent, trip, prop, pos, _, mask = _pad_linearizations(lins, config)
    x = nm.embedding(params["emb.token"], ids)
    x = nm.add(x, nm.embedding(params["emb.position"], pos))
    x = nm.add(x, nm.embedding(params["emb.entity"], ent))
    x = nm.add(x, nm.embedding(params["emb.triple"], trip))
    x = nm.add(x, nm.embedding(params["emb.property"], prop))
    scale = 1.0 / math.sqrt(config.hidden)
    attn_mask = np.broadcast_to(mask[:, None, :], (mask.shape[0], mask.shape[1], mask.shape[1]))
    for k in range(config.enc_layers):
        prefix = f"seq.k{k}"
        attn = multi_head_attention(x, x, params, prefix, config.heads, attn_mask, scale)
        x = residual_block(attn, x, params, prefix)
    return EncoderOutput(x, mask, x, ids, mask)


def encode_batch(
    records: Sequence[KnowledgeRecord],
    vocab: SubwordVocab,
    params: dict[str, Tensor],
    config: ModelConfig,
) -> EncoderOutput:
    if config.encoder == "graph":
        return encode_graph_batch(records, vocab, params, config)
    return encode_sequence_batch(records, vocab, params, config)
