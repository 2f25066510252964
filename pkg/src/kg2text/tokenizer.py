"""Trainable byte-pair-encoding subword tokenizer.

Byte-level base alphabet (all 256 byte values), so any input encodes without
preprocessing; merges never cross the whitespace-piece boundary (a piece is
an optional leading space plus a non-space run, or a whitespace run).
Special tokens occupy fixed low ids and are never produced by merges.
"""

from __future__ import annotations

import heapq
import re
from collections import Counter
from typing import Iterable, Sequence

from .errors import InvalidId, VocabTooSmall

SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<ent>", "<triple>", "<sep>", "<unk>")
PAD, BOS, EOS, ENT, TRIPLE, SEP, UNK = range(7)
N_SPECIALS = len(SPECIAL_TOKENS)
N_BASE = N_SPECIALS + 256  # specials + byte alphabet

_PIECE_RE = re.compile(rb" ?\S+|\s+")
_FORMAT_HEADER = "kg2text-bpe v1"


class SubwordVocab:
    """Immutable after training; encode/decode are safe to call concurrently."""

    def __init__(self, merges: Sequence[tuple[bytes, bytes]]):
        self.merges: list[tuple[bytes, bytes]] = list(merges)
        self.token_bytes: list[bytes] = [b""] * N_SPECIALS + [
            bytes([b]) for b in range(256)
        ]
        by_bytes = {bytes([b]): N_SPECIALS + b for b in range(256)}
        self._merge_ops: list[tuple[int, int, int]] = []
        for left, right in self.merges:
            li, ri = by_bytes[left], by_bytes[right]
            new_id = len(self.token_bytes)
            merged = left + right
            self.token_bytes.append(merged)
            by_bytes[merged] = new_id
            self._merge_ops.append((li, ri, new_id))
        self._piece_cache: dict[bytes, tuple[int, ...]] = {}

    @property
    def size(self) -> int:
        return len(self.token_bytes)

    def _encode_piece(self, piece: bytes) -> tuple[int, ...]:
        cached = self._piece_cache.get(piece)
        if cached is not None:
            return cached
        syms = [N_SPECIALS + b for b in piece]
        if len(syms) >= 2:
            present = set(syms)
            for li, ri, new_id in self._merge_ops:
                if li not in present or ri not in present:
                    continue
                out: list[int] = []
                i, n = 0, len(syms)
                while i < n:
                    if i + 1 < n and syms[i] == li and syms[i + 1] == ri:
                        out.append(new_id)
                        i += 2
                    else:
                        out.append(syms[i])
                        i += 1
                if len(out) != len(syms):
                    syms = out
                    if len(syms) == 1:
                        break
                    present = set(syms)
        result = tuple(syms)
        self._piece_cache[piece] = result
        return result

    def encode(self, text: str) -> list[int]:
        """Apply merges in training order; plain text never yields special ids."""
        ids: list[int] = []
        for m in _PIECE_RE.finditer(text.encode("utf-8")):
            ids.extend(self._encode_piece(m.group()))
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        """Inverse of encode; special tokens render as empty strings."""
        parts = []
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.token_bytes):
                raise InvalidId(f"token id {i} outside vocabulary of size {self.size}")
            parts.append(self.token_bytes[i])
        return b"".join(parts).decode("utf-8", errors="replace")

    def to_text(self) -> str:
        lines = [_FORMAT_HEADER]
        lines.append(f"merges {len(self.merges)}")
        for left, right in self.merges:
            lines.append(f"{left.hex()} {right.hex()}")
        for tok_id, name in enumerate(SPECIAL_TOKENS):
            lines.append(f"special {name} {tok_id}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SubwordVocab":
        lines = text.splitlines()
        if not lines or lines[0] != _FORMAT_HEADER:
            raise InvalidId("unrecognized vocab format header")
        n_merges = int(lines[1].split()[1])
        merges = []
        for ln in lines[2 : 2 + n_merges]:
            left_hex, right_hex = ln.split()
            merges.append((bytes.fromhex(left_hex), bytes.fromhex(right_hex)))
        return cls(merges)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fp:
            fp.write(self.to_text())

    @classmethod
    def load(cls, path) -> "SubwordVocab":
        with open(path, encoding="utf-8") as fp:
            return cls.from_text(fp.read())

    def __eq__(self, other) -> bool:
        return isinstance(other, SubwordVocab) and self.merges == other.merges


def train_bpe(texts: Iterable[str], vocab_size: int) -> SubwordVocab:
    """Greedy highest-frequency pair merging until `vocab_size` is reached.

    Stops early once no adjacent pair occurs at least twice.  Ties between
    equally frequent pairs break lexicographically on the pair's byte
    strings, so retraining on the same corpus is fully deterministic.
    """
    if vocab_size <= N_BASE:
        raise VocabTooSmall(
            f"vocab_size {vocab_size} must exceed base alphabet + specials ({N_BASE})"
        )
    max_merges = vocab_size - N_BASE

    piece_counts: Counter[bytes] = Counter()
    for text in texts:
        for m in _PIECE_RE.finditer(text.encode("utf-8")):
            piece_counts[m.group()] += 1

    token_bytes: list[bytes] = [b""] * N_SPECIALS + [bytes([b]) for b in range(256)]
    pieces: list[list[int]] = []
    counts: list[int] = []
    for piece, c in sorted(piece_counts.items()):
        pieces.append([N_SPECIALS + b for b in piece])
        counts.append(c)

    pair_counts: Counter[tuple[int, int]] = Counter()
    pair_where: dict[tuple[int, int], set[int]] = {}
    for idx, syms in enumerate(pieces):
        c = counts[idx]
        for pair in zip(syms, syms[1:]):
            pair_counts[pair] += c
            pair_where.setdefault(pair, set()).add(idx)

    # Lazy max-heap keyed by (-count, left bytes, right bytes): stale entries
    # are discarded on pop by re-checking the live count.
    heap = [
        (-c, token_bytes[a], token_bytes[b], (a, b))
        for (a, b), c in pair_counts.items()
        if c >= 2
    ]
    heapq.heapify(heap)

    merges: list[tuple[bytes, bytes]] = []
    while len(merges) < max_merges and heap:
        neg_c, _, _, best = heapq.heappop(heap)
        if pair_counts.get(best, 0) != -neg_c:
            continue  # stale
        li, ri = best
        new_id = len(token_bytes)
        token_bytes.append(token_bytes[li] + token_bytes[ri])
        merges.append((token_bytes[li], token_bytes[ri]))

        touched: set[tuple[int, int]] = set()
        for idx in sorted(pair_where.get(best, ())):
            syms = pieces[idx]
            has_pair = any(
                syms[i] == li and syms[i + 1] == ri for i in range(len(syms) - 1)
            )
            if not has_pair:
                continue  # stale index
            c = counts[idx]
            for pair in zip(syms, syms[1:]):
                pair_counts[pair] -= c
                touched.add(pair)
            out: list[int] = []
            i, n = 0, len(syms)
            while i < n:
                if i + 1 < n and syms[i] == li and syms[i + 1] == ri:
                    out.append(new_id)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            pieces[idx] = out
            for pair in zip(out, out[1:]):
                pair_counts[pair] += c
                pair_where.setdefault(pair, set()).add(idx)
                touched.add(pair)
        for pair in touched:
            c = pair_counts.get(pair, 0)
            if c <= 0:
                pair_counts.pop(pair, None)
                pair_where.pop(pair, None)
            elif c >= 2:
                heapq.heappush(
                    heap, (-c, token_bytes[pair[0]], token_bytes[pair[1]], pair)
                )
        pair_counts.pop(best, None)
        pair_where.pop(best, None)

    return SubwordVocab(merges)


def record_surfaces(record) -> list[str]:
    """All surface strings of a record, for tokenizer training corpora."""
    out = []
    for e in record.entities:
        out.append(e.subject)
        for pred, obj in e.triples:
            out.append(pred)
            out.append(obj)
    return out
