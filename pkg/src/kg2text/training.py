"""Training loops, checkpointing, and the transfer-experiment harness.

Pretraining and fine-tuning share one loop: shuffled minibatches, Adam with
global-norm gradient clipping, per-epoch validation BLEU, best-checkpoint
selection with early stopping.  Runs are deterministic given (seed, config,
thread count); checkpoints round-trip bitwise.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import metrics as M
from . import numerics as nm
from .corpus import split as corpus_split
from .decoder import batch_nll, generate_batch, nll_loss
from .encoder import ModelConfig, init_params, param_shapes
from .errors import (
    ConfigMismatch,
    ContaminationDetected,
    EmptyCorpus,
    EmptyResult,
    IoError,
    UsageError,
)
from .numerics import Adam, Tensor, clip_global_norm, zero_grads
from .record import GroundedPair
from .tokenizer import SubwordVocab

CHECKPOINT_MAGIC = "kg2text-ckpt"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Optimization knobs around a ModelConfig."""

    model: ModelConfig
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0
    eval_every: int = 1
    patience: int = 10
    clip_norm: float = 1.0
    gen_max_len: int = 64

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigMismatch(f"learning rate must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigMismatch(f"batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigMismatch("epochs must be >= 0")

    def to_obj(self) -> dict:
        obj = asdict(self)
        return obj

    @classmethod
    def from_obj(cls, obj: dict) -> "TrainConfig":
        obj = dict(obj)
        obj["model"] = ModelConfig(**obj["model"])
        return cls(**obj)


def full_scale_config(vocab_size: int) -> TrainConfig:
    """Reference full-scale settings; far beyond a desk budget but kept runnable."""
    return TrainConfig(
        model=ModelConfig(
            vocab_size=vocab_size, hidden=768, heads=8, enc_layers=6, dec_layers=6
        ),
        lr=1e-4,
        batch_size=512,
    )


FINETUNE_LR_REFERENCE = 2e-5  # full-scale fine-tuning rate; desk runs use larger


# -- checkpoints -----------------------------------------------------------


@dataclass
class Checkpoint:
    config: TrainConfig
    vocab: SubwordVocab
    params: dict[str, Tensor]
    metadata: dict = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION

    def save(self, path) -> None:
        """Header JSON line, vocab text, then little-endian float32 rows."""
        manifest = list(param_shapes(self.config.model).items())
        missing = [n for n, _ in manifest if n not in self.params]
        if missing:
            raise ConfigMismatch(f"checkpoint missing parameters: {missing[:3]}")
        vocab_bytes = self.vocab.to_text().encode("utf-8")
        header = {
            "format": CHECKPOINT_MAGIC,
            "version": self.version,
            "config": self.config.to_obj(),
            "metadata": self.metadata,
            "vocab_bytes": len(vocab_bytes),
            "params": [[name, list(shape)] for name, shape in manifest],
        }
        tmp = str(path) + ".tmp"
        with open(tmp, "wb") as fp:
            fp.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
            fp.write(vocab_bytes)
            for name, shape in manifest:
                arr = self.params[name].data
                if tuple(arr.shape) != tuple(shape):
                    raise ConfigMismatch(
                        f"parameter {name} has shape {arr.shape}, manifest says {shape}"
                    )
                fp.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as fp:
            blob = fp.read()
        nl = blob.find(b"\n")
        if nl < 0:
            raise IoError(f"{path}: missing checkpoint header")
        header = json.loads(blob[:nl].decode("utf-8"))
        if header.get("format") != CHECKPOINT_MAGIC:
            raise IoError(f"{path}: not a checkpoint file")
        if header.get("version") != CHECKPOINT_VERSION:
            raise IoError(f"{path}: unsupported checkpoint version {header.get('version')}")
        config = TrainConfig.from_obj(header["config"])
        off = nl + 1
        vocab = SubwordVocab.from_text(
            blob[off : off + header["vocab_bytes"]].decode("utf-8")
        )
        off += header["vocab_bytes"]
        params: dict[str, Tensor] = {}
        for name, shape in header["params"]:
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(blob[off : off + 4 * n], dtype="<f4").reshape(shape)
            params[name] = nm.parameter(arr.copy())
            off += 4 * n
        if off != len(blob):
            raise IoError(f"{path}: trailing bytes after parameter payload")
        return cls(config, vocab, params, header["metadata"], header["version"])


def _clone_params(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {k: nm.parameter(p.data.copy()) for k, p in params.items()}


# -- the shared loop -------------------------------------------------------


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_bleu: float
    val_ppl: float


def _write_metric_log(path, history: Sequence[EpochLog]) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fp:
        w = csv.writer(fp)
        w.writerow(["epoch", "train_loss", "val_bleu", "val_ppl"])
        for row in history:
            w.writerow([row.epoch, f"{row.train_loss:.6f}", f"{row.val_bleu:.4f}", f"{row.val_ppl:.6f}"])
    os.replace(tmp, path)


def _validate(
    val_pairs: Sequence[GroundedPair],
    vocab: SubwordVocab,
    params: dict[str, Tensor],
    config: TrainConfig,
) -> tuple[float, float]:
    hyps: list[str] = []
    total_nll, total_tok = 0.0, 0
    bs = max(config.batch_size, 16)
    for i in range(0, len(val_pairs), bs):
        chunk = val_pairs[i : i + bs]
        recs = [p.record for p in chunk]
        texts = [p.text for p in chunk]
        hyps.extend(generate_batch(recs, vocab, params, config.model, config.gen_max_len))
        nll, ntok = batch_nll(recs, texts, vocab, params, config.model)
        total_nll += nll
        total_tok += ntok
    bleu = M.bleu4(hyps, [[p.text] for p in val_pairs])
    ppl = math.exp(total_nll / max(total_tok, 1))
    return bleu, ppl


def run_training(
    train_pairs: Sequence[GroundedPair],
    val_pairs: Sequence[GroundedPair],
    vocab: SubwordVocab,
    params: dict[str, Tensor],
    config: TrainConfig,
    log_path=None,
) -> tuple[list[EpochLog], dict]:
    """Epoch loop with best-on-validation selection; params end at the best."""
    if not train_pairs:
        raise EmptyCorpus("no training pairs")
    opt = Adam(params, lr=config.lr)
    rng = np.random.default_rng(config.seed)
    n = len(train_pairs)
    history: list[EpochLog] = []
    best_bleu = -1.0
    best_snapshot: dict[str, np.ndarray] | None = None
    best_meta: dict = {}
    since_best = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        losses = []
        for lo in range(0, n, config.batch_size):
            batch = [train_pairs[i] for i in order[lo : lo + config.batch_size]]
            loss, _ = nll_loss(
                [p.record for p in batch], [p.text for p in batch],
                vocab, params, config.model,
            )
            zero_grads(params)
            loss.backward()
            clip_global_norm(params, config.clip_norm)
            opt.step()
            losses.append(loss.item())
        train_loss = float(np.mean(losses))
        if epoch % config.eval_every == 0:
            val_bleu, val_ppl = _validate(val_pairs, vocab, params, config)
            history.append(EpochLog(epoch, train_loss, val_bleu, val_ppl))
            if log_path is not None:
                _write_metric_log(log_path, history)
            if val_bleu > best_bleu:
                best_bleu = val_bleu
                best_snapshot = {k: p.data.copy() for k, p in params.items()}
                best_meta = {"epoch": epoch, "val_bleu": val_bleu, "val_ppl": val_ppl}
                since_best = 0
            else:
                since_best += 1
                if since_best >= config.patience:
                    break
    if best_snapshot is not None:
        for k, p in params.items():
            p.data = best_snapshot[k]
    return history, best_meta


def pretrain(
    pairs: Sequence[GroundedPair],
    vocab: SubwordVocab,
    config: TrainConfig,
    val_pairs: Sequence[GroundedPair] | None = None,
    log_path=None,
) -> Checkpoint:
    """Train from fresh initialization on a grounded corpus."""
    if not pairs:
        raise EmptyCorpus("pretraining corpus is empty")
    if config.model.vocab_size != vocab.size:
        raise ConfigMismatch(
            f"config vocab_size {config.model.vocab_size} != vocabulary size {vocab.size}"
        )
    if val_pairs is None:
        n_val = max(1, min(200, len(pairs) // 10))
        if len(pairs) < 2:
            train, val = list(pairs), list(pairs)
        else:
            train, val, _ = corpus_split(pairs, n_val, 0, seed=config.seed)
    else:
        train, val = list(pairs), list(val_pairs)
    params = init_params(config.model, seed=config.seed)
    history, best = run_training(train, val, vocab, params, config, log_path)
    meta = {"stage": "pretrain", "epochs_run": len(history), **best}
    return Checkpoint(config, vocab, params, meta)


def _structural(model: ModelConfig) -> tuple:
    return (
        model.vocab_size, model.hidden, model.heads, model.enc_layers,
        model.dec_layers, model.ffn_mult, model.encoder, model.max_entities,
        model.max_triples, model.max_source_tokens, model.max_target_tokens,
    )


def finetune(
    checkpoint: Checkpoint,
    pairs: Sequence[GroundedPair],
    config: TrainConfig,
    val_pairs: Sequence[GroundedPair] | None = None,
    log_path=None,
) -> Checkpoint:
    """Continue training from a checkpoint; epochs=0 returns it untouched."""
    if _structural(config.model) != _structural(checkpoint.config.model):
        raise ConfigMismatch("fine-tune config incompatible with checkpoint dimensions")
    if config.model.vocab_size != checkpoint.vocab.size:
        raise ConfigMismatch("fine-tune vocabulary does not match checkpoint")
    if config.epochs == 0:
        return checkpoint
    if not pairs:
        raise EmptyCorpus("fine-tuning dataset is empty")
    if val_pairs is None:
        n_val = max(1, min(64, len(pairs) // 5))
        if len(pairs) < 2:
            train, val = list(pairs), list(pairs)
        else:
            train, val, _ = corpus_split(pairs, n_val, 0, seed=config.seed)
    else:
        train, val = list(pairs), list(val_pairs)
    params = _clone_params(checkpoint.params)
    history, best = run_training(train, val, checkpoint.vocab, params, config, log_path)
    meta = {"stage": "finetune", "epochs_run": len(history), **best}
    return Checkpoint(config, checkpoint.vocab, params, meta)


# -- dataset helpers -------------------------------------------------------


def subsample(items: Sequence, fraction: float | None = None,
              count: int | None = None, seed: int = 0) -> list:
    """Seeded sample without replacement, input order preserved."""
    if (fraction is None) == (count is None):
        raise UsageError("specify exactly one of fraction/count")
    n = len(items)
    if fraction is not None:
        if fraction >= 1.0:
            return list(items)
        k = int(round(fraction * n))
    else:
        k = min(count, n)
    if k < 1:
        raise EmptyResult(f"subsample of {n} items came out empty")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=k, replace=False))
    return [items[i] for i in idx]


def evaluate_checkpoint(
    checkpoint: Checkpoint,
    pairs: Sequence[GroundedPair],
    batch_size: int = 32,
    max_len: int = 64,
    with_ppl: bool = True,
) -> tuple[M.EvalResult, list[str]]:
    """Greedy generation over pairs, scored against their texts."""
    hyps: list[str] = []
    for i in range(0, len(pairs), batch_size):
        chunk = pairs[i : i + batch_size]
        hyps.extend(
            generate_batch(
                [p.record for p in chunk], checkpoint.vocab, checkpoint.params,
                checkpoint.config.model, max_len,
            )
        )
    ppl = M.perplexity(checkpoint, list(pairs), batch_size) if with_ppl else None
    result = M.evaluate_texts(hyps, [[p.text] for p in pairs], ppl)
    return result, hyps


def zero_shot(checkpoint: Checkpoint, pairs: Sequence[GroundedPair],
              max_len: int = 64) -> M.EvalResult:
    """Evaluate a checkpoint on an unseen dataset with no parameter updates."""
    cfg = replace(checkpoint.config, epochs=0)
    same = finetune(checkpoint, list(pairs), cfg)  # identity path
    result, _ = evaluate_checkpoint(same, pairs, with_ppl=False, max_len=max_len)
    return result


# -- transfer experiment ---------------------------------------------------


@dataclass
class TransferReport:
    target_bleu: float
    grid: list[int]
    seeds: list[int]
    rows: list[dict]
    minimal: dict
    ratios: dict

    def to_obj(self) -> dict:
        return {
            "target_bleu": self.target_bleu,
            "grid": self.grid,
            "seeds": self.seeds,
            "rows": self.rows,
            "minimal_samples": self.minimal,
            "ratios": self.ratios,
        }


def check_contamination(
    pretrain_pairs: Sequence[GroundedPair], test_pairs: Sequence[GroundedPair]
) -> None:
    """Raise if any evaluation record also appears in the pretraining corpus."""
    seen = {p.record.content_key() for p in pretrain_pairs}
    for p in test_pairs:
        if p.record.content_key() in seen:
            raise ContaminationDetected(
                f"evaluation record {p.record.id} occurs in the pretraining corpus"
            )


def run_transfer_experiment(
    pretrain_pairs: Sequence[GroundedPair],
    down_train: Sequence[GroundedPair],
    down_val: Sequence[GroundedPair],
    down_test: Sequence[GroundedPair],
    counts: Sequence[int],
    seeds: Sequence[int],
    config: TrainConfig,
    finetune_lr: float,
    finetune_epochs: int,
    target_bleu: float = 30.0,
    pretrained: Checkpoint | None = None,
    vocab: SubwordVocab | None = None,
    log_dir=None,
) -> TransferReport:
    """Sample-efficiency grid: {pretrained, scratch} x counts x seeds.

    Each arm fine-tunes on a seeded subsample of the downstream training set
    and reports test BLEU; the summary gives, per arm and seed, the smallest
    count reaching target_bleu, and their ratio (scratch over pretrained).
    When the scratch arm never reaches the target, the ratio is reported as
    a lower bound from the largest count tried.
    """
    check_contamination(pretrain_pairs, down_test)
    if pretrained is None:
        if vocab is None:
            raise UsageError("need either a pretrained checkpoint or a vocab")
        pretrained = pretrain(pretrain_pairs, vocab, config,
                              log_path=_maybe(log_dir, "pretrain_log.csv"))
    ft_base = replace(config, lr=finetune_lr, epochs=finetune_epochs)
    rows: list[dict] = []
    for seed in seeds:
        for count in counts:
            sub = subsample(down_train, count=count, seed=seed)
            for arm in ("pretrained", "scratch"):
                cfg = replace(ft_base, seed=seed)
                if arm == "pretrained":
                    start = pretrained
                else:
                    fresh = init_params(config.model, seed=seed)
                    start = Checkpoint(cfg, pretrained.vocab, fresh, {"stage": "init"})
                log = _maybe(log_dir, f"ft_{arm}_c{count}_s{seed}.csv")
                ckpt = finetune(start, sub, cfg, val_pairs=list(down_val), log_path=log)
                result, _ = evaluate_checkpoint(ckpt, list(down_test), with_ppl=False,
                                                max_len=config.gen_max_len)
                rows.append(
                    {"arm": arm, "count": count, "seed": seed, "bleu": result.bleu4}
                )
    minimal: dict = {"pretrained": {}, "scratch": {}}
    for arm in ("pretrained", "scratch"):
        for seed in seeds:
            reached = [
                r["count"] for r in rows
                if r["arm"] == arm and r["seed"] == seed and r["bleu"] >= target_bleu
            ]
            minimal[arm][seed] = min(reached) if reached else None
    ratios: dict = {}
    for seed in seeds:
        pre_min = minimal["pretrained"][seed]
        scr_min = minimal["scratch"][seed]
        if pre_min is None:
            ratios[seed] = {"ratio": None, "note": "pretrained arm missed target"}
        elif scr_min is None:
            ratios[seed] = {
                "ratio": None,
                "lower_bound": max(counts) / pre_min,
                "note": "scratch arm never reached target",
            }
        else:
            ratios[seed] = {"ratio": scr_min / pre_min}
    return TransferReport(
        target_bleu, list(counts), list(seeds), rows, minimal, ratios
    )


def _maybe(log_dir, name):
    if log_dir is None:
        return None
    os.makedirs(log_dir, exist_ok=True)
    return os.path.join(log_dir, name)
