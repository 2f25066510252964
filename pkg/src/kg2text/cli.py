"""Command-line workflow: corpus building through training to evaluation.

Every subcommand writes its outputs plus a RunManifest JSON next to the
primary output, capturing the resolved configuration so the run can be
reproduced.  Config precedence: explicit flags > --config file > defaults.
Errors exit nonzero with the error type's name on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from . import corpus as C
from . import metrics as M
from . import synth
from . import training as T
from .decoder import generate, generate_batch
from .encoder import ModelConfig
from .errors import IoError, Kg2TextError, UsageError
from .gradcheck import TOLERANCE, run_all
from .record import (
    GroundedPair,
    pair_from_obj,
    read_pairs,
    record_from_obj,
    write_pairs,
)
from .tokenizer import SubwordVocab, train_bpe, record_surfaces


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--encoder", choices=("graph", "seq"), default="graph",
                   help="input encoder (default: %(default)s)")
    p.add_argument("--copy", choices=("on", "off"), default="on",
                   help="copy mechanism (default: %(default)s)")
    p.add_argument("--copy-loss", choices=("on", "off"), default="on",
                   help="auxiliary copy supervision (default: %(default)s)")
    p.add_argument("--hidden", type=int, default=128,
                   help="model width (default: %(default)s)")
    p.add_argument("--layers", type=int, default=2,
                   help="encoder rounds and decoder layers (default: %(default)s)")
    p.add_argument("--heads", type=int, default=4,
                   help="attention heads (default: %(default)s)")


def _add_train_flags(p: argparse.ArgumentParser, lr: float) -> None:
    p.add_argument("--lr", type=float, default=lr,
                   help="Adam learning rate (default: %(default)s)")
    p.add_argument("--batch", type=int, default=16,
                   help="minibatch size (default: %(default)s)")
    p.add_argument("--epochs", type=int, default=30,
                   help="max epochs (default: %(default)s)")
    p.add_argument("--eval-every", type=int, default=1,
                   help="epochs between validation passes (default: %(default)s)")
    p.add_argument("--patience", type=int, default=10,
                   help="evals without improvement before stopping (default: %(default)s)")
    p.add_argument("--log", default=None, help="per-epoch metric CSV path")


def build_parser() -> tuple[_Parser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="kg2text", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"kg2text {__version__}")
    subs = parser.add_subparsers(dest="cmd", required=True)
    m: dict[str, argparse.ArgumentParser] = {}

    def sub(name, help_text):
        p = subs.add_parser(name, help=help_text)
        p.add_argument("--config", default=None,
                       help="JSON file of flag defaults (flags still win)")
        p.add_argument("--seed", type=int, default=0, help="RNG seed (default: %(default)s)")
        m[name] = p
        return p

    p = sub("build-corpus", "align sentences with KB subgraphs and filter by grounding")
    p.add_argument("--docs", required=True, help="annotated sentences JSONL")
    p.add_argument("--kb", required=True, help="knowledge base JSONL")
    p.add_argument("--out", required=True, help="selected pairs JSONL")
    p.add_argument("--candidates-out", default=None, help="optional all-candidates JSONL")
    p.add_argument("--threshold", type=float, default=C.DEFAULT_THRESHOLD,
                   help="grounding score cutoff (default: %(default)s)")
    p.add_argument("--min-anchors", type=int, default=C.DEFAULT_MIN_ANCHORS,
                   help="minimum anchored entities per sentence (default: %(default)s)")
    p.add_argument("--min-len", type=int, default=C.DEFAULT_MIN_LEN,
                   help="minimum sentence tokens (default: %(default)s)")
    p.add_argument("--max-len", type=int, default=C.DEFAULT_MAX_LEN,
                   help="maximum sentence tokens (default: %(default)s)")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for candidate building (default: %(default)s)")

    p = sub("corpus-stats", "summarize a pair corpus")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True, help="stats JSON path")
    p.add_argument("--tsv", default=None, help="optional predicate histogram TSV")

    p = sub("train-tokenizer", "learn a byte-pair vocabulary from pair texts")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True, help="vocabulary file path")
    p.add_argument("--vocab-size", type=int, default=1024,
                   help="total vocabulary size (default: %(default)s)")

    p = sub("pretrain", "train from scratch on a grounded corpus")
    p.add_argument("--pairs", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--val-pairs", default=None, help="held-out pairs JSONL (else split)")
    _add_model_flags(p)
    _add_train_flags(p, lr=1e-3)

    p = sub("finetune", "continue training a checkpoint on new pairs")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--val-pairs", default=None)
    _add_train_flags(p, lr=3e-4)

    p = sub("generate", "decode records to text")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--records", required=True, help="records or pairs JSONL")
    p.add_argument("--out", required=True, help="hypotheses JSONL")
    p.add_argument("--beam", type=int, default=1,
                   help="beam width; 1 means greedy (default: %(default)s)")
    p.add_argument("--max-len", type=int, default=64,
                   help="generation cap in subwords (default: %(default)s)")

    p = sub("evaluate", "score hypotheses against references")
    p.add_argument("--hyp", required=True, help="hypotheses JSONL")
    p.add_argument("--ref", required=True, help="references JSONL")
    p.add_argument("--out", required=True, help="result JSON")
    p.add_argument("--ckpt", default=None, help="checkpoint for perplexity")
    p.add_argument("--pairs", default=None, help="pairs JSONL for perplexity")

    p = sub("few-shot", "sample-efficiency grid with and without pretraining")
    p.add_argument("--pretrain-pairs", required=True)
    p.add_argument("--pairs", required=True, help="downstream pairs JSONL")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--ckpt", default=None, help="reuse an existing pretrained checkpoint")
    p.add_argument("--counts", default=None, help="comma list of training-set sizes")
    p.add_argument("--fractions", default=None, help="comma list of training-set fractions")
    p.add_argument("--seeds", default="0,1,2", help="comma list of seeds (default: %(default)s)")
    p.add_argument("--target-bleu", type=float, default=30.0,
                   help="threshold for minimal-samples search (default: %(default)s)")
    p.add_argument("--n-val", type=int, default=32,
                   help="downstream validation size (default: %(default)s)")
    p.add_argument("--n-test", type=int, default=64,
                   help="downstream test size (default: %(default)s)")
    p.add_argument("--ft-lr", type=float, default=3e-4,
                   help="fine-tune learning rate (default: %(default)s)")
    p.add_argument("--ft-epochs", type=int, default=30,
                   help="fine-tune epochs (default: %(default)s)")
    p.add_argument("--log-dir", default=None, help="directory for per-arm metric CSVs")
    _add_model_flags(p)
    _add_train_flags(p, lr=1e-3)

    p = sub("zero-shot", "evaluate a checkpoint with zero fine-tuning steps")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True, help="result JSON")
    p.add_argument("--max-len", type=int, default=64,
                   help="generation cap (default: %(default)s)")

    p = sub("grad-check", "verify analytic gradients against finite differences")
    p.add_argument("--out", default=None, help="optional error-table JSON")

    p = sub("synth-data", "emit a synthetic grounded corpus")
    p.add_argument("--family", choices=("a", "b"), required=True)
    p.add_argument("--n", type=int, required=True, help="number of pairs")
    p.add_argument("--out", required=True, help="pairs JSONL")
    p.add_argument("--docs-out", default=None, help="optional annotated sentences JSONL")
    p.add_argument("--kb-out", default=None, help="optional knowledge base JSONL")
    return parser, m


# -- plumbing --------------------------------------------------------------


def _atomic_json(path, obj) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fp:
        json.dump(obj, fp, ensure_ascii=False, indent=2, sort_keys=True)
        fp.write("\n")
    os.replace(tmp, path)


def _manifest(args, out_path, inputs: dict, outputs: dict, t0: float) -> None:
    config = {
        k: v for k, v in sorted(vars(args).items()) if k not in ("cmd", "config")
    }
    _atomic_json(
        str(out_path) + ".manifest.json",
        {
            "subcommand": args.cmd,
            "config": config,
            "seed": getattr(args, "seed", None),
            "inputs": inputs,
            "outputs": outputs,
            "tool_version": __version__,
            "wall_time_s": round(time.time() - t0, 3),
        },
    )


def _model_config(args, vocab_size: int) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_size,
        hidden=args.hidden,
        heads=args.heads,
        enc_layers=args.layers,
        dec_layers=args.layers,
        encoder="sequence" if args.encoder == "seq" else "graph",
        copy=args.copy == "on",
        copy_loss=args.copy_loss == "on",
    )


def _train_config(args, model: ModelConfig) -> T.TrainConfig:
    return T.TrainConfig(
        model=model, lr=args.lr, batch_size=args.batch, epochs=args.epochs,
        seed=args.seed, eval_every=args.eval_every, patience=args.patience,
    )


def _read_pairs(path) -> list[GroundedPair]:
    if not os.path.exists(path):
        raise IoError(f"no such file: {path}")
    return read_pairs(path)


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


# -- subcommand bodies -----------------------------------------------------


def _cmd_build_corpus(args, t0):
    with open(args.docs, encoding="utf-8") as fp:
        docs = C.read_documents(fp)
    with open(args.kb, encoding="utf-8") as fp:
        kb = C.KnowledgeBase.from_jsonl(fp)
    candidates = C.score_candidates(
        docs, kb, min_anchors=args.min_anchors, min_len=args.min_len,
        max_len=args.max_len, threads=args.threads,
    )
    selected = C.select(candidates, args.threshold)
    if args.candidates_out:
        write_pairs(args.candidates_out, candidates)
    write_pairs(args.out, selected)
    print(f"selected {len(selected)} of {len(candidates)} candidate pairs")
    _manifest(args, args.out, {"docs": args.docs, "kb": args.kb},
              {"pairs": args.out, "n_selected": len(selected),
               "n_candidates": len(candidates)}, t0)
    return 0


def _cmd_corpus_stats(args, t0):
    pairs = _read_pairs(args.pairs)
    st = C.stats(pairs)
    C.write_stats(st, args.out, args.tsv)
    print(f"{st.sentence_count} sentences, mean length {st.mean_length:.1f}")
    _manifest(args, args.out, {"pairs": args.pairs}, {"stats": args.out}, t0)
    return 0


def _cmd_train_tokenizer(args, t0):
    pairs = _read_pairs(args.pairs)
    texts = [p.text for p in pairs]
    for p in pairs:
        texts.extend(record_surfaces(p.record))
    vocab = train_bpe(texts, args.vocab_size)
    vocab.save(args.out)
    print(f"trained vocabulary of {vocab.size} tokens ({len(vocab.merges)} merges)")
    _manifest(args, args.out, {"pairs": args.pairs},
              {"vocab": args.out, "size": vocab.size}, t0)
    return 0


def _cmd_pretrain(args, t0):
    pairs = _read_pairs(args.pairs)
    vocab = SubwordVocab.load(args.vocab)
    config = _train_config(args, _model_config(args, vocab.size))
    val = _read_pairs(args.val_pairs) if args.val_pairs else None
    ckpt = T.pretrain(pairs, vocab, config, val_pairs=val, log_path=args.log)
    ckpt.save(args.out)
    print(f"best epoch {ckpt.metadata.get('epoch')}: "
          f"val BLEU {ckpt.metadata.get('val_bleu', 0):.2f}")
    _manifest(args, args.out, {"pairs": args.pairs, "vocab": args.vocab},
              {"checkpoint": args.out, **ckpt.metadata}, t0)
    return 0


def _cmd_finetune(args, t0):
    ckpt = T.Checkpoint.load(args.ckpt)
    pairs = _read_pairs(args.pairs)
    config = T.TrainConfig(
        model=ckpt.config.model, lr=args.lr, batch_size=args.batch,
        epochs=args.epochs, seed=args.seed, eval_every=args.eval_every,
        patience=args.patience,
    )
    val = _read_pairs(args.val_pairs) if args.val_pairs else None
    out = T.finetune(ckpt, pairs, config, val_pairs=val, log_path=args.log)
    out.save(args.out)
    print(f"best epoch {out.metadata.get('epoch')}: "
          f"val BLEU {out.metadata.get('val_bleu', 0):.2f}")
    _manifest(args, args.out, {"ckpt": args.ckpt, "pairs": args.pairs},
              {"checkpoint": args.out, **out.metadata}, t0)
    return 0


def _cmd_generate(args, t0):
    ckpt = T.Checkpoint.load(args.ckpt)
    if not os.path.exists(args.records):
        raise IoError(f"no such file: {args.records}")
    records = []
    with open(args.records, encoding="utf-8") as fp:
        for line in fp:
            if not line.strip():
                continue
            obj = json.loads(line)
            records.append(
                pair_from_obj(obj).record if "text" in obj else record_from_obj(obj)
            )
    cfg = ckpt.config.model
    if args.beam <= 1:
        hyps = generate_batch(records, ckpt.vocab, ckpt.params, cfg, args.max_len)
    else:
        hyps = [
            generate(r, ckpt.vocab, ckpt.params, cfg, mode="beam",
                     beam_width=args.beam, max_len=args.max_len)
            for r in records
        ]
    with open(args.out, "w", encoding="utf-8") as fp:
        for r, h in zip(records, hyps):
            fp.write(json.dumps({"id": r.id, "hypothesis": h}, ensure_ascii=False) + "\n")
    print(f"generated {len(hyps)} hypotheses")
    _manifest(args, args.out, {"ckpt": args.ckpt, "records": args.records},
              {"hypotheses": args.out, "n": len(hyps)}, t0)
    return 0


def _cmd_evaluate(args, t0):
    result = M.evaluate_files(args.hyp, args.ref)
    if args.ckpt and args.pairs:
        ckpt = T.Checkpoint.load(args.ckpt)
        ppl = M.perplexity(ckpt, _read_pairs(args.pairs))
        result = M.EvalResult(result.bleu4, result.rouge_l, ppl, result.n_items)
    _atomic_json(args.out, result.to_obj())
    print(f"BLEU-4 {result.bleu4:.2f}  ROUGE-L {result.rouge_l:.2f}"
          + (f"  ppl {result.perplexity:.3f}" if result.perplexity else ""))
    _manifest(args, args.out, {"hyp": args.hyp, "ref": args.ref},
              {"result": args.out}, t0)
    return 0


def _cmd_few_shot(args, t0):
    pre_pairs = _read_pairs(args.pretrain_pairs)
    down = _read_pairs(args.pairs)
    vocab = SubwordVocab.load(args.vocab)
    config = _train_config(args, _model_config(args, vocab.size))
    d_train, d_val, d_test = C.split(down, args.n_val, args.n_test, seed=args.seed)
    if args.counts:
        counts = _int_list(args.counts)
    elif args.fractions:
        counts = [max(1, round(f * len(d_train))) for f in _float_list(args.fractions)]
    else:
        raise UsageError("few-shot needs --counts or --fractions")
    ckpt = T.Checkpoint.load(args.ckpt) if args.ckpt else None
    report = T.run_transfer_experiment(
        pre_pairs, d_train, d_val, d_test, counts, _int_list(args.seeds), config,
        finetune_lr=args.ft_lr, finetune_epochs=args.ft_epochs,
        target_bleu=args.target_bleu, pretrained=ckpt, vocab=vocab,
        log_dir=args.log_dir,
    )
    _atomic_json(args.out, report.to_obj())
    for row in report.rows:
        print(f"{row['arm']:>10}  n={row['count']:<4} seed={row['seed']}  "
              f"BLEU {row['bleu']:.2f}")
    _manifest(args, args.out,
              {"pretrain_pairs": args.pretrain_pairs, "pairs": args.pairs},
              {"report": args.out}, t0)
    return 0


def _cmd_zero_shot(args, t0):
    ckpt = T.Checkpoint.load(args.ckpt)
    pairs = _read_pairs(args.pairs)
    result = T.zero_shot(ckpt, pairs, max_len=args.max_len)
    _atomic_json(args.out, result.to_obj())
    print(f"zero-shot BLEU-4 {result.bleu4:.2f}  ROUGE-L {result.rouge_l:.2f}")
    _manifest(args, args.out, {"ckpt": args.ckpt, "pairs": args.pairs},
              {"result": args.out}, t0)
    return 0


def _cmd_grad_check(args, t0):
    results = run_all(seed=args.seed)
    worst = max(results.values())
    for name, err in sorted(results.items()):
        status = "ok" if err < TOLERANCE else "FAIL"
        print(f"{status:>4}  {err:.3e}  {name}")
    if args.out:
        _atomic_json(args.out, {"tolerance": TOLERANCE, "errors": results})
        _manifest(args, args.out, {}, {"report": args.out, "max_error": worst}, t0)
    if worst >= TOLERANCE:
        print(f"worst relative error {worst:.3e} exceeds {TOLERANCE}", file=sys.stderr)
        return 1
    print(f"all {len(results)} checks within {TOLERANCE}")
    return 0


def _cmd_synth_data(args, t0):
    pairs = synth.synth_pairs(args.family, args.n, args.seed)
    write_pairs(args.out, pairs)
    outputs = {"pairs": args.out, "n": len(pairs)}
    if args.docs_out or args.kb_out:
        sentences, kb = synth.synth_documents(pairs)
        if args.docs_out:
            with open(args.docs_out, "w", encoding="utf-8") as fp:
                for s in sentences:
                    fp.write(json.dumps(
                        {"tokens": list(s.tokens),
                         "anchors": [[a.start, a.end, a.entity_id] for a in s.anchors]},
                        ensure_ascii=False) + "\n")
            outputs["docs"] = args.docs_out
        if args.kb_out:
            with open(args.kb_out, "w", encoding="utf-8") as fp:
                for eid, ent in sorted(kb.entities.items()):
                    triples = [
                        [p, {"ref": o.ref} if o.ref is not None else o.literal]
                        for p, o in ent.triples
                    ]
                    fp.write(json.dumps(
                        {"id": eid, "label": ent.label, "triples": triples},
                        ensure_ascii=False) + "\n")
            outputs["kb"] = args.kb_out
    print(f"wrote {len(pairs)} family-{args.family} pairs")
    _manifest(args, args.out, {}, outputs, t0)
    return 0


_COMMANDS = {
    "build-corpus": _cmd_build_corpus,
    "corpus-stats": _cmd_corpus_stats,
    "train-tokenizer": _cmd_train_tokenizer,
    "pretrain": _cmd_pretrain,
    "finetune": _cmd_finetune,
    "generate": _cmd_generate,
    "evaluate": _cmd_evaluate,
    "few-shot": _cmd_few_shot,
    "zero-shot": _cmd_zero_shot,
    "grad-check": _cmd_grad_check,
    "synth-data": _cmd_synth_data,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    t0 = time.time()
    try:
        parser, sub_map = build_parser()
        args = parser.parse_args(argv)
        if args.config:
            if not os.path.exists(args.config):
                raise IoError(f"no such config file: {args.config}")
            with open(args.config, encoding="utf-8") as fp:
                overrides = json.load(fp)
            sub = sub_map[args.cmd]
            known = {a.dest for a in sub._actions}
            unknown = set(overrides) - known
            if unknown:
                raise UsageError(f"unknown config keys: {sorted(unknown)}")
            sub.set_defaults(**overrides)
            args = parser.parse_args(argv)
        return _COMMANDS[args.cmd](args, t0)
    except Kg2TextError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"IoError: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
