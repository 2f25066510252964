"""Knowledge-grounded pre-training for data-to-text generation, desk scale.

The package covers the full loop: mining a grounded corpus from annotated
sentences and a knowledge base, a trainable subword vocabulary, graph and
sequence encoders with a copy-equipped transformer decoder, training
harnesses for pre-training and few- or zero-shot transfer, and the matching
evaluation metrics.  Everything runs on numpy with a built-in reverse-mode
autodiff; no deep-learning framework is involved.
"""

__version__ = "0.1.0"

from .corpus import (
    AnnotatedSentence,
    KnowledgeBase,
    extract_candidates,
    grounding_score,
    score_candidates,
    select,
    split,
    stats,
)
from .decoder import generate, generate_batch, nll_loss
from .encoder import ModelConfig
from .errors import Kg2TextError
from .metrics import EvalResult, bleu4, evaluate_texts, perplexity, rouge_l
from .record import Entity, GroundedPair, KnowledgeRecord, read_pairs, write_pairs
from .tokenizer import SubwordVocab, train_bpe
from .training import Checkpoint, TrainConfig, finetune, pretrain, zero_shot

__all__ = [
    "AnnotatedSentence",
    "Checkpoint",
    "Entity",
    "EvalResult",
    "GroundedPair",
    "Kg2TextError",
    "KnowledgeBase",
    "KnowledgeRecord",
    "ModelConfig",
    "SubwordVocab",
    "TrainConfig",
    "__version__",
    "bleu4",
    "evaluate_texts",
    "extract_candidates",
    "finetune",
    "generate",
    "generate_batch",
    "grounding_score",
    "nll_loss",
    "perplexity",
    "pretrain",
    "read_pairs",
    "rouge_l",
    "score_candidates",
    "select",
    "split",
    "stats",
    "train_bpe",
    "write_pairs",
    "zero_shot",
]
