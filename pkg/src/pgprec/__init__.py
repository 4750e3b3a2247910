"""Personalised graph prompt-tuning for cross-domain recommendation."""

__version__ = "0.1.0"

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .dataset import align_domains, generate_synthetic_pair, label_cold_start, split_holdout
from .encoder import EncoderParams, encode, prefix_attention_check
from .evaluation import EvalReport, evaluate
from .graph import InteractionGraph, build_graph, edge_dropout
from .prompts import PromptSet, build_prompt_set, count_tuned_params
from .trainer import TrainConfig, early_stop, fine_tune_baseline, pretrain, prompt_tune, sample_triplets

__all__ = [
    "Checkpoint", "EncoderParams", "EvalReport", "InteractionGraph", "PromptSet", "TrainConfig",
    "align_domains", "build_graph", "build_prompt_set", "count_tuned_params", "early_stop",
    "edge_dropout", "encode", "evaluate", "fine_tune_baseline", "generate_synthetic_pair",
    "label_cold_start", "load_checkpoint", "prefix_attention_check", "pretrain", "prompt_tune",
    "sample_triplets", "save_checkpoint", "split_holdout",
]
