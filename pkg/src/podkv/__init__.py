"""KV-cache compression by sharing distant-token attention across layers."""

from .errors import CacheCorruption, ConfigMismatch, FormatError, InvalidInput
from .grouping import HeadBlocks, greedy_group, savings_rate, validate_blocks
from .model import ModelConfig, ModelWeights, forward_dense, init_model, next_token_argmax
from .runtime import (PoDConfig, PoDKVCache, build_split_mask, classify_tokens, decode_step,
                      gate_combine, generate, prefill, split_attention)
from .similarity import AttentionTrace, SimilarityTensor, collect_traces, layer_similarity

__version__ = "0.1.0"
