"""Sentence encoder with multiple structure-prior attention masks.

Direction, word-distance, and dependency-tree-distance priors enter a
multi-head self-attention encoder as additive logit masks, one mask per
head. Built on a small float64 autodiff tensor core so every gradient can
be checked against finite differences.
"""

from .attention import (
    AttentionParams,
    attention_weights,
    init_attention_params,
    masked_attention,
    mm_mh_attention,
)
from .data import (
    DepSentence,
    PairExample,
    Vocab,
    build_vocab,
    embed,
    gen_order_task,
    gen_tree_task,
    load_conllu,
    load_pairs,
    save_conllu,
)
from .encoder import (
    EncoderConfig,
    EncoderParams,
    attentive_pool,
    encode,
    fusion_gate,
    param_count,
    pool,
    position_wise_ffn,
)
from .errors import (
    ConfigurationError,
    ConlluParseError,
    DegenerateRowError,
    DimensionError,
    DivergenceError,
    EmptyInputError,
    MalformedTreeError,
    MissingTreeError,
    MssanError,
    TapeError,
    ValidationError,
)
from .harness import Adam, Metrics, ablation_grid, bench, emit_heatmap, emit_masks, evaluate, gradcheck, train
from .masks import (
    HeadSpec,
    MaskSchedule,
    backward_mask,
    build_schedule,
    combine,
    dependency_distance_mask,
    forward_mask,
    masks_for_sentence,
    tree_distances,
    word_distance_mask,
)
from .model import RunConfig, SentenceClassifier, build_variant, classify, nli_feature
from .params import ParamStore, backward
from .tensor import MASK_THRESHOLD, SENTINEL, Tape, Tensor

__version__ = "0.1.0"
