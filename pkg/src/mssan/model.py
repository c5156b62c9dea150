"""Classifier models built around the encoder, in single and paired variants.

``mssan`` uses one encoder whose heads mix forward and backward direction
masks; ``mssan_sep`` uses two single-direction encoders and concatenates
their pooled sentence vectors, doubling the sentence dimension and the
encoder parameter count.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .attention import attention_weights
from .data import DepSentence, PairExample, Vocab
from .encoder import EncoderConfig, EncoderParams, encode, init_encoder_params, pool
from .errors import ConfigurationError, ValidationError
from .masks import build_masks
from .params import ParamStore
from .tensor import (
    Tensor,
    absolute,
    add_bias,
    concat_cols,
    concat_rows,
    cross_entropy,
    glorot,
    matmul,
    mul,
    relu,
    sub,
    take_rows,
)

TASKS = ("single", "pair")
VARIANTS = ("mssan", "mssan_sep")


@dataclass
class RunConfig:
    """Everything one training run needs, JSON-serializable as flat keys."""

    encoder: EncoderConfig = dataclasses.field(default_factory=EncoderConfig)
    task: str = "single"
    variant: str = "mssan"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    enable_direction: bool = True
    enable_word_distance: bool = True
    enable_dependency_distance: bool = True
    cls_hidden: int = 0
    test_fraction: float = 0.2
    lowercase: bool = False
    min_count: int = 1
    stop_accuracy: float = 0.0
    eval_every: int = 1
    embeddings_path: str = ""

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ConfigurationError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.variant not in VARIANTS:
            raise ConfigurationError(
                f"variant must be one of {VARIANTS}, got {self.variant!r}"
            )
        for name in ("learning_rate", "beta1", "beta2", "adam_eps"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be nonnegative")
        if self.batch_size < 1 or self.epochs < 1 or self.eval_every < 1:
            raise ConfigurationError("batch_size, epochs and eval_every must be >= 1")
        if not 0 < self.test_fraction < 1:
            raise ConfigurationError("test_fraction must lie strictly between 0 and 1")
        if self.seed is None:
            raise ConfigurationError("seed must be set")

    def to_dict(self) -> dict:
        d = self.encoder.to_dict()
        for f in dataclasses.fields(self):
            if f.name != "encoder":
                d[f.name] = getattr(self, f.name)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)} - {"encoder"}
        kwargs = {k: v for k, v in d.items() if k in names}
        return cls(encoder=EncoderConfig.from_dict(d), **kwargs)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def head_plan(
    config: EncoderConfig,
    use_direction: bool = True,
    use_word: bool = True,
    use_dependency: bool = True,
    force_direction: str | None = None,
) -> list[tuple[str | None, str]]:
    """Per-head (direction, distance) pairs honoring ablation switches.

    Disabled distance kinds degrade to "none"; a disabled direction leaves
    every head without a direction bias. ``force_direction`` builds the
    single-direction plans used by the separated variant.
    """
    kinds = []
    for k in config.distance_cycle:
        if k == "word" and not use_word:
            k = "none"
        elif k == "dependency" and not use_dependency:
            k = "none"
        kinds.append(k)
    half = config.n_heads // 2
    plan: list[tuple[str | None, str]] = []
    for h in range(config.n_heads):
        if not use_direction:
            direction = None
        elif force_direction is not None:
            direction = force_direction
        else:
            direction = "forward" if h < half else "backward"
        plan.append((direction, kinds[h % half]))
    return plan


def nli_feature(premise_vec: Tensor, hypothesis_vec: Tensor) -> Tensor:
    """Pair feature: both vectors, their product, and their absolute difference."""
    if premise_vec.data.shape != hypothesis_vec.data.shape:
        raise ConfigurationError(
            f"pair vectors disagree: {premise_vec.shape} vs {hypothesis_vec.shape}"
        )
    return concat_cols(
        premise_vec,
        hypothesis_vec,
        mul(premise_vec, hypothesis_vec),
        absolute(sub(premise_vec, hypothesis_vec)),
    )


@dataclass
class ClassifierParams:
    hidden_w: Tensor
    hidden_b: Tensor
    out_w: Tensor
    out_b: Tensor


def init_classifier(
    store: ParamStore,
    in_dim: int,
    hidden: int,
    n_classes: int,
    rng: np.random.Generator,
    prefix: str = "classifier",
) -> ClassifierParams:
    # Zero final projection: fresh models predict uniformly, so the starting
    # loss is exactly ln(n_classes) on balanced data.
    return ClassifierParams(
        hidden_w=store.add(f"{prefix}.hidden_w", glorot(rng, in_dim, hidden)),
        hidden_b=store.add(f"{prefix}.hidden_b", np.zeros((1, hidden))),
        out_w=store.add(f"{prefix}.out_w", np.zeros((hidden, n_classes))),
        out_b=store.add(f"{prefix}.out_b", np.zeros((1, n_classes))),
    )


def classify(features: Tensor, cls: ClassifierParams) -> Tensor:
    """Two-layer feed-forward head producing class logits."""
    h = relu(add_bias(matmul(features, cls.hidden_w), cls.hidden_b))
    return add_bias(matmul(h, cls.out_w), cls.out_b)


class SentenceClassifier:
    """Embedding table, one or two encoders, and a classification head."""

    def __init__(
        self,
        config: RunConfig,
        vocab: Vocab,
        n_classes: int,
        rng: np.random.Generator | None = None,
        pretrained: tuple[Sequence[str], np.ndarray] | None = None,
    ) -> None:
        if n_classes < 2:
            raise ConfigurationError(f"need at least 2 classes, got {n_classes}")
        rng = np.random.default_rng(config.seed) if rng is None else rng
        ec = config.encoder
        self.config = config
        self.vocab = vocab
        self.n_classes = n_classes
        self.store = ParamStore()
        emb = glorot(rng, len(vocab), ec.d_e)
        if pretrained is not None:
            tokens, table = pretrained
            if table.shape[1] != ec.d_e:
                raise ConfigurationError(
                    f"pretrained embeddings have width {table.shape[1]}, model uses {ec.d_e}"
                )
            lookup = {t: i for i, t in enumerate(tokens)}
            for tok, idx in vocab.token_to_id.items():
                if tok in lookup:
                    emb[idx] = table[lookup[tok]]
        self.embedding = self.store.add("embedding", emb)

        flags = (
            config.enable_direction,
            config.enable_word_distance,
            config.enable_dependency_distance,
        )
        if config.variant == "mssan":
            plans = [("encoder", head_plan(ec, *flags))]
        else:
            plans = [
                ("encoder_forward", head_plan(ec, *flags, force_direction="forward")),
                ("encoder_backward", head_plan(ec, *flags, force_direction="backward")),
            ]
        self.encoders: list[tuple[str, EncoderParams, list[tuple[str | None, str]]]] = [
            (prefix, init_encoder_params(self.store, ec, rng, prefix), plan)
            for prefix, plan in plans
        ]

        feature_dim = self.sentence_dim * (4 if config.task == "pair" else 1)
        hidden = config.cls_hidden or ec.d_e
        self.classifier = init_classifier(self.store, feature_dim, hidden, n_classes, rng)

    @property
    def sentence_dim(self) -> int:
        return 2 * self.config.encoder.d_e * len(self.encoders)

    def needs_tree(self) -> bool:
        return any(
            kind == "dependency" for _, _, plan in self.encoders for _, kind in plan
        )

    def _sentence_masks(self, plan, sent: DepSentence) -> list[np.ndarray]:
        ec = self.config.encoder
        return build_masks(
            plan,
            len(sent),
            heads=sent.heads,
            alpha=ec.alpha,
            swap_direction=ec.swap_direction,
        )

    def encode_sentence(
        self, sent: DepSentence, rng: np.random.Generator | None = None
    ) -> Tensor:
        """Pooled sentence vector; 1 x sentence_dim."""
        ec = self.config.encoder
        x = take_rows(self.embedding, self.vocab.encode(sent.tokens))
        parts = []
        for _, enc_params, plan in self.encoders:
            masks = self._sentence_masks(plan, sent)
            u = encode(x, ec, enc_params, masks=masks, rng=rng)
            parts.append(pool(u, enc_params.pool, ec.pool_softmax_axis))
        return parts[0] if len(parts) == 1 else concat_cols(*parts)

    def logits(self, example, rng: np.random.Generator | None = None) -> Tensor:
        if self.config.task == "pair":
            if not isinstance(example, PairExample):
                raise ValidationError("pair task needs PairExample inputs")
            feats = nli_feature(
                self.encode_sentence(example.premise, rng),
                self.encode_sentence(example.hypothesis, rng),
            )
        else:
            if not isinstance(example, DepSentence):
                raise ValidationError("single task needs DepSentence inputs")
            feats = self.encode_sentence(example, rng)
        return classify(feats, self.classifier)

    def batch_loss(
        self, batch: Sequence, rng: np.random.Generator | None = None
    ) -> Tensor:
        labels = [ex.label for ex in batch]
        if any(lb is None for lb in labels):
            raise ValidationError("every training example needs a label")
        logits = concat_rows(*[self.logits(ex, rng) for ex in batch])
        return cross_entropy(logits, labels)

    def predict(self, example) -> int:
        return int(np.argmax(self.logits(example).data))

    def accuracy(self, examples: Sequence) -> float:
        if not examples:
            raise ValidationError("cannot score an empty example list")
        hits = sum(1 for ex in examples if self.predict(ex) == ex.label)
        return hits / len(examples)

    def attention_maps(self, sent: DepSentence) -> list[tuple[str, np.ndarray, np.ndarray]]:
        """First-layer (label, weights, mask) triples across all encoders."""
        ec = self.config.encoder
        x = take_rows(self.embedding, self.vocab.encode(sent.tokens))
        out = []
        for prefix, enc_params, plan in self.encoders:
            masks = self._sentence_masks(plan, sent)
            weights = attention_weights(x, enc_params.layers[0].attention, masks, ec.n_heads)
            for h, ((direction, distance), w) in enumerate(zip(plan, weights), 1):
                tag = f"head{h}_{direction or 'none'}_{distance}"
                if len(self.encoders) > 1:
                    tag = f"{prefix}_{tag}"
                out.append((tag, w, masks[h - 1]))
        return out

    def param_counts(self) -> dict[str, int]:
        """Exact trainable-scalar counts by component."""
        enc = sum(self.store.count_prefix(prefix) for prefix, _, _ in self.encoders)
        cls = self.store.count_prefix("classifier")
        emb = self.embedding.data.size
        return {
            "encoder": enc,
            "classifier": cls,
            "embedding": emb,
            "encoder_and_classifier": enc + cls,
            "total": self.store.param_count(),
        }

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        payload = self.config.to_dict()
        payload["n_classes"] = self.n_classes
        with open(out / "config.json", "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
        self.vocab.save(out / "vocab.json")
        self.store.save(out / "params.bin")

    @classmethod
    def load(cls, ckpt_dir) -> "SentenceClassifier":
        ckpt = Path(ckpt_dir)
        with open(ckpt / "config.json", encoding="utf-8") as fh:
            payload = json.load(fh)
        config = RunConfig.from_dict(payload)
        vocab = Vocab.load(ckpt / "vocab.json")
        model = cls(config, vocab, int(payload["n_classes"]))
        model.store.load_state(ckpt / "params.bin")
        return model


def build_variant(
    config: RunConfig,
    vocab: Vocab,
    n_classes: int,
    rng: np.random.Generator | None = None,
    pretrained: tuple[Sequence[str], np.ndarray] | None = None,
) -> SentenceClassifier:
    """Build the requested model variant; both expose the same interface."""
    return SentenceClassifier(config, vocab, n_classes, rng, pretrained)
