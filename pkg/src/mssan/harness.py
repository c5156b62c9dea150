"""Training loop, evaluation, gradient checking, benchmarks, and exporters."""

from __future__ import annotations

import csv
import dataclasses
import os
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import DepSentence, PairExample, build_vocab, lowercase_corpus, read_embedding_table
from .encoder import EncoderConfig
from .errors import ConfigurationError, DivergenceError, ValidationError
from .masks import build_schedule, masks_for_sentence, write_mask_csv
from .model import RunConfig, SentenceClassifier, build_variant
from .params import ParamStore, backward
from .tensor import Tape

ENV_THREADS = "MSSAN_THREADS"


def thread_cap() -> int:
    """Upper bound on internal parallelism; everything here runs on 1 thread."""
    raw = os.environ.get(ENV_THREADS, "")
    if not raw:
        return 1
    try:
        cap = int(raw)
    except ValueError:
        raise ValidationError(f"{ENV_THREADS} must be a positive integer, got {raw!r}")
    if cap < 1:
        raise ValidationError(f"{ENV_THREADS} must be a positive integer, got {raw!r}")
    return cap


class Adam:
    """Standard first-order optimizer over a parameter store."""

    def __init__(
        self,
        store: ParamStore,
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ) -> None:
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {n: np.zeros_like(t.data) for n, t in store.items()}
        self._v = {n: np.zeros_like(t.data) for n, t in store.items()}

    def step(self, grads) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name in self.store.names():
            p = self.store[name]
            g = grads[name].data if hasattr(grads[name], "data") else grads[name]
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m = self._m[name] = b1 * self._m[name] + (1.0 - b1) * g
            v = self._v[name] = b2 * self._v[name] + (1.0 - b2) * (g * g)
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if not np.isfinite(p.data).all():
                raise DivergenceError(f"non-finite values first seen in parameter {name}")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    test_accuracy: float | None
    ms_per_batch: float


@dataclass
class Metrics:
    initial_loss: float = 0.0
    epochs: list[EpochStats] = field(default_factory=list)
    param_counts: dict[str, int] = field(default_factory=dict)
    batch_losses: list[float] = field(default_factory=list)

    @property
    def final_train_loss(self) -> float:
        return self.epochs[-1].train_loss

    @property
    def final_test_accuracy(self) -> float | None:
        for row in reversed(self.epochs):
            if row.test_accuracy is not None:
                return row.test_accuracy
        return None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "train_loss", "test_accuracy", "ms_per_batch"])
            for row in self.epochs:
                acc = "" if row.test_accuracy is None else format(row.test_accuracy, ".9g")
                writer.writerow(
                    [
                        row.epoch,
                        format(row.train_loss, ".9g"),
                        acc,
                        format(row.ms_per_batch, ".9g"),
                    ]
                )


def split_corpus(examples: Sequence, test_fraction: float, seed: int):
    """Deterministic shuffled split into train and test lists."""
    order = np.random.default_rng(seed).permutation(len(examples))
    n_test = max(1, int(round(len(examples) * test_fraction)))
    if n_test >= len(examples):
        raise ValidationError("corpus too small to split")
    test_idx = set(int(i) for i in order[:n_test])
    train = [examples[i] for i in order[n_test:]]
    test = [examples[int(i)] for i in order[:n_test]]
    return train, test


def _corpus_sentences(examples: Sequence):
    for ex in examples:
        if isinstance(ex, PairExample):
            yield ex.premise
            yield ex.hypothesis
        else:
            yield ex


def _mean_loss(model: SentenceClassifier, examples: Sequence, batch_size: int) -> float:
    total = 0.0
    for i in range(0, len(examples), batch_size):
        batch = examples[i : i + batch_size]
        total += model.batch_loss(batch).item() * len(batch)
    return total / len(examples)


def train(
    config: RunConfig,
    corpus: Sequence,
    test_corpus: Sequence | None = None,
    out_dir=None,
    model: SentenceClassifier | None = None,
    log: Callable[[str], None] | None = None,
) -> tuple[SentenceClassifier, Metrics]:
    """Train a variant on a labeled corpus; deterministic under the seed.

    Without an explicit test corpus, a seeded shuffle splits off
    ``test_fraction`` of the examples. Returns the trained model and the
    per-epoch metrics; writes a checkpoint when ``out_dir`` is given.
    """
    if not corpus:
        raise ValidationError("cannot train on an empty corpus")
    if config.lowercase:
        corpus = lowercase_corpus(list(corpus)) if config.task == "single" else [
            PairExample(
                lowercase_corpus([p.premise])[0],
                lowercase_corpus([p.hypothesis])[0],
                p.label,
            )
            for p in corpus
        ]
        if test_corpus is not None and config.task == "single":
            test_corpus = lowercase_corpus(list(test_corpus))

    if test_corpus is None:
        train_set, test_set = split_corpus(list(corpus), config.test_fraction, config.seed)
    else:
        train_set, test_set = list(corpus), list(test_corpus)

    labels = [ex.label for ex in train_set + test_set]
    if any(lb is None for lb in labels):
        raise ValidationError("every example needs a label")
    n_classes = max(labels) + 1
    if n_classes < 2:
        raise ValidationError("corpus holds a single class")

    if model is None:
        vocab = build_vocab(list(_corpus_sentences(train_set)), config.min_count)
        pretrained = (
            read_embedding_table(config.embeddings_path)
            if config.embeddings_path
            else None
        )
        model = build_variant(
            config, vocab, n_classes, np.random.default_rng(config.seed), pretrained
        )

    shuffle_rng = np.random.default_rng(config.seed + 1)
    drop_rng = (
        np.random.default_rng(config.seed + 2) if config.encoder.dropout > 0 else None
    )
    opt = Adam(
        model.store,
        lr=config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.adam_eps,
        weight_decay=config.weight_decay,
    )

    metrics = Metrics(param_counts=model.param_counts())
    metrics.initial_loss = _mean_loss(model, train_set, config.batch_size)

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(train_set))
        epoch_loss = 0.0
        times = []
        for start in range(0, len(order), config.batch_size):
            batch = [train_set[int(i)] for i in order[start : start + config.batch_size]]
            t0 = time.perf_counter()
            with Tape() as tape:
                loss = model.batch_loss(batch, rng=drop_rng)
                value = loss.item()
                if not np.isfinite(value):
                    raise DivergenceError(_nonfinite_diagnostic(model))
                grads = backward(loss, tape, model.store)
            opt.step(grads)
            times.append((time.perf_counter() - t0) * 1000.0)
            epoch_loss += value * len(batch)
            if epoch == 1:
                metrics.batch_losses.append(value)
        acc = None
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            acc = model.accuracy(test_set)
        stats = EpochStats(epoch, epoch_loss / len(train_set), acc, statistics.median(times))
        metrics.epochs.append(stats)
        if log is not None:
            shown = "-" if acc is None else f"{acc:.4f}"
            log(
                f"epoch {epoch}: loss {stats.train_loss:.6f} "
                f"test_acc {shown} ({stats.ms_per_batch:.2f} ms/batch)"
            )
        if config.stop_accuracy and acc is not None and acc >= config.stop_accuracy:
            break

    if out_dir is not None:
        out = Path(out_dir)
        model.save(out)
        metrics.to_csv(out / "metrics.csv")
    return model, metrics


def _nonfinite_diagnostic(model: SentenceClassifier) -> str:
    for name, t in model.store.items():
        if not np.isfinite(t.data).all():
            return f"non-finite values first seen in parameter {name}"
    return "non-finite values first seen in tensor loss"


def evaluate(model: SentenceClassifier, examples: Sequence) -> float:
    return model.accuracy(examples)


# ---------------------------------------------------------------------------
# gradient checking


def _relative_error(a: np.ndarray, n: np.ndarray) -> float:
    scale = max(1.0, float(np.abs(a).max(initial=0.0)), float(np.abs(n).max(initial=0.0)))
    return float(np.abs(a - n).max(initial=0.0)) / scale


def gradcheck(
    config: RunConfig, seed: int = 0, tolerance: float = 1e-3, step: float = 1e-4
) -> tuple[list[tuple[str, float]], bool]:
    """Compare analytic and central-difference gradients of the full model.

    Covers every parameter exactly once, loss taken over a tiny synthetic
    batch. Small dimensions are enforced to keep the sweep fast.
    """
    ec = config.encoder
    if ec.d_e > 16:
        raise ConfigurationError(f"gradcheck needs d_e <= 16, got {ec.d_e}")
    if ec.dropout > 0:
        raise ConfigurationError("gradcheck needs dropout 0 (finite differences redraw masks)")
    l = 4
    rng = np.random.default_rng(seed)
    batch = _gradcheck_batch(config, l, rng)
    vocab = build_vocab(list(_corpus_sentences(batch)))
    model = build_variant(config, vocab, 2, rng)

    with Tape() as tape:
        loss = model.batch_loss(batch)
        grads = backward(loss, tape, model.store)

    def loss_value() -> float:
        return model.batch_loss(batch).item()

    report: list[tuple[str, float]] = []
    for name in model.store.names():
        p = model.store[name]
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = loss_value()
            flat[i] = keep - step
            down = loss_value()
            flat[i] = keep
            num_flat[i] = (up - down) / (2.0 * step)
        report.append((name, _relative_error(grads[name].data, numeric)))
    return report, all(err < tolerance for _, err in report)


def _gradcheck_batch(config: RunConfig, l: int, rng: np.random.Generator):
    tokens = [f"t{i}" for i in range(l)]
    sents = []
    for label in (0, 1):
        heads = [0] * l
        for v in range(1, l):
            heads[v] = int(rng.integers(0, v)) + 1
        order = [int(i) for i in rng.permutation(l)]
        sents.append(
            DepSentence([tokens[i] for i in order], _remap_heads(heads, order), label)
        )
    if config.task == "pair":
        return [PairExample(sents[0], sents[1], 0), PairExample(sents[1], sents[0], 1)]
    return sents


def _remap_heads(heads: list[int], order: list[int]) -> list[int]:
    pos = {v: p for p, v in enumerate(order)}
    return [0 if heads[v] == 0 else pos[heads[v] - 1] + 1 for v in order]


# ---------------------------------------------------------------------------
# benchmarking and ablation


def bench(
    variant: str,
    d_e: int = 300,
    length: int = 25,
    batch_size: int = 32,
    n_batches: int = 50,
    warmup: int = 5,
    seed: int = 0,
) -> dict:
    """Median wall-clock per training step for one variant.

    Steps run on one fixed synthetic batch so repeated measurements are
    comparable; the median is taken over ``n_batches`` warmed-up steps.
    """
    ec = EncoderConfig(d_e=d_e, n_heads=6, distance_cycle=("word", "dependency", "none"))
    config = RunConfig(encoder=ec, variant=variant, seed=seed, batch_size=batch_size)
    rng = np.random.default_rng(seed)
    corpus = []
    for k in range(batch_size):
        toks = [f"t{int(rng.integers(0, 50))}" for _ in range(length)]
        corpus.append(DepSentence(toks, list(range(length)), k % 2))
    vocab = build_vocab(corpus)
    model = build_variant(config, vocab, 2, rng)
    opt = Adam(model.store, lr=config.learning_rate)

    def step() -> float:
        t0 = time.perf_counter()
        with Tape() as tape:
            loss = model.batch_loss(corpus)
            grads = backward(loss, tape, model.store)
        opt.step(grads)
        return (time.perf_counter() - t0) * 1000.0

    for _ in range(warmup):
        step()
    times = [step() for _ in range(n_batches)]
    counts = model.param_counts()
    return {
        "variant": variant,
        "median_ms_per_batch": statistics.median(times),
        "sentence_dim": model.sentence_dim,
        "encoder_params": counts["encoder"],
        "encoder_and_classifier_params": counts["encoder_and_classifier"],
        "total_params": counts["total"],
    }


ABLATION_ROWS: list[tuple[str, bool, bool, bool]] = [
    ("none", False, False, False),
    ("direction", True, False, False),
    ("word_distance", False, True, False),
    ("dependency_distance", False, False, True),
    ("word_and_dependency", False, True, True),
    ("direction_and_word", True, True, False),
    ("direction_and_dependency", True, False, True),
    ("all", True, True, True),
]


def ablation_grid(
    base_config: RunConfig,
    corpus: Sequence,
    out_path=None,
    log: Callable[[str], None] | None = None,
) -> list[dict]:
    """Train once per prior on/off row, same seed everywhere; returns a table."""
    rows = []
    for label, use_dir, use_word, use_dep in ABLATION_ROWS:
        config = dataclasses.replace(
            base_config,
            encoder=EncoderConfig.from_dict(base_config.encoder.to_dict()),
            enable_direction=use_dir,
            enable_word_distance=use_word,
            enable_dependency_distance=use_dep,
        )
        _, metrics = train(config, corpus)
        row = {
            "priors": label,
            "test_accuracy": metrics.final_test_accuracy,
            "final_train_loss": metrics.final_train_loss,
        }
        rows.append(row)
        if log is not None:
            log(
                f"{label}: test_acc {row['test_accuracy']:.4f} "
                f"train_loss {row['final_train_loss']:.4f}"
            )
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["priors", "test_accuracy", "final_train_loss"])
            for row in rows:
                writer.writerow(
                    [
                        row["priors"],
                        format(row["test_accuracy"], ".9g"),
                        format(row["final_train_loss"], ".9g"),
                    ]
                )
    return rows


# ---------------------------------------------------------------------------
# exporters


def write_pgm(path, weights: np.ndarray) -> None:
    """Grayscale PGM (P2) with 0..1 weights scaled to 0..255."""
    levels = np.rint(np.clip(weights, 0.0, 1.0) * 255).astype(int)
    h, w = levels.shape
    lines = ["P2", f"{w} {h}", "255"]
    lines += [" ".join(str(v) for v in row) for row in levels]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def emit_masks(config: EncoderConfig, sent: DepSentence, out_dir) -> list[Path]:
    """Write one CSV per head of the configured schedule."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    schedule = build_schedule(config.n_heads, config.distance_cycle)
    heads = sent.heads if schedule.needs_tree() else None
    matrices = masks_for_sentence(
        schedule, len(sent), heads=heads, alpha=config.alpha,
        swap_direction=config.swap_direction,
    )
    paths = []
    for k, (spec, mask) in enumerate(zip(schedule.heads, matrices), 1):
        path = out / f"head{k}_{spec.direction}_{spec.distance}.csv"
        write_mask_csv(path, mask, sent.tokens)
        paths.append(path)
    return paths


def emit_heatmap(model: SentenceClassifier, sent: DepSentence, out_dir) -> list[Path]:
    """Write first-layer attention weights per head as CSV plus PGM."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for tag, weights, _ in model.attention_maps(sent):
        csv_path = out / f"{tag}.csv"
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(sent.tokens)
            for row in weights:
                writer.writerow([format(v, ".9g") for v in row])
        write_pgm(out / f"{tag}.pgm", weights)
        paths.append(csv_path)
    return paths
