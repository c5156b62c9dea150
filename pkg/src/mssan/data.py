"""Corpus ingestion, vocabulary, embeddings, and synthetic task generators.

Sentences travel in a CoNLL-U subset: tab-separated lines whose columns
1 (ID), 2 (FORM) and 7 (HEAD) are required, blank lines separate
sentences, comment lines start with ``#``, and multiword-token ranges
(IDs like ``3-4``) are skipped. An optional ``# label = k`` comment
attaches an integer class label to the following sentence. Dependency
trees arrive pre-parsed; this package never runs a parser.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    ConlluParseError,
    EmptyInputError,
    MalformedTreeError,
    ValidationError,
)
from .masks import tree_distances, validate_tree
from .tensor import Tensor, glorot, take_rows

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

NLI_LABELS = {"entailment": 0, "neutral": 1, "contradiction": 2}

_LABEL_RE = re.compile(r"^#\s*label\s*=\s*(-?\d+)\s*$")


@dataclass
class DepSentence:
    """Token forms with per-token head indices (1-based, 0 marks the root)."""

    tokens: list[str]
    heads: list[int]
    label: int | None = None

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.heads):
            raise ValidationError(
                f"{len(self.tokens)} tokens but {len(self.heads)} head indices"
            )

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class PairExample:
    """A premise/hypothesis pair with a relation label."""

    premise: DepSentence
    hypothesis: DepSentence
    label: int | None = None


def load_conllu(path) -> list[DepSentence]:
    """Read the CoNLL-U subset, validating every dependency tree."""
    sentences: list[DepSentence] = []
    tokens: list[str] = []
    heads: list[int] = []
    label: int | None = None

    def flush() -> None:
        nonlocal tokens, heads, label
        if not tokens:
            return
        try:
            validate_tree(heads)
        except MalformedTreeError as exc:
            raise ConlluParseError(
                f"{path}: sentence {len(sentences) + 1}: {exc}"
            ) from exc
        sentences.append(DepSentence(tokens, heads, label))
        tokens, heads, label = [], [], None

    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip():
                flush()
                continue
            if line.startswith("#"):
                m = _LABEL_RE.match(line)
                if m:
                    label = int(m.group(1))
                continue
            cols = line.split("\t")
            if len(cols) < 7:
                raise ConlluParseError(
                    f"{path}:{lineno}: expected at least 7 tab-separated columns, got {len(cols)}"
                )
            tid, form, head = cols[0], cols[1], cols[6]
            if "-" in tid or "." in tid:
                continue
            try:
                int(tid)
            except ValueError:
                raise ConlluParseError(f"{path}:{lineno}: ID is not an integer: {tid!r}")
            try:
                heads.append(int(head))
            except ValueError:
                raise ConlluParseError(
                    f"{path}:{lineno}: HEAD is not an integer: {head!r}"
                )
            tokens.append(form)
    flush()
    return sentences


def save_conllu(sentences: Sequence[DepSentence], path) -> None:
    """Write sentences back out in the subset format, labels included."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sent in sentences:
            if sent.label is not None:
                fh.write(f"# label = {sent.label}\n")
            for i, (form, head) in enumerate(zip(sent.tokens, sent.heads), 1):
                cols = [str(i), form, "_", "_", "_", "_", str(head), "_", "_", "_"]
                fh.write("\t".join(cols) + "\n")
            fh.write("\n")


def load_pairs(path) -> list[PairExample]:
    """Read consecutive sentence pairs; the premise carries the label."""
    sentences = load_conllu(path)
    if len(sentences) % 2:
        raise ConlluParseError(
            f"{path}: pair corpus holds an odd number of sentences ({len(sentences)})"
        )
    return [
        PairExample(sentences[i], sentences[i + 1], sentences[i].label)
        for i in range(0, len(sentences), 2)
    ]


@dataclass
class Vocab:
    """Bijective token/id mapping with reserved padding (0) and unknown (1) ids."""

    id_to_token: list[str]

    def __post_init__(self) -> None:
        if self.id_to_token[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ValidationError("vocab must start with the padding and unknown tokens")
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValidationError("vocab tokens are not unique")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        unk = self.token_to_id[UNK_TOKEN]
        return [self.token_to_id.get(t, unk) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"tokens": self.id_to_token}, fh)

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh)["tokens"])


def build_vocab(sentences: Sequence[DepSentence], min_count: int = 1) -> Vocab:
    """Frequency-filtered vocabulary: count desc, then lexicographic."""
    if not sentences:
        raise EmptyInputError("cannot build a vocabulary from an empty corpus")
    counts: Counter[str] = Counter()
    for sent in sentences:
        counts.update(t for t in sent.tokens if t not in (PAD_TOKEN, UNK_TOKEN))
    kept = sorted(
        (t for t, c in counts.items() if c >= min_count),
        key=lambda t: (-counts[t], t),
    )
    return Vocab([PAD_TOKEN, UNK_TOKEN] + kept)


def embed(ids: Sequence[int], table: Tensor) -> Tensor:
    """Look up one embedding row per id."""
    rows = table.data.shape[0]
    for i in ids:
        if not 0 <= i < rows:
            raise ValidationError(f"token id {i} out of range for {rows} embedding rows")
    return take_rows(table, ids)


def random_embeddings(rng: np.random.Generator, n_rows: int, d_e: int) -> np.ndarray:
    return glorot(rng, n_rows, d_e)


def read_embedding_table(path) -> tuple[list[str], np.ndarray]:
    """Text format: one token per line followed by its decimal components."""
    tokens: list[str] = []
    rows: list[list[float]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if len(parts) < 2:
                raise ValidationError(f"{path}:{lineno}: token without components")
            tokens.append(parts[0])
            rows.append([float(v) for v in parts[1:]])
            if len(rows[-1]) != len(rows[0]):
                raise ValidationError(f"{path}:{lineno}: inconsistent embedding width")
    if not tokens:
        raise EmptyInputError(f"{path}: empty embedding table")
    return tokens, np.asarray(rows, dtype=np.float64)


def write_embedding_table(path, tokens: Sequence[str], table: np.ndarray) -> None:
    """Inverse of :func:`read_embedding_table`; round-trips bit-exactly."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for tok, row in zip(tokens, table):
            fh.write(tok + " " + " ".join(repr(float(v)) for v in row) + "\n")


_FILLERS = ["w0", "w1", "w2", "w3", "w4", "w5"]


def gen_order_task(n_examples: int, l: int, seed: int) -> list[DepSentence]:
    """Synthetic order task: label 1 iff marker ``a`` precedes marker ``b``.

    Sentences are random filler tokens with the two markers at random
    distinct positions, over chain dependency trees. Classes alternate, so
    they balance within one example, and the label is independent of the
    token multiset.
    """
    if l < 4:
        raise ConfigurationError(f"order task needs l >= 4, got {l}")
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n_examples):
        label = k % 2
        toks = [_FILLERS[int(rng.integers(len(_FILLERS)))] for _ in range(l)]
        i, j = sorted(int(v) for v in rng.choice(l, size=2, replace=False))
        if label == 1:
            toks[i], toks[j] = "a", "b"
        else:
            toks[i], toks[j] = "b", "a"
        heads = list(range(l))
        out.append(DepSentence(toks, heads, label))
    return out


def gen_tree_task(n_examples: int, l: int, seed: int) -> list[DepSentence]:
    """Synthetic tree task: label 1 iff marker ``a`` sits within tree
    distance 2 of the root token ``r``.

    Trees are random, surface order is a random permutation of the tree
    nodes, so linear distance carries no signal. Classes alternate.
    """
    if l < 5:
        raise ConfigurationError(f"tree task needs l >= 5, got {l}")
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n_examples):
        want = k % 2
        for _ in range(1000):
            parent = [0] * l
            depth = [0] * l
            for v in range(1, l):
                parent[v] = int(rng.integers(0, v))
                depth[v] = depth[parent[v]] + 1
            candidates = [
                v for v in range(1, l) if (depth[v] <= 2) == bool(want)
            ]
            if candidates:
                break
        else:
            raise ConfigurationError(f"no tree of {l} nodes fits label {want}")
        marker = candidates[int(rng.integers(len(candidates)))]
        forms = [_FILLERS[int(rng.integers(len(_FILLERS)))] for _ in range(l)]
        forms[0] = "r"
        forms[marker] = "a"
        perm = [int(v) for v in rng.permutation(l)]
        pos = [0] * l
        for p, v in enumerate(perm):
            pos[v] = p
        tokens = [forms[v] for v in perm]
        heads = [0 if v == 0 else pos[parent[v]] + 1 for v in perm]
        out.append(DepSentence(tokens, heads, want))
    return out


def recompute_tree_label(sent: DepSentence) -> int:
    """Rederive a tree-task label from the stored structure."""
    root = sent.heads.index(0)
    marker = sent.tokens.index("a")
    return int(tree_distances(sent.heads)[root, marker] <= 2)


def lowercase_corpus(sentences: Sequence[DepSentence]) -> list[DepSentence]:
    return [
        DepSentence([t.lower() for t in s.tokens], list(s.heads), s.label)
        for s in sentences
    ]
