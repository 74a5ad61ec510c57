"""Trainable token-level probability source.

A hashed-feature multinomial logistic regression stands in for the usual
pre-trained encoder: words are segmented into fixed-width subword chunks, each
subword gets sparse hashed features of itself and its context, and a single
softmax layer turns the feature scores into the 15 class probabilities.
Probabilities computed elsewhere can be fed in through the probability-file
reader instead, so the rest of the pipeline is agnostic to the source.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass

import numpy as np

from . import kernels, tag_schema
from .errors import AlignmentError, FormatError

DEFAULT_HASH_DIM = 1 << 20
SUBWORD_WIDTH = 4
CONTINUATION_MARK = "##"

MODEL_FORMAT = "sciner-tagger-v1"


@dataclass(frozen=True)
class SubwordToken:
    text: str  # continuation chunks are prefixed with ##
    word_index: int

    @property
    def is_continuation(self) -> bool:
        return self.text.startswith(CONTINUATION_MARK)

    @property
    def chunk(self) -> str:
        return self.text[len(CONTINUATION_MARK):] if self.is_continuation else self.text


def segment_word(word: str, word_index: int = 0) -> list[SubwordToken]:
    """Fixed-width chunking: at most 4 characters per subword, left to right."""
    if not word or any(c.isspace() for c in word):
        raise ValueError(f"cannot segment {word!r}")
    out = []
    for start in range(0, len(word), SUBWORD_WIDTH):
        chunk = word[start : start + SUBWORD_WIDTH]
        text = chunk if start == 0 else CONTINUATION_MARK + chunk
        out.append(SubwordToken(text, word_index))
    return out


def segment_paragraph(words) -> list[SubwordToken]:
    out = []
    for i, word in enumerate(words):
        out.extend(segment_word(word, i))
    return out


@dataclass(eq=False)
class TokenProbs:
    """Class distribution for one subword, aligned to its parent word."""

    word_index: int
    distribution: np.ndarray

    def __post_init__(self):
        dist = np.asarray(self.distribution, dtype=np.float64)
        if dist.shape != (tag_schema.NUM_CLASSES,):
            raise ValueError(
                f"distribution must have {tag_schema.NUM_CLASSES} entries, got {dist.shape}"
            )
        if (dist < 0).any():
            raise ValueError("negative probability")
        if abs(dist.sum() - 1.0) > 1e-9:
            raise ValueError(f"distribution sums to {dist.sum()!r}, not 1")
        self.distribution = dist


def word_shape(word: str) -> str:
    return "".join(
        "d" if c.isdigit() else "X" if c.isupper() else "x" if c.islower() else "_"
        for c in word
    )


class Featurizer:
    """Deterministic hashed features for subwords in context.

    Feature strings are CRC32-hashed into `dim` buckets; collisions are
    accepted noise.  Word-level parts are memoized since corpora repeat a
    small vocabulary heavily.
    """

    def __init__(self, dim: int = DEFAULT_HASH_DIM):
        if dim < 2:
            raise ValueError("hash dimension must be >= 2")
        self.dim = dim
        self._word_cache: dict[str, list[int]] = {}
        self._subword_cache: dict[str, list[list[int]]] = {}
        self._neighbor_cache: dict[tuple[int, str], int] = {}

    def _h(self, text: str) -> int:
        return zlib.crc32(text.encode("utf-8")) % self.dim

    def _word_features(self, word: str) -> list[int]:
        cached = self._word_cache.get(word)
        if cached is None:
            cached = [
                self._h("bias"),
                self._h("w=" + word),
                self._h("shape=" + word_shape(word)),
            ]
            for k in range(1, min(3, len(word)) + 1):
                cached.append(self._h(f"pre{k}=" + word[:k]))
                cached.append(self._h(f"suf{k}=" + word[-k:]))
            self._word_cache[word] = cached
        return cached

    def _subword_features(self, word: str) -> list[list[int]]:
        cached = self._subword_cache.get(word)
        if cached is None:
            cached = []
            for sub in segment_word(word):
                pos = "cont" if sub.is_continuation else "first"
                cached.append([self._h("sub=" + sub.text), self._h("pos=" + pos)])
            self._subword_cache[word] = cached
        return cached

    def _neighbor(self, offset: int, word: str) -> int:
        key = (offset, word)
        cached = self._neighbor_cache.get(key)
        if cached is None:
            cached = self._h(f"n{offset}=" + word)
            self._neighbor_cache[key] = cached
        return cached

    def _context_features(self, words, index: int) -> list[int]:
        out = []
        for offset in range(-2, 3):
            j = index + offset
            if j < 0:
                neighbor = "<s>"
            elif j >= len(words):
                neighbor = "</s>"
            else:
                neighbor = words[j]
            out.append(self._neighbor(offset, neighbor))
        return out

    def featurize(self, subword: SubwordToken, words) -> np.ndarray:
        """Feature ids for one subword of words[subword.word_index]."""
        if not 0 <= subword.word_index < len(words):
            raise ValueError(f"word_index {subword.word_index} out of range")
        word = words[subword.word_index]
        subs = self._subword_features(word)
        position = 0
        for k, sub in enumerate(segment_word(word, subword.word_index)):
            if sub == subword:
                position = k
                break
        else:
            raise ValueError(f"{subword!r} is not a subword of {word!r}")
        feats = (
            self._word_features(word)
            + subs[position]
            + self._context_features(words, subword.word_index)
        )
        return np.asarray(feats, dtype=np.int64)

    def paragraph_arrays(self, words):
        """(feat, offsets, word_idx) arrays for all subwords of a paragraph."""
        feat: list[int] = []
        offsets = [0]
        word_idx: list[int] = []
        for i, word in enumerate(words):
            word_feats = self._word_features(word)
            context = self._context_features(words, i)
            for sub_feats in self._subword_features(word):
                feat.extend(word_feats)
                feat.extend(sub_feats)
                feat.extend(context)
                offsets.append(len(feat))
                word_idx.append(i)
        return (
            np.asarray(feat, dtype=np.int64),
            np.asarray(offsets, dtype=np.int64),
            np.asarray(word_idx, dtype=np.int64),
        )


def featurize(subword: SubwordToken, words, dim: int = DEFAULT_HASH_DIM) -> np.ndarray:
    return Featurizer(dim).featurize(subword, words)


@dataclass
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 1e-4
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TaggerModel:
    weights: np.ndarray  # (hash_dim, 15)
    hash_dim: int
    epochs_run: int = 0
    learning_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (self.hash_dim, tag_schema.NUM_CLASSES):
            raise ValueError(
                f"weights shape {self.weights.shape} does not match "
                f"({self.hash_dim}, {tag_schema.NUM_CLASSES})"
            )
        if not np.isfinite(self.weights).all():
            raise ValueError("weights must be finite")

    @classmethod
    def fresh(cls, hash_dim: int = DEFAULT_HASH_DIM) -> "TaggerModel":
        return cls(np.zeros((hash_dim, tag_schema.NUM_CLASSES)), hash_dim)

    def save(self, path) -> None:
        np.savez_compressed(
            path,
            format=MODEL_FORMAT,
            weights=self.weights,
            hash_dim=self.hash_dim,
            epochs_run=self.epochs_run,
            learning_rate=self.learning_rate,
            seed=self.seed,
        )

    @classmethod
    def load(cls, path) -> "TaggerModel":
        with np.load(path, allow_pickle=False) as data:
            fmt = str(data["format"])
            if fmt != MODEL_FORMAT:
                raise FormatError(f"unknown model format {fmt!r}")
            return cls(
                weights=data["weights"],
                hash_dim=int(data["hash_dim"]),
                epochs_run=int(data["epochs_run"]),
                learning_rate=float(data["learning_rate"]),
                seed=int(data["seed"]),
            )


@dataclass
class _Prepared:
    """Featurized training set in kernel array form."""

    feat: np.ndarray
    offsets: np.ndarray
    labels: np.ndarray
    mask: np.ndarray
    par_offsets: np.ndarray
    n_paragraphs: int
    n_effective: int


def prepare_examples(examples, featurizer: Featurizer) -> _Prepared:
    feat_parts = []
    offsets = [np.zeros(1, dtype=np.int64)]
    labels: list[int] = []
    mask: list[bool] = []
    par_offsets = [0]
    base = 0
    n_sub = 0
    for example in examples:
        f, o, widx = featurizer.paragraph_arrays(example.words)
        feat_parts.append(f)
        offsets.append(o[1:] + base)
        base += len(f)
        for wi in widx:
            label = example.labels[wi]
            masked_in = example.mask[wi] and label != tag_schema.AMB
            if masked_in and not tag_schema.is_model_label(label):
                raise ValueError(f"unmasked label {label!r} is not a model class")
            labels.append(tag_schema.label_index(label) if masked_in else 0)
            mask.append(masked_in)
        n_sub += len(widx)
        par_offsets.append(n_sub)
    mask_arr = np.asarray(mask, dtype=np.uint8)
    return _Prepared(
        feat=np.concatenate(feat_parts) if feat_parts else np.zeros(0, dtype=np.int64),
        offsets=np.concatenate(offsets),
        labels=np.asarray(labels, dtype=np.int64),
        mask=mask_arr,
        par_offsets=np.asarray(par_offsets, dtype=np.int64),
        n_paragraphs=len(par_offsets) - 1,
        n_effective=int(mask_arr.sum()),
    )


def train(data, config: TrainConfig, init: TaggerModel | None = None,
          hash_dim: int = DEFAULT_HASH_DIM) -> TaggerModel:
    """Mini-batch gradient descent on masked cross-entropy.

    Batches are `batch_size` paragraphs; paragraph order is reshuffled every
    epoch from `config.seed`, so a rerun is bit-identical.  `init` continues
    training an existing model (its hash_dim wins); otherwise training starts
    from zero weights.
    """
    data = list(data)
    if init is not None:
        hash_dim = init.hash_dim
        weights = init.weights.copy()
        epochs_before = init.epochs_run
    else:
        weights = np.zeros((hash_dim, tag_schema.NUM_CLASSES))
        epochs_before = 0
    featurizer = Featurizer(hash_dim)
    prepared = prepare_examples(data, featurizer)
    if prepared.n_effective == 0:
        raise ValueError("no unmasked training tokens")

    rng = np.random.default_rng(config.seed)
    for _ in range(config.epochs):
        order = rng.permutation(prepared.n_paragraphs).astype(np.int64)
        kernels.epoch_sgd(
            weights,
            prepared.feat,
            prepared.offsets,
            prepared.labels,
            prepared.mask,
            prepared.par_offsets,
            order,
            config.batch_size,
            config.learning_rate,
        )
    return TaggerModel(
        weights=weights,
        hash_dim=hash_dim,
        epochs_run=epochs_before + config.epochs,
        learning_rate=config.learning_rate,
        seed=config.seed,
    )


def training_loss(model: TaggerModel, data) -> float:
    """Mean cross-entropy per unmasked subword (forward pass only)."""
    featurizer = Featurizer(model.hash_dim)
    prepared = prepare_examples(list(data), featurizer)
    if prepared.n_effective == 0:
        raise ValueError("no unmasked training tokens")
    probs = kernels.score_subwords(model.weights, prepared.feat, prepared.offsets)
    live = prepared.mask != 0
    p_true = probs[live, prepared.labels[live]]
    return float(-np.log(np.maximum(p_true, 1e-300)).mean())


def training_loss_gradient(model: TaggerModel, data) -> np.ndarray:
    """Analytic gradient of :func:`training_loss` w.r.t. the weights."""
    featurizer = Featurizer(model.hash_dim)
    prepared = prepare_examples(list(data), featurizer)
    if prepared.n_effective == 0:
        raise ValueError("no unmasked training tokens")
    probs = kernels.score_subwords(model.weights, prepared.feat, prepared.offsets)
    grad = np.zeros_like(model.weights)
    n = prepared.n_effective
    for t in range(len(prepared.labels)):
        if not prepared.mask[t]:
            continue
        g = probs[t].copy()
        g[prepared.labels[t]] -= 1.0
        rows = prepared.feat[prepared.offsets[t] : prepared.offsets[t + 1]]
        np.add.at(grad, rows, g / n)
    return grad


def predict_probs(model: TaggerModel, words, featurizer: Featurizer | None = None) -> list[TokenProbs]:
    """Per-subword class distributions for one paragraph."""
    words = list(words)
    if not words:
        return []
    if featurizer is None:
        featurizer = Featurizer(model.hash_dim)
    elif featurizer.dim != model.hash_dim:
        raise ValueError("featurizer dimension does not match model")
    feat, offsets, word_idx = featurizer.paragraph_arrays(words)
    probs = kernels.score_subwords(model.weights, feat, offsets)
    return [TokenProbs(int(word_idx[s]), probs[s]) for s in range(len(word_idx))]


# ---------------------------------------------------------------------------
# Externally computed probabilities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExternalProbs:
    """One probability-file record: a subword's distribution with its address."""

    paper_id: str
    paragraph: int
    word_index: int
    subword_index: int
    probs: np.ndarray


_REQUIRED_KEYS = ("paper_id", "paragraph", "word_index", "subword_index", "probs")


def load_external_probs(source):
    """Yield ExternalProbs from a JSON-lines probability file.

    Distributions off by at most 1e-6 from summing to 1 are renormalized;
    anything worse, a wrong class count, or a negative entry is a
    FormatError naming the record number.
    """
    for recno, line in enumerate(source, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"probability record {recno}: bad JSON ({exc})") from None
        for key in _REQUIRED_KEYS:
            if key not in obj:
                raise FormatError(f"probability record {recno}: missing key {key!r}")
        probs = np.asarray(obj["probs"], dtype=np.float64)
        if probs.shape != (tag_schema.NUM_CLASSES,):
            raise FormatError(
                f"probability record {recno}: expected {tag_schema.NUM_CLASSES} "
                f"probabilities, got {probs.shape[0] if probs.ndim == 1 else probs.shape}"
            )
        if (probs < 0).any():
            raise FormatError(f"probability record {recno}: negative probability")
        total = probs.sum()
        if abs(total - 1.0) > 1e-6:
            raise FormatError(
                f"probability record {recno}: probabilities sum to {total!r}"
            )
        yield ExternalProbs(
            paper_id=str(obj["paper_id"]),
            paragraph=int(obj["paragraph"]),
            word_index=int(obj["word_index"]),
            subword_index=int(obj["subword_index"]),
            probs=probs / total,
        )


def group_external_probs(records):
    """Group records into {(paper_id, paragraph): (word_idx array, probs matrix)}.

    Records must already be ordered by (paragraph, word_index, subword_index)
    within each paper, as the file format requires.
    """
    grouped: dict[tuple[str, int], tuple[list[int], list[np.ndarray]]] = {}
    for record in records:
        key = (record.paper_id, record.paragraph)
        word_idx, probs = grouped.setdefault(key, ([], []))
        word_idx.append(record.word_index)
        probs.append(record.probs)
    out = {}
    for key, (word_idx, probs) in grouped.items():
        idx = np.asarray(word_idx, dtype=np.int64)
        if len(idx) > 1 and (np.diff(idx) < 0).any():
            raise AlignmentError(
                f"probability records for {key[0]} paragraph {key[1]} are out of order"
            )
        out[key] = (idx, np.vstack(probs))
    return out
