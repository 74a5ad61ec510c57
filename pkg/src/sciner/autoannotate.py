"""Confidence-gated, rule-constrained auto-annotation.

Subword class probabilities are multiplied into word-level scores, each word
is decoded left to right against the BIO transition rules, and the best legal
class is kept only when its aggregated score clears the confidence threshold;
otherwise the word is marked `amb`.  Rule masking happens before the gate, so
the gate always judges the best *legal* class and the output sequence is
valid by construction.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field

import numpy as np

from . import kernels, tag_schema
from .dataset import AnnotatedParagraph
from .errors import AlignmentError
from .tagger import Featurizer, TaggerModel, group_external_probs

DEFAULT_GAMMA = 0.98

_LEGAL_U8 = tag_schema.LEGAL_TRANSITIONS[:, : tag_schema.NUM_CLASSES].astype(np.uint8)
_START_ROW = tag_schema.label_index(tag_schema.O_LABEL)


@dataclass(frozen=True)
class GateConfig:
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")


@dataclass(eq=False)
class WordProbs:
    """Aggregated per-class scores for one word (a product, so no unit sum)."""

    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.shape != (tag_schema.NUM_CLASSES,):
            raise ValueError(
                f"scores must have {tag_schema.NUM_CLASSES} entries, got {scores.shape}"
            )
        if (scores < 0).any() or (scores > 1).any():
            raise ValueError("scores must lie in [0, 1]")
        self.scores = scores


def aggregate_word_probs(subword_probs) -> WordProbs:
    """Eq.-style product of one word's subword distributions.

    A single subword passes through unchanged; longer words multiply in log
    space to dodge underflow.
    """
    subword_probs = list(subword_probs)
    if not subword_probs:
        raise ValueError("word has no subword probabilities")
    rows = np.vstack([tp.distribution for tp in subword_probs])
    if len(rows) == 1:
        return WordProbs(rows[0].copy())
    with np.errstate(divide="ignore"):
        scores = np.exp(np.log(rows).sum(axis=0))
    return WordProbs(scores)


def gate_label(word_probs: WordProbs, config: GateConfig = GateConfig()) -> str:
    """The argmax class when its score clears gamma (inclusive), else amb.

    Ties break toward the lowest class index.
    """
    scores = word_probs.scores
    best = int(scores.argmax())  # argmax returns the first (lowest) max index
    if scores[best] >= config.gamma:
        return tag_schema.index_label(best)
    return tag_schema.AMB


def _decode_matrix(score_matrix: np.ndarray, gamma: float):
    labels_idx, conf = kernels.decode_constrained(
        np.ascontiguousarray(score_matrix, dtype=np.float64),
        _LEGAL_U8,
        gamma,
        _START_ROW,
    )
    return labels_idx, conf


def constrained_decode(paragraph_word_probs, config: GateConfig = GateConfig()) -> list[str]:
    """Greedy left-to-right decoding under the BIO legality matrix.

    At each word only classes legal after the previously emitted label are
    considered; the best legal class is gated against gamma.  The result
    always passes validate_sequence.
    """
    paragraph_word_probs = list(paragraph_word_probs)
    if not paragraph_word_probs:
        return []
    matrix = np.vstack([wp.scores for wp in paragraph_word_probs])
    labels_idx, _ = _decode_matrix(matrix, config.gamma)
    return [tag_schema.index_label(int(i)) for i in labels_idx]


@dataclass
class GateStats:
    total_words: int = 0
    amb_words: int = 0
    accepted: dict[str, int] = field(default_factory=dict)

    @property
    def amb_fraction(self) -> float:
        return self.amb_words / self.total_words if self.total_words else 0.0

    def to_dict(self) -> dict:
        return {
            "total_words": self.total_words,
            "amb_words": self.amb_words,
            "amb_fraction": self.amb_fraction,
            "accepted": dict(sorted(self.accepted.items())),
        }

    def render(self) -> str:
        lines = [
            f"words        {self.total_words}",
            f"amb          {self.amb_words} ({100.0 * self.amb_fraction:.1f}%)",
        ]
        for label in tag_schema.MODEL_LABELS:
            if label in self.accepted:
                lines.append(f"{label:<21}{self.accepted[label]}")
        return "\n".join(lines)

    def merge_counts(self, labels) -> None:
        for label in labels:
            self.total_words += 1
            if label == tag_schema.AMB:
                self.amb_words += 1
            else:
                self.accepted[label] = self.accepted.get(label, 0) + 1


def _word_scores_from_model(model: TaggerModel, featurizer: Featurizer, words):
    feat, offsets, word_idx = featurizer.paragraph_arrays(words)
    probs = kernels.score_subwords(model.weights, feat, offsets)
    return kernels.aggregate_words(probs, word_idx, len(words))


def _word_scores_from_stream(grouped, paragraph: AnnotatedParagraph):
    key = (paragraph.paper_id, paragraph.paragraph_index)
    if key not in grouped:
        raise AlignmentError(
            f"no probability records for {paragraph.paper_id} "
            f"paragraph {paragraph.paragraph_index}"
        )
    word_idx, probs = grouped[key]
    n_words = len(paragraph.words)
    covered = np.unique(word_idx)
    if len(covered) != n_words or covered[0] != 0 or covered[-1] != n_words - 1:
        raise AlignmentError(
            f"probability records for {paragraph.paper_id} paragraph "
            f"{paragraph.paragraph_index} cover {len(covered)} of {n_words} words"
        )
    return kernels.aggregate_words(probs, word_idx, n_words)


def annotate_corpus(source, paragraphs, config: GateConfig = GateConfig(),
                    parallelism: int = 1):
    """Label every paragraph via gated constrained decoding.

    `source` is either a TaggerModel or an iterable of ExternalProbs records.
    Returns (annotated paragraphs, GateStats); per-word confidence is the
    aggregated score of the best legal class, whether or not it was accepted.
    """
    paragraphs = list(paragraphs)
    if isinstance(source, TaggerModel):
        featurizer = Featurizer(source.hash_dim)

        def score_paragraph(p):
            return _word_scores_from_model(source, featurizer, p.words)

    else:
        grouped = group_external_probs(source)

        def score_paragraph(p):
            return _word_scores_from_stream(grouped, p)

    def annotate_one(p: AnnotatedParagraph) -> AnnotatedParagraph:
        if not p.words:
            raise ValueError(f"{p.paper_id} paragraph {p.paragraph_index} has no words")
        labels_idx, conf = _decode_matrix(score_paragraph(p), config.gamma)
        labels = [tag_schema.index_label(int(i)) for i in labels_idx]
        return AnnotatedParagraph(
            paper_id=p.paper_id,
            paragraph_index=p.paragraph_index,
            words=list(p.words),
            labels=labels,
            provenance="auto",
            confidence=[float(c) for c in conf],
        )

    if parallelism > 1 and len(paragraphs) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=parallelism) as pool:
            annotated = list(pool.map(annotate_one, paragraphs, chunksize=64))
    else:
        annotated = [annotate_one(p) for p in paragraphs]

    stats = GateStats()
    for p in annotated:
        stats.merge_counts(p.labels)
    return annotated, stats
