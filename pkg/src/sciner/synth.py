"""Synthetic benchmark corpora with known gold labels.

Paragraphs are assembled from sentence templates whose slots are filled from
per-type entity dictionaries, so every word's label is known by construction.
Entity vocabularies are disjoint from the filler vocabulary; metric and
hyperparameter values are sampled numerically, which leaves a realistic
residue of unseen-but-shaped tokens for the confidence gate to reject.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .corpus_ingest import hash_url
from .dataset import AnnotatedParagraph

METHOD_NAMES = [
    ("AlignNet",), ("SpanMixer",), ("GateFormer",), ("LexiTag",),
    ("ProtoTagger",), ("DeepAnchor",), ("CohortNet",), ("MarginTag",),
    ("PivotNet",), ("EchoTagger",), ("GlyphNet",), ("FusionTag",),
    ("Neural", "Anchor", "Scorer"), ("Gated", "Fusion", "Encoder"),
    ("Dual", "Channel", "Tagger"), ("Sparse", "Prototype", "Model"),
]

TASK_NAMES = [
    ("named", "entity", "recognition"), ("relation", "extraction"),
    ("question", "answering"), ("text", "summarization"),
    ("machine", "translation"), ("coreference", "resolution"),
    ("sentiment", "classification"), ("dependency", "parsing"),
    ("entity", "linking"), ("slot", "filling"),
    ("event", "detection"), ("code", "generation"),
]

DATASET_NAMES = [
    ("WikiGrid",), ("NewsTrace",), ("BioVault",), ("SciDocsLite",),
    ("QuoteBank",), ("LexiCorpus",), ("PatentSpan",), ("ForumThreads",),
    ("Open", "Claims"), ("City", "Reviews"), ("Legal", "Briefs"), ("Chat", "Logs"),
]

METRIC_NAMES = [
    ("accuracy",), ("precision",), ("recall",), ("BLEU",), ("ROUGE",),
    ("perplexity",), ("macro", "F1"), ("error", "rate"), ("AUC",),
    ("exact", "match"), ("word", "overlap"), ("mean", "rank"),
]

HYPERPARAM_NAMES = [
    ("learning", "rate"), ("batch", "size"), ("dropout",), ("weight", "decay"),
    ("hidden", "size"), ("warmup", "steps"), ("beam", "width"), ("temperature",),
    ("label", "smoothing"), ("gradient", "clipping"), ("momentum",),
    ("embedding", "dimension"),
]

HYPERPARAM_VALUES = [
    ("8",), ("16",), ("32",), ("64",), ("128",), ("256",), ("512",),
    ("0.1",), ("0.01",), ("0.001",), ("0.5",), ("0.9",), ("0.99",),
    ("5",), ("10",), ("100",),
]

# sentence templates: literal filler tokens, or a slot naming an entity type
_M = "MethodName"
_T = "TaskName"
_D = "DatasetName"
_MN = "MetricName"
_MV = "MetricValue"
_HN = "HyperparameterName"
_HV = "HyperparameterValue"

TEMPLATES = [
    ("We", "evaluate", _M, "on", _D, "for", _T, "."),
    ("Our", "approach", "builds", "on", _M, "and", "improves", _T, "."),
    (_M, "achieves", _MV, _MN, "on", _D, "."),
    ("The", _HN, "was", "set", "to", _HV, "."),
    ("We", "tune", "the", _HN, "to", _HV, "before", "training", "."),
    ("Results", "on", _D, "show", "consistent", "gains", "in", _MN, "."),
    ("Compared", "with", "prior", "systems", ",", _M, "remains", "ahead", "."),
    ("Training", "uses", "a", _HN, "of", _HV, "throughout", "."),
    (_M, "reaches", _MV, _MN, "for", _T, "."),
    ("On", _D, ",", "the", _MN, "rises", "to", _MV, "."),
    ("We", "report", _MN, "and", _MN, "for", "every", "run", "."),
    ("The", "annotators", "reviewed", "each", "paragraph", "carefully", "."),
    ("All", "experiments", "ran", "on", "a", "single", "workstation", "."),
    ("Further", "analysis", "appears", "in", "the", "appendix", "."),
]

_DICTS = {
    _M: METHOD_NAMES,
    _T: TASK_NAMES,
    _D: DATASET_NAMES,
    _MN: METRIC_NAMES,
    _HN: HYPERPARAM_NAMES,
    _HV: HYPERPARAM_VALUES,
}

PARAGRAPHS_PER_PAPER = 10


def _fill_sentence(template, rng: random.Random):
    words: list[str] = []
    labels: list[str] = []
    for part in template:
        if part == _MV:
            entry = (f"{rng.randrange(500, 1000) / 10:.1f}",)
        elif part in _DICTS:
            entry = rng.choice(_DICTS[part])
        else:
            words.append(part)
            labels.append("O")
            continue
        words.append(entry[0])
        labels.append(f"B-{part}")
        for token in entry[1:]:
            words.append(token)
            labels.append(f"I-{part}")
    return words, labels


def make_paragraph(rng: random.Random, sentences: tuple[int, int] = (2, 4)):
    """One synthetic paragraph: (words, gold labels)."""
    words: list[str] = []
    labels: list[str] = []
    for _ in range(rng.randint(*sentences)):
        w, l = _fill_sentence(rng.choice(TEMPLATES), rng)
        words.extend(w)
        labels.extend(l)
    return words, labels


@dataclass
class SyntheticCorpus:
    manual: list[AnnotatedParagraph]       # gold-labeled, provenance manual
    auto_inputs: list[AnnotatedParagraph]  # unlabeled carriers for annotation
    auto_gold: list[AnnotatedParagraph]    # reference labels for the auto slice
    test: list[AnnotatedParagraph]         # gold-labeled held-out set


def _paper_id(group: str, number: int) -> str:
    return hash_url(f"https://example.org/synthetic/{group}/{number}")


def _build_slice(n: int, group: str, rng: random.Random, annotators=None):
    gold = []
    for k in range(n):
        paper = k // PARAGRAPHS_PER_PAPER
        words, labels = make_paragraph(rng)
        gold.append(
            AnnotatedParagraph(
                paper_id=_paper_id(group, paper),
                paragraph_index=k % PARAGRAPHS_PER_PAPER,
                words=words,
                labels=labels,
                provenance="manual",
                annotator=annotators[paper % len(annotators)] if annotators else None,
            )
        )
    return gold


def make_corpus(n_manual: int = 100, n_auto: int = 1700, n_test: int = 200,
                seed: int = 0, annotators=("alice", "bob", "carol")) -> SyntheticCorpus:
    rng = random.Random(seed)
    manual = _build_slice(n_manual, "manual", rng, annotators)
    auto_gold = _build_slice(n_auto, "auto", rng)
    test = _build_slice(n_test, "test", rng, annotators)
    auto_inputs = [
        AnnotatedParagraph(
            paper_id=p.paper_id,
            paragraph_index=p.paragraph_index,
            words=list(p.words),
            provenance="unannotated",
        )
        for p in auto_gold
    ]
    return SyntheticCorpus(manual=manual, auto_inputs=auto_inputs,
                           auto_gold=auto_gold, test=test)
