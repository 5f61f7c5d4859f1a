"""Label-free corpus curation: C0 (ingest) -> C1 (+LID, +dedup) -> C2 (+quality).

Language identification uses add-one smoothed character n-gram profiles
(n = 1..3). Near-duplicates are found with 64-bit SimHash over word
3-shingles. The quality filter checks length, character entropy and the
perplexity of the document under its language's n-gram profile.
"""
from __future__ import annotations

import hashlib
import json
import math
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .corpus import Document
from .errors import GovernanceError, InvalidInputError
from .parallel import ordered_map as _map

NGRAM_ORDERS = (1, 2, 3)
SIMHASH_BITS = 64
SHINGLE_SIZE = 3
# keyed BLAKE2b keeps fingerprints stable across processes and platforms
SIMHASH_KEY = b"hybridpeft-simhash-v1"
DEFAULT_DEDUP_THRESHOLD = 3
STAGES = ("C0", "C1", "C2")
UNDETERMINED = "und"


# --------------------------------------------------------------------------- language ID


def char_ngrams(text: str, orders=NGRAM_ORDERS) -> list:
    """Character n-grams; orders above 1 see a space pad marking the text boundary."""
    padded = f" {text} "
    grams = []
    for n in orders:
        src = text if n == 1 else padded
        grams.extend(src[i:i + n] for i in range(len(src) - n + 1))
    return grams


@dataclass(frozen=True)
class LidModel:
    languages: tuple
    counts: dict          # lang -> {ngram: count}
    totals: dict          # lang -> total ngram count
    vocab: frozenset

    def log_prob(self, lang: str, gram: str) -> float:
        """log of (count + 1) / (total + |V| + 1); the extra slot holds unseen grams."""
        c = self.counts[lang].get(gram, 0)
        return math.log((c + 1) / (self.totals[lang] + len(self.vocab) + 1))

    def distribution_mass(self, lang: str) -> float:
        denom = self.totals[lang] + len(self.vocab) + 1
        seen = sum(self.counts[lang].get(g, 0) + 1 for g in self.vocab)
        return (seen + 1) / denom


def lid_train(corpus: Iterable[Document], languages: Optional[Sequence[str]] = None) -> LidModel:
    """Build smoothed n-gram profiles from documents that carry a language code."""
    counts: dict = {}
    for doc in corpus:
        if doc.lang is None:
            continue
        counts.setdefault(doc.lang, Counter()).update(char_ngrams(doc.text))
    langs = tuple(languages) if languages is not None else tuple(sorted(counts))
    if not langs:
        raise GovernanceError("no labelled documents to train language ID")
    for lang in langs:
        if not counts.get(lang):
            raise GovernanceError(f"no training documents for language {lang!r}")
    vocab = frozenset().union(*(counts[lang].keys() for lang in langs))
    return LidModel(langs, {l: dict(counts[l]) for l in langs},
                    {l: sum(counts[l].values()) for l in langs}, vocab)


def lid_scores(model: LidModel, text: str) -> dict:
    grams = [g for g in char_ngrams(text) if g in model.vocab]
    return {lang: sum(model.log_prob(lang, g) for g in grams) for lang in model.languages}


def lid_classify(model: LidModel, text: str) -> tuple:
    """Most likely language and its summed log-probability.

    N-grams absent from every profile carry no evidence and are skipped, so
    a text made only of unseen characters ties everywhere and resolves to
    the first language.
    """
    if not text or not text.strip():
        raise InvalidInputError("cannot identify the language of empty text")
    scores = lid_scores(model, text)
    best = model.languages[0]
    for lang in model.languages[1:]:
        if scores[lang] > scores[best]:
            best = lang
    return best, scores[best]


def perplexity(model: LidModel, text: str, lang: str) -> float:
    grams = char_ngrams(text)
    if not grams:
        return math.inf
    mean = sum(model.log_prob(lang, g) for g in grams) / len(grams)
    return math.exp(-mean)


# --------------------------------------------------------------------------- SimHash


@dataclass(frozen=True)
class SimHashSignature:
    bits: int
    source_id: str = ""


_BIT_POSITIONS = np.arange(SIMHASH_BITS, dtype=np.uint64)


def _tokens(text: str) -> list:
    out = []
    for tok in text.lower().split():
        # keep combining marks: they are part of the word in several scripts
        tok = "".join(ch for ch in tok if not unicodedata.category(ch).startswith(("P", "S")))
        if tok:
            out.append(tok)
    return out


def _shingle_hash(shingle: str) -> int:
    digest = hashlib.blake2b(shingle.encode("utf-8"), digest_size=8, key=SIMHASH_KEY).digest()
    return int.from_bytes(digest, "little")


def simhash(text: str, source_id: str = "") -> SimHashSignature:
    if not text or not text.strip():
        raise InvalidInputError("cannot fingerprint empty text")
    toks = _tokens(text) or [text.strip()]
    if len(toks) < SHINGLE_SIZE:
        shingles = [" ".join(toks)]
    else:
        shingles = [" ".join(toks[i:i + SHINGLE_SIZE]) for i in range(len(toks) - SHINGLE_SIZE + 1)]
    hashes = np.array([_shingle_hash(sh) for sh in shingles], dtype=np.uint64)
    bits = (hashes[:, None] >> _BIT_POSITIONS) & np.uint64(1)
    votes = 2 * bits.astype(np.int64).sum(axis=0) - len(shingles)
    value = 0
    for b in np.flatnonzero(votes > 0):
        value |= 1 << int(b)
    return SimHashSignature(value, source_id)


def hamming(a: SimHashSignature | int, b: SimHashSignature | int) -> int:
    x = a.bits if isinstance(a, SimHashSignature) else a
    y = b.bits if isinstance(b, SimHashSignature) else b
    return bin(x ^ y).count("1")


@dataclass
class ClusterReport:
    clusters: list  # lists of member ids, representative first

    @property
    def removed(self) -> list:
        return [m for c in self.clusters for m in c[1:]]

    def sizes(self) -> list:
        return [len(c) for c in self.clusters]


def dedup(corpus: Sequence[Document], threshold: int = DEFAULT_DEDUP_THRESHOLD,
          workers: int = 1, signatures: Optional[list] = None):
    """Greedy near-duplicate clustering in corpus order.

    A document joins the first earlier cluster whose founder lies within
    ``threshold`` bits, otherwise it founds a new cluster. Founders are kept,
    in their original order.
    """
    if signatures is None:
        signatures = _map(lambda d: simhash(d.text, d.id), corpus, workers)
    founders: list = []     # (signature bits, cluster index)
    clusters: list = []
    kept = []
    for doc, sig in zip(corpus, signatures):
        for bits, idx in founders:
            if hamming(bits, sig.bits) <= threshold:
                clusters[idx].append(doc.id)
                break
        else:
            founders.append((sig.bits, len(clusters)))
            clusters.append([doc.id])
            kept.append(doc)
    return kept, ClusterReport(clusters)


# --------------------------------------------------------------------------- quality


@dataclass(frozen=True)
class QualityPolicy:
    min_chars: float = 0
    max_chars: float = math.inf
    entropy_floor: float = -math.inf
    # one number for every language, or a per-language mapping
    ppl_ceiling: float | Mapping = math.inf

    def __post_init__(self):
        if self.min_chars < 0 or self.max_chars < self.min_chars:
            raise GovernanceError("length bounds must satisfy 0 <= min_chars <= max_chars")
        values = self.ppl_ceiling.values() if isinstance(self.ppl_ceiling, Mapping) else [self.ppl_ceiling]
        if any(not v > 0 for v in values):
            raise GovernanceError("perplexity ceiling must be positive")

    def ceiling_for(self, lang: str) -> float:
        if isinstance(self.ppl_ceiling, Mapping):
            return float(self.ppl_ceiling.get(lang, math.inf))
        return float(self.ppl_ceiling)

    @property
    def checks_perplexity(self) -> bool:
        if isinstance(self.ppl_ceiling, Mapping):
            return any(math.isfinite(v) for v in self.ppl_ceiling.values())
        return math.isfinite(self.ppl_ceiling)

    def as_dict(self) -> dict:
        """Bounds as plain numbers; infinite (disabled) bounds become None."""
        def clean(v):
            return float(v) if math.isfinite(v) else None
        ceiling = self.ppl_ceiling
        if isinstance(ceiling, Mapping):
            ceiling = {k: clean(ceiling[k]) for k in sorted(ceiling)}
        else:
            ceiling = clean(ceiling)
        return {"min_chars": clean(self.min_chars), "max_chars": clean(self.max_chars),
                "entropy_floor": clean(self.entropy_floor), "ppl_ceiling": ceiling}


def char_entropy(text: str) -> float:
    """Shannon entropy (bits) of the character distribution."""
    counts = Counter(text)
    n = len(text)
    if n == 0:
        return 0.0
    return -sum(c / n * math.log2(c / n) for c in counts.values())


@dataclass
class RejectionReport:
    reasons: dict = field(default_factory=dict)  # doc id -> reason

    def counts(self) -> dict:
        out: dict = {}
        for reason in self.reasons.values():
            out[reason] = out.get(reason, 0) + 1
        return dict(sorted(out.items()))


def quality_reason(doc: Document, policy: QualityPolicy, lid: Optional[LidModel] = None):
    n = len(doc.text.strip())
    if n < policy.min_chars:
        return "too-short"
    if n > policy.max_chars:
        return "too-long"
    if char_entropy(doc.text) < policy.entropy_floor:
        return "low-entropy"
    if policy.checks_perplexity:
        if lid is None or doc.lang is None or doc.lang not in lid.languages:
            return "no-language"
        if perplexity(lid, doc.text, doc.lang) > policy.ceiling_for(doc.lang):
            return "high-perplexity"
    return None


def quality_filter(corpus: Sequence[Document], policy: QualityPolicy,
                   lid: Optional[LidModel] = None, workers: int = 1):
    reasons = _map(lambda d: quality_reason(d, policy, lid), corpus, workers)
    kept, report = [], RejectionReport()
    for doc, reason in zip(corpus, reasons):
        if reason is None:
            kept.append(doc)
        else:
            report.reasons[doc.id] = reason
    return kept, report


def calibrate_ppl_ceiling(lid: LidModel, clean: Iterable[Document], quantile: float = 0.95,
                          headroom: float = 2.0) -> dict:
    """Per-language ceiling: ``headroom`` x the ``quantile`` of clean perplexities.

    Scripts differ a lot in alphabet size, so one global ceiling would be
    loose for small alphabets and tight for large ones.
    """
    by_lang: dict = {}
    for d in clean:
        if d.lang in lid.languages:
            by_lang.setdefault(d.lang, []).append(perplexity(lid, d.text, d.lang))
    if not by_lang:
        raise GovernanceError("no clean documents in a known language to calibrate against")
    return {lang: float(np.quantile(np.array(by_lang[lang]), quantile)) * headroom
            for lang in sorted(by_lang)}


# --------------------------------------------------------------------------- stages


def _lang_histogram(docs: Iterable[Document]) -> dict:
    hist: dict = {}
    for d in docs:
        key = d.lang or UNDETERMINED
        hist[key] = hist.get(key, 0) + 1
    return dict(sorted(hist.items()))


@dataclass
class Audit:
    stage: str
    counts: dict
    languages: dict
    dedup: Optional[dict] = None
    quality: Optional[dict] = None

    def as_dict(self) -> dict:
        out = {"stage": self.stage, "counts": self.counts, "languages": self.languages}
        out["dedup"] = self.dedup
        out["quality"] = self.quality
        return out

    def to_text(self) -> str:
        return json.dumps(self.as_dict(), indent=2, ensure_ascii=False) + "\n"


def attach_languages(corpus: Sequence[Document], lid: LidModel, workers: int = 1) -> list:
    langs = _map(lambda d: lid_classify(lid, d.text)[0], corpus, workers)
    return [d.annotate(f"lid:{lang}", lang=lang) for d, lang in zip(corpus, langs)]


def run_stages(corpus: Sequence[Document], stage: str, lid: Optional[LidModel] = None,
               policy: Optional[QualityPolicy] = None,
               threshold: int = DEFAULT_DEDUP_THRESHOLD, workers: int = 1):
    """Run curation up to ``stage``; returns (kept documents, audit)."""
    if stage not in STAGES:
        raise GovernanceError(f"unknown stage {stage!r}; expected one of {STAGES}")
    ids = [d.id for d in corpus]
    if len(set(ids)) != len(ids):
        raise GovernanceError("document ids must be unique")
    docs = [d.annotate("C0") for d in corpus]
    counts = {"C0": len(docs)}
    languages = {"C0": _lang_histogram(docs)}
    audit = Audit(stage, counts, languages)
    if stage == "C0":
        return docs, audit

    if lid is None:
        raise GovernanceError("stage C1 and above need a language-ID model")
    docs = attach_languages(docs, lid, workers)
    docs, report = dedup(docs, threshold, workers)
    docs = [d.annotate("C1") for d in docs]
    counts["C1"] = len(docs)
    languages["C1"] = _lang_histogram(docs)
    audit.dedup = {"threshold": threshold, "clusters": len(report.clusters),
                   "removed": len(report.removed), "removed_ids": report.removed}
    if stage == "C1":
        return docs, audit

    policy = policy or QualityPolicy()
    docs, rejections = quality_filter(docs, policy, lid, workers)
    docs = [d.annotate("C2") for d in docs]
    counts["C2"] = len(docs)
    languages["C2"] = _lang_histogram(docs)
    audit.quality = {"policy": policy.as_dict(), "rejected": len(rejections.reasons),
                     "reasons": rejections.counts(),
                     "rejected_ids": sorted(rejections.reasons)}
    return docs, audit
