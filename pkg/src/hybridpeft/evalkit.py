"""Accuracy, parity, calibration and orthographic robustness metrics."""
from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .corpus import Document
from .errors import InvalidInputError

DEFAULT_BINS = 10
PERTURBATIONS = ("punct_norm", "strip_diacritics", "ws_compact")

# Typographic punctuation and its ASCII stand-in. Full-width forms U+FF01..U+FF5E
# are mapped separately by code-point offset.
PUNCT_TABLE = {
    "‘": "'", "’": "'", "‚": "'", "‛": "'",
    "“": '"', "”": '"', "„": '"', "‟": '"',
    "«": '"', "»": '"', "‹": "'", "›": "'",
    "‐": "-", "‑": "-", "‒": "-", "–": "-", "—": "-", "―": "-",
    "−": "-",
    "…": "...",
    "、": ",", "。": ".",
}
_FULLWIDTH_FIRST, _FULLWIDTH_LAST = 0xFF01, 0xFF5E
_FULLWIDTH_OFFSET = 0xFF01 - 0x21
_TRANSLATION = {ord(k): v for k, v in PUNCT_TABLE.items()}
_TRANSLATION.update({c: chr(c - _FULLWIDTH_OFFSET)
                     for c in range(_FULLWIDTH_FIRST, _FULLWIDTH_LAST + 1)})
_WS_RUN = re.compile(r"\s+")


@dataclass(frozen=True)
class Prediction:
    id: str
    lang: str
    label: int
    predicted: int
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise InvalidInputError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def correct(self) -> bool:
        return self.label == self.predicted

    def to_record(self) -> dict:
        return {"id": self.id, "lang": self.lang, "label": self.label,
                "predicted": self.predicted, "confidence": self.confidence}


# --------------------------------------------------------------------------- metrics


def parity_gap(scores: Mapping) -> float:
    """Largest minus smallest per-language score."""
    values = list(scores.values()) if isinstance(scores, Mapping) else list(scores)
    if len(values) < 2:
        raise InvalidInputError("parity gap needs at least two languages")
    return float(max(values) - min(values))


def ece(preds: Sequence[Prediction], bins: int = DEFAULT_BINS) -> float:
    """Expected calibration error with equal-width, right-closed bins on [0, 1].

    Bin k covers (k/B, (k+1)/B]; a confidence of exactly 0 falls in bin 0.
    """
    if bins < 1:
        raise InvalidInputError("bins must be >= 1")
    if len(preds) == 0:
        raise InvalidInputError("ECE of an empty prediction set")
    conf = np.array([p.confidence for p in preds], dtype=np.float64)
    hit = np.array([p.correct for p in preds], dtype=np.float64)
    return _binned_ece(conf, hit, bins)


def _binned_ece(conf: np.ndarray, hit: np.ndarray, bins: int) -> float:
    edges = np.arange(bins + 1) / bins
    idx = np.clip(np.searchsorted(edges, conf, side="left") - 1, 0, bins - 1)
    n = conf.size
    total = 0.0
    for k in range(bins):
        mask = idx == k
        cnt = int(mask.sum())
        if cnt:
            total += cnt / n * abs(hit[mask].mean() - conf[mask].mean())
    return float(total)


def accuracy_by_language(preds: Sequence[Prediction]) -> dict:
    groups: dict = {}
    for p in preds:
        groups.setdefault(p.lang, []).append(p.correct)
    return {lang: float(np.mean(groups[lang])) for lang in sorted(groups)}


def macro_accuracy(preds: Sequence[Prediction]) -> float:
    per = accuracy_by_language(preds)
    if not per:
        raise InvalidInputError("accuracy of an empty prediction set")
    return float(np.mean(list(per.values())))


def avg_ece(preds: Sequence[Prediction], bins: int = DEFAULT_BINS) -> float:
    """Unweighted mean of the per-language ECE values."""
    groups: dict = {}
    for p in preds:
        groups.setdefault(p.lang, []).append(p)
    if not groups:
        raise InvalidInputError("ECE of an empty prediction set")
    return float(np.mean([ece(groups[lang], bins) for lang in sorted(groups)]))


# --------------------------------------------------------------------------- perturbations


def perturb(text: str, kind: str) -> str:
    if kind == "punct_norm":
        return text.translate(_TRANSLATION)
    if kind == "strip_diacritics":
        decomposed = unicodedata.normalize("NFD", text)
        kept = "".join(ch for ch in decomposed if not unicodedata.combining(ch))
        return unicodedata.normalize("NFC", kept)
    if kind == "ws_compact":
        return _WS_RUN.sub(" ", text).strip()
    raise InvalidInputError(f"unknown perturbation {kind!r}; expected one of {PERTURBATIONS}")


# --------------------------------------------------------------------------- protocol


def predictions_from_proba(docs: Sequence[Document], proba: np.ndarray) -> list:
    proba = np.asarray(proba, dtype=np.float64)
    if proba.shape[0] != len(docs):
        raise InvalidInputError(f"{proba.shape[0]} probability rows for {len(docs)} documents")
    pred = np.argmax(proba, axis=1)
    conf = np.clip(proba[np.arange(len(docs)), pred], 0.0, 1.0)
    return [Prediction(d.id, d.lang, int(d.label), int(k), float(c))
            for d, k, c in zip(docs, pred, conf)]


def _check_testset(testset: Sequence[Document]) -> None:
    if len(testset) == 0:
        raise InvalidInputError("empty test set")
    for d in testset:
        if d.lang is None or d.label is None:
            raise InvalidInputError(f"document {d.id} lacks a language or label")


def robustness_eval(model, testset: Sequence[Document], kinds: Iterable[str] = PERTURBATIONS,
                    clean_macro: Optional[float] = None) -> dict:
    """Clean minus perturbed macro accuracy for each perturbation kind.

    ``model`` is anything with ``predict_proba(texts) -> (n, C) array``.
    Each example is perturbed by exactly one operator at a time.
    """
    _check_testset(testset)
    if clean_macro is None:
        clean_macro = macro_accuracy(predictions_from_proba(
            testset, model.predict_proba([d.text for d in testset])))
    drops = {}
    for kind in kinds:
        texts = [perturb(d.text, kind) for d in testset]
        macro = macro_accuracy(predictions_from_proba(testset, model.predict_proba(texts)))
        drops[kind] = float(clean_macro - macro)
    return drops


@dataclass
class EvalReport:
    per_language: dict
    macro_accuracy: float
    parity_gap: float
    ece: float
    bins: int = DEFAULT_BINS
    robustness: Optional[dict] = None
    extra: dict = field(default_factory=dict)

    @property
    def mean_drop(self) -> Optional[float]:
        if not self.robustness:
            return None
        return float(np.mean(list(self.robustness.values())))

    def as_dict(self) -> dict:
        out = {"per_language": dict(self.per_language), "macro_accuracy": self.macro_accuracy,
               "parity_gap": self.parity_gap, "ece": self.ece, "bins": self.bins}
        if self.robustness is not None:
            out["robustness"] = {"drops": dict(self.robustness), "mean_drop": self.mean_drop}
        else:
            out["robustness"] = None
        out["extra"] = dict(self.extra)
        return out

    def to_text(self) -> str:
        return json.dumps(self.as_dict(), indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        raw = json.loads(text)
        rob = raw.get("robustness")
        return cls(raw["per_language"], raw["macro_accuracy"], raw["parity_gap"], raw["ece"],
                   raw["bins"], None if rob is None else rob["drops"], raw.get("extra", {}))


def evaluate(model, testset: Sequence[Document], bins: int = DEFAULT_BINS,
             robustness: bool = False) -> EvalReport:
    """Full metric set; ``ece`` is the per-language average."""
    _check_testset(testset)
    preds = predictions_from_proba(testset, model.predict_proba([d.text for d in testset]))
    per = accuracy_by_language(preds)
    macro = float(np.mean(list(per.values())))
    gap = parity_gap(per) if len(per) >= 2 else 0.0
    report = EvalReport(per, macro, gap, avg_ece(preds, bins), bins)
    if robustness:
        report.robustness = robustness_eval(model, testset, clean_macro=macro)
    return report
