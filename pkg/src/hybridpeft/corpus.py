"""Corpus records and their line-delimited JSON form."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

from .errors import CorpusFormatError


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    lang: Optional[str] = None
    label: Optional[int] = None
    provenance: tuple = field(default=())

    def annotate(self, note: str, **changes) -> "Document":
        return replace(self, provenance=self.provenance + (note,), **changes)

    def to_record(self) -> dict:
        rec = {"id": self.id, "text": self.text}
        if self.lang is not None:
            rec["lang"] = self.lang
        if self.label is not None:
            rec["label"] = self.label
        return rec


def parse_record(line: str, lineno: int | None = None) -> Document:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"invalid JSON ({exc.msg})", lineno) from exc
    if not isinstance(rec, dict):
        raise CorpusFormatError("record is not an object", lineno)
    doc_id, text = rec.get("id"), rec.get("text")
    if not isinstance(doc_id, str) or not doc_id:
        raise CorpusFormatError("missing string field 'id'", lineno)
    if not isinstance(text, str) or not text.strip():
        raise CorpusFormatError(f"record {doc_id!r} has empty text", lineno)
    lang = rec.get("lang")
    label = rec.get("label")
    if lang is not None and not isinstance(lang, str):
        raise CorpusFormatError("field 'lang' must be a string", lineno)
    if label is not None and (not isinstance(label, int) or isinstance(label, bool)):
        raise CorpusFormatError("field 'label' must be an integer", lineno)
    return Document(doc_id, text, lang, label)


def read_corpus(path) -> list:
    docs, seen = [], set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            doc = parse_record(line, lineno)
            if doc.id in seen:
                raise CorpusFormatError(f"duplicate id {doc.id!r}", lineno)
            seen.add(doc.id)
            docs.append(doc)
    return docs


def dumps_corpus(docs: Iterable[Document]) -> str:
    return "".join(json.dumps(d.to_record(), ensure_ascii=False) + "\n" for d in docs)


def write_corpus(path, docs: Iterable[Document]) -> None:
    Path(path).write_text(dumps_corpus(docs), encoding="utf-8")
