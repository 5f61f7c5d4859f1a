"""Seeded synthetic multilingual topic corpus.

Three made-up "languages" written in disjoint scripts (Latin, CJK ideographs,
Devanagari) share a four-way topic label. Every language has its own
lexicon of filler words plus a handful of topic words per class; a document
is a bag of words in which topic words of its class are over-represented.

``noisy_corpus`` additionally plants governance targets: near-duplicate
clusters carrying a spurious label, gibberish, fragments that are too short,
and degenerate repetitive text.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import Document

LANGS = ("lx", "zx", "dx")
NUM_CLASSES = 4

_LATIN_CONS = "bcdfghklmnprstvz"
_LATIN_VOW = "aeiou"
_LATIN_ACCENTED = "áéíóúüö"
_CJK_BASE = 0x4E00
_CJK_SPAN = 400
_DEV_CONS = [chr(c) for c in range(0x0915, 0x093A)]
_DEV_SIGNS = [chr(c) for c in range(0x093E, 0x094D)]
_DEV_NUKTA = "़"
_DEV_VIRAMA = "्"

_N_FILLER = 80
_N_TOPIC = 12
_P_TOPIC = 0.45
_P_CROSS = 0.06


def _latin_word(rng) -> str:
    out = []
    for _ in range(int(rng.integers(2, 4))):
        out.append(_LATIN_CONS[rng.integers(len(_LATIN_CONS))])
        if rng.random() < 0.25:
            out.append(_LATIN_ACCENTED[rng.integers(len(_LATIN_ACCENTED))])
        else:
            out.append(_LATIN_VOW[rng.integers(len(_LATIN_VOW))])
    if rng.random() < 0.1:
        out.append("ñ")
    return "".join(out)


def _cjk_word(rng) -> str:
    return "".join(chr(_CJK_BASE + int(rng.integers(_CJK_SPAN)))
                   for _ in range(int(rng.integers(1, 4))))


def _dev_word(rng) -> str:
    out = []
    for _ in range(int(rng.integers(2, 4))):
        out.append(_DEV_CONS[rng.integers(len(_DEV_CONS))])
        if rng.random() < 0.15:
            out.append(_DEV_NUKTA)
        u = rng.random()
        if u < 0.5:
            out.append(_DEV_SIGNS[rng.integers(len(_DEV_SIGNS))])
        elif u < 0.6:
            out.append(_DEV_VIRAMA)
    return "".join(out)


_WORD_MAKERS = {"lx": _latin_word, "zx": _cjk_word, "dx": _dev_word}


@dataclass
class Lexicon:
    filler: list
    topics: list  # one word list per class


def _unique_words(maker, rng, n, taken):
    words = []
    while len(words) < n:
        w = maker(rng)
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def _decorate(lang: str, words: list, rng) -> str:
    words = list(words)
    if lang == "lx":
        words[0] = words[0][:1].upper() + words[0][1:]
        if len(words) > 4 and rng.random() < 0.35:
            i = int(rng.integers(0, len(words) - 2))
            words[i] = "“" + words[i]
            words[i + 1] = words[i + 1] + "”"
        if len(words) > 4 and rng.random() < 0.3:
            i = int(rng.integers(1, len(words) - 1))
            words.insert(i, "—")
        end = "…" if rng.random() < 0.25 else "."
    elif lang == "zx":
        if len(words) > 4 and rng.random() < 0.5:
            i = int(rng.integers(1, len(words) - 1))
            words[i] = words[i] + "，"
        end = "！" if rng.random() < 0.3 else "。"
    else:
        if len(words) > 4 and rng.random() < 0.3:
            i = int(rng.integers(0, len(words) - 2))
            words[i] = "‘" + words[i]
            words[i + 1] = words[i + 1] + "’"
        end = "…" if rng.random() < 0.2 else " ।"
    text = " ".join(words) + end
    if rng.random() < 0.3:
        # stray whitespace runs, as scraped text tends to have
        parts = text.split(" ")
        i = int(rng.integers(0, len(parts)))
        parts[i] = parts[i] + " " * int(rng.integers(1, 3))
        text = " ".join(parts)
    if rng.random() < 0.15:
        text = " " + text + "  "
    return text


@dataclass
class SyntheticWorld:
    """Lexicons for every language, derived from one seed."""

    seed: int = 0
    lexicons: dict = field(default_factory=dict)

    def __post_init__(self):
        rng = np.random.default_rng([self.seed, 1009])
        for lang in LANGS:
            maker = _WORD_MAKERS[lang]
            taken: set = set()
            filler = _unique_words(maker, rng, _N_FILLER, taken)
            topics = [_unique_words(maker, rng, _N_TOPIC, taken) for _ in range(NUM_CLASSES)]
            self.lexicons[lang] = Lexicon(filler, topics)

    def words(self, lang: str, label: int, rng, n_words: int | None = None) -> list:
        lex = self.lexicons[lang]
        n = int(rng.integers(10, 23)) if n_words is None else n_words
        out = []
        for _ in range(n):
            u = rng.random()
            if u < _P_TOPIC:
                out.append(lex.topics[label][rng.integers(_N_TOPIC)])
            elif u < _P_TOPIC + _P_CROSS:
                other = int(rng.integers(NUM_CLASSES))
                out.append(lex.topics[other][rng.integers(_N_TOPIC)])
            else:
                out.append(lex.filler[rng.integers(_N_FILLER)])
        return out

    def text(self, lang: str, label: int, rng, n_words: int | None = None) -> str:
        while True:
            text = _decorate(lang, self.words(lang, label, rng, n_words), rng)
            if n_words is not None or len(text.strip()) >= 32:
                return text

    def documents(self, n_per_cell: int, rng, prefix: str = "d") -> list:
        """Balanced clean documents: ``n_per_cell`` per (language, class)."""
        docs = []
        for lang in LANGS:
            for label in range(NUM_CLASSES):
                for _ in range(n_per_cell):
                    docs.append((lang, label, self.text(lang, label, rng)))
        order = rng.permutation(len(docs))
        width = max(5, len(str(len(docs))))
        return [Document(f"{prefix}{i:0{width}d}", docs[j][2], docs[j][0], docs[j][1])
                for i, j in enumerate(order)]


def gibberish(lang: str, rng, n_chars: int | None = None) -> str:
    """Uniform random characters of a script, spaced at random."""
    n = int(rng.integers(60, 120)) if n_chars is None else n_chars
    chars = []
    for _ in range(n):
        if rng.random() < 0.15:
            chars.append(" ")
        elif lang == "lx":
            pool = "abcdefghijklmnopqrstuvwxyz" + _LATIN_ACCENTED
            chars.append(pool[rng.integers(len(pool))])
        elif lang == "zx":
            chars.append(chr(_CJK_BASE + int(rng.integers(0x5000))))
        else:
            chars.append(chr(0x0900 + int(rng.integers(0x80))))
    return "".join(chars)


@dataclass
class PlantedCorpus:
    documents: list
    duplicate_ids: list      # copies that dedup must drop (cluster founders excluded)
    gibberish_ids: list
    short_ids: list
    repetitive_ids: list
    kept_ids: list           # what a perfect C2 pipeline keeps

    @property
    def noise_ids(self) -> list:
        return sorted(self.duplicate_ids + self.gibberish_ids + self.short_ids
                      + self.repetitive_ids)


def _near_copy(text: str, rng) -> str:
    """Surface edit that leaves the word sequence intact."""
    kind = int(rng.integers(3))
    if kind == 0:
        return text
    if kind == 1:
        return "  " + text.replace(" ", "  ", 1)
    return text.rstrip() + " "


def noisy_corpus(world: SyntheticWorld, n_per_cell: int, rng, *, dup_clusters: int = 6,
                 dup_size: int = 4, n_gibberish: int = 12, n_short: int = 6,
                 n_repetitive: int = 3, prefix: str = "c") -> PlantedCorpus:
    """Clean balanced documents plus planted governance noise.

    Duplicate clusters copy one source document ``dup_size`` times under a
    label drawn independently of its topic, so they inject correlated label
    noise; gibberish, short and repetitive records get random labels.
    """
    records = []  # (kind, cluster, lang, label, text)
    for lang in LANGS:
        for label in range(NUM_CLASSES):
            for _ in range(n_per_cell):
                records.append(("clean", -1, lang, label, world.text(lang, label, rng)))
    for c in range(dup_clusters):
        lang = LANGS[int(rng.integers(len(LANGS)))]
        topic = int(rng.integers(NUM_CLASSES))
        label = int((topic + 1 + rng.integers(NUM_CLASSES - 1)) % NUM_CLASSES)
        source = world.text(lang, topic, rng)
        for _ in range(dup_size):
            records.append(("dup", c, lang, label, _near_copy(source, rng)))
    for _ in range(n_gibberish):
        lang = LANGS[int(rng.integers(len(LANGS)))]
        records.append(("gibberish", -1, lang, int(rng.integers(NUM_CLASSES)), gibberish(lang, rng)))
    shorts: set = set()
    for _ in range(n_short):
        lang = LANGS[int(rng.integers(len(LANGS)))]
        label = int(rng.integers(NUM_CLASSES))
        while True:
            text = " ".join(world.words(lang, label, rng, n_words=int(rng.integers(1, 3))))
            # distinct fragments, so none of them is also a planted duplicate
            if len(text) < 16 and text not in shorts:
                shorts.add(text)
                break
        records.append(("short", -1, lang, label, text))
    for _ in range(n_repetitive):
        lang = LANGS[int(rng.integers(len(LANGS)))]
        # a stuck fragment, as left behind by broken boilerplate
        word = world.lexicons[lang].filler[int(rng.integers(_N_FILLER))][:2]
        records.append(("repetitive", -1, lang, int(rng.integers(NUM_CLASSES)),
                        " ".join([word] * int(rng.integers(16, 30)))))

    order = rng.permutation(len(records))
    width = max(5, len(str(len(records))))
    docs, dups, gib, short, rep, kept = [], [], [], [], [], []
    seen_clusters: set = set()
    for i, j in enumerate(order):
        kind, cluster, lang, label, text = records[j]
        doc_id = f"{prefix}{i:0{width}d}"
        # raw crawl: language field is not trusted, so it is left empty
        docs.append(Document(doc_id, text, None, label))
        if kind == "dup":
            if cluster in seen_clusters:
                dups.append(doc_id)
            else:
                seen_clusters.add(cluster)
                kept.append(doc_id)
        else:
            {"clean": kept, "gibberish": gib, "short": short, "repetitive": rep}[kind].append(doc_id)
    return PlantedCorpus(docs, dups, gib, short, rep, kept)


def separable_documents(rng, n_per_class: int = 40) -> list:
    """Two-class Latin-script set whose classes use disjoint letter inventories."""
    inventories = ("abcdefgh", "stuvwxyz")
    docs = []
    for label, letters in enumerate(inventories):
        for _ in range(n_per_class):
            words = ["".join(letters[rng.integers(len(letters))] for _ in range(int(rng.integers(3, 7))))
                     for _ in range(int(rng.integers(6, 12)))]
            docs.append(("lx", label, " ".join(words)))
    order = rng.permutation(len(docs))
    return [Document(f"s{i:05d}", docs[j][2], docs[j][0], docs[j][1]) for i, j in enumerate(order)]
