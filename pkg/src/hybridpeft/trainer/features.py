"""Hashed bag of character n-grams."""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError
from ..governance import NGRAM_ORDERS, char_ngrams
from ..numerics import is_power_of_two
from ..parallel import ordered_map


@dataclass(frozen=True)
class Featurizer:
    """Signed feature hashing: CRC-32 low bits pick the bucket, the top bit the sign.

    Rows are scaled to unit mean square (norm sqrt(dim)), so document length
    does not set the scale and 1/sqrt(dim) weight init lands tanh in its
    working range.
    """

    dim: int
    orders: tuple = NGRAM_ORDERS

    def __post_init__(self):
        if not is_power_of_two(self.dim):
            raise ShapeError(f"feature dimension must be a power of two, got {self.dim}")

    def vector(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim)
        for gram in char_ngrams(text, self.orders):
            h = zlib.crc32(gram.encode("utf-8"))
            v[h & (self.dim - 1)] += -1.0 if h >> 31 else 1.0
        nrm = np.linalg.norm(v)
        return v * (np.sqrt(self.dim) / nrm) if nrm > 0 else v

    def transform(self, texts, workers: int = 1) -> np.ndarray:
        rows = ordered_map(self.vector, texts, workers)
        return np.array(rows, dtype=np.float64).reshape(len(rows), self.dim)
