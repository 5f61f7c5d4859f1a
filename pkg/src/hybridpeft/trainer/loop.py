"""Minibatch SGD loop, per-step telemetry and footprint accounting."""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ..corpus import Document
from ..errors import DivergenceError, InvalidInputError
from .features import Featurizer
from .model import ToyModel, apply_gradients, backward, forward

DRIFT_LIMIT = 1e-6


@dataclass(frozen=True)
class TrainTrace:
    step: int
    epoch: int
    train_loss: float
    val_loss: Optional[float]
    grad_norm: float            # all trainable tensors, head included
    adapter_grad_norm: float    # adapter tensors only
    drift: float
    mix: tuple = ()             # MixTrace records of this step, hybrid mode only

    def as_dict(self) -> dict:
        return {"step": self.step, "epoch": self.epoch, "train_loss": self.train_loss,
                "val_loss": self.val_loss, "grad_norm": self.grad_norm,
                "adapter_grad_norm": self.adapter_grad_norm, "drift": self.drift,
                "mix": [m.as_dict() for m in self.mix]}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), ensure_ascii=False)


def traces_to_jsonl(traces: Sequence[TrainTrace]) -> str:
    return "".join(t.to_json() + "\n" for t in traces)


@dataclass(frozen=True)
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: Optional[np.ndarray] = None
    y_val: Optional[np.ndarray] = None

    @property
    def has_val(self) -> bool:
        return self.x_val is not None and len(self.x_val) > 0


def labels_of(docs: Sequence[Document]) -> np.ndarray:
    missing = [d.id for d in docs if d.label is None]
    if missing:
        raise InvalidInputError(f"documents without a label: {missing[:5]}")
    return np.array([d.label for d in docs], dtype=np.intp)


def make_dataset(featurizer: Featurizer, train_docs: Sequence[Document],
                 val_docs: Sequence[Document] = (), workers: int = 1) -> Dataset:
    if not train_docs:
        raise InvalidInputError("empty training set")
    x = featurizer.transform([d.text for d in train_docs], workers)
    if val_docs:
        xv = featurizer.transform([d.text for d in val_docs], workers)
        return Dataset(x, labels_of(train_docs), xv, labels_of(val_docs))
    return Dataset(x, labels_of(train_docs))


def _finite(v: float) -> bool:
    return v is not None and math.isfinite(v)


def train(model: ToyModel, data: Dataset, epochs: Optional[int] = None,
          on_step: Optional[Callable[[TrainTrace, ToyModel], None]] = None):
    """Run ``epochs`` passes of minibatch SGD; returns (model, traces).

    The batch order of every epoch comes from a generator seeded with
    (seed, epoch), so a run is a pure function of the config and data.
    A non-finite loss, or drift off the orthogonal/unitary group above
    ``DRIFT_LIMIT``, raises DivergenceError carrying the last good model.
    """
    cfg = model.config
    epochs = cfg.epochs if epochs is None else epochs
    n = len(data.y_train)
    traces = []
    step = 0
    # overflow is caught below as a non-finite loss or gradient
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(epochs):
            order = np.random.default_rng([cfg.seed, 7919, epoch]).permutation(n)
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                loss, cache = forward(model, data.x_train[idx], data.y_train[idx])
                if not _finite(loss):
                    raise DivergenceError(f"non-finite training loss at step {step + 1}",
                                          last_good=model, step=step)
                grads = backward(model, cache)
                gnorm = grads.global_norm()
                if not _finite(gnorm):
                    raise DivergenceError(f"non-finite gradient at step {step + 1}",
                                          last_good=model, step=step)
                new, mix = apply_gradients(model, grads, step + 1)
                drift = new.max_drift()
                if not drift <= DRIFT_LIMIT:
                    raise DivergenceError(
                        f"orthogonality drift {drift:.3e} exceeds {DRIFT_LIMIT:.0e} at step {step + 1}",
                        last_good=model, step=step)
                val = forward(new, data.x_val, data.y_val)[0] if data.has_val else None
                if data.has_val and not _finite(val):
                    raise DivergenceError(f"non-finite validation loss at step {step + 1}",
                                          last_good=model, step=step)
                model = new
                step += 1
                trace = TrainTrace(step, epoch + 1, loss, val, gnorm, grads.adapter_norm(), drift,
                                   tuple(mix))
                traces.append(trace)
                if on_step is not None:
                    on_step(trace, model)
    return model, traces


def accuracy(model: ToyModel, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.argmax(model.logits(x), axis=1) == y))


def footprint_report(model: ToyModel, data: Optional[Dataset] = None, steps: int = 3) -> dict:
    """Exact trainable-parameter counts plus measured seconds per training step."""
    cfg = model.config
    counts = model.num_trainable()
    frozen = sum(s.w0.size for s in model.slots)
    seconds = None
    if data is not None and steps > 0:
        idx = np.arange(min(cfg.batch_size, len(data.y_train)))
        m = model
        start = time.perf_counter()
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(steps):
                _, cache = forward(m, data.x_train[idx], data.y_train[idx])
                m, _ = apply_gradients(m, backward(m, cache), k + 1)
        seconds = (time.perf_counter() - start) / steps
    return {"mode": cfg.mode, "dim": cfg.dim, "layers": cfg.layers, "rank": cfg.rank,
            "trainable": counts, "frozen": frozen, "step_seconds": seconds}
