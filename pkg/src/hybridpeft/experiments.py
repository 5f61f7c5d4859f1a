"""End-to-end runs on the synthetic task: base warm-up, fine-tuning, evaluation."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import governance as gov
from .corpus import Document
from .evalkit import EvalReport, evaluate
from .synthetic import LANGS, PlantedCorpus, SyntheticWorld, noisy_corpus
from .trainer import Featurizer, TrainConfig, build_model, make_dataset, pretrain_base, train

# default policy bounds for the synthetic corpus
MIN_CHARS = 24
MAX_CHARS = 2000
ENTROPY_FLOOR = 2.5


@dataclass
class Task:
    world: SyntheticWorld
    train: list
    val: list
    test: list
    warmup: list     # held out, language-labelled; only used to build base weights
    lid_train: list


def make_task(seed: int, n_train: int = 20, n_val: int = 4, n_test: int = 30,
              n_warmup: int = 10) -> Task:
    """Disjoint splits drawn from one synthetic world (counts are per language x class)."""
    world = SyntheticWorld(seed)
    rng = np.random.default_rng([seed, 2])
    return Task(world,
                world.documents(n_train, rng, prefix="tr"),
                world.documents(n_val, rng, prefix="va"),
                world.documents(n_test, rng, prefix="te"),
                world.documents(n_warmup, rng, prefix="wu"),
                world.documents(8, rng, prefix="li"))


def base_weights(cfg: TrainConfig, warmup_docs: Sequence[Document], seed: int,
                 languages: Sequence[str] = LANGS) -> tuple:
    """Frozen base weights: full fine-tuning on language ID, head discarded."""
    index = {lang: i for i, lang in enumerate(languages)}
    docs = [d for d in warmup_docs if d.lang in index]
    x = Featurizer(cfg.dim).transform([d.text for d in docs], cfg.workers)
    y = np.array([index[d.lang] for d in docs], dtype=np.intp)
    return pretrain_base(cfg, x, y, seed)


def fit(cfg: TrainConfig, base: tuple, train_docs: Sequence[Document],
        val_docs: Sequence[Document] = ()):
    data = make_dataset(Featurizer(cfg.dim), train_docs, val_docs, cfg.workers)
    model = build_model(cfg, base, data.x_train, data.y_train)
    model, traces = train(model, data)
    return model, traces


@dataclass
class ModeRun:
    mode: str
    seed: int
    traces: list
    report: EvalReport

    @property
    def early_grad_norm(self) -> float:
        return max(t.grad_norm for t in self.traces[:10])

    @property
    def early_adapter_grad_norm(self) -> float:
        return max(t.adapter_grad_norm for t in self.traces[:10])

    @property
    def final_val_loss(self) -> float:
        return self.traces[-1].val_loss


def run_mode(mode: str, seed: int, cfg: Optional[TrainConfig] = None, task: Optional[Task] = None,
             base: Optional[tuple] = None, robustness: bool = False) -> ModeRun:
    cfg = replace(cfg or TrainConfig(), mode=mode, seed=seed)
    task = task or make_task(seed)
    if base is None:
        base = base_weights(cfg, task.warmup, seed)
    model, traces = fit(cfg, base, task.train, task.val)
    return ModeRun(mode, seed, traces, evaluate(model, task.test, robustness=robustness))


def curation_policy(lid: gov.LidModel, clean: Sequence[Document]) -> gov.QualityPolicy:
    return gov.QualityPolicy(MIN_CHARS, MAX_CHARS, ENTROPY_FLOOR,
                             gov.calibrate_ppl_ceiling(lid, clean))


@dataclass
class CurationRun:
    seed: int
    planted: PlantedCorpus
    sizes: dict
    c0: EvalReport
    c2: EvalReport


def run_curation(seed: int, cfg: Optional[TrainConfig] = None, n_per_cell: int = 10) -> CurationRun:
    """Train the hybrid model on the raw (C0) and curated (C2) noisy corpus; test on clean data."""
    cfg = replace(cfg or TrainConfig(), mode="hybrid", seed=seed)
    task = make_task(seed)
    rng = np.random.default_rng([seed, 3])
    planted = noisy_corpus(task.world, n_per_cell, rng)
    lid = gov.lid_train(task.lid_train)
    policy = curation_policy(lid, task.warmup)
    c0, _ = gov.run_stages(planted.documents, "C0")
    c1, _ = gov.run_stages(planted.documents, "C1", lid, policy)
    c2, _ = gov.run_stages(planted.documents, "C2", lid, policy)
    base = base_weights(cfg, task.warmup, seed)
    reports = {}
    for name, docs in (("C0", c0), ("C2", c2)):
        model, _ = fit(cfg, base, docs, task.val)
        reports[name] = evaluate(model, task.test)
    return CurationRun(seed, planted, {"C0": len(c0), "C1": len(c1), "C2": len(c2)},
                       reports["C0"], reports["C2"])
