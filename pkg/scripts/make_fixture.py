"""Regenerate the bundled fixture corpus under src/hybridpeft/data."""
from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

from hybridpeft.corpus import dumps_corpus
from hybridpeft.synthetic import SyntheticWorld, noisy_corpus

SEED = 0


def build(out: Path) -> None:
    world = SyntheticWorld(SEED)
    rng = np.random.default_rng([SEED, 5])
    planted = noisy_corpus(world, 10, rng, prefix="fx")
    out.mkdir(parents=True, exist_ok=True)
    (out / "fixture_corpus.jsonl").write_text(dumps_corpus(planted.documents), encoding="utf-8")
    (out / "fixture_lid.jsonl").write_text(dumps_corpus(world.documents(8, rng, prefix="li")),
                                           encoding="utf-8")
    (out / "fixture_calib.jsonl").write_text(dumps_corpus(world.documents(10, rng, prefix="ca")),
                                             encoding="utf-8")
    (out / "fixture_val.jsonl").write_text(dumps_corpus(world.documents(4, rng, prefix="va")),
                                           encoding="utf-8")
    (out / "fixture_test.jsonl").write_text(dumps_corpus(world.documents(10, rng, prefix="te")),
                                            encoding="utf-8")
    truth = {"duplicate_ids": planted.duplicate_ids, "gibberish_ids": planted.gibberish_ids,
             "short_ids": planted.short_ids, "repetitive_ids": planted.repetitive_ids,
             "kept_ids": planted.kept_ids}
    (out / "fixture_planted.json").write_text(json.dumps(truth, indent=2) + "\n", encoding="utf-8")


if __name__ == "__main__":
    build(Path(sys.argv[1]) if len(sys.argv) > 1 else
          Path(__file__).resolve().parents[1] / "src" / "hybridpeft" / "data")
