from __future__ import annotations

import hashlib
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hybridpeft import numerics as nx
from hybridpeft.adapters import realify
from hybridpeft.errors import ConfigError, DivergenceError, InvalidInputError, StaleCacheError
from hybridpeft.synthetic import separable_documents
from hybridpeft.trainer import (
    MODES,
    Dataset,
    Featurizer,
    TrainConfig,
    accuracy,
    apply_gradients,
    backward,
    build_model,
    footprint_report,
    forward,
    gradient_probes,
    make_dataset,
    random_base,
    train,
    traces_to_jsonl,
)
from helpers import toy_model


def _checksum(arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def _separable(mode, seed=0, dim=16, epochs=None):
    docs = separable_documents(np.random.default_rng(seed))
    cfg = TrainConfig(mode=mode, num_classes=2, dim=dim, seed=seed, boft_depth=2)
    if epochs is not None:
        cfg = replace(cfg, epochs=epochs)
    data = make_dataset(Featurizer(dim), docs, docs[:10])
    return build_model(cfg, random_base(cfg, seed), data.x_train, data.y_train), data


# ---------------------------------------------------------------- features

def test_featurizer_rows_and_determinism():
    fz = Featurizer(32)
    x = fz.transform(["alpha beta", "gamma", "alpha beta"])
    assert x.shape == (3, 32)
    np.testing.assert_allclose(np.linalg.norm(x, axis=1), math.sqrt(32))
    assert np.array_equal(x[0], x[2])
    assert np.array_equal(fz.transform(["alpha beta", "gamma"] * 20, workers=4),
                          fz.transform(["alpha beta", "gamma"] * 20, workers=1))


# ---------------------------------------------------------------- forward

def test_uniform_logits_give_log_c():
    model, x, y = toy_model("lora")
    model = replace(model, head_w=np.zeros_like(model.head_w), head_b=np.zeros_like(model.head_b))
    assert abs(forward(model, x, y)[0] - math.log(3)) <= 1e-12


def test_margin_monotone():
    model, x, y = toy_model("full")
    x, y = x[:1], y[:1]
    losses = []
    for margin in (0.0, 1.0, 5.0):
        b = np.zeros(3)
        b[y[0]] = margin
        m = replace(model, head_w=np.zeros_like(model.head_w), head_b=b)
        losses.append(forward(m, x, y)[0])
    assert losses[0] > losses[1] > losses[2] > 0


def test_forward_seed1_scalar_recompute():
    model, x, y = toy_model("hybrid", seed=1, n=4)
    loss = forward(model, x, y)[0]
    weights = [s.weight() for s in model.slots]
    total = 0.0
    for row, label in zip(x, y):
        h = list(row)
        for w in weights:
            h = [math.tanh(sum(w[i, j] * h[j] for j in range(len(h)))) for i in range(w.shape[0])]
        logits = [sum(model.head_w[c, j] * h[j] for j in range(len(h))) + model.head_b[c]
                  for c in range(3)]
        top = max(logits)
        lse = top + math.log(sum(math.exp(v - top) for v in logits))
        total += lse - logits[label]
    assert abs(loss - total / len(y)) <= 1e-12


def test_forward_errors():
    model, x, y = toy_model("lora")
    with pytest.raises(InvalidInputError):
        forward(model, x, np.full_like(y, 3))
    with pytest.raises(InvalidInputError):
        forward(model, x[:0], y[:0])


# ---------------------------------------------------------------- backward

@pytest.mark.parametrize("mode", MODES)
def test_gradients_match_finite_differences(mode):
    model, x, y = toy_model(mode, seed=8)
    probes = gradient_probes(model, x, y, 40, seed=1)
    bad = [p for p in probes if not p.ok(1e-4)]
    assert not bad, bad[:3]


def test_head_bias_gradient_zero_by_symmetry():
    model, x, _ = toy_model("lora", n=6)
    model = replace(model, head_w=np.zeros_like(model.head_w), head_b=np.zeros_like(model.head_b))
    # every input appears once under each label
    xs = np.vstack([x[:2]] * 3)
    ys = np.repeat(np.arange(3), 2)
    _, cache = forward(model, xs, ys)
    np.testing.assert_allclose(backward(model, cache).head_b, 0.0, atol=1e-15)


@pytest.mark.parametrize("mode", MODES)
def test_duplicated_batch_doubles_summed_gradient(mode):
    model, x, y = toy_model(mode)
    _, c1 = forward(model, x, y, reduction="sum")
    _, c2 = forward(model, np.vstack([x, x]), np.concatenate([y, y]), reduction="sum")
    g1, g2 = backward(model, c1), backward(model, c2)
    np.testing.assert_allclose(g2.head_w, 2 * g1.head_w, rtol=1e-12, atol=1e-14)
    for a, b in zip(g1.layers, g2.layers):
        for k in a:
            np.testing.assert_allclose(b[k], 2 * a[k], rtol=1e-10, atol=1e-13)


def test_stale_cache():
    model, x, y = toy_model("hybrid")
    _, cache = forward(model, x, y)
    grads = backward(model, cache)
    newer, _ = apply_gradients(model, grads, 1)
    with pytest.raises(StaleCacheError):
        backward(newer, cache)


# ---------------------------------------------------------------- train

def test_zero_epochs_is_identity():
    model, data = _separable("hybrid", epochs=0)
    out, traces = train(model, data)
    assert out is model and traces == []


@pytest.mark.parametrize("mode", MODES)
def test_separable_set_reaches_95_percent(mode):
    model, data = _separable(mode)
    model, _ = train(model, data)
    assert accuracy(model, data.x_train, data.y_train) >= 0.95


@pytest.mark.parametrize("mode", MODES)
def test_frozen_base_unchanged(mode):
    model, data = _separable(mode, epochs=2)
    before = _checksum(model.base_weights)
    after_model, _ = train(model, data)
    assert _checksum(after_model.base_weights) == before


def test_full_mode_moves_weights_not_base():
    model, data = _separable("full", epochs=1)
    trained, _ = train(model, data)
    assert _checksum(trained.base_weights) == _checksum(model.base_weights)
    assert not np.allclose(trained.slots[0].weight(), model.slots[0].weight())


@pytest.mark.parametrize("mode", ["hybrid", "urnn"])
def test_same_seed_gives_identical_traces(mode):
    runs = []
    for _ in range(2):
        model, data = _separable(mode, epochs=2)
        runs.append(traces_to_jsonl(train(model, data)[1]))
    assert runs[0] == runs[1]


def test_trace_records():
    model, data = _separable("hybrid", epochs=2)
    _, traces = train(model, data)
    steps_per_epoch = math.ceil(len(data.y_train) / model.config.batch_size)
    assert [t.step for t in traces] == list(range(1, 2 * steps_per_epoch + 1))
    for t in traces:
        assert len(t.mix) == model.config.layers
        assert [m.layer for m in t.mix] == list(range(model.config.layers))
        assert all(m.step == t.step for m in t.mix)
        assert math.isfinite(t.train_loss) and math.isfinite(t.val_loss)
        assert t.drift <= 1e-6


def test_unitary_operator_norm_stays_one():
    model, data = _separable("urnn", epochs=3)
    seen = []

    def check(trace, m):
        for slot in m.slots:
            seen.append(abs(np.linalg.norm(realify(slot.u), 2) - 1.0))
            seen.append(nx.orthogonality_drift(slot.u))

    train(model, data, on_step=check)
    assert seen and max(seen) <= 1e-8


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_carries_last_good():
    model, data = _separable("full", epochs=1)
    model = replace(model, config=replace(model.config, eta_head=1e300, eta_full=1e300))
    with pytest.raises(DivergenceError) as info:
        train(model, data)
    assert info.value.last_good is not None
    assert np.all(np.isfinite(info.value.last_good.head_w))


def test_gradient_aligned_init_requires_data():
    cfg = TrainConfig(mode="lora_ga", dim=8, layers=1)
    with pytest.raises(InvalidInputError):
        build_model(cfg, random_base(cfg, 0))


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(mode="adapterless")
    with pytest.raises(ConfigError):
        TrainConfig(dim=12)
    with pytest.raises(ConfigError):
        TrainConfig(dim=8, boft_depth=4)
    with pytest.raises(ConfigError):
        TrainConfig(layers=2, unitary_layers=(2,))
    assert "workers" not in TrainConfig(workers=3).as_dict()


# ---------------------------------------------------------------- footprint

def _footprint(mode, **kw):
    cfg = TrainConfig(mode=mode, dim=64, layers=2, rank=4, **kw)
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(8, 64)), rng.integers(0, 4, size=8)
    model = build_model(cfg, random_base(cfg, 0), x, y)
    return footprint_report(model, Dataset(x, y, x[:0], y[:0]), steps=2)


def test_footprint_arithmetic():
    head = 4 * 64 + 4
    lora = _footprint("lora")
    assert lora["trainable"]["layers"] == [2 * 64 * 4] * 2
    assert lora["trainable"]["total"] == 2 * (2 * 64 * 4) + head
    hybrid = _footprint("hybrid")
    assert hybrid["trainable"]["layers"] == [2 * 64 * 4 + 64 * 63 // 2] * 2
    assert _footprint("lora_ga")["trainable"] == lora["trainable"]
    full = _footprint("full")
    assert full["trainable"]["layers"] == [64 * 64] * 2
    for mode in ("lora", "lora_ga", "boft", "urnn", "hybrid"):
        assert full["trainable"]["total"] > _footprint(mode)["trainable"]["total"]
    assert _footprint("boft")["trainable"]["layers"] == [2 * 64 * 3] * 2
    assert _footprint("urnn", unitary_layers=(1,))["trainable"]["layers"] == [0, 32 * 32]
    assert lora["frozen"] == 2 * 64 * 64
    assert lora["step_seconds"] > 0


@given(st.sampled_from([4, 8, 16, 32]), st.integers(1, 3), st.integers(1, 4))
def test_footprint_counts_by_formula(dim, layers, rank):
    cfg = TrainConfig(mode="hybrid", dim=dim, layers=layers, rank=rank, num_classes=3, boft_depth=1)
    rng = np.random.default_rng(dim)
    x, y = rng.normal(size=(6, dim)), rng.integers(0, 3, size=6)
    counts = footprint_report(build_model(cfg, random_base(cfg, 0), x, y))["trainable"]
    assert counts["total"] == layers * (2 * dim * rank + dim * (dim - 1) // 2) + 3 * dim + 3
