from __future__ import annotations

import math
import warnings
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hybridpeft import adapters as ad
from hybridpeft import numerics as nx
from hybridpeft.errors import ContractError, InvalidInputError, InvalidRankError, ShapeError
from helpers import oracle_rank_residual, random_unitary

seeds = st.integers(0, 2**32 - 1)


# ---------------------------------------------------------------- LoRA

def test_lora_init_zero_delta_and_determinism():
    w0 = np.random.default_rng(0).normal(size=(6, 5))
    s = ad.lora_init(w0, 3, seed=4)
    assert np.all(ad.lora_forward_delta(s) == 0)
    t = ad.lora_init(w0, 3, seed=4)
    assert s.a.tobytes() == t.a.tobytes()
    assert ad.lora_init(w0, 5).rank == 5
    with pytest.raises(InvalidRankError):
        ad.lora_init(w0, 6)
    with pytest.raises(InvalidRankError):
        ad.lora_init(w0, 0)


def test_lora_ga_diagonal_and_zero():
    w0 = np.eye(3)
    s = ad.lora_ga_init(w0, np.diag([3.0, 2.0, 1.0]), 2)
    np.testing.assert_allclose(s.a @ s.b, np.diag([3.0, 2.0, 0.0]), atol=1e-14)
    z = ad.lora_ga_init(w0, np.zeros((3, 3)), 2)
    assert np.all(z.a == 0) and np.all(z.b == 0)


def test_lora_ga_seed13_residual():
    g = np.random.default_rng(13).normal(size=(8, 6))
    s = ad.lora_ga_init(np.zeros((8, 6)), g, 3)
    assert abs(np.linalg.norm(g - s.a @ s.b) - oracle_rank_residual(g, 3)) <= 1e-9


def test_lora_ga_errors():
    with pytest.raises(ShapeError):
        ad.lora_ga_init(np.eye(3), np.eye(4), 2)
    with pytest.raises(InvalidRankError):
        ad.lora_ga_init(np.eye(3), np.eye(3), 4)


def test_lora_ga_beats_random_pairs():
    rng = np.random.default_rng(5)
    g = rng.normal(size=(7, 5))
    s = ad.lora_ga_init(np.eye(7, 5), g, 2)
    res = np.linalg.norm(g - s.a @ s.b)
    for _ in range(200):
        assert res <= np.linalg.norm(g - rng.normal(size=(7, 2)) @ rng.normal(size=(2, 5)))


def test_lora_forward_cap():
    w0 = np.eye(2)  # |W0|_F = sqrt 2
    s = ad.LoraState(np.array([[10.0], [0.0]]), np.array([[0.0, 10.0]]), alpha=1.0,
                     lambda_cap=1.0, w0_norm=float(np.linalg.norm(w0)))
    delta = ad.lora_forward_delta(s)
    assert abs(np.linalg.norm(delta) - math.sqrt(2)) <= 1e-10


def test_lora_forward_rank1_elementwise():
    col = np.array([2.0, -1.0, 0.5])
    row = np.array([1.0, 3.0])
    s = ad.LoraState(col[:, None], row[None, :], alpha=2.0, lambda_cap=100.0, w0_norm=1.0)
    delta = ad.lora_forward_delta(s)
    for i in range(3):
        for j in range(2):
            assert delta[i, j] == 2.0 * col[i] * row[j]


def test_lora_step_hand_arithmetic():
    s = ad.LoraState(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([[0.5, 0.0], [0.0, 0.5]]),
                     alpha=2.0, lambda_cap=10.0, w0_norm=1.0)
    ga = np.array([[1.0, 2.0], [3.0, 4.0]])
    gb = np.array([[-1.0, 0.0], [0.0, 2.0]])
    out = ad.lora_step(s, ga, gb, 0.1)
    np.testing.assert_allclose(out.a, [[0.9, -0.2], [-0.3, 0.6]], atol=1e-15)
    np.testing.assert_allclose(out.b, [[0.6, 0.0], [0.0, 0.3]], atol=1e-15)


def test_lora_step_noop_and_errors():
    s = ad.lora_init(np.eye(4), 2, seed=1)
    for ga, gb, eta in ((np.zeros((4, 2)), np.zeros((2, 4)), 0.5), (np.ones((4, 2)), np.ones((2, 4)), 0.0)):
        t = ad.lora_step(s, ga, gb, eta)
        assert np.array_equal(t.a, s.a) and np.array_equal(t.b, s.b)
    with pytest.raises(ShapeError):
        ad.lora_step(s, np.zeros((2, 4)), np.zeros((2, 4)), 0.1)


@given(seeds)
def test_lora_step_keeps_cap(seed):
    rng = np.random.default_rng(seed)
    w0 = rng.normal(size=(6, 6))
    s = ad.lora_init(w0, 3, seed=seed, lambda_cap=0.1)
    for _ in range(5):
        s = ad.lora_step(s, 5 * rng.normal(size=(6, 3)), 5 * rng.normal(size=(3, 6)), 1.0)
        assert np.linalg.norm(s.a @ s.b) <= s.cap * (1 + 1e-12)
        assert np.linalg.norm(ad.lora_forward_delta(s)) <= s.cap * (1 + 1e-12)


def test_lora_delta_grads_match_finite_differences():
    rng = np.random.default_rng(2)
    s = ad.LoraState(rng.normal(size=(5, 2)), rng.normal(size=(2, 4)), alpha=4.0,
                     lambda_cap=0.5, w0_norm=1.0)
    g = rng.normal(size=(5, 4))
    assert np.linalg.norm(s.scale * s.a @ s.b) > s.cap  # cap active
    ga, gb = ad.lora_delta_grads(s, g)
    h = 1e-6
    for name, grad in (("a", ga), ("b", gb)):
        value = getattr(s, name)
        for idx in np.ndindex(value.shape):
            e = np.zeros_like(value)
            e[idx] = h
            f = [np.sum(g * ad.lora_forward_delta(replace(s, **{name: value + sgn * e})))
                 for sgn in (1, -1)]
            assert abs((f[0] - f[1]) / (2 * h) - grad[idx]) <= 1e-7


# ---------------------------------------------------------------- BOFT

def test_boft_init_orthogonal_and_structure():
    s = ad.boft_init(8, 3, seed=0)
    assert nx.orthogonality_drift(ad.boft_product(s)) <= 1e-8
    assert s.strides == (4, 2, 1)
    for block, stride in zip(s.blocks, s.strides):
        mask = ad.butterfly_mask(8, stride)
        assert np.all(block[~mask] == 0)
        # each row pairs i with i xor stride only
        for i in range(8):
            assert set(np.flatnonzero(mask[i])) == {i, i ^ stride}


def test_boft_init_noise_free_identity():
    s = ad.boft_init(16, 1, noise=0.0)
    np.testing.assert_allclose(ad.boft_product(s), np.eye(16), atol=1e-15)


def test_boft_init_errors():
    with pytest.raises(InvalidInputError):
        ad.boft_init(12, 2)
    with pytest.raises(InvalidInputError):
        ad.boft_init(8, 4)


def test_boft_step_zero_grad_unchanged():
    s = ad.boft_init(8, 3, seed=2)
    t = ad.boft_step(s, [np.zeros((8, 8))] * 3, 0.1)
    for a, b in zip(s.blocks, t.blocks):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_boft_step_4x4_sequential_oracle():
    s = ad.boft_init(4, 2, seed=1)
    rng = np.random.default_rng(7)
    grads = [rng.normal(size=(4, 4)) for _ in range(2)]
    eta = 0.05
    t = ad.boft_step(s, grads, eta)
    for block, grad, stride, out in zip(s.blocks, grads, s.strides, t.blocks):
        mask = np.zeros((4, 4))
        for i in range(4):
            mask[i, i] = mask[i, i ^ stride] = 1.0
        stepped = block - eta * grad * mask
        u, _, vt = np.linalg.svd(stepped)
        np.testing.assert_allclose(out, u @ vt, atol=1e-10)


@given(seeds, st.sampled_from([4, 8, 16]))
def test_boft_step_stays_orthogonal(seed, dim):
    rng = np.random.default_rng(seed)
    s = ad.boft_init(dim, 2, seed=seed)
    for _ in range(3):
        s = ad.boft_step(s, [rng.normal(size=(dim, dim)) for _ in range(2)], 0.3)
    for block in s.blocks:
        assert nx.orthogonality_drift(block) <= 1e-8


def test_boft_step_count_mismatch():
    s = ad.boft_init(8, 2)
    with pytest.raises(ShapeError):
        ad.boft_step(s, [np.zeros((8, 8))], 0.1)


def test_boft_block_grads_chain_rule():
    rng = np.random.default_rng(3)
    s = ad.boft_init(8, 3, seed=3, noise=0.3)
    g_p = rng.normal(size=(8, 8))
    grads = ad.boft_block_grads(s, g_p)
    h = 1e-6
    for i in range(3):
        e = np.zeros((8, 8))
        e[1, 5] = h
        blocks_p = list(s.blocks)
        blocks_m = list(s.blocks)
        blocks_p[i] = blocks_p[i] + e
        blocks_m[i] = blocks_m[i] - e
        fp = np.sum(g_p * ad.boft_product(ad.BoftState(tuple(blocks_p), s.strides)))
        fm = np.sum(g_p * ad.boft_product(ad.BoftState(tuple(blocks_m), s.strides)))
        assert abs((fp - fm) / (2 * h) - grads[i][1, 5]) <= 1e-7


def test_boft_parameter_count_d_log_d():
    counts = {d: ad.boft_num_trainable(ad.boft_init(d, int(math.log2(d)))) for d in (8, 16, 32, 64)}
    ratios = [counts[d] / (d * math.log2(d)) for d in counts]
    c = float(np.mean(ratios))
    assert all(abs(r - c) <= 0.2 * c for r in ratios)
    assert counts[8] == 2 * 8 * 3


# ---------------------------------------------------------------- unitary

def test_unitary_identity_like_factors():
    dim = 8
    s = ad.UnitaryLayerState(np.ones(dim, complex), np.ones(dim, complex), np.ones(dim, complex),
                             np.zeros(dim, complex), np.zeros(dim, complex), np.arange(dim))
    x = np.random.default_rng(0).normal(size=dim) + 0j
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        np.testing.assert_allclose(ad.unitary_compose_apply(s, x), x, atol=1e-12)


def test_unitary_degenerate_reflector_warns():
    s = ad.UnitaryLayerState(np.ones(4, complex), np.ones(4, complex), np.ones(4, complex),
                             np.zeros(4, complex), np.ones(4, complex), np.arange(4))
    with pytest.warns(RuntimeWarning):
        ad.unitary_compose_apply(s, np.ones(4))


def _explicit_unitary(s):
    n = s.dim
    f = np.array([[np.exp(-2j * np.pi * j * k / n) for j in range(n)] for k in range(n)]) / math.sqrt(n)

    def refl(v):
        return np.eye(n) - 2 * np.outer(v, v.conj()) / np.vdot(v, v).real

    perm = np.eye(n)[s.perm]
    return (np.diag(s.d3) @ refl(s.r2) @ f.conj().T @ np.diag(s.d2) @ perm @ refl(s.r1)
            @ f @ np.diag(s.d1))


def test_unitary_seed21_dense_oracle():
    rng = np.random.default_rng(21)
    dim = 8
    s = ad.UnitaryLayerState(np.exp(1j * rng.uniform(0, 2 * np.pi, dim)),
                             np.exp(1j * rng.uniform(0, 2 * np.pi, dim)),
                             np.exp(1j * rng.uniform(0, 2 * np.pi, dim)),
                             rng.normal(size=dim) + 1j * rng.normal(size=dim),
                             rng.normal(size=dim) + 1j * rng.normal(size=dim),
                             rng.permutation(dim))
    np.testing.assert_allclose(ad.unitary_matrix(s), _explicit_unitary(s), atol=1e-10)
    x = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    assert abs(np.linalg.norm(ad.unitary_compose_apply(s, x)) - np.linalg.norm(x)) <= 1e-10


@given(seeds, st.sampled_from([2, 4, 8, 16]))
def test_unitary_init_is_unitary_and_near_identity(seed, dim):
    s = ad.unitary_init(dim, seed=seed, permute=False)
    u = ad.unitary_matrix(s)
    assert nx.orthogonality_drift(u) <= 1e-8
    assert np.linalg.norm(u - np.eye(dim)) <= 0.05
    assert np.all(np.abs(np.abs(s.d1) - 1) <= 1e-12)


def test_unitary_compose_length_mismatch():
    with pytest.raises(ShapeError):
        ad.unitary_compose_apply(ad.unitary_init(8), np.ones(4))


def test_unitary_lift_examples():
    rng = np.random.default_rng(2)
    u = random_unitary(rng, 4)
    assert np.all(ad.unitary_lift(np.zeros((4, 4)), u) == 0)
    np.testing.assert_allclose(ad.unitary_lift(u, u), 0, atol=1e-15)
    g = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    b = ad.unitary_lift(g, u)
    assert np.all(b + b.conj().T == 0)
    np.testing.assert_allclose(b, g @ u.conj().T - u @ g.conj().T, atol=1e-14)
    with pytest.raises(ShapeError):
        ad.unitary_lift(np.zeros((3, 3)), u)


def test_unitary_step_examples():
    rng = np.random.default_rng(4)
    u = random_unitary(rng, 8)
    np.testing.assert_allclose(ad.unitary_step(u, np.zeros((8, 8)), 0.1), u, atol=1e-15)
    for _ in range(100):
        g = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
        u = ad.unitary_step(u, g, 0.05)
        assert nx.orthogonality_drift(u) <= 1e-8
    with pytest.raises(ContractError):
        ad.unitary_step(2 * np.eye(3), np.zeros((3, 3)), 0.1)


def test_unitary_step_descends():
    # L(U) = Re<G, U>: first-order decrease along the step
    rng = np.random.default_rng(8)
    u = random_unitary(rng, 6)
    g = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    loss = lambda m: float(np.real(np.vdot(g, m)))  # noqa: E731
    assert loss(ad.unitary_step(u, g, 1e-3)) < loss(u)


@given(seeds)
def test_unitary_preserves_norm_of_gradients(seed):
    rng = np.random.default_rng(seed)
    u = ad.unitary_step(random_unitary(rng, 8), rng.normal(size=(8, 8)) + 0j, 0.1)
    v = rng.normal(size=8) + 1j * rng.normal(size=8)
    assert abs(np.linalg.norm(u @ v) - np.linalg.norm(v)) <= 1e-10


@given(seeds, st.integers(1, 6))
def test_realify_is_homomorphism(seed, n):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    b = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    np.testing.assert_allclose(ad.realify(a @ b), ad.realify(a) @ ad.realify(b), atol=1e-12)


def test_complex_grad_from_real_chain_rule():
    # L(U) = <G_r, realify(U)> ; dL/dRe(U) + i dL/dIm(U) via finite differences
    rng = np.random.default_rng(6)
    n = 3
    g_r = rng.normal(size=(2 * n, 2 * n))
    u = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    grad = ad.complex_grad_from_real(g_r)
    f = lambda m: float(np.sum(g_r * ad.realify(m)))  # noqa: E731
    for i, j in np.ndindex(n, n):
        e = np.zeros((n, n), complex)
        e[i, j] = 1.0
        assert abs((f(u + e) - f(u)) - grad[i, j].real) <= 1e-12
        assert abs((f(u + 1j * e) - f(u)) - grad[i, j].imag) <= 1e-12
