"""Adapter families: LoRA, gradient-aligned LoRA, butterfly-orthogonal, unitary.

States are immutable values; every step function returns a fresh state.
LoRA factors use the ``delta = a @ b`` orientation with ``a`` of shape
(d_out, r) and ``b`` of shape (r, d_in).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import numerics as nx
from .errors import ContractError, InvalidInputError, InvalidRankError, ShapeError

DEFAULT_RANK = 4
DEFAULT_ALPHA = 8.0
DEFAULT_LAMBDA_CAP = 1.0
LORA_INIT_STD = 0.02
BOFT_INIT_NOISE = 1e-3
DEGENERATE_REFLECTOR = 1e-12


# --------------------------------------------------------------------------- LoRA


@dataclass(frozen=True)
class LoraState:
    a: np.ndarray
    b: np.ndarray
    alpha: float = DEFAULT_ALPHA
    lambda_cap: float = DEFAULT_LAMBDA_CAP
    w0_norm: float = 1.0

    @property
    def rank(self) -> int:
        return self.a.shape[1]

    @property
    def scale(self) -> float:
        return self.alpha / self.rank if self.rank else 0.0

    @property
    def cap(self) -> float:
        return self.lambda_cap * self.w0_norm


def _check_rank(shape, r: int) -> None:
    if r < 1 or r > min(shape):
        raise InvalidRankError(f"rank {r} invalid for weight of shape {shape}")


def _enforce_cap(a: np.ndarray, b: np.ndarray, cap: float):
    nrm = np.linalg.norm(a @ b)
    if nrm > cap:
        f = math.sqrt(cap / nrm)
        return a * f, b * f
    return a, b


def lora_init(w0, r: int = DEFAULT_RANK, seed: int = 0, *, alpha: float = DEFAULT_ALPHA,
              lambda_cap: float = DEFAULT_LAMBDA_CAP, std: float = LORA_INIT_STD) -> LoraState:
    w0 = np.asarray(w0, dtype=np.float64)
    _check_rank(w0.shape, r)
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, std, size=(w0.shape[0], r))
    b = np.zeros((r, w0.shape[1]))
    return LoraState(a, b, float(alpha), float(lambda_cap), float(np.linalg.norm(w0)))


def lora_ga_init(w0, grad, r: int = DEFAULT_RANK, *, alpha: float = DEFAULT_ALPHA,
                 lambda_cap: float = DEFAULT_LAMBDA_CAP) -> LoraState:
    """Gradient-aligned init: ``a @ b`` is the best rank-r approximation of ``grad``.

    With ``grad = U S V^T`` truncated to rank r, ``a = U S^{1/2}`` and
    ``b = S^{1/2} V^T``.
    """
    w0 = np.asarray(w0, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != w0.shape:
        raise ShapeError(f"gradient shape {grad.shape} does not match weight {w0.shape}")
    _check_rank(w0.shape, r)
    svd = nx.truncated_svd(grad, r)
    root = np.sqrt(svd.sigma)
    a = svd.u * root
    b = (svd.v * root).T
    return LoraState(a, b.copy(), float(alpha), float(lambda_cap), float(np.linalg.norm(w0)))


def lora_forward_delta(s: LoraState) -> np.ndarray:
    delta = s.scale * (s.a @ s.b)
    nrm = np.linalg.norm(delta)
    if nrm > s.cap:
        delta = delta * (s.cap / nrm)
    return delta


def lora_delta_grads(s: LoraState, g_delta: np.ndarray):
    """Back-propagate dL/d(delta) through the scaled, norm-capped product."""
    prod = s.a @ s.b
    raw = s.scale * prod
    nrm = np.linalg.norm(raw)
    if nrm > s.cap:
        # delta = cap * raw / |raw|  =>  d delta = cap/|raw| (I - rhat rhat^T) d raw
        rhat = raw / nrm
        g_raw = (s.cap / nrm) * (g_delta - np.sum(g_delta * rhat) * rhat)
    else:
        g_raw = g_delta
    g_prod = s.scale * g_raw
    return g_prod @ s.b.T, s.a.T @ g_prod


def lora_step(s: LoraState, grad_a, grad_b, eta: float) -> LoraState:
    grad_a = np.asarray(grad_a, dtype=np.float64)
    grad_b = np.asarray(grad_b, dtype=np.float64)
    if grad_a.shape != s.a.shape or grad_b.shape != s.b.shape:
        raise ShapeError(
            f"gradient shapes {grad_a.shape}, {grad_b.shape} do not match "
            f"factors {s.a.shape}, {s.b.shape}")
    a = s.a - eta * grad_a
    b = s.b - eta * grad_b
    a, b = _enforce_cap(a, b, s.cap)
    return replace(s, a=a, b=b)


def lora_num_trainable(s: LoraState) -> int:
    return s.a.size + s.b.size


# --------------------------------------------------------------------------- BOFT


@dataclass(frozen=True)
class BoftState:
    blocks: tuple
    strides: tuple

    @property
    def depth(self) -> int:
        return len(self.blocks)

    @property
    def dim(self) -> int:
        return self.blocks[0].shape[0]


def butterfly_mask(dim: int, stride: int) -> np.ndarray:
    """Support of one butterfly factor: each index pairs with ``index XOR stride``."""
    idx = np.arange(dim)
    mask = np.zeros((dim, dim), dtype=bool)
    mask[idx, idx] = True
    mask[idx, idx ^ stride] = True
    return mask


def butterfly_strides(dim: int, m: int) -> tuple:
    if not nx.is_power_of_two(dim):
        raise InvalidInputError(f"butterfly dimension must be a power of two, got {dim}")
    levels = int(math.log2(dim))
    if m < 1 or m > levels:
        raise InvalidInputError(f"butterfly depth {m} must lie in [1, {levels}] for dim {dim}")
    return tuple(dim >> i for i in range(1, m + 1))


def boft_init(dim: int, m: int = 3, seed: int = 0, *, noise: float = BOFT_INIT_NOISE) -> BoftState:
    strides = butterfly_strides(dim, m)
    rng = np.random.default_rng(seed)
    blocks = []
    for stride in strides:
        mask = butterfly_mask(dim, stride)
        block = np.eye(dim) + noise * rng.normal(size=(dim, dim)) * mask
        blocks.append(nx.polar_orthogonal_project(block))
    return BoftState(tuple(blocks), strides)


def boft_product(s: BoftState) -> np.ndarray:
    """P = B_1 B_2 ... B_m."""
    p = np.eye(s.dim)
    for block in s.blocks:
        p = p @ block
    return p


def boft_block_grads(s: BoftState, g_p: np.ndarray) -> list:
    """Dense dL/dB_i for every block, given dL/dP."""
    m = s.depth
    prefix = [np.eye(s.dim)]
    for block in s.blocks[:-1]:
        prefix.append(prefix[-1] @ block)
    suffix = [np.eye(s.dim)] * m
    acc = np.eye(s.dim)
    for i in range(m - 1, -1, -1):
        suffix[i] = acc
        acc = s.blocks[i] @ acc
    return [prefix[i].T @ g_p @ suffix[i].T for i in range(m)]


def boft_step(s: BoftState, grads: Sequence[np.ndarray], eta: float) -> BoftState:
    if len(grads) != s.depth:
        raise ShapeError(f"expected {s.depth} block gradients, got {len(grads)}")
    blocks = []
    for block, grad, stride in zip(s.blocks, grads, s.strides):
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != block.shape:
            raise ShapeError(f"block gradient shape {grad.shape} != {block.shape}")
        mask = butterfly_mask(s.dim, stride)
        stepped = block - eta * np.where(mask, grad, 0.0)
        blocks.append(nx.polar_orthogonal_project(stepped))
    return BoftState(tuple(blocks), s.strides)


def boft_num_trainable(s: BoftState) -> int:
    return sum(int(butterfly_mask(s.dim, st).sum()) for st in s.strides)


# --------------------------------------------------------------------------- hybrid skew generator


@dataclass(frozen=True)
class SkewGenState:
    q: np.ndarray
    eta_boft: float = 1e-3

    @classmethod
    def zeros(cls, dim: int, eta_boft: float = 1e-3) -> "SkewGenState":
        return cls(np.zeros((dim, dim)), float(eta_boft))


def skew_num_trainable(s: SkewGenState) -> int:
    d = s.q.shape[0]
    return d * (d - 1) // 2


# --------------------------------------------------------------------------- unitary


@dataclass(frozen=True)
class UnitaryLayerState:
    """Factors of U = D3 R2 F^-1 D2 Pi R1 F D1 (phases stored as unit-modulus complex)."""

    d1: np.ndarray
    d2: np.ndarray
    d3: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    perm: np.ndarray = field(default=None)

    @property
    def dim(self) -> int:
        return self.d1.shape[0]


def unitary_init(dim: int, seed: int = 0, *, phase_noise: float = 1e-3,
                 permute: bool = False) -> UnitaryLayerState:
    """Near-identity structured unitary.

    A Householder reflection is never close to the identity on its own, so
    the two reflectors are paired: with ``r2 = F^-1 r1`` and an identity
    permutation, ``R2 F^-1 R1 F = I`` and only the small phase noise remains.
    """
    if not nx.is_power_of_two(dim):
        raise InvalidInputError(f"unitary dimension must be a power of two, got {dim}")
    rng = np.random.default_rng(seed)
    phases = [np.exp(1j * phase_noise * rng.normal(size=dim)) for _ in range(3)]
    r1 = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    r2 = nx.fft_matrix_apply(r1, inverse=True)
    perm = rng.permutation(dim) if permute else np.arange(dim)
    return UnitaryLayerState(phases[0], phases[1], phases[2], r1, r2, perm)


def _reflect(v: np.ndarray, x: np.ndarray) -> np.ndarray:
    if np.linalg.norm(v) < DEGENERATE_REFLECTOR:
        warnings.warn("degenerate Householder reflector treated as identity", RuntimeWarning,
                      stacklevel=3)
        return x
    return nx.householder_apply(v, x)


def unitary_compose_apply(s: UnitaryLayerState, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    if x.shape != (s.dim,):
        raise ShapeError(f"vector length {x.shape} does not match unitary dim {s.dim}")
    perm = s.perm if s.perm is not None else np.arange(s.dim)
    y = s.d1 * x
    y = nx.fft_matrix_apply(y)
    y = _reflect(s.r1, y)
    y = y[perm]
    y = s.d2 * y
    y = nx.fft_matrix_apply(y, inverse=True)
    y = _reflect(s.r2, y)
    return s.d3 * y


def unitary_matrix(s: UnitaryLayerState) -> np.ndarray:
    """Materialise U densely, column by column."""
    eye = np.eye(s.dim, dtype=np.complex128)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        cols = [unitary_compose_apply(s, eye[:, j]) for j in range(s.dim)]
    return np.stack(cols, axis=1)


def unitary_lift(grad_u, u) -> np.ndarray:
    """Skew-Hermitian B = G U^H - U G^H (exactly skew-Hermitian)."""
    grad_u = np.asarray(grad_u, dtype=np.complex128)
    u = np.asarray(u, dtype=np.complex128)
    if grad_u.shape != u.shape or grad_u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise ShapeError(f"need matching square matrices, got {grad_u.shape} and {u.shape}")
    return nx.skew_project(grad_u, u)


def unitary_step(u, grad_u, eta: float, *, tol: float = nx.ORTHO_TOL) -> np.ndarray:
    """One exponential-map descent step U <- exp(-eta B) U.

    B is the skew-Hermitian lift of the raw gradient. The rotation is taken
    against B so the step decreases the loss to first order. If the result
    has drifted off the unitary group by more than ``tol`` it is pulled back
    with a polar projection.
    """
    u = np.asarray(u, dtype=np.complex128)
    if nx.orthogonality_drift(u) > tol:
        raise ContractError("unitary_step needs a unitary input")
    b = unitary_lift(grad_u, u)
    out = nx.expm(-eta * b) @ u
    if nx.orthogonality_drift(out) > tol:
        out = nx.polar_orthogonal_project(out)
    return out


def realify(u: np.ndarray) -> np.ndarray:
    """Real 2n x 2n matrix acting on [Re z; Im z] the way ``u`` acts on z."""
    x, y = u.real, u.imag
    return np.block([[x, -y], [y, x]])


def complex_grad_from_real(g_real: np.ndarray) -> np.ndarray:
    """dL/dRe(U) + i dL/dIm(U) from the gradient of the realified matrix."""
    n = g_real.shape[0] // 2
    g11, g12 = g_real[:n, :n], g_real[:n, n:]
    g21, g22 = g_real[n:, :n], g_real[n:, n:]
    return (g11 + g22) + 1j * (g21 - g12)
