"""Dense linear algebra for small matrices.

Everything here is a pure function of its inputs. Matrices are plain 2-D
numpy arrays (float64 or complex128); nothing is cached between calls.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    InvalidInputError,
    InvalidLengthError,
    InvalidRankError,
    ShapeError,
    SingularityError,
)

ORTHO_TOL = 1e-8
_JACOBI_EPS = 1e-15
_JACOBI_MAX_SWEEPS = 80
_TAYLOR_DEGREE = 13
_EXPM_NORM_TARGET = 0.5


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v.T


def _as_matrix(m, name="matrix") -> np.ndarray:
    arr = np.asarray(m)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if np.iscomplexobj(arr):
        return arr.astype(np.complex128, copy=False)
    return arr.astype(np.float64, copy=False)


def _require_square(m: np.ndarray, name="matrix") -> None:
    if m.shape[0] != m.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {m.shape}")


def orthogonality_drift(m) -> float:
    """Frobenius distance of M^H M from the identity."""
    m = _as_matrix(m)
    g = m.conj().T @ m
    return float(np.linalg.norm(g - np.eye(m.shape[1])))


def is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def _complete_orthonormal(u: np.ndarray, filled: int) -> np.ndarray:
    """Fill columns filled.. of u with an orthonormal completion (Gram-Schmidt on e_i)."""
    d, k = u.shape
    col = filled
    for i in range(d):
        if col >= k:
            break
        e = np.zeros(d)
        e[i] = 1.0
        # two passes of classical Gram-Schmidt for stability
        for _ in range(2):
            e -= u[:, :col] @ (u[:, :col].T @ e)
        nrm = np.linalg.norm(e)
        if nrm > 1e-8:
            u[:, col] = e / nrm
            col += 1
    return u


def _round_robin(k: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Tournament schedule: k-1 rounds of disjoint column pairs covering all pairs."""
    n = k + (k % 2)
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        ps, qs = [], []
        for i in range(n // 2):
            a, b = players[i], players[n - 1 - i]
            if a < k and b < k:
                ps.append(min(a, b))
                qs.append(max(a, b))
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _one_sided_jacobi(a: np.ndarray):
    """Hestenes one-sided Jacobi on a tall matrix (rows >= cols).

    Returns (column-orthogonal working matrix, accumulated right rotations).
    Column pairs follow a fixed round-robin schedule; the pairs within a
    round are disjoint, so each round is applied as one vectorised rotation.
    """
    work = a.copy()
    k = work.shape[1]
    v = np.eye(k)
    if k < 2:
        return work, v
    schedule = _round_robin(k)
    for _ in range(_JACOBI_MAX_SWEEPS):
        rotated = False
        for ps, qs in schedule:
            up = work[:, ps]
            uq = work[:, qs]
            alpha = np.einsum("ij,ij->j", up, up)
            beta = np.einsum("ij,ij->j", uq, uq)
            gamma = np.einsum("ij,ij->j", up, uq)
            active = np.abs(gamma) > _JACOBI_EPS * np.sqrt(alpha * beta)
            active &= gamma != 0.0
            if not np.any(active):
                continue
            rotated = True
            ps, qs = ps[active], qs[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            up = work[:, ps]
            uq = work[:, qs]
            work[:, ps] = c * up - s * uq
            work[:, qs] = s * up + c * uq
            vp = v[:, ps]
            vq = v[:, qs]
            v[:, ps] = c * vp - s * vq
            v[:, qs] = s * vp + c * vq
        if not rotated:
            break
    return work, v


def _full_svd(m: np.ndarray):
    """Thin SVD of a real matrix via one-sided Jacobi, sorted and sign-fixed."""
    rows, cols = m.shape
    transposed = rows < cols
    a = m.T if transposed else m
    work, v = _one_sided_jacobi(a)
    sigma = np.linalg.norm(work, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    work = work[:, order]
    v = v[:, order]

    scale = sigma[0] if sigma.size else 0.0
    nonzero = int(np.sum(sigma > max(scale, 1.0) * 1e-13)) if scale > 0 else 0
    u = np.zeros_like(work)
    u[:, :nonzero] = work[:, :nonzero] / sigma[:nonzero]
    sigma[nonzero:] = 0.0
    if nonzero < u.shape[1]:
        u = _complete_orthonormal(u, nonzero)

    if transposed:
        u, v = v, u
    # sign convention: first non-negligible entry of each left vector is positive
    for j in range(u.shape[1]):
        col = u[:, j]
        idx = np.flatnonzero(np.abs(col) > 1e-12)
        if idx.size and col[idx[0]] < 0:
            u[:, j] = -col
            v[:, j] = -v[:, j]
    return u, sigma, v


def truncated_svd(m, r: int) -> SvdResult:
    """Rank-``r`` truncated SVD of a real matrix.

    ``u`` is d x r, ``v`` is k x r and ``sigma`` is non-increasing, so
    ``u @ diag(sigma) @ v.T`` is the best Frobenius rank-r approximation.
    """
    m = _as_matrix(m)
    if np.iscomplexobj(m):
        raise InvalidInputError("truncated_svd expects a real matrix")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError("matrix has non-finite entries")
    if r < 0 or r > min(m.shape):
        raise InvalidRankError(f"rank {r} invalid for shape {m.shape}")
    u, sigma, v = _full_svd(m)
    return SvdResult(u[:, :r].copy(), sigma[:r].copy(), v[:, :r].copy())


def expm(m) -> np.ndarray:
    """Matrix exponential by scaling-and-squaring around a degree-13 Taylor core.

    The scaling exponent s is chosen so that ||m||_1 / 2^s <= 0.5.
    """
    m = _as_matrix(m)
    _require_square(m)
    n = m.shape[0]
    norm1 = float(np.max(np.sum(np.abs(m), axis=0))) if n else 0.0
    s = 0
    if norm1 > _EXPM_NORM_TARGET:
        s = int(math.ceil(math.log2(norm1 / _EXPM_NORM_TARGET)))
    a = m / (2.0 ** s)
    eye = np.eye(n, dtype=a.dtype)
    # Horner: I + a(I + a/2(I + a/3(...)))
    result = eye.copy()
    for k in range(_TAYLOR_DEGREE, 0, -1):
        result = eye + (a @ result) / k
    for _ in range(s):
        result = result @ result
    return result


def skew_project(m, u=None) -> np.ndarray:
    """Skew part of a gradient: ``m - m^T`` (``m - m^H`` for complex input).

    With a second argument the unitary rule ``m u^H - u m^H`` is used instead.
    Either way the result is exactly (anti)symmetric, since it is built as
    ``P - P^H`` from a single product ``P``.
    """
    m = _as_matrix(m)
    _require_square(m)
    if u is None:
        return m - m.conj().T
    u = _as_matrix(u, "u")
    if u.shape != m.shape:
        raise ShapeError(f"shape mismatch {m.shape} vs {u.shape}")
    p = m @ u.conj().T
    return p - p.conj().T


def cayley(q, eta: float) -> np.ndarray:
    """Cayley map (I + eta*q)(I - eta*q)^{-1} of a skew-symmetric ``q``."""
    q = _as_matrix(q)
    _require_square(q)
    if np.linalg.norm(q + q.conj().T) > 1e-10:
        raise InvalidInputError("cayley expects a skew-symmetric generator")
    n = q.shape[0]
    eye = np.eye(n, dtype=q.dtype)
    lhs = eye - eta * q
    rhs = eye + eta * q
    if n and np.linalg.cond(lhs) > 1e12:
        raise SingularityError("I - eta*Q is singular; shrink the step size")
    # (I + eta Q) and (I - eta Q)^{-1} commute, so R = (I - eta Q)^{-1} (I + eta Q)
    try:
        return np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularityError("I - eta*Q is singular; shrink the step size") from exc


def _polar_real(m: np.ndarray) -> np.ndarray:
    u, sigma, v = _full_svd(m)
    if sigma.size and (sigma[-1] <= 1e-12 * max(sigma[0], 1e-300)):
        raise SingularityError("polar projection of a rank-deficient matrix")
    return u @ v.T


def _polar_complex(m: np.ndarray) -> np.ndarray:
    # scaled Newton iteration X <- (X + X^{-H}) / 2; converges quadratically
    x = m.copy()
    for _ in range(100):
        try:
            inv_h = np.linalg.inv(x).conj().T
        except np.linalg.LinAlgError as exc:
            raise SingularityError("polar projection of a singular matrix") from exc
        nxt = 0.5 * (x + inv_h)
        if np.linalg.norm(nxt - x) <= 1e-15 * np.linalg.norm(nxt):
            return nxt
        x = nxt
    return x


def polar_orthogonal_project(m) -> np.ndarray:
    """Nearest orthogonal (unitary, for complex input) matrix in Frobenius norm."""
    m = _as_matrix(m)
    _require_square(m)
    if not np.all(np.isfinite(m)):
        raise InvalidInputError("matrix has non-finite entries")
    if np.iscomplexobj(m):
        return _polar_complex(m)
    return _polar_real(m)


def fft_matrix_apply(v, inverse: bool = False) -> np.ndarray:
    """Apply the unitary-normalised DFT (or its inverse) to a power-of-two vector."""
    v = np.asarray(v, dtype=np.complex128)
    if v.ndim != 1 or not is_power_of_two(v.shape[0]):
        raise InvalidLengthError(f"length must be a power of two, got {v.shape}")
    if inverse:
        return np.fft.ifft(v, norm="ortho")
    return np.fft.fft(v, norm="ortho")


def householder_apply(v_reflect, x) -> np.ndarray:
    """Apply (I - 2 v v^H / v^H v) to ``x``."""
    v = np.asarray(v_reflect, dtype=np.complex128)
    x = np.asarray(x, dtype=np.complex128)
    if v.shape != x.shape or v.ndim != 1:
        raise ShapeError(f"reflector {v.shape} and vector {x.shape} differ")
    vv = float(np.real(np.vdot(v, v)))
    if vv <= 0.0:
        raise InvalidInputError("zero Householder reflector")
    return x - (2.0 * np.vdot(v, x) / vv) * v
