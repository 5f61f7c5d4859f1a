"""Per-layer hybrid update mixing a low-rank branch with a Cayley-orthogonal branch."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import numerics as nx
from .adapters import LoraState, SkewGenState, lora_forward_delta, lora_step
from .errors import InvalidInputError, ShapeError, SingularityError, StepSizeError

DEFAULT_ETA_LORA = 5e-3
DEFAULT_ETA_BOFT = 1e-3


@dataclass(frozen=True)
class MixTrace:
    layer: int
    step: int
    g_lora: float
    g_boft: float
    lam: float

    def as_dict(self) -> dict:
        return {"layer": self.layer, "step": self.step, "g_lora": self.g_lora,
                "g_boft": self.g_boft, "lambda": self.lam}


@dataclass(frozen=True)
class HybridLayerState:
    w: np.ndarray
    lora: LoraState
    skew: SkewGenState
    r: np.ndarray
    trace: Optional[MixTrace] = None
    layer: int = 0
    step: int = 0

    @classmethod
    def create(cls, w, lora: LoraState, eta_boft: float = DEFAULT_ETA_BOFT,
               layer: int = 0) -> "HybridLayerState":
        w = np.array(w, dtype=np.float64)
        skew = SkewGenState.zeros(w.shape[0], eta_boft)
        return cls(w, lora, skew, np.eye(w.shape[0]), None, layer, 0)


def mixing_coefficient(g_lora: float, g_boft: float) -> float:
    """lambda = g_lora / (g_lora + g_boft); 0.5 when both norms vanish."""
    if g_lora < 0 or g_boft < 0 or math.isnan(g_lora) or math.isnan(g_boft):
        raise InvalidInputError(f"gradient norms must be non-negative, got {g_lora}, {g_boft}")
    total = g_lora + g_boft
    if total == 0:
        return 0.5
    return g_lora / total


def branch_norms(grad_a, grad_b, grad_q) -> tuple:
    """Frobenius norms of the concatenated (A, B) gradient and of the Q gradient."""
    g_lora = math.sqrt(float(np.sum(grad_a * grad_a)) + float(np.sum(grad_b * grad_b)))
    g_boft = float(np.linalg.norm(grad_q))
    return g_lora, g_boft


def _cayley(q, eta):
    try:
        return nx.cayley(q, eta)
    except SingularityError as exc:
        raise StepSizeError(f"Cayley step singular at eta={eta}; shrink eta_boft") from exc


def boft_delta(w: np.ndarray, r: np.ndarray) -> np.ndarray:
    return (r - np.eye(r.shape[0])) @ w


def hybrid_step(s: HybridLayerState, grad_a, grad_b, grad_q, eta_lora: float = DEFAULT_ETA_LORA,
                eta_boft: float = DEFAULT_ETA_BOFT, *,
                force_lambda: Optional[float] = None) -> HybridLayerState:
    """Apply one mixed update to the layer weight, then advance both branches.

    The merged delta uses the branch states as they were on entry; the LoRA
    factors and the skew generator are stepped afterwards and the Cayley
    rotation is recomputed for the next call.
    """
    grad_a = np.asarray(grad_a, dtype=np.float64)
    grad_b = np.asarray(grad_b, dtype=np.float64)
    grad_q = np.asarray(grad_q, dtype=np.float64)
    d = s.w.shape[0]
    if grad_q.shape != (d, d):
        raise ShapeError(f"grad_q must be {(d, d)}, got {grad_q.shape}")

    delta_lora = lora_forward_delta(s.lora)
    r = _cayley(s.skew.q, eta_boft)
    delta_boft = boft_delta(s.w, r)
    g_lora, g_boft = branch_norms(grad_a, grad_b, grad_q)
    lam = mixing_coefficient(g_lora, g_boft) if force_lambda is None else float(force_lambda)
    w = s.w + (lam * delta_lora + (1.0 - lam) * delta_boft)

    lora = lora_step(s.lora, grad_a, grad_b, eta_lora)
    q = s.skew.q - eta_boft * nx.skew_project(grad_q)
    skew = replace(s.skew, q=q, eta_boft=eta_boft)
    r_next = _cayley(q, eta_boft)
    step = s.step + 1
    trace = MixTrace(s.layer, step, g_lora, g_boft, lam)
    return HybridLayerState(w, lora, skew, r_next, trace, s.layer, step)


def layer_cost_estimate(d_out: int, d_in: int, r: int) -> dict:
    """Per-layer cost terms: d_out*r + r*d_in (low-rank) and d_out*log2(d_out) (butterfly)."""
    if d_out <= 0 or d_in <= 0 or r < 0:
        raise InvalidInputError("dimensions must be positive")
    return {"lora_flops": d_out * r + r * d_in, "boft_flops": d_out * math.log2(d_out)}
