"""Central finite-difference probes of the analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .. import numerics as nx
from ..adapters import butterfly_mask
from .model import ToyModel, backward, forward

FD_STEP = 1e-5
REL_TOL = 1e-4
ABS_FLOOR = 1e-6


@dataclass(frozen=True)
class Probe:
    where: str
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        scale = max(abs(self.analytic), abs(self.numeric), ABS_FLOOR)
        return abs(self.analytic - self.numeric) / scale

    def ok(self, tol: float = REL_TOL) -> bool:
        return self.rel_error <= tol


def _loss(model, x, y) -> float:
    return forward(model, x, y)[0]


def _with_param(model: ToyModel, layer: int, name: str, value) -> ToyModel:
    if layer < 0:
        return replace(model, **{name: value})
    slot = model.slots[layer]
    params = dict(slot.params())
    params[name] = value
    slots = list(model.slots)
    slots[layer] = slot.with_params(params)
    return replace(model, slots=tuple(slots))


def _random_skew_hermitian(rng, n: int) -> np.ndarray:
    z = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    z = z - z.conj().T
    return z / np.linalg.norm(z)


def gradient_probes(model: ToyModel, x, y, n_probes: int, seed: int = 0,
                    h: float = FD_STEP) -> list:
    """Compare analytic and central-difference derivatives along random probes.

    Plain tensors are probed one coordinate at a time. Constrained tensors
    are probed along directions that respect their parameterisation: a
    skew generator along e_ij - e_ji (so the Cayley map is differentiated),
    a butterfly block inside its support, and a unitary matrix along the
    curve exp(t Omega) U with Omega skew-Hermitian.
    """
    rng = np.random.default_rng(seed)
    _, cache = forward(model, x, y)
    grads = backward(model, cache)
    targets = [(-1, "head_w", model.head_w, grads.head_w), (-1, "head_b", model.head_b, grads.head_b)]
    for i, (slot, g) in enumerate(zip(model.slots, grads.layers)):
        for name, value in slot.params().items():
            targets.append((i, name, value, g[name]))
    probes = []
    for _ in range(n_probes):
        layer, name, value, grad = targets[int(rng.integers(len(targets)))]
        where = f"{'head' if layer < 0 else f'layer{layer}'}.{name}"
        if np.iscomplexobj(value):
            omega = _random_skew_hermitian(rng, value.shape[0])
            analytic = float(np.real(np.vdot(grad, omega @ value)))
            plus = _with_param(model, layer, name, nx.expm(h * omega) @ value)
            minus = _with_param(model, layer, name, nx.expm(-h * omega) @ value)
        else:
            if name == "q":
                i, j = rng.choice(value.shape[0], size=2, replace=False)
                direction = np.zeros_like(value)
                direction[i, j], direction[j, i] = 1.0, -1.0
            else:
                direction = np.zeros_like(value)
                if name.startswith("block"):
                    stride = model.slots[layer].boft.strides[int(name[len("block"):])]
                    support = np.flatnonzero(butterfly_mask(value.shape[0], stride))
                else:
                    support = np.arange(value.size)
                direction.flat[int(rng.choice(support))] = 1.0
            analytic = float(np.sum(grad * direction))
            plus = _with_param(model, layer, name, value + h * direction)
            minus = _with_param(model, layer, name, value - h * direction)
        numeric = (_loss(plus, x, y) - _loss(minus, x, y)) / (2.0 * h)
        probes.append(Probe(where, analytic, numeric))
    return probes
