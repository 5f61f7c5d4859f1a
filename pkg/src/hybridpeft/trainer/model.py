"""Tiny tanh MLP classifier whose hidden layers carry adapter slots.

Every hidden layer is square (``dim x dim``) and bias-free; the head is a
linear softmax with bias. A slot owns the frozen base weight of its layer
and whatever trainable state its adapter mode needs, and knows how to turn
dL/dW_eff into gradients for that state.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .. import numerics as nx
from ..adapters import (
    BoftState,
    LoraState,
    SkewGenState,
    boft_block_grads,
    boft_init,
    boft_num_trainable,
    boft_product,
    boft_step,
    butterfly_mask,
    butterfly_strides,
    complex_grad_from_real,
    lora_delta_grads,
    lora_forward_delta,
    lora_ga_init,
    lora_init,
    lora_step,
    realify,
    skew_num_trainable,
    unitary_init,
    unitary_matrix,
    unitary_step,
)
from ..errors import InvalidInputError, ShapeError, StaleCacheError
from ..fusion import HybridLayerState, _cayley, hybrid_step
from .config import TrainConfig
from .features import Featurizer

# --------------------------------------------------------------------------- slots


@dataclass(frozen=True)
class FrozenSlot:
    w0: np.ndarray
    kind = "frozen"

    def weight(self):
        return self.w0

    def param_grads(self, g_w) -> dict:
        return {}

    def params(self) -> dict:
        return {}

    def with_params(self, p: dict):
        return self

    def step(self, grads, cfg, layer, step):
        return self, None

    def tensors(self) -> dict:
        return {"w0": self.w0}

    def num_trainable(self) -> int:
        return 0

    def drift(self) -> float:
        return 0.0


@dataclass(frozen=True)
class FullSlot:
    w0: np.ndarray
    w: np.ndarray
    kind = "full"

    def weight(self):
        return self.w

    def param_grads(self, g_w) -> dict:
        return {"w": g_w}

    def params(self) -> dict:
        return {"w": self.w}

    def with_params(self, p: dict):
        return replace(self, w=p["w"])

    def step(self, grads, cfg, layer, step):
        return replace(self, w=self.w - cfg.eta_full * grads["w"]), None

    def tensors(self) -> dict:
        return {"w0": self.w0, "w": self.w}

    def num_trainable(self) -> int:
        return self.w.size

    def drift(self) -> float:
        return 0.0


@dataclass(frozen=True)
class LoraSlot:
    w0: np.ndarray
    lora: LoraState
    kind = "lora"

    def weight(self):
        return self.w0 + lora_forward_delta(self.lora)

    def param_grads(self, g_w) -> dict:
        ga, gb = lora_delta_grads(self.lora, g_w)
        return {"a": ga, "b": gb}

    def params(self) -> dict:
        return {"a": self.lora.a, "b": self.lora.b}

    def with_params(self, p: dict):
        return replace(self, lora=replace(self.lora, a=p["a"], b=p["b"]))

    def step(self, grads, cfg, layer, step):
        return replace(self, lora=lora_step(self.lora, grads["a"], grads["b"], cfg.eta_lora)), None

    def tensors(self) -> dict:
        return {"w0": self.w0, "a": self.lora.a, "b": self.lora.b}

    def num_trainable(self) -> int:
        return self.lora.a.size + self.lora.b.size

    def drift(self) -> float:
        return 0.0


@dataclass(frozen=True)
class BoftSlot:
    """W_eff = B_1 ... B_m W0."""

    w0: np.ndarray
    boft: BoftState
    kind = "boft"

    def weight(self):
        return boft_product(self.boft) @ self.w0

    def param_grads(self, g_w) -> dict:
        grads = boft_block_grads(self.boft, g_w @ self.w0.T)
        # only the butterfly support is trainable
        return {f"block{i}": np.where(butterfly_mask(self.boft.dim, st), g, 0.0)
                for i, (g, st) in enumerate(zip(grads, self.boft.strides))}

    def params(self) -> dict:
        return {f"block{i}": b for i, b in enumerate(self.boft.blocks)}

    def with_params(self, p: dict):
        blocks = tuple(p[f"block{i}"] for i in range(self.boft.depth))
        return replace(self, boft=BoftState(blocks, self.boft.strides))

    def step(self, grads, cfg, layer, step):
        g = [grads[f"block{i}"] for i in range(self.boft.depth)]
        return replace(self, boft=boft_step(self.boft, g, cfg.eta_boft)), None

    def tensors(self) -> dict:
        out = {"w0": self.w0}
        out.update(self.params())
        return out

    def num_trainable(self) -> int:
        return boft_num_trainable(self.boft)

    def drift(self) -> float:
        return max(nx.orthogonality_drift(b) for b in self.boft.blocks)


@dataclass(frozen=True)
class UnitarySlot:
    """W_eff = realify(U) W0, with U unitary of size dim/2.

    The composed real operator acts on a hidden vector split as [Re; Im].
    """

    w0: np.ndarray
    u: np.ndarray
    kind = "urnn"

    def weight(self):
        return realify(self.u) @ self.w0

    def param_grads(self, g_w) -> dict:
        return {"u": complex_grad_from_real(g_w @ self.w0.T)}

    def params(self) -> dict:
        return {"u": self.u}

    def with_params(self, p: dict):
        return replace(self, u=p["u"])

    def step(self, grads, cfg, layer, step):
        return replace(self, u=unitary_step(self.u, grads["u"], cfg.eta_unitary)), None

    def tensors(self) -> dict:
        return {"w0": self.w0, "u": self.u}

    def num_trainable(self) -> int:
        # real dimension of the unitary group U(n)
        return self.u.shape[0] ** 2

    def drift(self) -> float:
        return nx.orthogonality_drift(self.u)


@dataclass(frozen=True)
class HybridSlot:
    """Running weight w plus a low-rank branch and a Cayley branch.

    The forward pass sees both branch deltas on top of w:
    W_eff = w + dW_lora + (R - I) w. Each step then merges the lambda-mixed
    delta into w and advances the branches.
    """

    w0: np.ndarray
    state: HybridLayerState
    kind = "hybrid"

    def _rotation(self):
        return self.state.r

    def weight(self):
        s = self.state
        return self._rotation() @ s.w + lora_forward_delta(s.lora)

    def param_grads(self, g_w) -> dict:
        s = self.state
        ga, gb = lora_delta_grads(s.lora, g_w)
        # R = (I - eta Q)^{-1} (I + eta Q)  =>  dR = eta (I - eta Q)^{-1} dQ (I + R)
        eta = s.skew.eta_boft
        d = s.w.shape[0]
        m = np.linalg.inv(np.eye(d) - eta * s.skew.q)
        g_r = g_w @ s.w.T
        g_q = eta * m.T @ g_r @ (np.eye(d) + self._rotation()).T
        return {"a": ga, "b": gb, "q": g_q}

    def params(self) -> dict:
        s = self.state
        return {"a": s.lora.a, "b": s.lora.b, "q": s.skew.q}

    def with_params(self, p: dict):
        s = self.state
        lora = replace(s.lora, a=p["a"], b=p["b"])
        skew = replace(s.skew, q=p["q"])
        r = _cayley(p["q"], s.skew.eta_boft)
        return replace(self, state=replace(s, lora=lora, skew=skew, r=r))

    def step(self, grads, cfg, layer, step):
        new = hybrid_step(self.state, grads["a"], grads["b"], grads["q"], cfg.eta_lora,
                          cfg.eta_boft)
        return replace(self, state=new), new.trace

    def tensors(self) -> dict:
        s = self.state
        return {"w0": self.w0, "w": s.w, "a": s.lora.a, "b": s.lora.b, "q": s.skew.q, "r": s.r}

    def num_trainable(self) -> int:
        return self.state.lora.a.size + self.state.lora.b.size + skew_num_trainable(self.state.skew)

    def drift(self) -> float:
        return nx.orthogonality_drift(self.state.r)


SLOT_TYPES = {cls.kind: cls for cls in (FrozenSlot, FullSlot, LoraSlot, BoftSlot, UnitarySlot,
                                        HybridSlot)}


# --------------------------------------------------------------------------- model


@dataclass(frozen=True)
class ToyModel:
    config: TrainConfig
    slots: tuple
    head_w: np.ndarray
    head_b: np.ndarray
    version: int = 0

    @property
    def featurizer(self) -> Featurizer:
        return Featurizer(self.config.dim)

    @property
    def base_weights(self) -> tuple:
        return tuple(s.w0 for s in self.slots)

    def logits(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        for slot in self.slots:
            h = np.tanh(h @ slot.weight().T)
        return h @ self.head_w.T + self.head_b

    def predict_proba_features(self, x: np.ndarray) -> np.ndarray:
        return _softmax(self.logits(x))

    def predict_proba(self, texts) -> np.ndarray:
        x = self.featurizer.transform(list(texts), self.config.workers)
        return self.predict_proba_features(x)

    def num_trainable(self) -> dict:
        layers = [s.num_trainable() for s in self.slots]
        head = self.head_w.size + self.head_b.size
        return {"layers": layers, "head": head, "total": sum(layers) + head}

    def max_drift(self) -> float:
        return max((s.drift() for s in self.slots), default=0.0)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


@dataclass(frozen=True)
class Cache:
    version: int
    x: np.ndarray
    y: np.ndarray
    hidden: tuple      # h_0 = x, h_1, ..., h_L
    weights: tuple
    proba: np.ndarray
    reduction: str


@dataclass(frozen=True)
class Gradients:
    layers: tuple          # per-slot dict of parameter gradients
    head_w: np.ndarray
    head_b: np.ndarray
    weights: tuple         # dL/dW_eff per layer

    def adapter_norm(self) -> float:
        total = 0.0
        for g in self.layers:
            for v in g.values():
                total += float(np.sum(np.abs(v) ** 2))
        return float(np.sqrt(total))

    def global_norm(self) -> float:
        head = float(np.sum(self.head_w ** 2) + np.sum(self.head_b ** 2))
        return float(np.sqrt(self.adapter_norm() ** 2 + head))


def _check_batch(model: ToyModel, x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2 or x.shape[1] != model.config.dim:
        raise ShapeError(f"features must be (n, {model.config.dim}), got {x.shape}")
    if x.shape[0] == 0:
        raise InvalidInputError("empty batch")
    if y.shape != (x.shape[0],):
        raise ShapeError(f"labels must be ({x.shape[0]},), got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        raise InvalidInputError("labels must be integers")
    if y.min() < 0 or y.max() >= model.config.num_classes:
        raise InvalidInputError(f"label out of range [0, {model.config.num_classes})")
    return x, y.astype(np.intp)


def forward(model: ToyModel, x, y, reduction: str = "mean"):
    """Cross-entropy of the softmax head; returns (loss, cache)."""
    if reduction not in ("mean", "sum"):
        raise InvalidInputError(f"reduction must be 'mean' or 'sum', got {reduction!r}")
    x, y = _check_batch(model, x, y)
    hidden = [x]
    weights = []
    h = x
    for slot in model.slots:
        w = slot.weight()
        weights.append(w)
        h = np.tanh(h @ w.T)
        hidden.append(h)
    logits = h @ model.head_w.T + model.head_b
    logp = _log_softmax(logits)
    nll = -logp[np.arange(len(y)), y]
    loss = float(nll.sum() if reduction == "sum" else nll.mean())
    cache = Cache(model.version, x, y, tuple(hidden), tuple(weights), np.exp(logp), reduction)
    return loss, cache


def backward(model: ToyModel, cache: Cache) -> Gradients:
    if cache.version != model.version:
        raise StaleCacheError(
            f"cache from model version {cache.version}, model is at {model.version}")
    n = cache.y.shape[0]
    g_logits = cache.proba.copy()
    g_logits[np.arange(n), cache.y] -= 1.0
    if cache.reduction == "mean":
        g_logits /= n
    g_head_w = g_logits.T @ cache.hidden[-1]
    g_head_b = g_logits.sum(axis=0)
    g_h = g_logits @ model.head_w
    layer_grads = [None] * len(model.slots)
    weight_grads = [None] * len(model.slots)
    for i in range(len(model.slots) - 1, -1, -1):
        h_out = cache.hidden[i + 1]
        g_z = g_h * (1.0 - h_out * h_out)
        g_w = g_z.T @ cache.hidden[i]
        weight_grads[i] = g_w
        layer_grads[i] = model.slots[i].param_grads(g_w)
        g_h = g_z @ cache.weights[i]
    return Gradients(tuple(layer_grads), g_head_w, g_head_b, tuple(weight_grads))


def apply_gradients(model: ToyModel, grads: Gradients, step: int):
    """One SGD step on every trainable tensor; returns (model, mix traces)."""
    cfg = model.config
    slots, traces = [], []
    for i, (slot, g) in enumerate(zip(model.slots, grads.layers)):
        new, trace = slot.step(g, cfg, i, step)
        slots.append(new)
        if trace is not None:
            traces.append(replace(trace, layer=i, step=step))
    head_w = model.head_w - cfg.eta_head * grads.head_w
    head_b = model.head_b - cfg.eta_head * grads.head_b
    return replace(model, slots=tuple(slots), head_w=head_w, head_b=head_b,
                   version=model.version + 1), traces


# --------------------------------------------------------------------------- construction


def random_base(cfg: TrainConfig, seed: int) -> list:
    rng = np.random.default_rng([seed, 17])
    d = cfg.dim
    return [rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d)) for _ in range(cfg.layers)]


def pretrain_base(cfg: TrainConfig, x: np.ndarray, y: np.ndarray, seed: int) -> tuple:
    """Base weights from a short full fine-tuning run on an auxiliary task.

    ``y`` holds auxiliary labels (language codes mapped to ints). The
    auxiliary head is thrown away; only the hidden weights are returned.
    """
    n_aux = int(np.max(y)) + 1 if len(y) else 1
    aux_cfg = replace(cfg, mode="full", num_classes=max(n_aux, 2), eta_full=cfg.warmup_eta,
                      eta_head=cfg.warmup_eta)
    ws = random_base(cfg, seed)
    model = ToyModel(aux_cfg, tuple(FullSlot(w, w.copy()) for w in ws),
                     np.zeros((aux_cfg.num_classes, cfg.dim)), np.zeros(aux_cfg.num_classes))
    rng = np.random.default_rng([seed, 23])
    for _ in range(cfg.warmup_epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, cache = forward(model, x[idx], y[idx])
            model, _ = apply_gradients(model, backward(model, cache), 0)
    return tuple(s.w.copy() for s in model.slots)


def _probe_weight_grads(cfg: TrainConfig, base: tuple, x, y) -> tuple:
    """dL/dW at the base weights under a one-step head.

    With a zero head every hidden-layer gradient vanishes, so the gradient
    is taken after a single SGD step of the head alone.
    """
    model = ToyModel(cfg, tuple(FrozenSlot(w) for w in base),
                     np.zeros((cfg.num_classes, cfg.dim)), np.zeros(cfg.num_classes))
    _, cache = forward(model, x, y)
    g = backward(model, cache)
    probe = replace(model, head_w=-cfg.eta_head * g.head_w, head_b=-cfg.eta_head * g.head_b)
    _, cache = forward(probe, x, y)
    return backward(probe, cache).weights


def _ga_lora(cfg: TrainConfig, w0: np.ndarray, grad: np.ndarray) -> LoraState:
    """LoRA-GA factors pointing down the probe gradient.

    The factors reproduce the rank-r part of ``-grad``, rescaled so the
    initial delta has Frobenius norm at most ``ga_scale``.
    """
    scale = cfg.alpha / cfg.rank
    nrm = np.linalg.norm(grad)
    target = np.zeros_like(grad) if nrm == 0 else -(cfg.ga_scale / (scale * nrm)) * grad
    return lora_ga_init(w0, target, cfg.rank, alpha=cfg.alpha, lambda_cap=cfg.lambda_cap)


def build_model(cfg: TrainConfig, base: tuple, x: Optional[np.ndarray] = None,
                y: Optional[np.ndarray] = None) -> ToyModel:
    """Attach adapters of ``cfg.mode`` to frozen ``base`` weights.

    Gradient-aligned modes (lora_ga, hybrid) need the training features
    ``x`` and labels ``y`` to take the probe gradient.
    """
    base = tuple(np.array(w, dtype=np.float64) for w in base)
    if len(base) != cfg.layers or any(w.shape != (cfg.dim, cfg.dim) for w in base):
        raise ShapeError(f"need {cfg.layers} base weights of shape {(cfg.dim, cfg.dim)}")
    mode = cfg.mode
    grads = None
    if mode in ("lora_ga", "hybrid"):
        if x is None or y is None:
            raise InvalidInputError(f"{mode} initialisation needs training data")
        x, y = _check_batch(ToyModel(cfg, (), np.zeros((cfg.num_classes, cfg.dim)),
                                     np.zeros(cfg.num_classes)), x, y)
        grads = _probe_weight_grads(cfg, base, x, y)
    slots = []
    placement = cfg.unitary_placement()
    for i, w0 in enumerate(base):
        seed = cfg.seed * 1000 + i
        if mode == "full":
            slots.append(FullSlot(w0, w0.copy()))
        elif mode == "lora":
            slots.append(LoraSlot(w0, lora_init(w0, cfg.rank, seed, alpha=cfg.alpha,
                                                lambda_cap=cfg.lambda_cap)))
        elif mode == "lora_ga":
            slots.append(LoraSlot(w0, _ga_lora(cfg, w0, grads[i])))
        elif mode == "boft":
            slots.append(BoftSlot(w0, boft_init(cfg.dim, cfg.boft_depth, seed)))
        elif mode == "urnn":
            if i in placement:
                u = unitary_matrix(unitary_init(cfg.dim // 2, seed))
                slots.append(UnitarySlot(w0, nx.polar_orthogonal_project(u)))
            else:
                slots.append(FrozenSlot(w0))
        else:
            state = HybridLayerState.create(w0.copy(), _ga_lora(cfg, w0, grads[i]),
                                            cfg.eta_boft, layer=i)
            slots.append(HybridSlot(w0, state))
    return ToyModel(cfg, tuple(slots), np.zeros((cfg.num_classes, cfg.dim)),
                    np.zeros(cfg.num_classes))


def slot_from_tensors(kind: str, t: dict, cfg: TrainConfig, layer: int):
    w0 = t["w0"]
    if kind == "frozen":
        return FrozenSlot(w0)
    if kind == "full":
        return FullSlot(w0, t["w"])
    if kind == "lora":
        return LoraSlot(w0, LoraState(t["a"], t["b"], float(cfg.alpha), float(cfg.lambda_cap),
                                      float(np.linalg.norm(w0))))
    if kind == "boft":
        strides = butterfly_strides(cfg.dim, cfg.boft_depth)
        return BoftSlot(w0, BoftState(tuple(t[f"block{i}"] for i in range(len(strides))),
                                      strides))
    if kind == "urnn":
        return UnitarySlot(w0, t["u"])
    if kind == "hybrid":
        lora = LoraState(t["a"], t["b"], float(cfg.alpha), float(cfg.lambda_cap),
                         float(np.linalg.norm(w0)))
        skew = SkewGenState(t["q"], float(cfg.eta_boft))
        return HybridSlot(w0, HybridLayerState(t["w"], lora, skew, t["r"], None, layer, 0))
    raise InvalidInputError(f"unknown slot kind {kind!r}")
