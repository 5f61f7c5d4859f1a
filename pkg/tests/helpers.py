from __future__ import annotations

from pathlib import Path

import numpy as np

DATA = Path(__file__).resolve().parents[1] / "src" / "hybridpeft" / "data"
GOLDEN = Path(__file__).resolve().parent / "golden"


def random_orthogonal(rng, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))


def random_skew(rng, n: int, scale: float = 1.0) -> np.ndarray:
    z = rng.normal(size=(n, n))
    return scale * (z - z.T) / 2


def random_unitary(rng, n: int) -> np.ndarray:
    z = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def oracle_rank_residual(m: np.ndarray, r: int) -> float:
    """Rank-r residual from LAPACK's full SVD (independent of the Jacobi code)."""
    s = np.linalg.svd(m, compute_uv=False)
    return float(np.sqrt(np.sum(s[r:] ** 2)))


def taylor_expm(m: np.ndarray, terms: int = 30) -> np.ndarray:
    out = np.eye(m.shape[0], dtype=m.dtype)
    term = np.eye(m.shape[0], dtype=m.dtype)
    for k in range(1, terms):
        term = term @ m / k
        out = out + term
    return out


def brute_ece(conf, correct, bins: int) -> float:
    """ECE by scanning bins one by one with explicit right-closed edges."""
    n = len(conf)
    total = 0.0
    for b in range(bins):
        lo, hi = b / bins, (b + 1) / bins
        members = [i for i in range(n)
                   if (conf[i] > lo or (b == 0 and conf[i] == 0.0)) and conf[i] <= hi]
        if not members:
            continue
        acc = sum(1.0 for i in members if correct[i]) / len(members)
        avg = sum(conf[i] for i in members) / len(members)
        total += len(members) / n * abs(acc - avg)
    return total


def toy_model(mode: str, seed: int = 8, dim: int = 8, layers: int = 3, n: int = 12):
    """Small model with every trainable tensor pushed off its initial value."""
    from hybridpeft.trainer import TrainConfig, build_model, random_base

    cfg = TrainConfig(mode=mode, dim=dim, layers=layers, num_classes=3, rank=2, seed=seed,
                      boft_depth=2, eta_boft=0.05)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, dim))
    y = rng.integers(0, 3, size=n)
    model = build_model(cfg, random_base(cfg, seed), x, y)
    slots = []
    for slot in model.slots:
        params = dict(slot.params())
        for name, value in params.items():
            if name == "q":
                params[name] = random_skew(rng, dim, 0.5)
            elif name in ("a", "b", "w"):
                params[name] = value + 0.3 * rng.normal(size=value.shape)
        slots.append(slot.with_params(params) if params else slot)
    from dataclasses import replace
    model = replace(model, slots=tuple(slots), head_w=rng.normal(size=model.head_w.shape),
                    head_b=0.1 * rng.normal(size=model.head_b.shape))
    return model, x, y


# criterion number -> (title, passed, detail); filled by the acceptance tests
ACCEPTANCE: dict = {}


def record(number: int, title: str, passed: bool, detail: str) -> None:
    prev = ACCEPTANCE.get(number)
    if prev is not None:
        passed = passed and prev[1]
        detail = f"{prev[2]}; {detail}"
    ACCEPTANCE[number] = (title, passed, detail)
    print(f"criterion {number} [{title}]: {'PASS' if passed else 'FAIL'} ({detail})")
