"""Finite-difference verification of the analytic loss gradients."""
from __future__ import annotations

from typing import Callable, Dict, Optional

import numpy as np

from . import losses

FD_STEP = 1e-5
GRAD_TOL = 1e-4
LOSS_NAMES = ("dice", "iou_ltrb", "smooth_l1", "cross_entropy", "ctc")


def numeric_grad(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        fp = f(x)
        flat[k] = orig - step
        fm = f(x)
        flat[k] = orig
        gflat[k] = (fp - fm) / (2 * step)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max abs deviation scaled by the gradient's magnitude."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def _dice_case(rng):
    n = int(rng.integers(4, 40))
    pred = rng.uniform(0.05, 0.95, n)
    gt = (rng.random(n) < 0.4).astype(float)
    return lambda p: losses.dice_loss(p, gt), pred


def _iou_case(rng):
    n = int(rng.integers(1, 6))
    gt = np.column_stack([rng.uniform(1, 20, (n, 4)), rng.uniform(-0.5, 1.5, n)])
    # keep every prediction term well clear of its gt counterpart (kinks of min and |.|)
    offset = rng.uniform(0.1, 0.5, (n, 5)) * rng.choice([-1.0, 1.0], (n, 5))
    pred = gt.copy()
    pred[:, :4] = gt[:, :4] * (1 + offset[:, :4])
    pred[:, 4] = gt[:, 4] + offset[:, 4]
    return lambda p: losses.iou_ltrb_loss(p, gt, 20.0), pred


def _smooth_l1_case(rng):
    n = int(rng.integers(1, 6))
    vstar = rng.normal(0, 1, (n, 5))
    d = rng.uniform(0.05, 2.5, (n, 5))
    d = np.where(np.abs(d - 1) < 0.05, d + 0.2, d) * rng.choice([-1.0, 1.0], (n, 5))
    return lambda v: losses.smooth_l1(v, vstar), vstar + d


def _ce_case(rng):
    n = int(rng.integers(1, 8))
    p = rng.uniform(0.05, 0.95, n)
    c = np.column_stack([1 - p, p])
    labels = rng.integers(0, 2, n)
    return lambda x: losses.cross_entropy(x, labels), c


def _ctc_case(rng):
    C = int(rng.integers(2, 5))
    L = int(rng.integers(0, 4))
    label = list(rng.integers(1, C, L))
    T = losses.ctc_min_frames(label) + int(rng.integers(0, 4))
    T = max(T, 1)
    logits = rng.normal(0, 1, (T, C))
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    # the unchecked core: finite-difference probes leave the simplex
    return lambda p: losses._ctc_core(p, label), probs


CASES: Dict[str, Callable] = {
    "dice": _dice_case,
    "iou_ltrb": _iou_case,
    "smooth_l1": _smooth_l1_case,
    "cross_entropy": _ce_case,
    "ctc": _ctc_case,
}


def check_loss(name: str, seed: int = 0, trials: int = 100, corrupt: bool = False) -> float:
    """Worst relative gradient error of loss ``name`` over ``trials`` random inputs."""
    rng = np.random.default_rng([seed, LOSS_NAMES.index(name)])
    worst = 0.0
    for _ in range(trials):
        fn, x = CASES[name](rng)
        _, analytic = fn(x)
        if corrupt:
            analytic = analytic * 1.01 + 1e-3
        numeric = numeric_grad(lambda z: fn(z)[0], x)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def run_loss_check(seed: int = 0, trials: int = 100, corrupt: Optional[str] = None) -> Dict[str, float]:
    return {name: check_loss(name, seed, trials, corrupt == name) for name in LOSS_NAMES}
