"""Training losses with analytic gradients.

Every loss returns ``(value, grad)`` where ``grad`` has the shape of the
prediction argument. Gradients stop at the loss inputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

DICE_EPS = 1e-6
LOG_CLAMP = 1e-12
EXTENT_CLAMP = 1e-6


class CTCInfeasibleError(ValueError):
    """The label cannot be emitted in the available number of frames."""


@dataclass(frozen=True)
class LossWeights:
    lambda_obj: float = 0.01
    lambda_reg: float = 1.0
    lambda_theta: float = 20.0

    def __post_init__(self):
        if min(self.lambda_obj, self.lambda_reg, self.lambda_theta) < 0:
            raise ValueError("loss weights must be non-negative")


def dice_loss(pred, gt, eps: float = DICE_EPS) -> Tuple[float, np.ndarray]:
    """``1 - (2 sum(p g) + eps) / (sum p + sum g + eps)``."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    inter = float(np.sum(pred * gt))
    denom = float(np.sum(pred) + np.sum(gt)) + eps
    num = 2.0 * inter + eps
    loss = 1.0 - num / denom
    grad = -(2.0 * gt * denom - num) / denom**2
    return loss, grad


def dice_loss_levels(preds: Sequence, gts: Sequence, joint: bool = True, eps: float = DICE_EPS):
    """Dice over several pyramid levels.

    ``joint=True`` scores the concatenation of all levels as one map;
    otherwise per-level losses are averaged. Returns ``(loss, [grad per level])``.
    """
    if len(preds) != len(gts):
        raise ValueError("need one gt map per predicted level")
    preds = [np.asarray(p, dtype=np.float64) for p in preds]
    gts = [np.asarray(g, dtype=np.float64) for g in gts]
    if joint:
        flat_p = np.concatenate([p.ravel() for p in preds])
        flat_g = np.concatenate([g.ravel() for g in gts])
        for p, g in zip(preds, gts):
            if p.shape != g.shape:
                raise ValueError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
        loss, g_flat = dice_loss(flat_p, flat_g, eps)
        grads, start = [], 0
        for p in preds:
            grads.append(g_flat[start : start + p.size].reshape(p.shape))
            start += p.size
        return loss, grads
    results = [dice_loss(p, g, eps) for p, g in zip(preds, gts)]
    n = len(results)
    return sum(r[0] for r in results) / n, [r[1] / n for r in results]


def iou_ltrb_loss(pred, gt, lambda_theta: float = 20.0) -> Tuple[float, np.ndarray]:
    """Mean over locations of ``-ln IoU(ltrb) + lambda_theta * |theta_gt - theta_pred|``.

    ``pred`` and ``gt`` are ``(N, 5)`` arrays of ``(l, t, r, b, theta)`` at
    positive locations.
    """
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    gt = np.atleast_2d(np.asarray(gt, dtype=np.float64))
    if pred.shape != gt.shape or pred.shape[1] != 5:
        raise ValueError(f"expected matching (N, 5) arrays, got {pred.shape} and {gt.shape}")
    n = pred.shape[0]
    if n == 0:
        return 0.0, np.zeros_like(pred)

    raw = pred[:, :4]
    live = raw > EXTENT_CLAMP
    p = np.where(live, raw, EXTENT_CLAMP)
    l, t, r, b = p.T
    gl, gtop, gr, gb = gt[:, :4].T

    area_p = (l + r) * (t + b)
    area_g = (gl + gr) * (gtop + gb)
    iw = np.minimum(l, gl) + np.minimum(r, gr)
    ih = np.minimum(t, gtop) + np.minimum(b, gb)
    inter = iw * ih
    union = area_p + area_g - inter
    dtheta = gt[:, 4] - pred[:, 4]
    per = -np.log(inter) + np.log(union) + lambda_theta * np.abs(dtheta)

    # d inter / d pred: the min picks pred only where pred < gt
    d_inter = np.stack(
        [ih * (l < gl), iw * (t < gtop), ih * (r < gr), iw * (b < gb)], axis=1
    )
    d_area = np.stack([t + b, l + r, t + b, l + r], axis=1)
    g4 = -d_inter / inter[:, None] + (d_area - d_inter) / union[:, None]
    grad = np.zeros_like(pred)
    grad[:, :4] = np.where(live, g4, 0.0)
    grad[:, 4] = -lambda_theta * np.sign(dtheta)
    return float(per.mean()), grad / n


def smooth_l1(v, vstar) -> Tuple[float, np.ndarray]:
    """Smooth-L1 summed over the 5 terms, averaged over rows (the positives).

    Gradient is with respect to the prediction ``v``.
    """
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    vstar = np.atleast_2d(np.asarray(vstar, dtype=np.float64))
    if v.shape != vstar.shape:
        raise ValueError(f"shape mismatch: {v.shape} vs {vstar.shape}")
    n = v.shape[0]
    if n == 0:
        return 0.0, np.zeros_like(v)
    d = v - vstar
    ad = np.abs(d)
    small = ad < 1.0
    per = np.where(small, 0.5 * d * d, ad - 0.5)
    grad = np.where(small, d, np.sign(d))
    return float(per.sum() / n), grad / n


def cross_entropy(c, labels) -> Tuple[float, np.ndarray]:
    """Mean ``-ln c[true]`` over a batch of class-probability rows.

    ``c`` is ``(N, K)`` probabilities; ``labels`` is ``(N,)`` true class
    indices (or one-hot ``(N, K)``).
    """
    c = np.atleast_2d(np.asarray(c, dtype=np.float64))
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = labels.argmax(axis=1)
    labels = np.atleast_1d(labels).astype(int)
    n = c.shape[0]
    if labels.shape != (n,):
        raise ValueError("need one label per row")
    if n == 0:
        return 0.0, np.zeros_like(c)
    rows = np.arange(n)
    p = c[rows, labels]
    live = p > LOG_CLAMP
    pc = np.where(live, p, LOG_CLAMP)
    grad = np.zeros_like(c)
    grad[rows, labels] = np.where(live, -1.0 / pc, 0.0) / n
    return float(-np.log(pc).mean()), grad


def encode_label(transcript: str, alphabet: str) -> list:
    """Character indices of ``transcript``; column 0 is reserved for blank."""
    idx = []
    for ch in transcript:
        k = alphabet.find(ch)
        if k < 0:
            raise ValueError(f"character {ch!r} not in alphabet")
        idx.append(k + 1)
    return idx


def ctc_min_frames(label: Sequence[int]) -> int:
    repeats = sum(1 for a, b in zip(label, label[1:]) if a == b)
    return len(label) + repeats


def _logsumexp3(a, b, c):
    m = np.maximum(np.maximum(a, b), c)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.exp(a - safe) + np.exp(b - safe) + np.exp(c - safe))


def _shift(x, k):
    """Shift right by ``k`` (left if negative), filling with -inf."""
    out = np.full_like(x, -np.inf)
    if k > 0:
        out[k:] = x[:-k]
    else:
        out[:k] = x[-k:]
    return out


def _ctc_core(probs: np.ndarray, label: Sequence[int], blank: int = 0):
    """Forward-backward in log space. Returns ``(nll, grad)`` w.r.t. the probabilities."""
    T, C = probs.shape
    if T == 0:
        raise ValueError("probability sequence has no timesteps")
    label = list(label)
    if T < ctc_min_frames(label):
        raise CTCInfeasibleError(
            f"label of length {len(label)} needs {ctc_min_frames(label)} frames, got {T}"
        )
    ext = [blank]
    for k in label:
        ext += [k, blank]
    ext = np.asarray(ext)
    S = len(ext)
    # skip transition s-2 -> s allowed onto non-blank symbols that differ from s-2
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    with np.errstate(divide="ignore"):
        logy = np.log(probs[:, ext])  # (T, S)
    ninf = -np.inf

    # pre-emission forward mass (excludes y_t) and full forward
    pre = np.full((T, S), ninf)
    alpha = np.full((T, S), ninf)
    pre[0, 0] = 0.0
    if S > 1:
        pre[0, 1] = 0.0
    alpha[0] = pre[0] + logy[0]
    for t in range(1, T):
        a = alpha[t - 1]
        a1 = _shift(a, 1)
        a2 = np.where(skip, _shift(a, 2), ninf)
        pre[t] = _logsumexp3(a, a1, a2)
        alpha[t] = pre[t] + logy[t]

    # post-emission backward mass (excludes y_t)
    skip_next = np.zeros(S, dtype=bool)
    skip_next[:-2] = skip[2:]
    beta = np.full((T, S), ninf)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nb = beta[t + 1] + logy[t + 1]
        b1 = _shift(nb, -1)
        b2 = np.where(skip_next, _shift(nb, -2), ninf)
        beta[t] = _logsumexp3(nb, b1, b2)

    tail = alpha[T - 1, S - 1] if S == 1 else np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    if not np.isfinite(tail):
        raise CTCInfeasibleError("label has zero probability under the given sequence")
    log_p = float(tail)

    # dp/dy_t(k) = sum_{s: ext[s]=k} pre_t(s) * beta_t(s)
    occ = np.exp(pre + beta - log_p)  # (T, S), already divided by p
    grad = np.zeros_like(probs)
    for s in range(S):
        grad[:, ext[s]] -= occ[:, s]
    return -log_p, grad


def ctc_nll(seq, label, alphabet: str = None, blank: int = 0) -> Tuple[float, np.ndarray]:
    """Negative log-likelihood of ``label`` under per-frame probabilities ``seq``.

    ``seq`` is ``(T, |S|+1)`` with the blank in column ``blank``. ``label`` is
    either a list of column indices or, when ``alphabet`` is given, a string.
    Raises :class:`CTCInfeasibleError` when T is too short for the label.
    """
    probs = np.asarray(seq, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError(f"expected (T, C) probabilities, got shape {probs.shape}")
    if np.any(probs < 0) or np.any(probs > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    if not np.allclose(probs.sum(axis=1), 1.0, rtol=0, atol=1e-6):
        raise ValueError("each probability row must sum to 1")
    if isinstance(label, str):
        if alphabet is None:
            raise ValueError("string labels need an alphabet")
        label = encode_label(label, alphabet)
    if any(k == blank or not 0 <= k < probs.shape[1] for k in label):
        raise ValueError("label indices must be non-blank columns of seq")
    return _ctc_core(probs, label, blank)


def ctc_nll_batch(seqs, labels, alphabet: str = None, blank: int = 0):
    """Average CTC NLL over the positives; returns ``(loss, [grad per sequence])``."""
    if len(seqs) != len(labels):
        raise ValueError("need one label per sequence")
    if not seqs:
        return 0.0, []
    n = len(seqs)
    total, grads = 0.0, []
    for s, lab in zip(seqs, labels):
        v, g = ctc_nll(s, lab, alphabet, blank)
        total += v
        grads.append(g / n)
    return total / n, grads


def appn_total(obj_loss: float, reg_loss: float, weights: LossWeights = LossWeights()) -> float:
    return weights.lambda_obj * obj_loss + weights.lambda_reg * reg_loss


def total_loss(appn: float, fcls: float, freg: float, frec: float) -> float:
    return appn + fcls + freg + frec
