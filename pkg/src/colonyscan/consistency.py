"""Multi-scale feature consistency loss with analytic gradients.

Three pyramid levels ``p3`` (C x H x W), ``p4`` (C x H/2 x W/2) and
``p5`` (C x H/4 x W/4) are compared on the finest grid after nearest-neighbour
upsampling. Adjacent pairs only: (p3, up(p4)) and (up(p4), up(p5)). All maths
runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

PROB_FLOOR = 1e-12
NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class TriLossWeights:
    alpha: float = 10.0  # MSE
    beta: float = 1.0    # KL
    gamma: float = 1.0   # cosine

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossResult:
    value: float
    grads: tuple[np.ndarray, ...]
    components: dict = field(default_factory=dict)


def as_feature_map(x) -> np.ndarray:
    f = np.asarray(x, dtype=np.float64)
    if f.ndim != 3 or min(f.shape) < 1:
        raise ValueError(f"feature map must be C x H x W, got shape {f.shape}")
    if not np.all(np.isfinite(f)):
        raise ValueError("feature map has non-finite values")
    return f


def upsample_nearest(f, factor: int) -> np.ndarray:
    if factor < 1:
        raise ValueError("factor must be >= 1")
    f = np.asarray(f, dtype=np.float64)
    return f.repeat(factor, axis=1).repeat(factor, axis=2)


def downsum(g, factor: int) -> np.ndarray:
    """Adjoint of :func:`upsample_nearest`: sums each factor x factor block."""
    c, h, w = g.shape
    if h % factor or w % factor:
        raise ValueError(f"shape {g.shape} not divisible by {factor}")
    return g.reshape(c, h // factor, factor, w // factor, factor).sum(axis=(2, 4))


def _check_same(*maps):
    shapes = {m.shape for m in maps}
    if len(shapes) != 1:
        raise ValueError(f"feature maps must share a shape, got {sorted(shapes)}")


def loss_mse(p3, p4u, p5u) -> LossResult:
    p3, p4u, p5u = (as_feature_map(m) for m in (p3, p4u, p5u))
    _check_same(p3, p4u, p5u)
    hw = p3.shape[1] * p3.shape[2]
    d1 = p3 - p4u
    d2 = p4u - p5u
    value = (np.sum(d1 * d1) + np.sum(d2 * d2)) / hw
    g3 = 2.0 * d1 / hw
    g5 = -2.0 * d2 / hw
    g4 = -g3 - g5
    return LossResult(float(value), (g3, g4, g5))


def _softmax(x):
    z = np.exp(x - x.max(axis=0, keepdims=True))
    return z / z.sum(axis=0, keepdims=True)


def _kl_pair(a, b):
    """KL(softmax(a) || softmax(b)) per location, with gradients w.r.t. both logits."""
    p = _softmax(a)
    q = _softmax(b)
    lp = np.log(np.maximum(p, PROB_FLOOR))
    lq = np.log(np.maximum(q, PROB_FLOOR))
    kl = np.sum(p * (lp - lq), axis=0)
    # d/dp of p*log(max(p, eps)) is log(max(p, eps)) + [p > eps]
    gp = lp - lq + (p > PROB_FLOOR)
    gq = np.where(q > PROB_FLOOR, -p / q, 0.0)
    ga = p * (gp - np.sum(p * gp, axis=0, keepdims=True))
    gb = q * (gq - np.sum(q * gq, axis=0, keepdims=True))
    return kl, ga, gb


def loss_kl(p3, p4u, p5u) -> LossResult:
    p3, p4u, p5u = (as_feature_map(m) for m in (p3, p4u, p5u))
    _check_same(p3, p4u, p5u)
    if p3.shape[0] < 2:
        raise ValueError("KL term needs at least two channels")
    hw = p3.shape[1] * p3.shape[2]
    kl1, ga1, gb1 = _kl_pair(p3, p4u)
    kl2, ga2, gb2 = _kl_pair(p4u, p5u)
    value = (kl1.sum() + kl2.sum()) / hw
    return LossResult(float(value), (ga1 / hw, (gb1 + ga2) / hw, gb2 / hw))


def _cos_pair(u, v):
    """Cosine similarity over channels per location, and its gradients.

    Two dead vectors count as identical (similarity 1); one dead vector
    against a live one counts as orthogonal (similarity 0). Both cases
    are locally constant, so their gradients are zero.
    """
    su = np.sum(u * u, axis=0)
    sv = np.sum(v * v, axis=0)
    nu = np.sqrt(su)
    nv = np.sqrt(sv)
    dead_u = nu < NORM_FLOOR
    dead_v = nv < NORM_FLOOR
    live = ~(dead_u | dead_v)
    safe_u = np.where(live, nu, 1.0)
    safe_v = np.where(live, nv, 1.0)
    dot = np.sum(u * v, axis=0)
    # sqrt(su * sv) rather than nu * nv: it equals dot exactly when u == v
    sim = np.clip(dot / np.where(live, np.sqrt(su * sv), 1.0), -1.0, 1.0)
    cos = np.where(live, sim, np.where(dead_u & dead_v, 1.0, 0.0))
    gu = np.where(live, v / (safe_u * safe_v) - cos * u / safe_u**2, 0.0)
    gv = np.where(live, u / (safe_u * safe_v) - cos * v / safe_v**2, 0.0)
    return cos, gu, gv


def loss_cos(p3, p4u, p5u) -> LossResult:
    p3, p4u, p5u = (as_feature_map(m) for m in (p3, p4u, p5u))
    _check_same(p3, p4u, p5u)
    hw = p3.shape[1] * p3.shape[2]
    c1, gu1, gv1 = _cos_pair(p3, p4u)
    c2, gu2, gv2 = _cos_pair(p4u, p5u)
    value = (np.sum(1.0 - c1) + np.sum(1.0 - c2)) / hw
    return LossResult(float(value), (-gu1 / hw, -(gv1 + gu2) / hw, -gv2 / hw))


def check_pyramid(p3, p4, p5) -> None:
    c, h, w = p3.shape
    if h % 4 or w % 4:
        raise ValueError(f"p3 spatial size {h}x{w} must be divisible by 4")
    if p4.shape != (c, h // 2, w // 2) or p5.shape != (c, h // 4, w // 4):
        raise ValueError(f"incompatible pyramid shapes {p3.shape}, {p4.shape}, {p5.shape}")


def consistency_loss(p3, p4, p5, w: TriLossWeights = TriLossWeights()) -> LossResult:
    """Weighted tri-loss; gradients are returned at each level's own resolution."""
    p3, p4, p5 = (as_feature_map(m) for m in (p3, p4, p5))
    check_pyramid(p3, p4, p5)
    p4u = upsample_nearest(p4, 2)
    p5u = upsample_nearest(p5, 4)
    parts = {}
    g3 = np.zeros_like(p3)
    g4u = np.zeros_like(p3)
    g5u = np.zeros_like(p3)
    value = 0.0
    terms = (("mse", loss_mse, w.alpha), ("kl", loss_kl, w.beta), ("cos", loss_cos, w.gamma))
    for name, fn, weight in terms:
        if name == "kl" and p3.shape[0] < 2:
            if weight:
                raise ValueError("KL term needs at least two channels")
            parts[name] = 0.0
            continue
        res = fn(p3, p4u, p5u)
        parts[name] = res.value
        if weight:
            value += weight * res.value
            g3 += weight * res.grads[0]
            g4u += weight * res.grads[1]
            g5u += weight * res.grads[2]
    return LossResult(float(value), (g3, downsum(g4u, 2), downsum(g5u, 4)), parts)


def grad_check(fn: Callable[..., LossResult], inputs: Sequence[np.ndarray],
               step: float = 1e-4, max_coords: int | None = None, seed=0) -> float:
    """Largest relative disagreement between analytic and central-difference gradients.

    With ``max_coords`` set, each input contributes at most that many randomly
    chosen coordinates (never fewer than 200 when the input is that large).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    base = fn(*inputs)
    if not np.isfinite(base.value):
        raise ValueError("loss is not finite")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k, x in enumerate(inputs):
        flat = x.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max(max_coords, 200):
            coords = rng.choice(flat.size, size=max(max_coords, 200), replace=False)
        analytic = base.grads[k].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            fp = fn(*inputs).value
            flat[i] = orig - step
            fm = fn(*inputs).value
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise ValueError("loss is not finite")
            numeric = (fp - fm) / (2 * step)
            denom = max(abs(analytic[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst


def random_pyramid(rng, channels: int = 4, size: int = 8):
    """Random p3/p4/p5 triple with p3 of spatial size ``size``."""
    return (rng.standard_normal((channels, size, size)),
            rng.standard_normal((channels, size // 2, size // 2)),
            rng.standard_normal((channels, size // 4, size // 4)))


def channel_mean_heatmap(f) -> np.ndarray:
    """Channel-averaged activation, min-max scaled to [0, 1] (constant -> zeros)."""
    m = np.asarray(f, dtype=np.float64).mean(axis=0)
    lo, hi = m.min(), m.max()
    if hi - lo <= 0:
        return np.zeros_like(m)
    return (m - lo) / (hi - lo)
