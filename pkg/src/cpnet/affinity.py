"""Ideal affinity targets and the loss that supervises a predicted prior map.

The affinity target for an H x W label grid is the N x N binary matrix
(N = H*W, flattened row-major) whose (j, i) entry is 1 exactly when pixels
j and i carry the same class and neither is ignored.  The loss on a
predicted prior map P combines a per-entry binary cross-entropy with
row-wise precision / recall / specificity log terms.

Ignored pixels contribute nothing anywhere: their rows and columns are
excluded from every sum and from the normalizing counts.

Both loss terms are written as fused tape operations with hand-derived
backward rules (validated against finite differences in the test suite);
composing them from primitive ops would spend several times the memory on
N x N intermediates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .labelmap import LabelMap
from .tensor import NumericError, ShapeError, Tensor, one_hot, record

EPS = 1e-7


def downsample_labels(gt: LabelMap, out_h: int, out_w: int) -> LabelMap:
    """Nearest-neighbor label reduction anchored at the top-left of each cell."""
    h, w = gt.height, gt.width
    if out_h < 1 or out_w < 1 or h % out_h or w % out_w:
        raise ShapeError(
            f"cannot downsample {h}x{w} labels to {out_h}x{out_w}: "
            "output must divide input"
        )
    sh, sw = h // out_h, w // out_w
    out = gt.labels[::sh, ::sw]
    return LabelMap(np.ascontiguousarray(out), gt.ignore_index)


@dataclass
class IdealAffinityMap:
    """Binary same-class pair matrix plus the validity mask of its pixels."""

    values: np.ndarray  # (N, N) float64 in {0, 1}
    valid: np.ndarray  # (N,) bool

    @property
    def n(self) -> int:
        return self.valid.shape[0]

    def pair_mask(self) -> np.ndarray:
        return self.valid[:, None] & self.valid[None, :]


def ideal_affinity_map(gt_small: LabelMap, num_classes: int) -> IdealAffinityMap:
    gt_small.validate_classes(num_classes)
    lhat = one_hot(gt_small, num_classes, dtype="float64").data
    lhat = lhat.reshape(-1, num_classes)
    values = lhat @ lhat.T  # exact: 0/1 entries, integer-valued sums
    return IdealAffinityMap(values, gt_small.valid.reshape(-1).copy())


def affinity_image(a: IdealAffinityMap) -> np.ndarray:
    """8-bit rendering (0/255) for PGM export."""
    return (a.values * 255).astype(np.uint8)


def _stack(p: Tensor, maps) -> tuple[np.ndarray, np.ndarray, np.ndarray, list]:
    """Normalize (p, maps) to batched form (B,N,N) / stacked targets."""
    if not isinstance(p, Tensor):
        raise TypeError("prior map must be a Tensor")
    if isinstance(maps, IdealAffinityMap):
        maps = [maps]
    else:
        maps = list(maps)
    pd = p.data
    if pd.ndim == 2:
        pd = pd[None]
    if pd.ndim != 3 or pd.shape[1] != pd.shape[2]:
        raise ShapeError(f"prior map must be NxN or BxNxN, got {p.shape}")
    if len(maps) != pd.shape[0]:
        raise ShapeError(f"{pd.shape[0]} prior maps but {len(maps)} targets")
    n = pd.shape[1]
    for a in maps:
        if a.n != n:
            raise ShapeError(f"target is {a.n}x{a.n} but prior map is {n}x{n}")
    a = np.stack([m.values for m in maps])
    valid = np.stack([m.valid for m in maps])
    return pd, a, valid, maps


def unary_affinity_loss(p: Tensor, maps, eps: float = EPS) -> Tensor:
    """Mean binary cross-entropy over valid pairs, averaged over the batch.

    Probabilities are clamped to [eps, 1-eps] before the logs; the clamp
    gates the gradient (zero outside the open interval), so targets fed
    back as predictions produce a loss within ~eps of zero and no blow-up.
    """
    pd, a, valid, _ = _stack(p, maps)
    mask = valid[:, :, None] & valid[:, None, :]
    counts = mask.sum(axis=(1, 2))
    if (counts == 0).any():
        raise NumericError("unary affinity loss: an image has no valid pixels")
    pc = np.clip(pd, eps, 1.0 - eps)
    bce = a * np.log(pc) + (1.0 - a) * np.log1p(-pc)
    b = pd.shape[0]
    per_image = -(bce * mask).sum(axis=(1, 2)) / counts
    out = Tensor(np.asarray(per_image.mean(), dtype=pd.dtype))

    weight = mask / (b * counts)[:, None, None]
    interior = (pd > eps) & (pd < 1.0 - eps)

    def bwd(g):
        dp = -(a / pc - (1.0 - a) / (1.0 - pc)) * weight * interior
        dp = (dp * g).astype(pd.dtype)
        return (dp if p.data.ndim == 3 else dp[0],)

    return record((p,), out, bwd)


@dataclass
class GlobalTerms:
    """Row-aggregated log-ratio terms, normalized like the loss itself."""

    precision: float
    recall: float
    specificity: float


def global_affinity_loss(p: Tensor, maps, eps: float = EPS) -> tuple[Tensor, GlobalTerms]:
    """Row-wise precision / recall / specificity loss on the prior map.

    For each valid row j (sums over valid columns i of one image):

        T^p_j = log( sum(a*p) / sum(p) )
        T^r_j = log( sum(a*p) / sum(a) )
        T^s_j = log( sum((1-a)*(1-p)) / sum(1-a) )

    each ratio clamped to [eps, 1].  A term whose denominator is zero is
    skipped for that row (a single-class image has no specificity term).
    The loss is -(mean over batch of per-image means over valid rows) of
    the three terms' sum.
    """
    pd, a, valid, _ = _stack(p, maps)
    nv = valid.sum(axis=1)
    if (nv == 0).any():
        raise NumericError("global affinity loss: an image has no valid rows")
    b, n = pd.shape[0], pd.shape[1]
    m_col = valid[:, None, :]  # broadcast over rows

    s_ap = (a * pd * m_col).sum(axis=2)  # (B, N)
    s_p = (pd * m_col).sum(axis=2)
    s_a = (a * m_col).sum(axis=2)
    s_in = ((1.0 - a) * (1.0 - pd) * m_col).sum(axis=2)
    s_na = ((1.0 - a) * m_col).sum(axis=2)

    def ratio(num, den):
        r = np.divide(num, den, out=np.ones_like(num), where=den > 0)
        return np.clip(r, eps, 1.0)

    rp, rr, rs = ratio(s_ap, s_p), ratio(s_ap, s_a), ratio(s_in, s_na)
    # gate: row valid, denominator nonzero, ratio strictly inside the clamp
    gp = valid & (s_p > 0) & (rp > eps) & (rp < 1.0)
    gr = valid & (s_a > 0) & (rr > eps) & (rr < 1.0)
    gs = valid & (s_na > 0) & (rs > eps) & (rs < 1.0)

    w = 1.0 / (b * nv.astype(np.float64))  # (B,)

    def row_mean(r, den_ok):
        return (np.log(r) * (valid & den_ok) * w[:, None]).sum()

    tp, tr, ts = row_mean(rp, s_p > 0), row_mean(rr, s_a > 0), row_mean(rs, s_na > 0)
    terms = GlobalTerms(float(tp), float(tr), float(ts))
    out = Tensor(np.asarray(-(tp + tr + ts), dtype=pd.dtype))

    def bwd(g):
        with np.errstate(divide="ignore"):
            inv_sap = np.where(s_ap > 0, 1.0 / s_ap, 0.0)
            inv_sp = np.where(s_p > 0, 1.0 / s_p, 0.0)
            inv_sin = np.where(s_in > 0, 1.0 / s_in, 0.0)
        # bracket[b,j,i] = d(T^p + T^r + T^s)_j / dp_ji  (before masking)
        gpr = gp.astype(np.float64) + gr  # both terms share the d(sum a*p) part
        bracket = (
            a * (gpr * inv_sap)[:, :, None]
            - (gp * inv_sp)[:, :, None]
            - (1.0 - a) * (gs * inv_sin)[:, :, None]
        )
        dp = -bracket * m_col * (valid * w[:, None])[:, :, None]
        dp = (dp * g).astype(pd.dtype)
        return (dp if p.data.ndim == 3 else dp[0],)

    return record((p,), out, bwd), terms


@dataclass
class AffinityLossTerms:
    unary: Tensor
    global_term: Tensor
    precision_sum: float
    recall_sum: float
    specificity_sum: float
    total: Tensor
    lambda_u: float
    lambda_g: float


def affinity_loss(p: Tensor, maps, lambda_u: float = 1.0, lambda_g: float = 1.0) -> AffinityLossTerms:
    """Weighted sum of the unary and global terms; gradient flows through both."""
    from .tensor import add, scale

    unary = unary_affinity_loss(p, maps)
    glob, gt = global_affinity_loss(p, maps)
    total = add(scale(unary, lambda_u), scale(glob, lambda_g))
    return AffinityLossTerms(
        unary=unary,
        global_term=glob,
        precision_sum=gt.precision,
        recall_sum=gt.recall,
        specificity_sum=gt.specificity,
        total=total,
        lambda_u=lambda_u,
        lambda_g=lambda_g,
    )
