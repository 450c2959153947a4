"""Separable spatial aggregation and the prior-map attention layer.

The aggregation module condenses local spatial evidence with two
asymmetric fully separable convolutions (k x 1 then 1 x k, each split
into depthwise + pointwise).  A 1x1 head on the aggregated features
predicts an N x N prior map P (N = H*W) whose row j scores, for every
pixel i, whether i belongs to pixel j's class.  P and its complement
then gather class-consistent and class-inconsistent context:

    Y    = P (1/N-free) matmul X_r      same-class summary per pixel
    Ybar = (1 - P) matmul X_r           different-class summary

and the layer output is concat(X, Y, Ybar) on the channel axis.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .layers import BatchNorm2d, Conv2d
from .tensor import ShapeError


class FullySeparableConv:
    """Depthwise k x 1 (or 1 x k) followed by a 1x1 pointwise projection.

    orientation "vertical" slides the k-tap window along the height axis;
    "horizontal" along the width axis.  Same-padding keeps the spatial
    size; no biases (a BN always follows in this codebase).
    """

    def __init__(self, name: str, cin: int, cout: int, k: int,
                 orientation: str, seed: int = 0, dtype: str = "float32"):
        if k % 2 == 0:
            raise ShapeError(f"separable kernel size must be odd, got {k}")
        if orientation not in ("vertical", "horizontal"):
            raise ValueError(f"unknown orientation {orientation!r}")
        kh, kw = (k, 1) if orientation == "vertical" else (1, k)
        pad = ((k - 1) // 2, 0) if orientation == "vertical" else (0, (k - 1) // 2)
        self.depthwise = Conv2d(
            name + ".dw", cin, cin, kh, kw,
            padding=pad, groups=cin, bias=False, seed=seed, dtype=dtype,
        )
        self.pointwise = Conv2d(
            name + ".pw", cin, cout, 1, 1, bias=False, seed=seed, dtype=dtype,
        )
        self.k = k
        self.orientation = orientation

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return self.pointwise(self.depthwise(x))

    def parameters(self):
        return self.depthwise.parameters() + self.pointwise.parameters()


class AggregationModule:
    """FSConv(k x 1) -> BN -> ReLU -> FSConv(1 x k) -> BN -> ReLU."""

    def __init__(self, name: str, cin: int, cout: int, k: int,
                 seed: int = 0, dtype: str = "float32"):
        self.fs1 = FullySeparableConv(name + ".fs1", cin, cout, k, "vertical", seed, dtype)
        self.bn1 = BatchNorm2d(name + ".bn1", cout, dtype)
        self.fs2 = FullySeparableConv(name + ".fs2", cout, cout, k, "horizontal", seed, dtype)
        self.bn2 = BatchNorm2d(name + ".bn2", cout, dtype)
        self.k = k
        self.cin, self.cout = cin, cout

    def __call__(self, x: T.Tensor, mode: str) -> T.Tensor:
        h = T.relu(self.bn1(self.fs1(x), mode))
        return T.relu(self.bn2(self.fs2(h), mode))

    def parameters(self):
        return (
            self.fs1.parameters() + self.bn1.parameters()
            + self.fs2.parameters() + self.bn2.parameters()
        )

    def bn_layers(self):
        return [self.bn1, self.bn2]


class ContextPriorLayer:
    """Aggregation, prior-map head, and intra/inter context gathering.

    ``n`` is fixed at construction: the head's 1x1 convolution has n output
    channels, so the layer only accepts inputs with H*W == n.
    """

    def __init__(self, name: str, c0: int, c1: int, n: int, k: int = 11,
                 seed: int = 0, dtype: str = "float32"):
        self.aggregation = AggregationModule(name + ".agg", c0, c1, k, seed, dtype)
        # head bias is omitted: BN's shift plays that role
        self.prior_conv = Conv2d(name + ".prior", c1, n, 1, 1, bias=False,
                                 seed=seed, dtype=dtype)
        self.prior_bn = BatchNorm2d(name + ".prior_bn", n, dtype)
        self.c0, self.c1, self.n = c0, c1, n

    def prior_head(self, x_agg: T.Tensor, mode: str) -> T.Tensor:
        b, _, h, w = x_agg.shape
        if h * w != self.n:
            raise ShapeError(
                f"prior head is configured for N={self.n} but input is "
                f"{h}x{w} (N={h * w})"
            )
        logits = self.prior_bn(self.prior_conv(x_agg), mode)
        p = T.sigmoid(logits)  # (B, N, H, W); channel = key pixel index
        p = T.reshape(p, (b, self.n, self.n))
        # row index must be the query pixel's spatial position
        return T.transpose(p, (0, 2, 1))

    def __call__(self, x: T.Tensor, mode: str) -> tuple[T.Tensor, T.Tensor]:
        b, c0, h, w = x.shape
        if c0 != self.c0:
            raise ShapeError(f"expected {self.c0} input channels, got {c0}")
        xa = self.aggregation(x, mode)
        p = self.prior_head(xa, mode)
        xr = T.transpose(T.reshape(xa, (b, self.c1, self.n)), (0, 2, 1))  # (B,N,C1)
        y = T.bmm(p, xr)
        p_inv = T.sub(T.full((b, self.n, self.n), 1.0, p.dtype), p)
        ybar = T.bmm(p_inv, xr)

        def to_map(t):
            return T.reshape(T.transpose(t, (0, 2, 1)), (b, self.c1, h, w))

        out = T.concat([x, to_map(y), to_map(ybar)], axis=1)
        return out, p

    def parameters(self):
        return (
            self.aggregation.parameters()
            + self.prior_conv.parameters()
            + self.prior_bn.parameters()
        )

    def bn_layers(self):
        return self.aggregation.bn_layers() + [self.prior_bn]


def macs_standard_conv(h: int, w: int, k: int, cin: int, cout: int) -> int:
    """Multiply-accumulates of one k x k convolution at unit stride."""
    return h * w * k * k * cin * cout


def macs_spatial_separable(h: int, w: int, k: int, c: int) -> int:
    """k x 1 then 1 x k, both C -> C: the spatial-only factorization."""
    return 2 * h * w * k * c * c


def macs_fully_separable(b: int, h: int, w: int, k: int, c: int, cout: int) -> int:
    """Depthwise k-tap plus pointwise projection, per the module used here."""
    return b * h * w * (k * c + c * cout)
