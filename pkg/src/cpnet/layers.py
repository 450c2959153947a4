"""Parameterized layer wrappers over the raw tensor ops.

Each layer owns named Parameters and exposes ``__call__``; weight
initialization draws from the documented deterministic generator so a
(seed, name) pair fully determines every initial value.  Conv weights are
uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero, BN scale 1 and
shift 0.
"""

from __future__ import annotations

import numpy as np

from . import rng as R
from . import tensor as T


def _name_tag(name: str) -> int:
    """Stable 64-bit tag for a parameter name (FNV-1a over UTF-8 bytes)."""
    h = 0xCBF29CE484222325
    for byte in name.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def uniform_init(seed: int, name: str, shape, fan_in: int, dtype: str) -> T.Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    u = R.bulk_uniform(R.derive(seed, _name_tag(name)), shape)
    return T.Tensor(((u * 2.0 - 1.0) * bound).astype(T._DTYPES[dtype]))


class Conv2d:
    def __init__(
        self,
        name: str,
        cin: int,
        cout: int,
        kh: int,
        kw: int | None = None,
        stride=1,
        padding=0,
        dilation=1,
        groups: int = 1,
        bias: bool = True,
        seed: int = 0,
        dtype: str = "float32",
    ):
        kw = kh if kw is None else kw
        self.stride, self.padding, self.dilation, self.groups = stride, padding, dilation, groups
        fan_in = (cin // groups) * kh * kw
        self.weight = T.Parameter(
            name + ".weight",
            uniform_init(seed, name + ".weight", (cout, cin // groups, kh, kw), fan_in, dtype),
        )
        self.bias = (
            T.Parameter(name + ".bias", T.zeros((cout,), dtype), decay=False)
            if bias
            else None
        )

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return T.conv2d(
            x,
            self.weight,
            self.bias,
            stride=self.stride,
            padding=self.padding,
            dilation=self.dilation,
            groups=self.groups,
        )

    def parameters(self) -> list[T.Parameter]:
        return [self.weight] if self.bias is None else [self.weight, self.bias]


class BatchNorm2d:
    def __init__(self, name: str, channels: int, dtype: str = "float32"):
        self.gamma = T.Parameter(name + ".gamma", T.full((channels,), 1.0, dtype), decay=False)
        self.beta = T.Parameter(name + ".beta", T.zeros((channels,), dtype), decay=False)
        self.state = T.BatchNormState(channels, dtype)
        self.state_name = name + ".running"

    def __call__(self, x: T.Tensor, mode: str) -> T.Tensor:
        return T.batch_norm(x, self.gamma, self.beta, self.state, mode=mode)

    def parameters(self) -> list[T.Parameter]:
        return [self.gamma, self.beta]


class ConvBnRelu:
    """conv -> BN -> ReLU, the backbone's stage block."""

    def __init__(self, name, cin, cout, k, stride=1, dilation=1, seed=0, dtype="float32"):
        pad = dilation * (k - 1) // 2
        self.conv = Conv2d(
            name + ".conv", cin, cout, k,
            stride=stride, padding=pad, dilation=dilation, bias=False,
            seed=seed, dtype=dtype,
        )
        self.bn = BatchNorm2d(name + ".bn", cout, dtype)

    def __call__(self, x, mode):
        return T.relu(self.bn(self.conv(x), mode))

    def parameters(self):
        return self.conv.parameters() + self.bn.parameters()
