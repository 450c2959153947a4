"""Minimal dense tensors with a recorded tape and reverse-mode gradients.

Data layout is fixed: row-major ``[batch, channel, height, width]`` for
feature maps, no implicit broadcasting, cross-correlation semantics for
convolution (no kernel flip).  Operations compute with numpy arrays and,
when a :class:`Graph` is active, append a node carrying a backward rule to
its tape.  The tape is recorded in execution order, which is already a
topological order, so ``Graph.backward`` is a single reverse sweep.

Gradient accumulation contract: ``Graph.backward`` adds into each reachable
:class:`Parameter`'s ``.grad`` exactly once per call; calling it twice
without zeroing doubles the gradients.
"""

from __future__ import annotations

import threading

import numpy as np

from .labelmap import LabelMap

_DTYPES = {
    "float32": np.dtype(np.float32),
    "float64": np.dtype(np.float64),
    "int32": np.dtype(np.int32),
    "uint8": np.dtype(np.uint8),
}
_NP_TO_NAME = {v: k for k, v in _DTYPES.items()}
_FLOAT_NAMES = ("float32", "float64")

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class ShapeError(ValueError):
    """Operand shapes or dtypes are inconsistent with the operation."""


class NumericError(ArithmeticError):
    """A numeric contract was violated (non-finite value, degenerate input)."""


def _canon(data, dtype=None) -> np.ndarray:
    if dtype is not None:
        arr = np.asarray(data, dtype=_DTYPES[dtype])
    else:
        arr = np.asarray(data)
        if arr.dtype not in _NP_TO_NAME:
            if np.issubdtype(arr.dtype, np.floating):
                arr = arr.astype(np.float64)
            elif np.issubdtype(arr.dtype, np.integer) or arr.dtype == np.bool_:
                arr = arr.astype(np.int32)
            else:
                raise ShapeError(f"unsupported dtype {arr.dtype}")
    # ascontiguousarray would promote 0-d scalars to 1-d; keep rank as-is
    return arr if arr.ndim == 0 else np.ascontiguousarray(arr)


class Tensor:
    """Dense row-major array restricted to {float32, float64, int32, uint8}."""

    __slots__ = ("data",)

    def __init__(self, data, dtype: str | None = None):
        self.data = _canon(data, dtype)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> str:
        return _NP_TO_NAME[self.data.dtype]

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def is_float(self) -> bool:
        return self.dtype in _FLOAT_NAMES

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    # Sugar used by loss code; all delegate to module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)


def zeros(shape, dtype="float32") -> Tensor:
    return Tensor(np.zeros(shape, dtype=_DTYPES[dtype]))


def full(shape, value, dtype="float32") -> Tensor:
    return Tensor(np.full(shape, value, dtype=_DTYPES[dtype]))


class Parameter:
    """A named trainable tensor paired with an accumulating gradient."""

    __slots__ = ("name", "value", "grad", "decay")

    def __init__(self, name: str, value, dtype: str | None = None, decay: bool = True):
        self.name = name
        self.value = value if isinstance(value, Tensor) else Tensor(value, dtype)
        if not self.value.is_float():
            raise ShapeError(f"parameter {name} must be float, got {self.value.dtype}")
        self.grad = Tensor(np.zeros_like(self.value.data))
        self.decay = decay  # False exempts from weight decay (BN scale/shift)

    def zero_grad(self) -> None:
        self.grad.data[...] = 0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


_TLS = threading.local()


def _graph_stack() -> list:
    stack = getattr(_TLS, "stack", None)
    if stack is None:
        stack = []
        _TLS.stack = stack
    return stack


def active_graph() -> "Graph | None":
    stack = _graph_stack()
    return stack[-1] if stack else None


class Gradients:
    """Read-only view of the gradients computed by one backward pass."""

    def __init__(self, by_id: dict):
        self._by_id = by_id

    def __contains__(self, t: Tensor) -> bool:
        key = t.value if isinstance(t, Parameter) else t
        return id(key) in self._by_id

    def __getitem__(self, t: Tensor) -> np.ndarray:
        key = t.value if isinstance(t, Parameter) else t
        try:
            return self._by_id[id(key)]
        except KeyError:
            raise KeyError("tensor did not receive a gradient") from None

    def get(self, t, default=None):
        return self[t] if t in self else default


class Graph:
    """Tape of recorded operations; context manager enables recording."""

    def __init__(self):
        self.nodes: list[tuple] = []  # (input tensors, output tensor, backward fn)
        self._params: dict[int, Parameter] = {}

    def __enter__(self) -> "Graph":
        _graph_stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _graph_stack().pop()
        assert popped is self

    def backward(self, loss: Tensor) -> Gradients:
        """Reverse sweep from a scalar loss; accumulates into Parameter.grad."""
        if loss.shape != ():
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
        for inputs, out, bwd in reversed(self.nodes):
            gout = grads.get(id(out))
            if gout is None:
                continue
            for t, gi in zip(inputs, bwd(gout)):
                if gi is None:
                    continue
                if gi.shape != t.data.shape:
                    raise ShapeError(
                        f"backward produced grad shape {gi.shape} for input "
                        f"shape {t.data.shape}"
                    )
                acc = grads.get(id(t))
                grads[id(t)] = gi if acc is None else acc + gi
        for tid, p in self._params.items():
            g = grads.get(tid)
            if g is not None:
                p.grad.data += g
        return Gradients(grads)


def _unwrap(x) -> Tensor:
    if isinstance(x, Parameter):
        g = active_graph()
        if g is not None:
            g._params[id(x.value)] = x
        return x.value
    if isinstance(x, Tensor):
        return x
    raise TypeError(f"expected Tensor or Parameter, got {type(x).__name__}")


def record(inputs, out: Tensor, bwd) -> Tensor:
    """Append one node to the active tape (no-op when nothing is recording).

    ``bwd(grad_out) -> tuple`` must return one gradient array (or None) per
    input, in order.  Exposed so other modules can define fused operations.
    """
    g = active_graph()
    if g is not None:
        g.nodes.append((tuple(inputs), out, bwd))
    return out


def _float_binary(a: Tensor, b: Tensor, opname: str):
    if not (a.is_float() and b.is_float()):
        raise ShapeError(f"{opname} requires float tensors")
    if a.shape != b.shape:
        raise ShapeError(f"{opname}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# Elementwise and reduction ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _unwrap(a), _unwrap(b)
    _float_binary(a, b, "add")
    out = Tensor(a.data + b.data)
    return record((a, b), out, lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _unwrap(a), _unwrap(b)
    _float_binary(a, b, "sub")
    out = Tensor(a.data - b.data)
    return record((a, b), out, lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _unwrap(a), _unwrap(b)
    _float_binary(a, b, "mul")
    ad, bd = a.data, b.data
    out = Tensor(ad * bd)
    return record((a, b), out, lambda g: (g * bd, g * ad))


def div(a, b) -> Tensor:
    a, b = _unwrap(a), _unwrap(b)
    _float_binary(a, b, "div")
    ad, bd = a.data, b.data
    out = Tensor(ad / bd)
    od = out.data
    return record((a, b), out, lambda g: (g / bd, -g * od / bd))


def neg(a) -> Tensor:
    a = _unwrap(a)
    out = Tensor(-a.data)
    return record((a,), out, lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    a = _unwrap(a)
    c = float(c)
    out = Tensor(a.data * c)
    return record((a,), out, lambda g: (g * c,))


def add_const(a, c: float) -> Tensor:
    a = _unwrap(a)
    out = Tensor(a.data + float(c))
    return record((a,), out, lambda g: (g,))


def log(a) -> Tensor:
    a = _unwrap(a)
    ad = a.data
    if (ad <= 0).any():
        raise NumericError("log requires strictly positive input")
    out = Tensor(np.log(ad))
    return record((a,), out, lambda g: (g / ad,))


def clamp(a, lo: float, hi: float) -> Tensor:
    a = _unwrap(a)
    ad = a.data
    out = Tensor(np.clip(ad, lo, hi))
    mask = (ad > lo) & (ad < hi)
    return record((a,), out, lambda g: (g * mask,))


def sum_all(a) -> Tensor:
    a = _unwrap(a)
    shape = a.shape
    out = Tensor(np.asarray(a.data.sum(), dtype=a.data.dtype))
    return record((a,), out, lambda g: (np.broadcast_to(g, shape),))


def mean_all(a) -> Tensor:
    a = _unwrap(a)
    return scale(sum_all(a), 1.0 / a.size)


def sum_axis(a, axis: int) -> Tensor:
    a = _unwrap(a)
    out = Tensor(a.data.sum(axis=axis))
    shape = a.shape

    def bwd(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape),)

    return record((a,), out, bwd)


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

def relu(a) -> Tensor:
    a = _unwrap(a)
    ad = a.data
    out = Tensor(np.maximum(ad, 0))
    return record((a,), out, lambda g: (g * (ad > 0),))


def sigmoid(a) -> Tensor:
    a = _unwrap(a)
    ad = a.data
    # exp of a non-positive argument only: saturates without overflow
    e = np.exp(-np.abs(ad))
    y = np.where(ad >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(ad.dtype)
    out = Tensor(y)
    yd = out.data
    return record((a,), out, lambda g: (g * yd * (1.0 - yd),))


# ---------------------------------------------------------------------------
# Data movement
# ---------------------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = _unwrap(a)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}: element count differs")
    old = a.shape
    out = Tensor(a.data.reshape(shape))
    return record((a,), out, lambda g: (g.reshape(old),))


def transpose(a, axes) -> Tensor:
    a = _unwrap(a)
    axes = tuple(int(x) for x in axes)
    if sorted(axes) != list(range(a.data.ndim)):
        raise ShapeError(f"invalid permutation {axes} for rank {a.data.ndim}")
    inv = tuple(np.argsort(axes))
    out = Tensor(np.ascontiguousarray(a.data.transpose(axes)))
    return record((a,), out, lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def concat(xs, axis: int) -> Tensor:
    xs = [_unwrap(x) for x in xs]
    if not xs:
        raise ShapeError("concat needs at least one input")
    ndim = xs[0].data.ndim
    for x in xs[1:]:
        if x.data.ndim != ndim:
            raise ShapeError("concat inputs must share rank")
        for ax in range(ndim):
            if ax != axis and x.shape[ax] != xs[0].shape[ax]:
                raise ShapeError(
                    f"concat mismatch on axis {ax}: {x.shape} vs {xs[0].shape}"
                )
    out = Tensor(np.concatenate([x.data for x in xs], axis=axis))
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return record(tuple(xs), out, bwd)


# ---------------------------------------------------------------------------
# Matrix products
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _unwrap(a), _unwrap(b)
    if not (a.is_float() and b.is_float()):
        raise ShapeError("matmul requires float tensors")
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    out = Tensor(ad @ bd)
    return record((a, b), out, lambda g: (g @ bd.T, ad.T @ g))


def bmm(a, b) -> Tensor:
    """Batched matmul: [B,m,k] x [B,k,n] -> [B,m,n]."""
    a, b = _unwrap(a), _unwrap(b)
    if (
        a.data.ndim != 3
        or b.data.ndim != 3
        or a.shape[0] != b.shape[0]
        or a.shape[2] != b.shape[1]
    ):
        raise ShapeError(f"bmm: incompatible shapes {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    out = Tensor(np.matmul(ad, bd))
    return record(
        (a, b),
        out,
        lambda g: (np.matmul(g, bd.transpose(0, 2, 1)), np.matmul(ad.transpose(0, 2, 1), g)),
    )


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------

def conv2d_output_size(size: int, kernel: int, stride: int, pad: int, dilation: int) -> int:
    return (size + 2 * pad - dilation * (kernel - 1) - 1) // stride + 1


_CONV_PLANS: dict[tuple, np.ndarray] = {}


def _conv_gather_indices(c, hp, wp, oh, ow, kh, kw, sh, sw, dh, dw) -> np.ndarray:
    key = (c, hp, wp, oh, ow, kh, kw, sh, sw, dh, dw)
    idx = _CONV_PLANS.get(key)
    if idx is None:
        rows = np.arange(oh)[:, None] * sh + np.arange(kh)[None, :] * dh  # (oh,kh)
        cols = np.arange(ow)[:, None] * sw + np.arange(kw)[None, :] * dw  # (ow,kw)
        idx = (
            (np.arange(c) * hp * wp)[:, None, None, None, None]
            + (rows * wp)[None, :, None, :, None]
            + cols[None, None, :, None, :]
        )  # (c, oh, ow, kh, kw)
        idx = np.ascontiguousarray(idx.reshape(-1))
        if len(_CONV_PLANS) > 256:
            _CONV_PLANS.clear()
        _CONV_PLANS[key] = idx
    return idx


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv2d(x, w, bias=None, stride=1, padding=0, dilation=1, groups: int = 1) -> Tensor:
    """2-D cross-correlation on [B,Cin,H,W] with [Cout,Cin/groups,kh,kw] filters."""
    x, w = _unwrap(x), _unwrap(w)
    b = _unwrap(bias) if bias is not None else None
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    dh, dw = _pair(dilation)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape}, {w.shape}")
    bsz, cin, h, wid = x.shape
    cout, cin_g, kh, kw = w.shape
    if cin % groups or cout % groups:
        raise ShapeError(
            f"channels not divisible by groups: Cin={cin}, Cout={cout}, groups={groups}"
        )
    if cin_g != cin // groups:
        raise ShapeError(
            f"weight expects {cin_g} channels/group but input supplies {cin // groups}"
        )
    oh = conv2d_output_size(h, kh, sh, ph, dh)
    ow = conv2d_output_size(wid, kw, sw, pw, dw)
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"conv2d output would be {oh}x{ow} for input {h}x{wid}, "
            f"kernel {kh}x{kw}, stride ({sh},{sw}), pad ({ph},{pw}), "
            f"dilation ({dh},{dw})"
        )
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"bias shape {b.shape} != ({cout},)")

    hp, wp = h + 2 * ph, wid + 2 * pw
    if ph or pw:
        xp = np.zeros((bsz, cin, hp, wp), dtype=x.data.dtype)
        xp[:, :, ph:ph + h, pw:pw + wid] = x.data
    else:
        xp = x.data
    idx = _conv_gather_indices(cin, hp, wp, oh, ow, kh, kw, sh, sw, dh, dw)

    cg = cin // groups
    og = cout // groups
    k = cg * kh * kw
    # cols: (B, Cin*oh*ow*kh*kw) gathered, arranged to (groups, B*oh*ow, cg*kh*kw)
    cols = xp.reshape(bsz, -1)[:, idx].reshape(bsz, groups, cg, oh, ow, kh, kw)
    cols = np.ascontiguousarray(cols.transpose(1, 0, 3, 4, 2, 5, 6)).reshape(
        groups, bsz * oh * ow, k
    )
    w3 = w.data.reshape(groups, og, k)
    out_g = np.matmul(cols, w3.transpose(0, 2, 1))  # (groups, B*oh*ow, og)
    out = out_g.reshape(groups, bsz, oh, ow, og).transpose(1, 0, 4, 2, 3)
    out = np.ascontiguousarray(out).reshape(bsz, cout, oh, ow)
    if b is not None:
        out = out + b.data[None, :, None, None]
    out_t = Tensor(out)

    def bwd(g):
        gm = g.reshape(bsz, groups, og, oh, ow).transpose(1, 0, 3, 4, 2)
        gm = np.ascontiguousarray(gm).reshape(groups, bsz * oh * ow, og)
        dw3 = np.matmul(gm.transpose(0, 2, 1), cols)  # (groups, og, k)
        dw = dw3.reshape(cout, cg, kh, kw)
        dcols = np.matmul(gm, w3)  # (groups, B*oh*ow, k)
        dcols = dcols.reshape(groups, bsz, oh, ow, cg, kh, kw).transpose(1, 0, 4, 2, 3, 5, 6)
        dcols = np.ascontiguousarray(dcols).reshape(bsz, -1)
        dxp = np.zeros((bsz, cin * hp * wp), dtype=g.dtype)
        for i in range(bsz):
            np.add.at(dxp[i], idx, dcols[i])
        dxp = dxp.reshape(bsz, cin, hp, wp)
        dx = dxp[:, :, ph:ph + h, pw:pw + wid]
        grads = [np.ascontiguousarray(dx), dw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    inputs = (x, w) if b is None else (x, w, b)
    return record(inputs, out_t, bwd)


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------

class BatchNormState:
    """Per-channel running mean/variance used by eval-mode normalization."""

    __slots__ = ("running_mean", "running_var")

    def __init__(self, channels: int, dtype: str = "float32"):
        self.running_mean = np.zeros(channels, dtype=_DTYPES[dtype])
        self.running_var = np.ones(channels, dtype=_DTYPES[dtype])

    @property
    def channels(self) -> int:
        return self.running_mean.shape[0]


def batch_norm(
    x,
    gamma,
    beta,
    state: BatchNormState,
    mode: str = "train",
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Channelwise normalization over (B,H,W); population variance throughout.

    Train mode normalizes by batch statistics and folds them into the
    running estimates as ``running = momentum*running + (1-momentum)*batch``;
    eval mode normalizes by the running estimates.
    """
    x, gamma, beta = _unwrap(x), _unwrap(gamma), _unwrap(beta)
    if x.data.ndim != 4:
        raise ShapeError(f"batch_norm expects [B,C,H,W], got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,) or state.channels != c:
        raise ShapeError(
            f"batch_norm channel mismatch: x has {c}, gamma {gamma.shape}, "
            f"beta {beta.shape}, state {state.channels}"
        )
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown batch_norm mode {mode!r}")
    xd = x.data
    gd = gamma.data[None, :, None, None]

    if mode == "train":
        m = xd.shape[0] * xd.shape[2] * xd.shape[3]
        mean = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        state.running_mean[...] = momentum * state.running_mean + (1 - momentum) * mean
        state.running_var[...] = momentum * state.running_var + (1 - momentum) * var
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (xd - mean[None, :, None, None]) * inv_std[None, :, None, None]
        out = Tensor(gd * xhat + beta.data[None, :, None, None])

        def bwd(g):
            dbeta = g.sum(axis=(0, 2, 3))
            dgamma = (g * xhat).sum(axis=(0, 2, 3))
            gsum = dbeta[None, :, None, None] / m
            gx_sum = dgamma[None, :, None, None] / m
            dx = (gd * inv_std[None, :, None, None]) * (g - gsum - xhat * gx_sum)
            return dx, dgamma, dbeta

        return record((x, gamma, beta), out, bwd)

    inv_std = 1.0 / np.sqrt(state.running_var + eps)
    xhat = (xd - state.running_mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = Tensor(gd * xhat + beta.data[None, :, None, None])

    def bwd_eval(g):
        dbeta = g.sum(axis=(0, 2, 3))
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dx = g * gd * inv_std[None, :, None, None]
        return dx, dgamma, dbeta

    return record((x, gamma, beta), out, bwd_eval)


# ---------------------------------------------------------------------------
# Bilinear upsampling
# ---------------------------------------------------------------------------

_BILINEAR_MATS: dict[tuple, np.ndarray] = {}


def bilinear_matrix(in_size: int, out_size: int, dtype=np.float64) -> np.ndarray:
    """Interpolation matrix W (out x in) under the half-pixel-center convention.

    Output sample i reads source position (i + 0.5) * in/out - 0.5; edge
    neighbours are clamped (constant extrapolation).
    """
    key = (in_size, out_size, np.dtype(dtype))
    w = _BILINEAR_MATS.get(key)
    if w is None:
        w = np.zeros((out_size, in_size), dtype=dtype)
        ratio = in_size / out_size
        for i in range(out_size):
            pos = (i + 0.5) * ratio - 0.5
            i0 = int(np.floor(pos))
            t = pos - i0
            lo = min(max(i0, 0), in_size - 1)
            hi = min(max(i0 + 1, 0), in_size - 1)
            w[i, lo] += 1.0 - t
            w[i, hi] += t
        if len(_BILINEAR_MATS) > 256:
            _BILINEAR_MATS.clear()
        _BILINEAR_MATS[key] = w
    return w


def bilinear_upsample(x, factor: int) -> Tensor:
    x = _unwrap(x)
    if int(factor) != factor or factor < 1:
        raise ShapeError(f"upsample factor must be a positive integer, got {factor}")
    factor = int(factor)
    if x.data.ndim != 4:
        raise ShapeError(f"bilinear_upsample expects [B,C,H,W], got {x.shape}")
    if factor == 1:
        out = Tensor(x.data.copy())
        return record((x,), out, lambda g: (g,))
    h, w = x.shape[2], x.shape[3]
    wr = bilinear_matrix(h, h * factor, x.data.dtype)
    wc = bilinear_matrix(w, w * factor, x.data.dtype)
    out = Tensor(np.matmul(np.matmul(wr, x.data), wc.T))

    def bwd(g):
        return (np.matmul(np.matmul(wr.T, g), wc),)

    return record((x,), out, bwd)


# ---------------------------------------------------------------------------
# Label encoding and the segmentation loss
# ---------------------------------------------------------------------------

def _label_array(labels, ignore_index):
    if isinstance(labels, LabelMap):
        return labels.labels, labels.ignore_index
    arr = np.asarray(labels)
    if ignore_index is None:
        raise ValueError("ignore_index required when labels is a raw array")
    return arr.astype(np.int32), ignore_index


def one_hot(labels, num_classes: int, ignore_index: int | None = None, dtype="float32") -> Tensor:
    """Encode an H x W label grid as [H,W,C]; ignored pixels get all-zero rows."""
    arr, ignore = _label_array(labels, ignore_index)
    if arr.ndim != 2:
        raise ShapeError(f"one_hot expects a 2-D label grid, got {arr.shape}")
    valid = arr != ignore
    bad = valid & ((arr < 0) | (arr >= num_classes))
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise ValueError(
            f"label {arr[y, x]} at pixel ({y}, {x}) is outside [0, {num_classes})"
        )
    out = np.zeros(arr.shape + (num_classes,), dtype=_DTYPES[dtype])
    yy, xx = np.nonzero(valid)
    out[yy, xx, arr[yy, xx]] = 1
    return Tensor(out)


def softmax_cross_entropy(logits, labels, ignore_index: int | None = None) -> Tensor:
    """Mean of -log softmax(logits)[label] over non-ignored pixels."""
    logits = _unwrap(logits)
    if logits.data.ndim != 4:
        raise ShapeError(f"logits must be [B,C,H,W], got {logits.shape}")
    if isinstance(labels, LabelMap):
        lab = labels.labels[None]
        ignore = labels.ignore_index
    else:
        lab = np.asarray(labels).astype(np.int32)
        if lab.ndim == 2:
            lab = lab[None]
        if ignore_index is None:
            raise ValueError("ignore_index required when labels is a raw array")
        ignore = ignore_index
    bsz, c, h, w = logits.shape
    if lab.shape != (bsz, h, w):
        raise ShapeError(f"labels shape {lab.shape} does not match logits {logits.shape}")
    valid = lab != ignore
    n = int(valid.sum())
    if n == 0:
        raise NumericError("softmax_cross_entropy: every pixel is ignored")

    ld = logits.data
    z = ld - ld.max(axis=1, keepdims=True)
    ez = np.exp(z)
    se = ez.sum(axis=1, keepdims=True)
    logp = z - np.log(se)  # (B,C,H,W)
    safe = np.where(valid, lab, 0)
    picked = np.take_along_axis(logp, safe[:, None], axis=1)[:, 0]
    loss = -(picked * valid).sum() / n
    out = Tensor(np.asarray(loss, dtype=ld.dtype))

    def bwd(g):
        p = ez / se
        oh = np.zeros_like(p)
        np.put_along_axis(oh, safe[:, None], 1.0, axis=1)
        dx = (p - oh) * (valid[:, None] / n) * g
        return (dx.astype(ld.dtype),)

    return record((logits,), out, bwd)
