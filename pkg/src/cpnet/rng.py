"""Deterministic, platform-independent random number generation.

Every random draw in this package comes from one of two fully specified
generators so that fixtures and golden files are portable across machines:

* ``Rng`` -- a sequential xoshiro256** generator whose 4-word state is
  seeded from consecutive outputs of a splitmix64 stream.  Used for all
  scalar decisions (shape placement, augmentation choices, ...).  Its state
  is 4 unsigned 64-bit words and can be saved/restored exactly.

* ``bulk_u64`` -- a counter-mode variant for large arrays (pixel noise).
  Output ``i`` of a call with seed ``s`` is produced by seeding a private
  xoshiro256** state from splitmix64 outputs ``4i+1 .. 4i+4`` of the stream
  started at ``s`` and emitting a single xoshiro256** value.  This is
  stateless and vectorizes over numpy uint64 arrays, and the scalar
  ``Rng``/``_splitmix64_at`` primitives double as its independent oracle.

Floats are derived as ``(u64 >> 11) * 2**-53`` (uniform in [0, 1)) and
normals via the Box-Muller transform, so the byte-level output of the
generators fixes every downstream value.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_INV_2_53 = 2.0 ** -53


def mix64(x: int) -> int:
    """splitmix64 output function: a bijective 64-bit mixer."""
    z = x & _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def _splitmix64_at(seed: int, k: int) -> int:
    """k-th output (k >= 0) of the splitmix64 stream started at ``seed``."""
    return mix64((seed + (k + 1) * _GOLDEN) & _MASK)


def derive(seed: int, tag: int) -> int:
    """Derive an independent child seed from (seed, tag)."""
    return mix64((seed ^ mix64((tag ^ _GOLDEN) & _MASK)) & _MASK)


def _rotl(x: int, k: int) -> int:
    x &= _MASK
    return ((x << k) | (x >> (64 - k))) & _MASK


class Rng:
    """Sequential xoshiro256** generator, seeded via splitmix64."""

    __slots__ = ("_s", "_spare_normal")

    def __init__(self, seed: int):
        seed &= _MASK
        self._s = [_splitmix64_at(seed, k) for k in range(4)]
        self._spare_normal: float | None = None

    def u64(self) -> int:
        s = self._s
        out = (_rotl((s[1] * 5) & _MASK, 7) * 9) & _MASK
        t = (s[1] << 17) & _MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return out

    def uniform(self) -> float:
        """Uniform float in [0, 1)."""
        return (self.u64() >> 11) * _INV_2_53

    def randint(self, n: int) -> int:
        """Integer in [0, n) via the multiply-shift range map."""
        if n <= 0:
            raise ValueError(f"randint bound must be positive, got {n}")
        return (self.u64() * n) >> 64

    def choice(self, seq):
        return seq[self.randint(len(seq))]

    def normal(self) -> float:
        """Standard normal via Box-Muller (pairs cached)."""
        if self._spare_normal is not None:
            z = self._spare_normal
            self._spare_normal = None
            return z
        u1 = (self.u64() >> 11) * _INV_2_53
        u2 = (self.u64() >> 11) * _INV_2_53
        r = np.sqrt(-2.0 * np.log(1.0 - u1))  # 1-u1 in (0,1] avoids log(0)
        self._spare_normal = float(r * np.sin(2.0 * np.pi * u2))
        return float(r * np.cos(2.0 * np.pi * u2))

    def state(self) -> tuple[int, int, int, int]:
        return tuple(self._s)

    def set_state(self, state) -> None:
        if len(state) != 4:
            raise ValueError("xoshiro256 state must be 4 words")
        self._s = [int(w) & _MASK for w in state]
        self._spare_normal = None


def _bulk_splitmix64(seed: int, start: int, count: int) -> np.ndarray:
    """Vectorized splitmix64 outputs ``start .. start+count-1``."""
    with np.errstate(over="ignore"):
        k = np.arange(start + 1, start + count + 1, dtype=np.uint64)
        z = np.uint64(seed & _MASK) + k * np.uint64(_GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))


def bulk_u64(seed: int, n: int) -> np.ndarray:
    """n counter-mode outputs: one xoshiro256** value per splitmix-seeded lane."""
    if n == 0:
        return np.zeros(0, dtype=np.uint64)
    sm = _bulk_splitmix64(seed, 0, 4 * n).reshape(n, 4)
    s1 = sm[:, 1]
    with np.errstate(over="ignore"):
        x = s1 * np.uint64(5)
        rot = (x << np.uint64(7)) | (x >> np.uint64(57))
        return rot * np.uint64(9)


def bulk_uniform(seed: int, shape) -> np.ndarray:
    """Array of uniforms in [0, 1), float64."""
    n = int(np.prod(shape)) if shape else 1
    u = (bulk_u64(seed, n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
    return u.reshape(shape)


def bulk_normal(seed: int, shape) -> np.ndarray:
    """Array of standard normals via Box-Muller on counter-mode uniforms."""
    n = int(np.prod(shape)) if shape else 1
    m = (n + 1) // 2
    u = (bulk_u64(seed, 2 * m) >> np.uint64(11)).astype(np.float64) * _INV_2_53
    u1, u2 = u[:m], u[m:]
    r = np.sqrt(-2.0 * np.log(1.0 - u1))
    ang = 2.0 * np.pi * u2
    z = np.concatenate([r * np.cos(ang), r * np.sin(ang)])[:n]
    return z.reshape(shape)
