"""On-disk formats: CPT1 tensors, PGM/PPM images, checkpoints, datasets.

CPT1 is this project's tiny tensor container: magic ``CPT1``, one dtype
byte (0=float32, 1=float64, 2=int32, 3=uint8), one rank byte, rank
little-endian u32 dims, then the raw little-endian row-major buffer.
Writers always emit canonical bytes, so equal arrays produce equal files
and checkpoints can be compared byte for byte.

A checkpoint is a directory: ``manifest.txt`` (step counter, RNG state,
and one line per tensor with name/shape/dtype), ``config.txt`` (the full
serialized run configuration), and ``tensors/<name>.cpt`` blobs for every
parameter and BN running statistic.
"""

from __future__ import annotations

import os

import numpy as np

from .labelmap import LabelMap
from .tensor import ShapeError

_DTYPE_CODES = {
    np.dtype("<f4"): 0,
    np.dtype("<f8"): 1,
    np.dtype("<i4"): 2,
    np.dtype("u1"): 3,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}
MAGIC = b"CPT1"


def cpt_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim:  # ascontiguousarray would promote rank 0 to rank 1
        arr = np.ascontiguousarray(arr)
    dt = arr.dtype.newbyteorder("<")
    if dt not in _DTYPE_CODES:
        raise ShapeError(f"CPT1 cannot hold dtype {arr.dtype}")
    if arr.ndim > 255:
        raise ShapeError("CPT1 rank limit exceeded")
    head = MAGIC + bytes([_DTYPE_CODES[dt], arr.ndim])
    dims = b"".join(int(d).to_bytes(4, "little") for d in arr.shape)
    return head + dims + arr.astype(dt, copy=False).tobytes()


def write_cpt(path: str, arr: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(cpt_bytes(arr))


def read_cpt(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a CPT1 file")
    code, rank = blob[4], blob[5]
    if code not in _CODE_DTYPES:
        raise ValueError(f"{path}: unknown dtype code {code}")
    dims = [
        int.from_bytes(blob[6 + 4 * i:10 + 4 * i], "little") for i in range(rank)
    ]
    off = 6 + 4 * rank
    dt = _CODE_DTYPES[code]
    n = int(np.prod(dims)) if dims else 1
    expect = off + n * dt.itemsize
    if len(blob) != expect:
        raise ValueError(f"{path}: size {len(blob)} != expected {expect}")
    arr = np.frombuffer(blob, dtype=dt, count=n, offset=off)
    return arr.reshape(dims).copy()


def write_pgm(path: str, gray: np.ndarray) -> None:
    """Binary (P5) grayscale; expects a 2-D uint8 array."""
    if gray.ndim != 2 or gray.dtype != np.uint8:
        raise ShapeError(f"PGM wants 2-D uint8, got {gray.shape} {gray.dtype}")
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(gray).tobytes())


def write_ppm(path: str, rgb: np.ndarray) -> None:
    """Binary (P6) color; expects (H, W, 3) uint8."""
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ShapeError(f"PPM wants (H,W,3) uint8, got {rgb.shape} {rgb.dtype}")
    h, w = rgb.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(rgb).tobytes())


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_DTYPE_NAMES = {0: "float32", 1: "float64", 2: "int32", 3: "uint8"}


def save_checkpoint(
    path: str,
    tensors: dict[str, np.ndarray],
    step: int,
    rng_state: tuple[int, int, int, int],
    config_text: str,
) -> None:
    os.makedirs(os.path.join(path, "tensors"), exist_ok=True)
    lines = [f"step = {step}", "rng = " + " ".join(f"{s:016x}" for s in rng_state)]
    for name in sorted(tensors):
        arr = tensors[name]
        dt = _DTYPE_CODES[arr.dtype.newbyteorder("<")]
        shape = "x".join(str(d) for d in arr.shape) if arr.ndim else "scalar"
        lines.append(f"tensor {name} {_DTYPE_NAMES[dt]} {shape}")
        write_cpt(os.path.join(path, "tensors", name + ".cpt"), arr)
    with open(os.path.join(path, "manifest.txt"), "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    with open(os.path.join(path, "config.txt"), "w", encoding="utf-8") as f:
        f.write(config_text)


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], int, tuple, str]:
    mpath = os.path.join(path, "manifest.txt")
    with open(mpath, encoding="utf-8") as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    step = None
    rng_state = None
    tensors: dict[str, np.ndarray] = {}
    for ln in lines:
        if ln.startswith("step = "):
            step = int(ln.split("=", 1)[1])
        elif ln.startswith("rng = "):
            rng_state = tuple(int(tok, 16) for tok in ln.split("=", 1)[1].split())
        elif ln.startswith("tensor "):
            _, name, dtype_name, shape = ln.split(" ")
            arr = read_cpt(os.path.join(path, "tensors", name + ".cpt"))
            if arr.dtype != np.dtype(dtype_name):
                raise ValueError(f"{name}: manifest says {dtype_name}, file holds {arr.dtype}")
            want = () if shape == "scalar" else tuple(int(d) for d in shape.split("x"))
            if arr.shape != want:
                raise ValueError(f"{name}: manifest says {shape}, file holds {arr.shape}")
            tensors[name] = arr
        else:
            raise ValueError(f"{mpath}: unrecognized line {ln!r}")
    if step is None or rng_state is None:
        raise ValueError(f"{mpath}: missing step or rng entries")
    with open(os.path.join(path, "config.txt"), encoding="utf-8") as f:
        config_text = f.read()
    return tensors, step, rng_state, config_text


# ---------------------------------------------------------------------------
# Dataset directories
# ---------------------------------------------------------------------------

def save_dataset(path: str, scenes) -> None:
    """Paired `{id}.img.cpt` / `{id}.lbl.cpt` files plus a manifest."""
    os.makedirs(path, exist_ok=True)
    lines = []
    for i, scene in enumerate(scenes):
        sid = f"{i:05d}"
        write_cpt(os.path.join(path, sid + ".img.cpt"), scene.image)
        write_cpt(os.path.join(path, sid + ".lbl.cpt"), scene.labels.labels)
        lines.append(f"{sid} seed={scene.seed}")
    with open(os.path.join(path, "manifest.txt"), "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_dataset(path: str):
    from .data import SyntheticScene

    with open(os.path.join(path, "manifest.txt"), encoding="utf-8") as f:
        entries = [ln.split() for ln in f if ln.strip()]
    scenes = []
    for parts in entries:
        sid = parts[0]
        seed = int(parts[1].split("=", 1)[1]) if len(parts) > 1 else 0
        img = read_cpt(os.path.join(path, sid + ".img.cpt"))
        lab = read_cpt(os.path.join(path, sid + ".lbl.cpt"))
        scenes.append(SyntheticScene(img, LabelMap(lab), seed))
    return scenes
