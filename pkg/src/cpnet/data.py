"""Synthetic scenes, training augmentation, and segmentation metrics.

Scenes are flat-colored shapes (rectangles, disks, full-span bars) on a
dark background, drawn back to front; the shape kind and its class are
drawn independently.  Two confusers make the task non-trivial without
making it ambiguous: a random shadow region darkens the image without
touching the labels (intra-class appearance variation), and Gaussian
pixel noise is added everywhere.

Everything random comes from the documented generator in `rng`, so a
(seed, config) pair produces bit-identical scenes on any platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .labelmap import IGNORE_INDEX, LabelMap
from .rng import Rng, bulk_normal, derive
from .tensor import ShapeError, bilinear_matrix

# class index -> base color (also the PPM export palette, times 255)
PALETTE = np.array(
    [
        (0.18, 0.18, 0.21),  # 0 background: dark slate
        (0.85, 0.22, 0.16),  # 1 red
        (0.20, 0.74, 0.28),  # 2 green
        (0.22, 0.36, 0.88),  # 3 blue
        (0.90, 0.78, 0.12),  # 4 yellow
        (0.62, 0.21, 0.74),  # 5 purple
        (0.13, 0.72, 0.74),  # 6 teal
        (0.92, 0.51, 0.11),  # 7 orange
    ],
    dtype=np.float64,
)

SHADOW_FACTOR = 0.55
_TAG_GEOMETRY = 0x01
_TAG_NOISE = 0x02


@dataclass
class SceneConfig:
    height: int = 32
    width: int = 32
    num_classes: int = 4
    shapes_per_image: int = 2
    noise_std: float = 0.015
    shadow_prob: float = 0.1

    min_shape: int = 12
    max_shape: int = 24


@dataclass
class SyntheticScene:
    image: np.ndarray  # (3, H, W) float32 in [0, 1]
    labels: LabelMap
    seed: int


def class_color(cls: int) -> np.ndarray:
    return PALETTE[cls % len(PALETTE)]


def labels_to_rgb(labels: LabelMap) -> np.ndarray:
    """(H, W, 3) uint8 rendering; ignored pixels are black."""
    out = np.zeros(labels.labels.shape + (3,), dtype=np.uint8)
    for cls in np.unique(labels.labels):
        if cls == labels.ignore_index:
            continue
        out[labels.labels == cls] = (class_color(int(cls)) * 255).astype(np.uint8)
    return out


def _draw_shape(rng: Rng, img, lab, cls: int, cfg: SceneConfig) -> None:
    h, w = lab.shape
    color = class_color(cls) + (np.array([rng.uniform(), rng.uniform(), rng.uniform()]) - 0.5) * 0.1
    kind = rng.randint(3)
    yy, xx = np.mgrid[0:h, 0:w]
    if kind == 0:  # rectangle
        sh = cfg.min_shape + rng.randint(cfg.max_shape - cfg.min_shape + 1)
        sw = cfg.min_shape + rng.randint(cfg.max_shape - cfg.min_shape + 1)
        sh, sw = min(sh, h), min(sw, w)
        y0 = rng.randint(h - sh + 1)
        x0 = rng.randint(w - sw + 1)
        mask = (yy >= y0) & (yy < y0 + sh) & (xx >= x0) & (xx < x0 + sw)
    elif kind == 1:  # disk
        r = (cfg.min_shape + rng.randint(cfg.max_shape - cfg.min_shape + 1)) // 2
        r = max(r, 2)
        cy = r + rng.randint(max(h - 2 * r, 1))
        cx = r + rng.randint(max(w - 2 * r, 1))
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    else:  # full-span bar
        t = max(cfg.min_shape // 2, 3) + rng.randint(max(cfg.max_shape // 2, 4))
        if rng.randint(2):  # horizontal
            t = min(t, h)
            y0 = rng.randint(h - t + 1)
            mask = (yy >= y0) & (yy < y0 + t)
        else:
            t = min(t, w)
            x0 = rng.randint(w - t + 1)
            mask = (xx >= x0) & (xx < x0 + t)
    img[:, mask] = color[:, None]
    lab[mask] = cls


def gen_synthetic_scene(seed: int, cfg: SceneConfig) -> SyntheticScene:
    if cfg.height % 8 or cfg.width % 8:
        raise ShapeError(f"scene size {cfg.height}x{cfg.width} must be divisible by 8")
    if cfg.num_classes < 2:
        raise ValueError("need at least a background and one shape class")
    h, w = cfg.height, cfg.width
    rng = Rng(derive(seed, _TAG_GEOMETRY))

    img = np.empty((3, h, w), dtype=np.float64)
    img[...] = class_color(0)[:, None, None]
    lab = np.zeros((h, w), dtype=np.int32)

    for _ in range(cfg.shapes_per_image):
        cls = 1 + rng.randint(cfg.num_classes - 1)
        _draw_shape(rng, img, lab, cls, cfg)

    if rng.uniform() < cfg.shadow_prob:
        sh = h // 4 + rng.randint(h // 2)
        sw = w // 4 + rng.randint(w // 2)
        y0 = rng.randint(h - sh + 1)
        x0 = rng.randint(w - sw + 1)
        img[:, y0:y0 + sh, x0:x0 + sw] *= SHADOW_FACTOR

    if cfg.noise_std > 0:
        img += bulk_normal(derive(seed, _TAG_NOISE), (3, h, w)) * cfg.noise_std
    np.clip(img, 0.0, 1.0, out=img)
    return SyntheticScene(img.astype(np.float32), LabelMap(lab), seed)


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------

@dataclass
class AugmentConfig:
    flip_prob: float = 0.5
    scales: tuple = (0.5, 0.75, 1.0, 1.5, 1.75, 2.0)
    crop: int = 32


def hflip_scene(scene: SyntheticScene) -> SyntheticScene:
    return SyntheticScene(
        np.ascontiguousarray(scene.image[:, :, ::-1]),
        LabelMap(np.ascontiguousarray(scene.labels.labels[:, ::-1]),
                 scene.labels.ignore_index),
        scene.seed,
    )


def resize_image(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear, half-pixel centers; img is (C, H, W)."""
    wr = bilinear_matrix(img.shape[1], out_h)
    wc = bilinear_matrix(img.shape[2], out_w)
    return np.matmul(np.matmul(wr, img.astype(np.float64)), wc.T)


def nearest_index(in_size: int, out_size: int) -> np.ndarray:
    pos = (np.arange(out_size) + 0.5) * (in_size / out_size)
    return np.clip(np.floor(pos).astype(np.int64), 0, in_size - 1)


def resize_labels(lab: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    ri = nearest_index(lab.shape[0], out_h)
    ci = nearest_index(lab.shape[1], out_w)
    return np.ascontiguousarray(lab[np.ix_(ri, ci)])


def scale_scene(scene: SyntheticScene, factor: float) -> SyntheticScene:
    h = max(int(round(scene.image.shape[1] * factor)), 1)
    w = max(int(round(scene.image.shape[2] * factor)), 1)
    img = np.clip(resize_image(scene.image, h, w), 0.0, 1.0).astype(np.float32)
    lab = resize_labels(scene.labels.labels, h, w)
    return SyntheticScene(img, LabelMap(lab, scene.labels.ignore_index), scene.seed)


def crop_or_pad(scene: SyntheticScene, rng: Rng, crop: int) -> SyntheticScene:
    """Random crop when larger; top-left placement on an ignore-padded
    canvas when smaller (mixed per axis is handled)."""
    img, lab = scene.image, scene.labels.labels
    h, w = lab.shape
    ignore = scene.labels.ignore_index

    out_img = np.zeros((3, crop, crop), dtype=np.float32)
    out_lab = np.full((crop, crop), ignore, dtype=np.int32)
    y0 = rng.randint(h - crop + 1) if h > crop else 0
    x0 = rng.randint(w - crop + 1) if w > crop else 0
    ch, cw = min(h, crop), min(w, crop)
    out_img[:, :ch, :cw] = img[:, y0:y0 + ch, x0:x0 + cw]
    out_lab[:ch, :cw] = lab[y0:y0 + ch, x0:x0 + cw]
    return SyntheticScene(out_img, LabelMap(out_lab, ignore), scene.seed)


def augment(scene: SyntheticScene, rng: Rng, cfg: AugmentConfig) -> SyntheticScene:
    if cfg.crop % 8:
        raise ShapeError(f"crop size {cfg.crop} must be divisible by 8")
    if rng.uniform() < cfg.flip_prob:
        scene = hflip_scene(scene)
    factor = cfg.scales[rng.randint(len(cfg.scales))]
    if factor != 1.0:
        scene = scale_scene(scene, factor)
    if scene.labels.labels.shape != (cfg.crop, cfg.crop):
        scene = crop_or_pad(scene, rng, cfg.crop)
    return scene


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

class ConfusionMatrix:
    """Ignore-aware class confusion counts: rows ground truth, cols prediction."""

    def __init__(self, num_classes: int):
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, pred, gt) -> None:
        pl = pred.labels if isinstance(pred, LabelMap) else np.asarray(pred)
        gl = gt.labels if isinstance(gt, LabelMap) else np.asarray(gt)
        ignore = gt.ignore_index if isinstance(gt, LabelMap) else IGNORE_INDEX
        if pl.shape != gl.shape:
            raise ShapeError(f"prediction {pl.shape} vs ground truth {gl.shape}")
        mask = gl != ignore
        idx = gl[mask].astype(np.int64) * self.num_classes + pl[mask].astype(np.int64)
        binc = np.bincount(idx, minlength=self.num_classes ** 2)
        self.counts += binc.reshape(self.num_classes, self.num_classes)

    def pix_acc(self) -> float:
        total = self.counts.sum()
        if total == 0:
            raise ValueError("no evaluated pixels")
        return float(np.trace(self.counts) / total)

    def mean_iou(self) -> float:
        """Mean TP/(TP+FP+FN) over classes present in ground truth or prediction."""
        tp = np.diag(self.counts).astype(np.float64)
        gt_count = self.counts.sum(axis=1)
        pred_count = self.counts.sum(axis=0)
        present = (gt_count > 0) | (pred_count > 0)
        if not present.any():
            raise ValueError("no evaluated pixels")
        union = gt_count + pred_count - np.diag(self.counts)
        iou = tp[present] / union[present]
        return float(iou.mean())


def confusion_matrix(pred, gt, num_classes: int) -> np.ndarray:
    cm = ConfusionMatrix(num_classes)
    cm.update(pred, gt)
    return cm.counts


def pix_acc(pred, gt, num_classes: int) -> float:
    cm = ConfusionMatrix(num_classes)
    cm.update(pred, gt)
    return cm.pix_acc()


def mean_iou(pred, gt, num_classes: int) -> float:
    cm = ConfusionMatrix(num_classes)
    cm.update(pred, gt)
    return cm.mean_iou()
