"""Datasets and the stochastic view-generation pipeline.

Two data sources are supported: synthetic Gaussian mixtures (class centers
on a sphere, unit-variance clouds) and CIFAR-10 in its binary record
format. View generation applies either the image pipeline (crop-resize,
flip, jitter, grayscale, blur, normalize) or the vector pipeline (random
scale, additive noise, coordinate masking). All randomness flows through
numpy Generators seeded by (global_seed, epoch, batch_index), so the view
stream of an epoch is reproducible regardless of worker scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .errors import ContractError, DimensionError, FormatError

CIFAR_RECORD_BYTES = 3073
CIFAR_SIDE = 32


@dataclass
class LabeledDataset:
    """Feature vectors with integer class ids (labels used only for probes)."""

    samples: np.ndarray        # [N, sample_dim] float32
    labels: np.ndarray         # [N] int64
    num_classes: int
    sample_dim: int
    name: str = ""

    def __post_init__(self):
        if len(self.samples) != len(self.labels):
            raise ContractError(
                f"{len(self.samples)} samples but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0
                                 or self.labels.max() >= self.num_classes):
            raise ContractError("labels outside [0, num_classes)")

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class ViewBatch:
    """Two independently augmented views of the same source rows."""

    view_a: Tensor
    view_b: Tensor
    source_indices: np.ndarray


@dataclass
class AugmentationConfig:
    """Knobs for both augmentation modes; probabilities all live in [0, 1]."""

    mode: str = "vector"                 # "vector" | "image"
    # vector mode
    noise_std: float = 0.0
    scale_range: tuple[float, float] = (1.0, 1.0)
    mask_prob: float = 0.0
    # image mode
    crop_scale_range: tuple[float, float] = (0.08, 1.0)
    flip_prob: float = 0.5
    jitter_prob: float = 0.8
    jitter_strength: float = 0.4         # factors drawn from [1-s, 1+s]
    hue_delta: float = 0.1
    grayscale_prob: float = 0.2
    blur_prob: float = 0.5
    channel_mean: tuple[float, float, float] = (0.0, 0.0, 0.0)
    channel_std: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.mode not in ("vector", "image"):
            raise ContractError(f"unknown augmentation mode {self.mode!r}")
        for name in ("flip_prob", "jitter_prob", "grayscale_prob", "blur_prob", "mask_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ContractError(f"{name} must lie in [0, 1], got {value}")
        lo, hi = self.crop_scale_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ContractError(f"crop_scale_range must sit inside (0, 1], got {self.crop_scale_range}")


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

def generate_gaussian_mixture(num_classes: int, per_class: int, dim: int,
                              separation: float, seed: int) -> LabeledDataset:
    """Class centers on a sphere of radius ``separation``, unit-variance clouds."""
    if min(num_classes, per_class, dim) < 1 or separation < 0:
        raise ContractError("mixture parameters must be positive")
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(num_classes, dim))
    norms = np.linalg.norm(centers, axis=1, keepdims=True)
    centers = centers / norms * separation
    samples = np.empty((num_classes * per_class, dim), dtype=np.float32)
    labels = np.empty(num_classes * per_class, dtype=np.int64)
    for c in range(num_classes):
        cloud = centers[c] + rng.normal(size=(per_class, dim))
        samples[c * per_class:(c + 1) * per_class] = cloud.astype(np.float32)
        labels[c * per_class:(c + 1) * per_class] = c
    return LabeledDataset(samples=samples, labels=labels,
                          num_classes=num_classes, sample_dim=dim,
                          name=f"gaussian{num_classes}x{per_class}d{dim}")


def save_dataset_csv(ds: LabeledDataset, path: str | Path) -> None:
    """Header + one `label,f0,f1,...` row per sample; floats keep 9 digits."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"# num_classes={ds.num_classes} sample_dim={ds.sample_dim} name={ds.name}\n")
        for label, row in zip(ds.labels, ds.samples):
            fh.write(str(int(label)) + "," + ",".join(f"{v:.9g}" for v in row) + "\n")


def load_dataset_csv(path: str | Path) -> LabeledDataset:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise FormatError(f"{path}: missing dataset header line")
        meta = dict(part.split("=", 1) for part in header[1:].split())
        labels, rows = [], []
        for line in fh:
            cells = line.rstrip("\n").split(",")
            labels.append(int(cells[0]))
            rows.append([float(v) for v in cells[1:]])
    return LabeledDataset(samples=np.asarray(rows, dtype=np.float32),
                          labels=np.asarray(labels, dtype=np.int64),
                          num_classes=int(meta["num_classes"]),
                          sample_dim=int(meta["sample_dim"]),
                          name=meta.get("name", ""))


# ---------------------------------------------------------------------------
# CIFAR-10 binary records: 1 label byte + 1024 R + 1024 G + 1024 B
# ---------------------------------------------------------------------------

def load_cifar10_binary(path: str | Path, pattern: str = "*.bin") -> LabeledDataset:
    """Read every record file matching ``pattern`` under ``path`` (or one file).

    Pixels are reordered from channel planes to flattened HxWx3 and scaled
    to [0, 1]; labels stay 0-9 and record counts are preserved.
    """
    path = Path(path)
    files = [path] if path.is_file() else sorted(path.glob(pattern))
    if not files:
        raise FormatError(f"{path}: no record files matching {pattern!r}")
    all_pixels, all_labels = [], []
    for f in files:
        raw = np.frombuffer(f.read_bytes(), dtype=np.uint8)
        if raw.size == 0 or raw.size % CIFAR_RECORD_BYTES != 0:
            raise FormatError(
                f"{f}: size {raw.size} is not a multiple of {CIFAR_RECORD_BYTES}-byte records")
        records = raw.reshape(-1, CIFAR_RECORD_BYTES)
        labels = records[:, 0]
        if labels.max() > 9:
            raise FormatError(f"{f}: label byte {labels.max()} exceeds 9")
        planes = records[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE)
        hwc = planes.transpose(0, 2, 3, 1).reshape(-1, 3 * CIFAR_SIDE * CIFAR_SIDE)
        all_pixels.append(hwc.astype(np.float32) / 255.0)
        all_labels.append(labels.astype(np.int64))
    samples = np.concatenate(all_pixels, axis=0)
    labels = np.concatenate(all_labels, axis=0)
    return LabeledDataset(samples=samples, labels=labels, num_classes=10,
                          sample_dim=samples.shape[1], name="cifar10")


def write_cifar10_binary(path: str | Path, labels: np.ndarray,
                         pixels_hwc: np.ndarray) -> None:
    """Write uint8 records (fixtures, round-trip checks) from HWC-flat pixels."""
    labels = np.asarray(labels, dtype=np.uint8)
    pixels_hwc = np.asarray(pixels_hwc, dtype=np.uint8)
    n = len(labels)
    planes = pixels_hwc.reshape(n, CIFAR_SIDE, CIFAR_SIDE, 3).transpose(0, 3, 1, 2)
    records = np.empty((n, CIFAR_RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = labels
    records[:, 1:] = planes.reshape(n, -1)
    Path(path).write_bytes(records.tobytes())


def channel_stats(ds: LabeledDataset) -> tuple[tuple[float, float, float],
                                               tuple[float, float, float]]:
    """Per-channel mean/std of an image dataset, for the normalize step."""
    imgs = ds.samples.reshape(len(ds), -1, 3)
    mean = imgs.mean(axis=(0, 1))
    std = imgs.std(axis=(0, 1))
    return tuple(float(m) for m in mean), tuple(max(float(s), 1e-6) for s in std)


# ---------------------------------------------------------------------------
# image augmentation
# ---------------------------------------------------------------------------

def _bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize HxWxC to out_h x out_w x C with bilinear sampling."""
    h, w = img.shape[:2]
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bottom = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy


def random_resized_crop(img: np.ndarray, scale_range: tuple[float, float],
                        rng: np.random.Generator) -> np.ndarray:
    """Crop a random area fraction (random aspect in [3/4, 4/3]) and resize back.

    Sampling retries a few times when the aspect draw does not fit inside the
    image, then falls back to the full frame, so a [1, 1] scale range is the
    identity crop.
    """
    h, w = img.shape[:2]
    for _ in range(10):
        area = h * w * rng.uniform(*scale_range)
        aspect = rng.uniform(3.0 / 4.0, 4.0 / 3.0)
        crop_h = max(1, round(math.sqrt(area / aspect)))
        crop_w = max(1, round(math.sqrt(area * aspect)))
        if crop_h <= h and crop_w <= w:
            top = rng.integers(0, h - crop_h + 1)
            left = rng.integers(0, w - crop_w + 1)
            crop = img[top:top + crop_h, left:left + crop_w]
            if crop.shape[:2] == (h, w):
                return crop.copy()
            return _bilinear_resize(crop, h, w)
    return img.copy()


def horizontal_flip(img: np.ndarray) -> np.ndarray:
    return img[:, ::-1, :].copy()


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Replace RGB with its luminance in all three channels."""
    lum = img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114
    return np.repeat(lum[..., None], 3, axis=-1)


# Hue rotation happens in YIQ space; rows are the RGB->YIQ basis.
_RGB_TO_YIQ = np.array([[0.299, 0.587, 0.114],
                        [0.595716, -0.274453, -0.321263],
                        [0.211456, -0.522591, 0.311135]])
_YIQ_TO_RGB = np.linalg.inv(_RGB_TO_YIQ)


def color_jitter(img: np.ndarray, strength: float, hue_delta: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Random brightness/contrast/saturation factors plus a small hue rotation."""
    lo, hi = 1.0 - strength, 1.0 + strength
    out = img * rng.uniform(lo, hi)
    gray_mean = to_grayscale(out).mean()
    out = (out - gray_mean) * rng.uniform(lo, hi) + gray_mean
    gray = to_grayscale(out)
    out = gray + (out - gray) * rng.uniform(lo, hi)
    theta = rng.uniform(-hue_delta, hue_delta) * 2.0 * math.pi
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    rotate = np.array([[1.0, 0.0, 0.0],
                       [0.0, cos_t, -sin_t],
                       [0.0, sin_t, cos_t]])
    out = out @ (_YIQ_TO_RGB @ rotate @ _RGB_TO_YIQ).T
    return np.clip(out, 0.0, 1.0)


def gaussian_blur(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Separable Gaussian blur; sigma ~ U[0.1, 2], odd kernel of ~6 sigma taps."""
    sigma = rng.uniform(0.1, 2.0)
    ksize = max(3, int(math.ceil(6.0 * sigma)) | 1)
    half = ksize // 2
    taps = np.exp(-0.5 * (np.arange(-half, half + 1) / sigma) ** 2)
    taps /= taps.sum()
    padded = np.pad(img, ((half, half), (0, 0), (0, 0)), mode="edge")
    out = np.zeros_like(img)
    for k in range(ksize):
        out += taps[k] * padded[k:k + img.shape[0]]
    padded = np.pad(out, ((0, 0), (half, half), (0, 0)), mode="edge")
    out = np.zeros_like(img)
    for k in range(ksize):
        out += taps[k] * padded[:, k:k + img.shape[1]]
    return out


def normalize_channels(img: np.ndarray, mean, std) -> np.ndarray:
    return (img - np.asarray(mean)) / np.asarray(std)


def augment_image(x: np.ndarray, cfg: AugmentationConfig,
                  rng: np.random.Generator) -> np.ndarray:
    """Full image pipeline on a flat HxWx3 vector, in fixed order.

    Crop-resize, flip(p), jitter(p), grayscale(p), blur(p), then per-channel
    normalization; output keeps the input dimension.
    """
    x = np.asarray(x, dtype=np.float32)
    dim = x.shape[-1] if x.ndim else x.size
    side = int(round(math.sqrt(dim / 3)))
    if side * side * 3 != dim:
        raise DimensionError(f"cannot reshape a {dim}-vector into a square HxWx3 image")
    img = x.reshape(side, side, 3).astype(np.float64)
    img = random_resized_crop(img, cfg.crop_scale_range, rng)
    if rng.random() < cfg.flip_prob:
        img = horizontal_flip(img)
    if rng.random() < cfg.jitter_prob:
        img = color_jitter(img, cfg.jitter_strength, cfg.hue_delta, rng)
    if rng.random() < cfg.grayscale_prob:
        img = to_grayscale(img)
    if rng.random() < cfg.blur_prob:
        img = gaussian_blur(img, rng)
    img = normalize_channels(img, cfg.channel_mean, cfg.channel_std)
    return img.reshape(-1).astype(np.float32)


# ---------------------------------------------------------------------------
# vector augmentation
# ---------------------------------------------------------------------------

def augment_vector(x: np.ndarray, cfg: AugmentationConfig,
                   rng: np.random.Generator) -> np.ndarray:
    """x*s + noise then coordinate masking; accepts a vector or a row batch."""
    x = np.asarray(x, dtype=np.float32)
    rows = np.atleast_2d(x)
    scales = rng.uniform(cfg.scale_range[0], cfg.scale_range[1],
                         size=(rows.shape[0], 1)).astype(np.float32)
    out = rows * scales
    if cfg.noise_std > 0:
        out = out + rng.normal(0.0, cfg.noise_std, size=rows.shape).astype(np.float32)
    if cfg.mask_prob > 0:
        out = np.where(rng.random(size=rows.shape) < cfg.mask_prob, 0.0, out)
    return out.astype(np.float32).reshape(x.shape)


# ---------------------------------------------------------------------------
# view batches and epoch iteration
# ---------------------------------------------------------------------------

def _augment(rows: np.ndarray, cfg: AugmentationConfig,
             rng: np.random.Generator) -> np.ndarray:
    if cfg.mode == "vector":
        return augment_vector(rows, cfg, rng)
    return np.stack([augment_image(row, cfg, rng) for row in rows])


def make_view_batch(ds: LabeledDataset, indices: np.ndarray,
                    cfg: AugmentationConfig, rng: np.random.Generator) -> ViewBatch:
    """Two independent augmentations of the rows at ``indices``."""
    indices = np.asarray(indices)
    if len(indices) and (indices.min() < 0 or indices.max() >= len(ds)):
        raise ContractError(f"indices outside [0, {len(ds)})")
    rows = ds.samples[indices]
    return ViewBatch(view_a=Tensor(_augment(rows, cfg, rng)),
                     view_b=Tensor(_augment(rows, cfg, rng)),
                     source_indices=indices.copy())


def iter_epoch_batches(ds: LabeledDataset, batch_size: int, epoch: int,
                       seed: int, cfg: AugmentationConfig):
    """Shuffled full pass; incomplete trailing batch dropped.

    The shuffle draws from rng(seed, epoch) and batch ``i`` augments with
    rng(seed, epoch, i), so the epoch's view stream is reproducible.
    """
    order = np.random.default_rng((seed, epoch)).permutation(len(ds))
    num_batches = len(ds) // batch_size
    for i in range(num_batches):
        chunk = order[i * batch_size:(i + 1) * batch_size]
        rng = np.random.default_rng((seed, epoch, i))
        yield i, make_view_batch(ds, chunk, cfg, rng)
