"""Synthetic data generation, parametric distortions with deterministic
pseudo-MOS labels, patch sampling regimes, and dataset manifests.

Images are float32 numpy arrays of shape [H, W, 3] with values in [0, 1].
Every function that takes a seed or rng is a pure function of its inputs,
so generation can be replayed or parallelized with derived seeds.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError
from scipy import ndimage

from .errors import DataError, DecodeError
from .validation import check_image, check_pool, check_sample

DISTORTION_KINDS = ("gaussian_noise", "gaussian_blur", "down_up_resample", "block_quantize")

# Pseudo-MOS curvature per kind: score = 100 * (1 - severity) ** gamma.
# Distinct exponents keep the label a kind-dependent function of severity.
_MOS_GAMMA = {
    "gaussian_noise": 1.0,
    "gaussian_blur": 0.8,
    "down_up_resample": 1.2,
    "block_quantize": 0.9,
}

NAR_MODES = ("content_variant", "content_similar", "aligned_fr", "none")


@dataclass(frozen=True)
class DistortionSpec:
    """One parameterized distortion; severity 0 is the identity for every kind."""

    kind: str
    severity: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DISTORTION_KINDS:
            raise DataError(f"unknown distortion kind {self.kind!r}")
        if not 0.0 <= self.severity <= 1.0:
            raise DataError(f"severity {self.severity} outside [0, 1]")


@dataclass
class Sample:
    """One labeled LQ image, optionally with its pixel-aligned origin.

    ``distortion`` records how a synthetic sample was produced; loaders of
    external data leave it unset.
    """

    id: str
    lq: np.ndarray
    fr: Optional[np.ndarray] = None
    mos: float = 0.0
    distortion: Optional[DistortionSpec] = None

    def __post_init__(self):
        check_sample(self)


@dataclass
class PatchSet:
    """m crops from one source image, as a [m, 3, p, p] float32 array."""

    patches: np.ndarray
    coords: List[Tuple[int, int]]
    source_id: str


@dataclass
class ReferencePool:
    """Ordered collection of HQ images that content-variant references are
    drawn from."""

    images: List[np.ndarray]
    ids: List[str] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        if not self.ids:
            self.ids = [f"pool{i:03d}" for i in range(len(self.images))]


class SyntheticDataset(NamedTuple):
    train: List[Sample]
    test: List[Sample]
    pool: ReferencePool


# ---------------------------------------------------------------------------
# synthetic pristine images
# ---------------------------------------------------------------------------

def generate_synthetic_hq(seed: int, height: int = 64, width: int = 64) -> np.ndarray:
    """Deterministic procedural HQ image: smooth gradients, band-limited
    texture and a few hard-edged shapes, so that noise, blur, resampling
    and blocking all change it perceptibly."""
    if height < 64 or width < 64:
        raise DataError(f"image dimensions must be >= 64, got {height}x{width}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    yy /= height - 1
    xx /= width - 1

    img = np.empty((height, width, 3))
    for c in range(3):
        img[:, :, c] = (rng.uniform(0.25, 0.75)
                        + rng.uniform(-0.35, 0.35) * xx
                        + rng.uniform(-0.35, 0.35) * yy
                        + rng.uniform(0.05, 0.15) * np.cos(
                            2 * np.pi * (rng.uniform(0.5, 2.0) * xx
                                         + rng.uniform(0.5, 2.0) * yy)
                            + rng.uniform(0, 2 * np.pi)))

    texture = ndimage.gaussian_filter(rng.normal(0.0, 1.0, (height, width)),
                                      sigma=rng.uniform(1.0, 2.5))
    tstd = texture.std()
    if tstd > 0:
        img += (rng.uniform(0.04, 0.12) * texture / tstd)[:, :, None]

    for _ in range(int(rng.integers(3, 8))):
        color = rng.uniform(0.0, 1.0, size=3)
        if rng.random() < 0.5:
            r0 = int(rng.integers(0, height - 8))
            c0 = int(rng.integers(0, width - 8))
            r1 = min(height, r0 + int(rng.integers(8, max(9, height // 2))))
            c1 = min(width, c0 + int(rng.integers(8, max(9, width // 2))))
            img[r0:r1, c0:c1] = 0.25 * img[r0:r1, c0:c1] + 0.75 * color
        else:
            cy = rng.uniform(0, height)
            cx = rng.uniform(0, width)
            rad = rng.uniform(4, min(height, width) / 4)
            mask = (yy * (height - 1) - cy) ** 2 + (xx * (width - 1) - cx) ** 2 <= rad ** 2
            img[mask] = 0.25 * img[mask] + 0.75 * color

    return np.clip(img, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# distortions and labels
# ---------------------------------------------------------------------------

def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Plain separable bilinear resampling (no antialiasing)."""
    h, w = img.shape[:2]
    if (out_h, out_w) == (h, w):
        return img.copy()
    ry = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    rx = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    y0 = np.floor(ry).astype(int)
    x0 = np.floor(rx).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ry - y0)[:, None, None]
    wx = (rx - x0)[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return (top * (1 - wy) + bot * wy).astype(img.dtype)


def _block_means(img: np.ndarray, block: int = 8) -> np.ndarray:
    h, w = img.shape[:2]
    rb = np.arange(0, h, block)
    cb = np.arange(0, w, block)
    sums = np.add.reduceat(np.add.reduceat(img, rb, axis=0), cb, axis=1)
    rcount = np.diff(np.append(rb, h))
    ccount = np.diff(np.append(cb, w))
    means = sums / (rcount[:, None] * ccount[None, :])[:, :, None]
    return np.repeat(np.repeat(means, rcount, axis=0), ccount, axis=1)


def apply_distortion(img: np.ndarray, spec: DistortionSpec) -> np.ndarray:
    """Severity-parameterized degradation; output stays within [0, 1] and
    severity 0 returns the input unchanged for every kind."""
    check_image(img)
    if spec.severity == 0.0:
        return img.copy()
    sev = spec.severity
    if spec.kind == "gaussian_noise":
        rng = np.random.default_rng(spec.seed)
        out = img + rng.normal(0.0, 0.25 * sev, size=img.shape)
    elif spec.kind == "gaussian_blur":
        out = ndimage.gaussian_filter(img, sigma=(3.0 * sev, 3.0 * sev, 0.0))
    elif spec.kind == "down_up_resample":
        factor = 1.0 + 3.0 * sev
        h, w = img.shape[:2]
        small = bilinear_resize(img, max(1, round(h / factor)), max(1, round(w / factor)))
        out = bilinear_resize(small, h, w)
    else:  # block_quantize
        out = (1.0 - sev) * img + sev * _block_means(img)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def synthetic_mos(spec: DistortionSpec) -> float:
    """Deterministic pseudo label in [0, 100], strictly decreasing in severity."""
    return 100.0 * (1.0 - spec.severity) ** _MOS_GAMMA[spec.kind]


def build_synthetic_dataset(n_images: int = 400, distortions_per_image: int = 2,
                            seed: int = 0, height: int = 64, width: int = 64,
                            test_fraction: float = 0.25,
                            pool_size: int = 12) -> SyntheticDataset:
    """Labeled synthetic dataset plus a disjoint reference pool.

    The train/test split is by pristine image, so no content leaks across
    the split, and pool images are generated separately from both.
    """
    if n_images < 2:
        raise DataError(f"need at least 2 images, got {n_images}")
    rng = np.random.default_rng(seed)
    n_test = min(n_images - 1, round(n_images * test_fraction))
    train: List[Sample] = []
    test: List[Sample] = []
    for i in range(n_images):
        img = generate_synthetic_hq(int(rng.integers(2 ** 31 - 1)), height, width)
        bucket = test if i >= n_images - n_test else train
        for j in range(distortions_per_image):
            spec = DistortionSpec(
                kind=DISTORTION_KINDS[int(rng.integers(len(DISTORTION_KINDS)))],
                severity=float(rng.uniform(0.0, 1.0)),
                seed=int(rng.integers(2 ** 31 - 1)))
            bucket.append(Sample(id=f"img{i:04d}-d{j}",
                                 lq=apply_distortion(img, spec),
                                 fr=img, mos=synthetic_mos(spec),
                                 distortion=spec))
    pool_images = [generate_synthetic_hq(int(rng.integers(2 ** 31 - 1)), height, width)
                   for _ in range(pool_size)]
    pool = ReferencePool(images=pool_images,
                         ids=[f"ref{i:03d}" for i in range(pool_size)], seed=seed)
    return SyntheticDataset(train=train, test=test, pool=pool)


# ---------------------------------------------------------------------------
# patch sampling
# ---------------------------------------------------------------------------

def _draw_coords(rng, h: int, w: int, m: int, p: int) -> List[Tuple[int, int]]:
    rows = rng.integers(0, h - p + 1, size=m)
    cols = rng.integers(0, w - p + 1, size=m)
    return [(int(r), int(c)) for r, c in zip(rows, cols)]


def crop_patches(img: np.ndarray, coords, p: int) -> np.ndarray:
    """Gather [m, 3, p, p] crops at the given (row, col) origins."""
    h, w = img.shape[:2]
    out = np.empty((len(coords), 3, p, p), dtype=np.float32)
    for i, (r, c) in enumerate(coords):
        if not (0 <= r <= h - p and 0 <= c <= w - p):
            raise DataError(f"crop origin {(r, c)} outside image {h}x{w} for patch {p}")
        out[i] = img[r:r + p, c:c + p].transpose(2, 0, 1)
    return out


def sample_aligned_patches(sample: Sample, m: int, p: int, rng) -> Tuple[PatchSet, PatchSet]:
    """m uniform crop origins applied identically to the LQ image and its
    pixel-aligned reference."""
    if sample.fr is None:
        raise DataError(f"sample {sample.id!r} has no pixel-aligned reference")
    h, w = sample.lq.shape[:2]
    if h < p or w < p:
        raise DataError(f"sample {sample.id!r} ({h}x{w}) smaller than patch {p}")
    coords = _draw_coords(rng, h, w, m, p)
    return (PatchSet(crop_patches(sample.lq, coords, p), list(coords), sample.id),
            PatchSet(crop_patches(sample.fr, coords, p), list(coords), sample.id))


def affine_jitter(img: np.ndarray, scale: float, rotation_deg: float) -> np.ndarray:
    """Scale/rotate about the image center with bilinear resampling and
    reflected borders; scale 1 with rotation 0 is the exact identity."""
    if scale == 1.0 and rotation_deg == 0.0:
        return img.copy()
    theta = np.deg2rad(rotation_deg)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    pull = np.array([[cos_t, sin_t, 0.0],
                     [-sin_t, cos_t, 0.0],
                     [0.0, 0.0, 1.0]]) / np.array([scale, scale, 1.0])[:, None]
    center = np.array([(img.shape[0] - 1) / 2.0, (img.shape[1] - 1) / 2.0, 0.0])
    offset = center - pull @ center
    warped = ndimage.affine_transform(img, pull, offset=offset, order=1, mode="reflect")
    return np.clip(warped, 0.0, 1.0).astype(np.float32)


def sample_nonaligned_patches(sample: Sample, pool: Optional[ReferencePool],
                              m: int, p: int, rng, mode: str = "content_variant",
                              scale_range=(0.95, 1.05),
                              rotation_range=(-5.0, 5.0)) -> Tuple[PatchSet, PatchSet]:
    """Independent LQ crops plus a non-aligned reference patch set.

    content_variant draws one pool image (never the sample's own pristine)
    and crops it; content_similar crops an affine-jittered copy of the
    sample's own reference.
    """
    h, w = sample.lq.shape[:2]
    lq_coords = _draw_coords(rng, h, w, m, p)
    lq_set = PatchSet(crop_patches(sample.lq, lq_coords, p), lq_coords, sample.id)

    if mode == "content_variant":
        check_pool(pool, patch_size=p)
        eligible = [i for i, rid in enumerate(pool.ids) if rid != sample.id]
        if not eligible:
            raise DataError("reference pool only contains the sample's own image")
        idx = eligible[int(rng.integers(len(eligible)))]
        ref_img, ref_id = pool.images[idx], pool.ids[idx]
    elif mode == "content_similar":
        if sample.fr is None:
            raise DataError(f"sample {sample.id!r} has no reference to jitter")
        ref_img = affine_jitter(sample.fr,
                                scale=float(rng.uniform(*scale_range)),
                                rotation_deg=float(rng.uniform(*rotation_range)))
        ref_id = f"{sample.id}:similar"
    else:
        raise DataError(f"unsupported non-aligned mode {mode!r}")

    rh, rw = ref_img.shape[:2]
    ref_coords = _draw_coords(rng, rh, rw, m, p)
    return lq_set, PatchSet(crop_patches(ref_img, ref_coords, p), ref_coords, ref_id)


def augment(lq_patches: np.ndarray, paired_patches: Optional[np.ndarray], rng):
    """Training augmentation: per patch, horizontal flip with probability
    one half and rotation by a random multiple of 90 degrees.

    A paired set (the aligned reference) receives exactly the same
    transform per patch; augment non-aligned references separately.
    """
    lq_out = np.empty_like(lq_patches)
    pr_out = np.empty_like(paired_patches) if paired_patches is not None else None
    for i in range(lq_patches.shape[0]):
        flip = rng.random() < 0.5
        k = int(rng.integers(0, 4))
        a = lq_patches[i]
        b = paired_patches[i] if paired_patches is not None else None
        if flip:
            a = a[:, :, ::-1]
            b = b[:, :, ::-1] if b is not None else None
        if k:
            a = np.rot90(a, k, axes=(-2, -1))
            b = np.rot90(b, k, axes=(-2, -1)) if b is not None else None
        lq_out[i] = a
        if pr_out is not None:
            pr_out[i] = b
    return lq_out, pr_out


# ---------------------------------------------------------------------------
# image and manifest IO
# ---------------------------------------------------------------------------

def load_image(path) -> np.ndarray:
    """Decode an 8-bit RGB PNG or PPM file to a [0, 1] float image."""
    try:
        with PILImage.open(path) as im:
            im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except FileNotFoundError:
        raise
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeError(f"cannot decode image {path}: {exc}") from exc
    return arr


def save_image(path, img: np.ndarray) -> None:
    check_image(img)
    arr = np.round(img * 255.0).astype(np.uint8)
    PILImage.fromarray(arr, mode="RGB").save(path)


def write_manifest(path, rows) -> None:
    """Write manifest rows (id, lq_relpath, fr_relpath_or_None, mos)."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "lq", "fr", "mos"])
        for sid, lq_rel, fr_rel, mos in rows:
            writer.writerow([sid, lq_rel, fr_rel if fr_rel else "-", repr(float(mos))])


def load_manifest(path) -> List[Sample]:
    """Read a manifest CSV back into Samples, decoding the images.

    Paths are relative to the manifest's directory; a ``-`` marks a sample
    without a pixel-aligned reference.  Malformed rows raise with their
    line number.
    """
    path = Path(path)
    base = path.parent
    samples: List[Sample] = []
    with path.open("r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty manifest (missing header)")
        if header != ["id", "lq", "fr", "mos"]:
            raise DataError(f"{path}: line 1: bad header {header!r}, "
                            f"expected ['id', 'lq', 'fr', 'mos']")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError(f"{path}: line {lineno}: expected 4 fields, got {len(row)}")
            sid, lq_rel, fr_rel, mos_text = row
            try:
                mos = float(mos_text)
            except ValueError:
                raise DataError(f"{path}: line {lineno}: bad mos value {mos_text!r}")
            if not 0.0 <= mos <= 100.0:
                raise DataError(f"{path}: line {lineno}: mos {mos} outside [0, 100]")
            try:
                lq = load_image(base / lq_rel)
                fr = None if fr_rel == "-" else load_image(base / fr_rel)
            except FileNotFoundError as exc:
                raise DataError(f"{path}: line {lineno}: missing image file: {exc}")
            samples.append(Sample(id=sid, lq=lq, fr=fr, mos=mos))
    return samples


def load_pool_dir(path, seed: int = 0) -> ReferencePool:
    """Load every PNG/PPM in a directory (sorted by name) as a reference pool."""
    path = Path(path)
    files = sorted(p for p in path.iterdir()
                   if p.suffix.lower() in (".png", ".ppm"))
    if not files:
        raise DataError(f"no PNG/PPM images found in pool directory {path}")
    return ReferencePool(images=[load_image(p) for p in files],
                         ids=[p.stem for p in files], seed=seed)
