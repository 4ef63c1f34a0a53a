"""
Synthetic degradation pipeline and dataset builder
MATLAB-convention bicubic ×4 downsampling, a block-DCT quantisation
codec, a blur-quantise pseudo-codec, ingestion of externally compressed
pairs, manifests and aligned patch sampling
"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple

import cv2
import numpy as np
from PIL import Image, UnidentifiedImageError

from ucip.errors import DatasetError, DegradationError

logger = logging.getLogger(__name__)

SCALE = 4
BLOCK = 8
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")
CODEC_QUALITY_RANGES = {
    "dct_q": (1, 100),
    "blur_q": (1, 4),
    "external": (0, 10**6),
}

# Standard JPEG luminance table
LUMA_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


@dataclass(frozen=True)
class DegradationSpec:
    codec: str
    quality: int
    scale: int = SCALE

    def __post_init__(self):
        if self.codec not in CODEC_QUALITY_RANGES:
            raise DegradationError(f"unknown codec {self.codec!r}, expected one of {sorted(CODEC_QUALITY_RANGES)}")
        low, high = CODEC_QUALITY_RANGES[self.codec]
        if not low <= int(self.quality) <= high:
            raise DegradationError(f"{self.codec}: quality {self.quality} outside [{low}, {high}]")
        if self.scale != SCALE:
            raise DegradationError(f"only ×{SCALE} degradation is supported, got {self.scale}")

    @property
    def tag(self):
        """Canonical directory name, e.g. dct_q_10"""
        return f"{self.codec}_{self.quality}"

    def __str__(self):
        return f"{self.codec}:{self.quality}"

    @classmethod
    def parse(cls, text):
        """Parse 'codec:quality'"""
        codec, sep, quality = text.strip().partition(":")
        if not sep or not quality.strip().lstrip("-").isdigit():
            raise DegradationError(f"cannot parse degradation spec {text!r}, expected codec:quality")
        return cls(codec.strip(), int(quality))


def parse_specs(text):
    """Parse a comma separated spec list such as 'dct_q:10,blur_q:2'"""
    specs = [DegradationSpec.parse(part) for part in text.split(",") if part.strip()]
    if not specs:
        raise DegradationError("no degradation specs given")
    return specs


# Image I/O

def load_image(path):
    """8-bit RGB file → float64 H×W×3 in [0, 1]"""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


@lru_cache(maxsize=512)
def _cached_image(path, mtime_ns):
    arr = load_image(path)
    arr.flags.writeable = False
    return arr


def to_uint8(img):
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def save_image(path, img):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img)).save(path, format="PNG")


# Resampling

def _cubic(x, a=-0.5):
    ax = np.abs(x)
    ax2, ax3 = ax ** 2, ax ** 3
    near = ((a + 2) * ax3 - (a + 3) * ax2 + 1) * (ax <= 1)
    far = (a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a) * ((ax > 1) & (ax <= 2))
    return near + far


def resize_weights(in_len, out_len, scale, antialias=True):
    """
    out_len × in_len matrix of MATLAB imresize cubic weights.
    When shrinking with antialiasing the kernel is stretched by 1/scale;
    source indices outside the image are clamped to the border.
    """
    if scale < 1 and antialias:
        def kernel(x):
            return scale * _cubic(scale * x)

        width = 4.0 / scale
    else:
        kernel = _cubic
        width = 4.0
    x = np.arange(1, out_len + 1, dtype=np.float64)
    u = x / scale + 0.5 * (1 - 1 / scale)
    left = np.floor(u - width / 2)
    taps = int(math.ceil(width)) + 2
    indices = left[:, None] + np.arange(taps)[None, :]
    weights = kernel(u[:, None] - indices)
    weights = weights / weights.sum(axis=1, keepdims=True)
    indices = np.clip(indices, 1, in_len).astype(np.intp) - 1
    matrix = np.zeros((out_len, in_len))
    rows = np.repeat(np.arange(out_len), taps)
    np.add.at(matrix, (rows, indices.ravel()), weights.ravel())
    return matrix


def imresize(img, scale, antialias=True):
    h, w = img.shape[:2]
    out_h, out_w = int(math.ceil(h * scale)), int(math.ceil(w * scale))
    rows = resize_weights(h, out_h, scale, antialias)
    cols = resize_weights(w, out_w, scale, antialias)
    out = np.einsum("oh,hwc->owc", rows, img)
    return np.einsum("pw,owc->opc", cols, out)


def bicubic_downsample(img, scale=SCALE):
    h, w = img.shape[:2]
    if h % scale or w % scale:
        raise DegradationError(f"bicubic_downsample: {h}x{w} is not divisible by {scale}, crop first")
    return imresize(img, 1.0 / scale)


def bicubic_upsample(img, scale=SCALE):
    return np.clip(imresize(img, float(scale)), 0.0, 1.0)


def crop_to_multiple(img, multiple=SCALE):
    """Centre crop so both sides are multiples of `multiple`"""
    h, w = img.shape[:2]
    nh, nw = h - h % multiple, w - w % multiple
    if nh == 0 or nw == 0:
        raise DegradationError(f"image {h}x{w} is smaller than {multiple}x{multiple}")
    top, left = (h - nh) // 2, (w - nw) // 2
    return img[top:top + nh, left:left + nw]


# Codecs

def quantization_table(quality):
    """Luminance table scaled by the IJG quality rule"""
    if not 1 <= quality <= 100:
        raise DegradationError(f"dct_q: quality {quality} outside [1, 100]")
    factor = 5000 / quality if quality < 50 else 200 - 2 * quality
    table = np.floor((LUMA_TABLE * factor + 50) / 100)
    table[table < 1] = 1
    return table


def dct_q_roundtrip(img, quality):
    """8×8 block DCT, quantise, dequantise, inverse DCT; each channel on its own"""
    table = quantization_table(quality)
    h, w = img.shape[:2]
    pad_h, pad_w = (-h) % BLOCK, (-w) % BLOCK
    levels = np.pad(img * 255.0 - 128.0, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")
    out = np.empty_like(levels)
    for c in range(levels.shape[2]):
        for y in range(0, levels.shape[0], BLOCK):
            for x in range(0, levels.shape[1], BLOCK):
                block = np.ascontiguousarray(levels[y:y + BLOCK, x:x + BLOCK, c])
                coeffs = np.floor(cv2.dct(block) / table + 0.5)
                out[y:y + BLOCK, x:x + BLOCK, c] = cv2.idct(coeffs * table)
    return np.clip((out[:h, :w] + 128.0) / 255.0, 0.0, 1.0)


def blur_q_roundtrip(img, quality):
    """Gaussian blur with sigma 1.6/quality, then 2^(quality+2) levels per channel"""
    low, high = CODEC_QUALITY_RANGES["blur_q"]
    if not low <= quality <= high:
        raise DegradationError(f"blur_q: quality {quality} outside [{low}, {high}]")
    sigma = 1.6 / quality
    blurred = cv2.GaussianBlur(
        np.ascontiguousarray(img, dtype=np.float64), (0, 0), sigmaX=sigma, sigmaY=sigma,
        borderType=cv2.BORDER_REPLICATE,
    )
    steps = 2 ** (quality + 2) - 1
    return np.clip(np.round(blurred * steps) / steps, 0.0, 1.0)


CODECS = {"dct_q": dct_q_roundtrip, "blur_q": blur_q_roundtrip}


def apply_codec(img, spec):
    if spec.codec not in CODECS:
        raise DegradationError(f"{spec.codec} has no built-in codec; its LR images come from an external directory")
    return CODECS[spec.codec](img, spec.quality)


def prepare_pair(hr, spec):
    """Return (cropped HR, LR before the codec, LR after the codec)"""
    hr = crop_to_multiple(hr, spec.scale)
    lr_clean = bicubic_downsample(hr, spec.scale)
    return hr, lr_clean, apply_codec(lr_clean, spec)


# Synthetic sources

def synthesize_image(size, rng):
    """Smooth colour fields with a few hard-edged shapes and fine texture"""
    h, w = (size, size) if np.isscalar(size) else size
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    img = np.zeros((h, w, 3))
    for c in range(3):
        for _ in range(4):
            fy, fx = rng.uniform(0.5, 6.0, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            img[..., c] += rng.uniform(0.2, 1.0) * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
    for _ in range(int(rng.integers(3, 7))):
        cy, cx = rng.uniform(0, 1, size=2)
        radius = rng.uniform(0.05, 0.25)
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 < radius ** 2
        img[mask] += rng.uniform(-1.5, 1.5, size=3)
    img += 0.15 * np.sin(2 * np.pi * 0.35 * np.arange(w))[None, :, None] * rng.uniform(0.2, 1.0)
    img -= img.min()
    return img / max(img.max(), 1e-8)


def synthesize_images(count, size, seed):
    return [synthesize_image(size, np.random.default_rng([seed, i])) for i in range(count)]


def write_synthetic_images(out_dir, count, size, seed):
    out_dir = Path(out_dir)
    paths = []
    for i, img in enumerate(synthesize_images(count, size, seed)):
        path = out_dir / f"synth_{i:04d}.png"
        save_image(path, img)
        paths.append(path)
    logger.info(f"Wrote {count} synthetic {size}px images to {out_dir}")
    return paths


# Manifests

@dataclass
class ManifestEntry:
    hr_path: str
    lr_path: str
    spec: DegradationSpec

    def to_dict(self):
        return {"hr_path": self.hr_path, "lr_path": self.lr_path, "spec": str(self.spec)}


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)
    split: str = "train"
    seed: int = 0
    root: Path = Path(".")

    def __len__(self):
        return len(self.entries)

    def resolve(self, relative):
        return self.root / relative

    def specs(self):
        """Distinct specs in first-seen order"""
        seen = {}
        for entry in self.entries:
            seen.setdefault(str(entry.spec), entry.spec)
        return list(seen.values())

    def to_dict(self):
        return {"split": self.split, "seed": self.seed, "entries": [e.to_dict() for e in self.entries]}

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise DatasetError(f"cannot read manifest {path}: {e}") from e
        if not isinstance(raw, dict) or not isinstance(raw.get("entries", []), list):
            raise DatasetError(f"manifest {path} must be an object with an 'entries' list")
        entries = []
        for i, item in enumerate(raw.get("entries", [])):
            try:
                entries.append(ManifestEntry(item["hr_path"], item["lr_path"], DegradationSpec.parse(item["spec"])))
            except (KeyError, TypeError, AttributeError) as e:
                raise DatasetError(f"manifest {path}: entry {i} needs hr_path, lr_path and spec ({e!r})") from e
            except DegradationError as e:
                raise DatasetError(f"manifest {path}: entry {i}: {e}") from e
        return cls(entries=entries, split=raw.get("split", "train"), seed=raw.get("seed", 0), root=path.parent)


def _list_images(directory):
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def _pair_external(hr_paths, lr_dir):
    lr_by_stem = {p.stem: p for p in _list_images(lr_dir)}
    hr_stems = {p.stem for p in hr_paths}
    orphans = sorted(set(lr_by_stem) ^ hr_stems)
    if orphans:
        raise DatasetError(f"external pairs do not match by filename stem, orphans: {', '.join(orphans)}")
    return lr_by_stem


def build_dataset(hr_dir, specs, out_dir, seed=0, lr_dir=None, workers=1, split="train"):
    """
    Degrade every readable HR image under every spec and write
    out_dir/hr/<stem>.png, out_dir/<codec>_<quality>/<stem>.png and
    out_dir/manifest.json.
    """
    hr_dir, out_dir = Path(hr_dir), Path(out_dir)
    if not hr_dir.is_dir():
        raise DatasetError(f"HR directory {hr_dir} does not exist")
    specs = list(specs)
    if not specs:
        raise DatasetError("no degradation specs given")
    hr_paths = _list_images(hr_dir)
    _cached_image.cache_clear()

    external = {}
    if any(s.codec == "external" for s in specs):
        if lr_dir is None:
            raise DatasetError("codec 'external' needs an LR directory")
        external = _pair_external(hr_paths, lr_dir)

    def process(path):
        try:
            hr = crop_to_multiple(load_image(path))
        except (OSError, UnidentifiedImageError, DegradationError) as e:
            logger.warning(f"⚠️ Skipping unreadable image {path.name}: {e}")
            return []
        hr_rel = f"hr/{path.stem}.png"
        save_image(out_dir / hr_rel, hr)
        lr_clean = bicubic_downsample(hr)
        entries = []
        for spec in specs:
            if spec.codec == "external":
                lr = load_image(external[path.stem])
                if lr.shape[:2] != lr_clean.shape[:2]:
                    raise DatasetError(
                        f"{external[path.stem].name}: LR is {lr.shape[1]}x{lr.shape[0]}, "
                        f"expected {lr_clean.shape[1]}x{lr_clean.shape[0]} (HR / {SCALE})"
                    )
            else:
                lr = apply_codec(lr_clean, spec)
            lr_rel = f"{spec.tag}/{path.stem}.png"
            save_image(out_dir / lr_rel, lr)
            entries.append(ManifestEntry(hr_rel, lr_rel, spec))
        return entries

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(process, hr_paths))

    manifest = DatasetManifest(
        entries=[entry for group in results for entry in group], split=split, seed=seed, root=out_dir
    )
    if not manifest.entries:
        raise DatasetError(f"no usable images found in {hr_dir}")
    manifest.save(out_dir / "manifest.json")
    logger.info(f"📦 Built {len(manifest)} pairs from {len(hr_paths)} images × {len(specs)} specs in {out_dir}")
    return manifest


def split_manifest(manifest, eval_fraction, seed):
    """Split by HR image so no image lands in both halves"""
    stems = sorted({entry.hr_path for entry in manifest.entries})
    if not 0 <= eval_fraction < 1:
        raise DatasetError(f"eval fraction must be in [0, 1), got {eval_fraction}")
    n_eval = int(round(eval_fraction * len(stems)))
    if eval_fraction > 0 and len(stems) > 1:
        n_eval = min(max(n_eval, 1), len(stems) - 1)
    order = np.random.default_rng(seed).permutation(len(stems))
    held_out = {stems[i] for i in order[:n_eval]}
    train = [e for e in manifest.entries if e.hr_path not in held_out]
    evaluation = [e for e in manifest.entries if e.hr_path in held_out]
    return (
        DatasetManifest(train, "train", seed, manifest.root),
        DatasetManifest(evaluation, "eval", seed, manifest.root),
    )


def read_cached(path):
    """Decoded image, reused until the file changes on disk"""
    path = Path(path)
    try:
        mtime_ns = path.stat().st_mtime_ns
    except OSError as e:
        raise DatasetError(f"cannot read image {path}: {e}") from e
    return _cached_image(str(path), mtime_ns)


def load_pair(manifest, index):
    entry = manifest.entries[index]
    return read_cached(manifest.resolve(entry.lr_path)), read_cached(manifest.resolve(entry.hr_path))


# Patch sampling

class PatchParams(NamedTuple):
    row: int
    col: int
    hflip: bool
    vflip: bool


def draw_patch_params(lr_shape, patch, seed, index, step):
    """Crop origin and flips for one draw, derived from (seed, index, step) only"""
    h, w = lr_shape[:2]
    if h < patch or w < patch:
        raise DatasetError(f"LR image {w}x{h} is smaller than the {patch}x{patch} patch")
    rng = np.random.default_rng([seed, index, step])
    row = int(rng.integers(0, h - patch + 1))
    col = int(rng.integers(0, w - patch + 1))
    hflip, vflip = (bool(v) for v in rng.integers(0, 2, size=2))
    return PatchParams(row, col, hflip, vflip)


def apply_flips(img, hflip, vflip):
    if hflip:
        img = img[:, ::-1]
    if vflip:
        img = img[::-1]
    return np.ascontiguousarray(img)


def sample_patch(manifest, index, patch=64, seed=0, step=0):
    """Aligned (LR patch, HR patch); the HR origin is SCALE × the LR origin"""
    lr, hr = load_pair(manifest, index)
    p = draw_patch_params(lr.shape, patch, seed, index, step)
    scale = manifest.entries[index].spec.scale
    lr_patch = lr[p.row:p.row + patch, p.col:p.col + patch]
    hr_patch = hr[scale * p.row:scale * (p.row + patch), scale * p.col:scale * (p.col + patch)]
    return apply_flips(lr_patch, p.hflip, p.vflip), apply_flips(hr_patch, p.hflip, p.vflip)
