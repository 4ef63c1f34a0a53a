"""
Image quality metrics and offset analysis
PSNR / SSIM on RGB in [0, 1], manifest evaluation with per-spec
aggregates, the bicubic ×4 reference predictor and histogram dumps of
the offsets a model predicts
"""

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import cv2
import numpy as np

from ucip.degrade import bicubic_upsample, load_pair
from ucip.errors import DatasetError, ShapeMismatchError
from ucip.model import OffsetRecorder, forward
from ucip.numerics import Tensor, no_grad

logger = logging.getLogger(__name__)

PSNR_CAP = 100.0
MSE_FLOOR = 1e-10
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
OFFSET_CSV_COLUMNS = ("block", "ptmm", "axis", "i", "j", "c", "offset", "reused")


def _check_pair(op, a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(op, a.shape, b.shape)
    return a, b


def psnr(a, b):
    """10·log10(1 / MSE) in dB, capped at 100 dB for near-identical images"""
    a, b = _check_pair("psnr", a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < MSE_FLOOR:
        return PSNR_CAP
    return 10.0 * np.log10(1.0 / mse)


def _gaussian_window():
    kernel = cv2.getGaussianKernel(SSIM_WINDOW, SSIM_SIGMA)
    return np.outer(kernel, kernel.transpose())


def _ssim_channel(x, y, window):
    crop = SSIM_WINDOW // 2

    def filt(img):
        return cv2.filter2D(img, -1, window)[crop:-crop, crop:-crop]

    mu_x, mu_y = filt(x), filt(y)
    mu_xx, mu_yy, mu_xy = mu_x * mu_x, mu_y * mu_y, mu_x * mu_y
    sigma_xx = filt(x * x) - mu_xx
    sigma_yy = filt(y * y) - mu_yy
    sigma_xy = filt(x * y) - mu_xy
    ssim_map = ((2 * mu_xy + SSIM_C1) * (2 * sigma_xy + SSIM_C2)) / (
        (mu_xx + mu_yy + SSIM_C1) * (sigma_xx + sigma_yy + SSIM_C2)
    )
    return ssim_map


def ssim(a, b):
    """Gaussian-window SSIM over valid positions, averaged over RGB"""
    a, b = _check_pair("ssim", a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ShapeMismatchError("ssim", f"H, W >= {SSIM_WINDOW}", a.shape[:2], "image smaller than the SSIM window")
    window = _gaussian_window()
    maps = [_ssim_channel(a[..., c], b[..., c], window) for c in range(a.shape[2])]
    return float(np.mean(maps))


@dataclass
class SpecScores:
    psnr_mean: float
    ssim_mean: float
    count: int


@dataclass
class EvalReport:
    per_spec: dict = field(default_factory=dict)
    overall: SpecScores = None

    def to_dict(self):
        return {
            "per_spec": {spec: asdict(scores) for spec, scores in self.per_spec.items()},
            "overall": asdict(self.overall),
        }

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path

    @classmethod
    def load(cls, path):
        raw = json.loads(Path(path).read_text())
        return cls(
            per_spec={spec: SpecScores(**scores) for spec, scores in raw["per_spec"].items()},
            overall=SpecScores(**raw["overall"]),
        )

    def psnr_delta(self, other):
        """PSNR of self minus PSNR of other, per shared spec and overall"""
        delta = {
            spec: self.per_spec[spec].psnr_mean - other.per_spec[spec].psnr_mean
            for spec in self.per_spec if spec in other.per_spec
        }
        delta["overall"] = self.overall.psnr_mean - other.overall.psnr_mean
        return delta


class BicubicBaseline:
    """Reference predictor: MATLAB-convention bicubic ×4 upsampling"""

    def predict(self, x_lr):
        return bicubic_upsample(x_lr)


def evaluate(predictor, manifest, workers=1):
    """Full-image inference on every manifest entry; anything with .predict(lr) works"""
    if manifest is None or len(manifest) == 0:
        raise DatasetError("evaluation manifest is empty")

    def score(index):
        lr, hr = load_pair(manifest, index)
        sr = predictor.predict(lr)
        return psnr(sr, hr), ssim(sr, hr)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        scores = list(pool.map(score, range(len(manifest))))

    grouped = {}
    for entry, pair in zip(manifest.entries, scores):
        grouped.setdefault(str(entry.spec), []).append(pair)
    per_spec = {
        spec: SpecScores(
            psnr_mean=float(np.mean([p for p, _ in pairs])),
            ssim_mean=float(np.mean([s for _, s in pairs])),
            count=len(pairs),
        )
        for spec, pairs in grouped.items()
    }
    overall = SpecScores(
        psnr_mean=float(np.mean([p for p, _ in scores])),
        ssim_mean=float(np.mean([s for _, s in scores])),
        count=len(scores),
    )
    for spec, s in per_spec.items():
        logger.debug(f"{spec}: PSNR {s.psnr_mean:.3f} dB, SSIM {s.ssim_mean:.4f} over {s.count} image(s)")
    return EvalReport(per_spec=per_spec, overall=overall)


# Offset analysis

@dataclass
class FieldStats:
    block: int
    ptmm: int
    axis: str
    reused: bool
    source_ptmm: int
    bin_edges: list
    counts: list
    min: float
    max: float
    mean: float
    std: float
    centre_token: list
    csv_path: str = None


@dataclass
class OffsetStats:
    fields: list = field(default_factory=list)

    def fresh(self):
        return [f for f in self.fields if not f.reused]

    def to_dict(self):
        return {"fields": [asdict(f) for f in self.fields]}


def _field_stats(record, bins):
    values = record.values.reshape(record.values.shape[-3:])
    h, w = values.shape[:2]
    counts, edges = np.histogram(values, bins=bins)
    return FieldStats(
        block=record.block,
        ptmm=record.ptmm,
        axis=record.axis,
        reused=record.reused,
        source_ptmm=record.source_ptmm,
        bin_edges=edges.tolist(),
        counts=counts.tolist(),
        min=float(values.min()),
        max=float(values.max()),
        mean=float(values.mean()),
        std=float(values.std()),
        centre_token=values[h // 2, w // 2].tolist(),
    )


def _write_field_csv(path, record):
    values = record.values.reshape(record.values.shape[-3:])
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(OFFSET_CSV_COLUMNS)
        for (i, j, c), offset in np.ndenumerate(values):
            writer.writerow((record.block, record.ptmm, record.axis, i, j, c, repr(float(offset)), int(record.reused)))


def dump_offsets(model, image, out_dir, bins=50):
    """
    Run one instrumented forward pass and write a CSV for every freshly
    predicted offset field plus offset_stats.json. Mixers that reuse
    their predecessor's offsets get a stats entry pointing at it instead
    of a second CSV.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    recorder = OffsetRecorder()
    with no_grad():
        forward(model, Tensor(np.asarray(image), dtype=model.dtype), recorder)

    stats = OffsetStats()
    for record in recorder.records:
        entry = _field_stats(record, bins)
        if not record.reused:
            path = out_dir / f"offsets_b{record.block}_p{record.ptmm}_{record.axis}.csv"
            _write_field_csv(path, record)
            entry.csv_path = path.name
        else:
            entry.csv_path = f"offsets_b{record.block}_p{record.source_ptmm}_{record.axis}.csv"
        stats.fields.append(entry)

    (out_dir / "offset_stats.json").write_text(json.dumps(stats.to_dict(), indent=2) + "\n")
    logger.info(f"🔎 Dumped {len(stats.fresh())} offset fields ({len(stats.fields)} incl. reused) to {out_dir}")
    return stats
