#!/usr/bin/env python3
"""
Degradation pipeline tests
Spec parsing, the resize kernel, both built-in codecs, dataset building,
manifest splitting and aligned patch sampling
"""

import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

# Add project root to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from ucip.degrade import (
    LUMA_TABLE,
    DatasetManifest,
    DegradationSpec,
    apply_codec,
    bicubic_downsample,
    blur_q_roundtrip,
    build_dataset,
    crop_to_multiple,
    dct_q_roundtrip,
    draw_patch_params,
    imresize,
    load_image,
    load_pair,
    parse_specs,
    prepare_pair,
    quantization_table,
    sample_patch,
    save_image,
    split_manifest,
    synthesize_image,
    to_uint8,
    write_synthetic_images,
)
from ucip.errors import DatasetError, DegradationError
from utils.helpers import file_sha256

logger = logging.getLogger(__name__)

SPECS = parse_specs("dct_q:10,dct_q:40,blur_q:2")


def sample_image(size=32, seed=0):
    return synthesize_image(size, np.random.default_rng(seed))


def make_dataset(root, count=3, size=48, specs=SPECS):
    write_synthetic_images(root / "src", count, size, seed=0)
    return build_dataset(root / "src", specs, root / "data", seed=0)


def test_spec_parsing_and_tags():
    spec = DegradationSpec.parse(" dct_q:10 ")
    assert spec == DegradationSpec("dct_q", 10)
    assert spec.tag == "dct_q_10"
    assert str(spec) == "dct_q:10"
    assert [s.tag for s in SPECS] == ["dct_q_10", "dct_q_40", "blur_q_2"]


def test_invalid_specs_raise():
    for text in ("dct_q:0", "dct_q:101", "blur_q:5", "gzip:3", "dct_q", "dct_q:high"):
        with pytest.raises(DegradationError):
            DegradationSpec.parse(text)
    with pytest.raises(DegradationError):
        parse_specs(" , ")
    with pytest.raises(DegradationError):
        DegradationSpec("dct_q", 10, scale=2)


def test_quantization_table_scaling():
    assert np.array_equal(quantization_table(50), LUMA_TABLE)
    assert np.array_equal(quantization_table(100), np.ones((8, 8)))
    assert quantization_table(10)[0, 0] == 80
    with pytest.raises(DegradationError):
        quantization_table(0)


def test_dct_roundtrip_quality_ordering():
    img = sample_image()
    errors = {}
    for q in (10, 50, 90):
        out = dct_q_roundtrip(img, q)
        assert out.shape == img.shape
        assert out.min() >= 0.0 and out.max() <= 1.0
        errors[q] = np.abs(out - img).mean()
    assert errors[10] > errors[50] > errors[90]
    assert np.abs(dct_q_roundtrip(img, 100) - img).mean() < 2 / 255


def test_dct_roundtrip_pads_odd_sizes():
    img = sample_image()[:13, :21]
    assert dct_q_roundtrip(img, 40).shape == (13, 21, 3)


def test_blur_roundtrip_levels_and_ordering():
    img = sample_image()
    coarse, fine = blur_q_roundtrip(img, 1), blur_q_roundtrip(img, 4)
    assert np.allclose(coarse * 7, np.round(coarse * 7))
    assert np.abs(coarse - img).mean() > np.abs(fine - img).mean()
    with pytest.raises(DegradationError):
        blur_q_roundtrip(img, 0)


def test_external_codec_has_no_roundtrip():
    with pytest.raises(DegradationError):
        apply_codec(sample_image(), DegradationSpec("external", 0))


def test_imresize_preserves_constants():
    img = np.full((16, 24, 3), 0.3)
    small = imresize(img, 0.25)
    assert small.shape == (4, 6, 3)
    assert np.allclose(small, 0.3, atol=1e-12)
    assert np.allclose(imresize(small, 4.0), 0.3, atol=1e-12)


def test_downsample_shape_and_divisibility():
    assert bicubic_downsample(np.zeros((16, 20, 3))).shape == (4, 5, 3)
    with pytest.raises(DegradationError):
        bicubic_downsample(np.zeros((18, 20, 3)))
    assert crop_to_multiple(np.zeros((18, 21, 3))).shape == (16, 20, 3)
    with pytest.raises(DegradationError):
        crop_to_multiple(np.zeros((3, 20, 3)))


def test_prepare_pair_shapes():
    hr, lr_clean, lr = prepare_pair(sample_image(34), DegradationSpec("blur_q", 2))
    assert hr.shape == (32, 32, 3)
    assert lr_clean.shape == lr.shape == (8, 8, 3)


def test_build_dataset_layout_and_determinism():
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        manifest = make_dataset(root)
        assert len(manifest) == 9
        for tag in ("dct_q_10", "dct_q_40", "blur_q_2"):
            assert len(list((root / "data" / tag).glob("*.png"))) == 3
        assert [str(s) for s in manifest.specs()] == ["dct_q:10", "dct_q:40", "blur_q:2"]
        lr, hr = load_pair(manifest, 0)
        assert hr.shape == (48, 48, 3) and lr.shape == (12, 12, 3)

        rerun = build_dataset(root / "src", SPECS, root / "again", seed=0)
        assert file_sha256(root / "data" / "manifest.json") == file_sha256(root / "again" / "manifest.json")
        assert rerun.to_dict() == manifest.to_dict()

        loaded = DatasetManifest.load(root / "data" / "manifest.json")
        assert loaded.to_dict() == manifest.to_dict()
        assert loaded.root == root / "data"


def test_unreadable_images_are_skipped():
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        write_synthetic_images(root / "src", 2, 32, seed=0)
        (root / "src" / "broken.png").write_bytes(b"not an image")
        manifest = build_dataset(root / "src", SPECS[:1], root / "data")
        assert len(manifest) == 2


def test_missing_or_empty_source_raises():
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        with pytest.raises(DatasetError):
            build_dataset(root / "nowhere", SPECS, root / "data")
        (root / "empty").mkdir()
        with pytest.raises(DatasetError):
            build_dataset(root / "empty", SPECS, root / "data")
        with pytest.raises(DatasetError):
            DatasetManifest.load(root / "missing.json")


def test_external_pairs_by_stem():
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        write_synthetic_images(root / "src", 2, 32, seed=0)
        for path in sorted((root / "src").glob("*.png")):
            save_image(root / "lr" / path.name, bicubic_downsample(load_image(path)))
        spec = DegradationSpec("external", 75)
        manifest = build_dataset(root / "src", [spec], root / "data", lr_dir=root / "lr")
        assert len(manifest) == 2
        assert manifest.entries[0].lr_path.startswith("external_75/")

        save_image(root / "lr" / "stray.png", np.zeros((8, 8, 3)))
        with pytest.raises(DatasetError) as excinfo:
            build_dataset(root / "src", [spec], root / "data2", lr_dir=root / "lr")
        assert "stray" in str(excinfo.value)
        with pytest.raises(DatasetError):
            build_dataset(root / "src", [spec], root / "data3")


def test_split_has_no_shared_images():
    with tempfile.TemporaryDirectory() as tmp:
        manifest = make_dataset(Path(tmp))
        train, evaluation = split_manifest(manifest, 0.34, seed=0)
        train_hr = {e.hr_path for e in train.entries}
        eval_hr = {e.hr_path for e in evaluation.entries}
        assert len(eval_hr) == 1 and len(train_hr) == 2
        assert not train_hr & eval_hr
        assert len(train) + len(evaluation) == len(manifest)
        with pytest.raises(DatasetError):
            split_manifest(manifest, 1.0, seed=0)


def test_patches_are_aligned_and_deterministic():
    with tempfile.TemporaryDirectory() as tmp:
        manifest = make_dataset(Path(tmp))
        lr, hr = load_pair(manifest, 4)
        for step in range(5):
            lr_patch, hr_patch = sample_patch(manifest, 4, patch=8, seed=3, step=step)
            assert lr_patch.shape == (8, 8, 3) and hr_patch.shape == (32, 32, 3)
            p = draw_patch_params(lr.shape, 8, 3, 4, step)
            expected = hr[4 * p.row:4 * p.row + 32, 4 * p.col:4 * p.col + 32]
            if p.hflip:
                expected = expected[:, ::-1]
            if p.vflip:
                expected = expected[::-1]
            assert np.array_equal(hr_patch, expected)
            again = sample_patch(manifest, 4, patch=8, seed=3, step=step)
            assert np.array_equal(again[0], lr_patch) and np.array_equal(again[1], hr_patch)
        with pytest.raises(DatasetError):
            sample_patch(manifest, 0, patch=16)


def keys_cubic(x, a=-0.5):
    x = abs(x)
    if x <= 1:
        return (a + 2) * x ** 3 - (a + 3) * x ** 2 + 1
    if x <= 2:
        return a * x ** 3 - 5 * a * x ** 2 + 8 * a * x - 4 * a
    return 0.0


def naive_downsample(img, scale=4):
    """Per-pixel kernel sums with the stretched cubic and clamped borders"""
    s = 1.0 / scale

    def taps(in_len, out_len):
        table = []
        for x in range(1, out_len + 1):
            u = x / s + 0.5 * (1 - 1 / s)
            weights = {}
            for j in range(int(np.floor(u - 2 / s)) - 1, int(np.ceil(u + 2 / s)) + 2):
                src = min(max(j, 1), in_len) - 1
                weights[src] = weights.get(src, 0.0) + s * keys_cubic(s * (u - j))
            total = sum(weights.values())
            table.append({k: v / total for k, v in weights.items()})
        return table

    h, w = img.shape[:2]
    rows, cols = taps(h, h // scale), taps(w, w // scale)
    out = np.zeros((h // scale, w // scale, img.shape[2]))
    for i, row in enumerate(rows):
        for j, col in enumerate(cols):
            for a, wa in row.items():
                for b, wb in col.items():
                    out[i, j] += wa * wb * img[a, b]
    return out


def test_downsample_keeps_ramps_linear():
    ramp = np.tile(np.arange(64, dtype=np.float64)[None, :, None] / 64, (16, 1, 3))
    small = bicubic_downsample(ramp)
    assert small.shape == (4, 16, 3)
    # columns 2..13 read no clamped border pixels
    interior = small[0, 2:14, 0]
    assert np.abs(np.diff(interior, n=2)).max() < 1e-6
    assert np.allclose(interior, (4 * np.arange(3, 15) - 2.5) / 64, atol=1e-6)
    assert np.allclose(small, small[:1], atol=1e-12)


def test_downsample_checkerboard_matches_kernel_sums():
    yy, xx = np.mgrid[0:8, 0:8]
    board = np.repeat(((yy + xx) % 2).astype(np.float64)[..., None], 3, axis=2)
    small = bicubic_downsample(board)
    assert small.shape == (2, 2, 3)
    assert np.allclose(small, naive_downsample(board), atol=1e-12)
    assert np.abs(small - 0.5).max() < 0.05

    img = sample_image(24, seed=4)
    assert np.allclose(bicubic_downsample(img), naive_downsample(img), atol=1e-12)


def test_blur_high_frequency_energy_falls_with_quality():
    yy, xx = np.mgrid[0:64, 0:64]
    texture = 0.4 + 0.2 * np.sin(2 * np.pi * 15 / 48 * xx) + 0.15 * np.sin(2 * np.pi * 17 / 48 * yy)
    texture = np.repeat(texture[..., None], 3, axis=2)
    fy, fx = np.meshgrid(np.fft.fftfreq(48), np.fft.fftfreq(48), indexing="ij")
    high = np.maximum(np.abs(fy), np.abs(fx)) >= 0.25

    def high_energy(img):
        # the 8 pixel margin keeps replicated borders out of the window
        gray = img[8:56, 8:56].mean(axis=2)
        spectrum = np.abs(np.fft.fft2(gray - gray.mean())) ** 2
        return spectrum[high].sum()

    energies = [high_energy(blur_q_roundtrip(texture, q)) for q in (4, 3, 2, 1)]
    assert energies[0] > energies[1] > energies[2] > energies[3]
    assert high_energy(texture) > energies[0]


def test_lr_files_match_the_hr_files():
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        manifest = make_dataset(root, count=2, size=40)
        for entry in manifest.entries:
            hr = load_image(manifest.resolve(entry.hr_path))
            lr_clean = bicubic_downsample(hr)
            stem = Path(entry.hr_path).stem
            _, expected_clean, _ = prepare_pair(load_image(root / "src" / f"{stem}.png"), entry.spec)
            assert np.array_equal(lr_clean, expected_clean)
            with Image.open(manifest.resolve(entry.lr_path)) as stored:
                lr_bytes = np.asarray(stored.convert("RGB"))
            assert np.array_equal(lr_bytes, to_uint8(apply_codec(lr_clean, entry.spec)))


def test_rebuild_gives_identical_lr_files():
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        make_dataset(root, count=2, size=32)
        build_dataset(root / "src", SPECS, root / "again", seed=0)
        first = sorted(p.relative_to(root / "data") for p in (root / "data").rglob("*.png"))
        second = sorted(p.relative_to(root / "again") for p in (root / "again").rglob("*.png"))
        assert first == second and len(first) == 2 * (len(SPECS) + 1)
        for rel in first:
            assert file_sha256(root / "data" / rel) == file_sha256(root / "again" / rel)


def test_patch_origins_cover_every_position():
    counts = np.zeros((5, 5))
    flips = 0
    for step in range(1000):
        p = draw_patch_params((12, 12, 3), 8, seed=5, index=0, step=step)
        counts[p.row, p.col] += 1
        flips += p.hflip
    assert np.all(counts > 0)
    expected = 1000 / counts.size
    chi_square = ((counts - expected) ** 2 / expected).sum()
    # 24 degrees of freedom, 0.1% tail at about 51.2
    assert chi_square < 51.2
    assert 400 < flips < 600


def test_rebuilt_dataset_is_not_served_from_cache():
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        write_synthetic_images(root / "src", 1, 32, seed=0)
        first = build_dataset(root / "src", SPECS[:1], root / "data")
        lr_before, hr_before = load_pair(first, 0)

        write_synthetic_images(root / "src", 1, 32, seed=9)
        second = build_dataset(root / "src", SPECS[:1], root / "data")
        lr_after, hr_after = load_pair(second, 0)
        assert not np.array_equal(hr_before, hr_after)
        assert np.array_equal(hr_after, load_image(root / "data" / second.entries[0].hr_path))
        assert np.array_equal(lr_after, load_image(root / "data" / second.entries[0].lr_path))


def test_malformed_manifest_entries_raise_dataset_error():
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        broken = {
            "missing_lr.json": {"entries": [{"hr_path": "hr/a.png", "spec": "dct_q:10"}]},
            "bad_spec.json": {"entries": [{"hr_path": "hr/a.png", "lr_path": "x/a.png", "spec": "gzip:3"}]},
            "not_a_dict.json": {"entries": ["hr/a.png"]},
            "entries_not_a_list.json": {"entries": {"hr_path": "hr/a.png"}},
            "top_level_list.json": [],
        }
        for name, payload in broken.items():
            (root / name).write_text(json.dumps(payload))
            with pytest.raises(DatasetError):
                DatasetManifest.load(root / name)


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    tests = [(name, fn) for name, fn in sorted(globals().items()) if name.startswith("test_") and callable(fn)]
    failed = 0
    for name, fn in tests:
        try:
            fn()
            logger.info(f"✅ {name}")
        except Exception as e:
            failed += 1
            logger.error(f"❌ {name} - {e!r}")
    logger.info(f"🎯 {len(tests) - failed}/{len(tests)} passed")
    sys.exit(1 if failed else 0)
