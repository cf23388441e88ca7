import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coli import metrics
from coli.errors import ShapeError
from coli.pixel_io import Image
from coli.synthetic import textured_image

from .oracles import ref_ms_ssim, ref_psnr, ref_ssim_loop, ref_ssim_terms


def fixed_pair_256():
    a = textured_image(256, seed=0).data[:, :, 0]
    noise = np.random.default_rng(99).normal(0, 12, size=a.shape)
    b = np.clip(np.rint(a + noise), 0, 255).astype(np.uint8)
    return a, b


def test_psnr_one_pixel():
    # the formula gives 5.98660; the commonly quoted 5.9864 is a rounding slip
    expected = 10 * math.log10(65025 / 16384)
    assert expected == pytest.approx(5.9864, abs=3e-4)
    got = metrics.psnr(np.array([[0]], np.uint8), np.array([[128]], np.uint8))
    assert abs(got - expected) < 1e-6


def test_psnr_identical_is_capped():
    a = textured_image(32).data
    assert metrics.psnr(a, a) == 100.0


def test_psnr_shape_mismatch():
    with pytest.raises(ShapeError):
        metrics.psnr(np.zeros((4, 4), np.uint8), np.zeros((4, 5), np.uint8))


@given(st.integers(0, 10_000))
def test_psnr_symmetric_and_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 256, size=(6, 5, 3), dtype=np.uint8)
    b = rng.integers(0, 256, size=(6, 5, 3), dtype=np.uint8)
    assert metrics.psnr(a, b) == metrics.psnr(b, a)
    assert abs(metrics.psnr(a, b) - ref_psnr(a, b)) < 1e-9
    assert metrics.psnr(a, b) <= 100.0


def test_psnr_monotone_in_noise():
    a = textured_image(64).data.astype(np.int64)
    values = []
    for amp in (4, 16, 64):
        noise = np.random.default_rng(amp).integers(-amp, amp + 1, size=a.shape)
        values.append(metrics.psnr(a, np.clip(a + noise, 0, 255).astype(np.uint8)))
    assert values[0] > values[1] > values[2]


def test_ssim_inverted_image_oracle():
    a = textured_image(32, seed=1).data[:, :, 0]
    b = 255 - a
    oracle = ref_ssim_loop(a, b)
    got = metrics.ssim(a, b)
    assert abs(got - oracle) < 1e-6
    assert got < 0.5


def test_ssim_identity_and_range():
    a = textured_image(32, seed=2).data
    assert metrics.ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    b = np.random.default_rng(0).integers(0, 256, size=a.shape, dtype=np.uint8)
    assert -1.0 <= metrics.ssim(a, b) <= 1.0


def test_ssim_too_small():
    with pytest.raises(ShapeError):
        metrics.ssim(np.zeros((10, 40), np.uint8), np.zeros((10, 40), np.uint8))


def test_ssim_rgb_is_channel_mean():
    rng = np.random.default_rng(5)
    a = rng.integers(0, 256, size=(20, 24, 3), dtype=np.uint8)
    b = rng.integers(0, 256, size=(20, 24, 3), dtype=np.uint8)
    per = [ref_ssim_terms(a[:, :, c], b[:, :, c])[0] for c in range(3)]
    assert abs(metrics.ssim(a, b) - np.mean(per)) < 1e-9


def test_ssim_luma_option():
    rng = np.random.default_rng(6)
    a = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    b = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    ya = a.astype(np.float64) @ np.array([0.299, 0.587, 0.114])
    yb = b.astype(np.float64) @ np.array([0.299, 0.587, 0.114])
    assert abs(metrics.ssim(a, b, luma=True) - ref_ssim_terms(ya, yb)[0]) < 1e-9


def test_ms_ssim_fixed_pair_oracle():
    a, b = fixed_pair_256()
    got = metrics.ms_ssim(a, b)
    assert abs(got - ref_ms_ssim(a, b)) < 1e-6
    assert 0.0 <= got <= 1.0


def test_ms_ssim_identity_and_nonnegative():
    a = textured_image(64, seed=3).data
    assert metrics.ms_ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert metrics.ms_ssim(a, 255 - a) >= 0.0


def test_ms_ssim_scale_reduction():
    assert metrics.ms_ssim_scales(256, 256) == 5
    assert metrics.ms_ssim_scales(176, 300) == 5
    assert metrics.ms_ssim_scales(64, 64) == 3
    assert metrics.ms_ssim_scales(11, 11) == 1
    a, b = fixed_pair_256()
    assert abs(metrics.ms_ssim(a[:40, :50], b[:40, :50]) - ref_ms_ssim(a[:40, :50], b[:40, :50])) < 1e-9
    with pytest.raises(ShapeError):
        metrics.ms_ssim(a[:8, :8], b[:8, :8])


def test_bpp():
    assert metrics.bpp(1000, 100, 100) == 0.8
    assert metrics.bpp(2000, 100, 100) == 2 * metrics.bpp(1000, 100, 100)
    with pytest.raises(ValueError):
        metrics.bpp(10, 0, 4)


@given(st.integers(0, 10**6), st.integers(1, 500), st.integers(1, 500))
def test_bpp_linear(n, w, h):
    assert metrics.bpp(3 * n, w, h) == pytest.approx(3 * metrics.bpp(n, w, h))


def test_report_serialization():
    a = textured_image(32)
    r = metrics.report(a, a, 256)
    assert r.psnr_db == 100.0 and r.ssim == pytest.approx(1.0) and r.bpp == 2.0
    d = json.loads(r.to_json())
    assert list(d) == list(metrics.REPORT_FIELDS)
    head, row = r.to_csv_row(header=True).strip().split("\n")
    assert head.split(",") == list(metrics.REPORT_FIELDS)
    assert row.split(",")[-1] == "256"


def test_report_small_image_skips_ssim():
    a = Image.from_array(np.zeros((4, 4), np.uint8))
    r = metrics.report(a, a, 4)
    assert r.psnr_db == 100.0 and math.isnan(r.ssim) and r.bpp == 2.0
