import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import psnr_literal, ssim_literal
from plenosplat.eval_metrics import (
    ImageMetrics,
    SizeReport,
    SurfaceDistanceStats,
    image_metrics,
    metrics_dict,
    psnr,
    size_report,
    surface_distance_stats,
    write_metrics,
)
from plenosplat.gaussian_model import GaussianModel, export_gs_ply
from plenosplat.plenoptic_io import PlenopticPointCloud, write_plenoptic_ply
from plenosplat.view_renderer import Image


def model_at(points):
    n = len(points)
    return GaussianModel(np.asarray(points, float).reshape(n, 3), np.zeros((n, 3)), np.tile([1.0, 0, 0, 0], (n, 1)),
                         np.zeros(n), np.zeros((n, 16, 3)))


def brute_nn(a, b):
    out = np.empty(len(a))
    for i, p in enumerate(a):
        out[i] = min(math.sqrt(float(np.sum((p - q) ** 2))) for q in b)
    return out


# -- image metrics ------------------------------------------------------------------


def test_identical_images():
    x = Image(np.random.default_rng(0).random((12, 12, 3)))
    m = image_metrics(x, x)
    assert m.psnr_db == math.inf
    assert m.ssim == pytest.approx(1.0, abs=1e-12)


def test_uniform_offset_is_20_db():
    a = np.full((8, 8, 3), 0.3)
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)


def test_random_pair_matches_literal_formulas():
    rng = np.random.default_rng(1)
    a, b = rng.random((15, 17, 3)), rng.random((15, 17, 3))
    m = image_metrics(Image(a), Image(b))
    assert m.psnr_db == pytest.approx(psnr_literal(a, b), abs=1e-9)
    assert m.ssim == pytest.approx(ssim_literal(a, b), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_metrics_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((9, 10, 3)), rng.random((9, 10, 3))
    m1, m2 = image_metrics(a, b), image_metrics(b, a)
    assert m1.psnr_db == m2.psnr_db
    assert abs(m1.ssim - m2.ssim) <= 1e-12
    assert -1.0 <= m1.ssim <= 1.0


def test_shape_mismatch():
    with pytest.raises(ValueError):
        image_metrics(np.zeros((4, 4, 3)), np.zeros((4, 3, 3)))


# -- surface distance -----------------------------------------------------------------


def test_single_splat_single_point():
    s = surface_distance_stats(model_at([[3.0, 4.0, 0.0]]), PlenopticPointCloud([[0, 0, 0]], np.zeros((1, 1, 3))))
    assert s.mean == s.max == s.median == s.p95 == 5.0


def test_equals_brute_force_exactly():
    rng = np.random.default_rng(2)
    pts = rng.random((1000, 3))
    splats = rng.random((1000, 3))
    s = surface_distance_stats(model_at(splats), pts)
    np.testing.assert_array_equal(s.distances, brute_nn(splats, pts))


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 60), m=st.integers(1, 60), seed=st.integers(0, 10**6))
def test_brute_force_property_and_order_stats(n, m, seed):
    rng = np.random.default_rng(seed)
    # a coarse lattice makes exact ties likely
    splats = rng.integers(0, 4, (n, 3)) * 0.5
    pts = rng.integers(0, 4, (m, 3)) * 0.5 + 0.25 * rng.integers(0, 2, (m, 3))
    s = surface_distance_stats(model_at(splats), pts)
    np.testing.assert_array_equal(s.distances, brute_nn(splats, pts))
    assert np.all(s.distances >= 0)
    assert s.p95 <= s.max and s.median <= s.max and s.mean <= s.max


def test_frozen_centers_have_zero_distance():
    pts = np.random.default_rng(3).random((50, 3)).astype(np.float32)
    s = surface_distance_stats(model_at(pts[::2].astype(np.float64)), PlenopticPointCloud(pts, np.zeros((50, 1, 3))))
    assert s.max == 0.0


def test_empty_reference_rejected():
    with pytest.raises(ValueError):
        surface_distance_stats(model_at([[0, 0, 0]]), np.zeros((0, 3)))


def test_empty_model_stats():
    s = surface_distance_stats(GaussianModel.empty(3), np.zeros((1, 3)))
    assert s.distances.size == 0 and s.max == 0.0


# -- sizes -----------------------------------------------------------------------------


def test_size_report_exact_bytes_and_ratios():
    rng = np.random.default_rng(4)
    cloud = PlenopticPointCloud(rng.random((30, 3)), rng.integers(0, 256, (30, 4, 3)) / 255, rng.random((4, 3)))
    model = model_at(rng.random((12, 3)))
    r = size_report(model, cloud)
    assert r.plenoptic_bytes == len(write_plenoptic_ply(cloud))
    assert r.gs_bytes == len(export_gs_ply(model))
    assert r.byte_ratio == r.gs_bytes / r.plenoptic_bytes
    assert r.count_ratio == 12 / 30


def test_empty_sizes_are_headers():
    r = size_report(GaussianModel.empty(3), PlenopticPointCloud(np.zeros((0, 3)), np.zeros((0, 1, 3))))
    assert r.gs_bytes == len(export_gs_ply(GaussianModel.empty(3)))
    assert r.splat_count == 0 and r.point_count == 0
    assert math.isinf(r.count_ratio)


def test_gs_bytes_linear_in_splats():
    ref = PlenopticPointCloud(np.zeros((1, 3)), np.zeros((1, 1, 3)))
    sizes = {n: size_report(model_at(np.zeros((n, 3))), ref).gs_bytes for n in (100, 1000, 1900)}
    # header grows only with the digit count of the vertex total
    assert sizes[1000] - sizes[100] == 900 * 248 + 1
    assert sizes[1900] - sizes[1000] == 900 * 248


def test_250k_model_size():
    n = 250_000
    r = size_report(model_at(np.zeros((n, 3))), PlenopticPointCloud(np.zeros((1, 3)), np.zeros((1, 1, 3))))
    assert abs(r.gs_bytes - 62_000_000) < 2000


# -- JSON output --------------------------------------------------------------------


def test_metrics_json_keys_and_inf(tmp_path):
    d = metrics_dict(ImageMetrics(math.inf, 1.0), SurfaceDistanceStats.from_distances(np.array([0.0, 1.0])),
                     SizeReport(10, 20, 3, 4))
    for key in ("psnr_db", "ssim", "surface_p95", "splat_count", "gs_bytes", "pc_bytes"):
        assert key in d
    text = write_metrics(d, tmp_path / "m.json")
    back = json.loads((tmp_path / "m.json").read_text())
    assert text == (tmp_path / "m.json").read_text()
    assert back["psnr_db"] == "inf" and back["gs_bytes"] == 20
