import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import interp_color_literal, zbuffer_literal
from plenosplat.camera_rig import (
    CameraExtrinsics,
    CameraIntrinsics,
    generate_spherical_rig,
    import_colmap_cameras,
)
from plenosplat.plenoptic_io import Material, PlenopticPointCloud, specular_colors, synth_plenoptic
from plenosplat.view_renderer import (
    MANIFEST_NAME,
    DatasetManifest,
    DegenerateGeometryError,
    Image,
    RenderConfig,
    RenderConfigError,
    interpolate_color,
    interpolate_colors,
    load_dataset,
    rasterize_points,
    render_dataset,
    render_view,
)

RED, GREEN, BLUE = [1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]


# -- interpolation -------------------------------------------------------------


def test_orthogonal_camera_has_no_weight():
    out = interpolate_color([0, 0, 0], [RED, GREEN], [[0, 0, 2], [0, 2, 0]], [0, 0, 1], 10)
    np.testing.assert_array_equal(out, RED)


def test_mirror_cameras_average():
    out = interpolate_color([0, 0, 0], [RED, BLUE], [[1, 0, 2], [-1, 0, 2]], [0, 0, 1], 10)
    np.testing.assert_allclose(out, [0.5, 0, 0.5], rtol=1e-15)


def test_antipodal_viewer_falls_back_to_mean():
    out = interpolate_color([0, 0, 0], [GREEN], [[0, 0, 2]], [0, 0, -1], 10)
    np.testing.assert_array_equal(out, GREEN)
    out = interpolate_color([0, 0, 0], [RED, BLUE], [[0, 0, 2], [0, 1, 2]], [0, 0, -1], 10)
    np.testing.assert_allclose(out, [0.5, 0, 0.5])


def test_viewer_on_point_is_degenerate():
    with pytest.raises(DegenerateGeometryError):
        interpolate_color([1, 1, 1], [RED], [[0, 0, 2]], [1, 1, 1])


def test_random_configs_match_literal_equations():
    rng = np.random.default_rng(0)
    for _ in range(200):
        nc = int(rng.integers(1, 9))
        P = rng.standard_normal(3)
        cams = rng.standard_normal((nc, 3)) * 3
        cols = rng.random((nc, 3))
        V = rng.standard_normal(3) * 3
        n = float(rng.uniform(0.5, 20))
        got = interpolate_color(P, cols, cams, V, n)
        want = interp_color_literal(P, cols, cams, V, n)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-300)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), nc=st.integers(1, 8), n=st.floats(0.1, 40))
def test_blend_stays_in_color_hull(seed, nc, n):
    rng = np.random.default_rng(seed)
    cols = rng.random((nc, 3))
    out = interpolate_color(rng.standard_normal(3), cols, rng.standard_normal((nc, 3)) * 3,
                            rng.standard_normal(3) * 3, n)
    assert np.all(out >= cols.min(axis=0) - 1e-12) and np.all(out <= cols.max(axis=0) + 1e-12)


def test_vectorized_matches_scalar():
    rng = np.random.default_rng(1)
    P = rng.standard_normal((30, 3))
    cols = rng.random((30, 4, 3))
    cams = rng.standard_normal((4, 3)) * 3
    V = np.array([0.0, 4.0, 1.0])
    batch = interpolate_colors(P, cols, cams, V, 7.0)
    for i in range(30):
        np.testing.assert_allclose(batch[i], interpolate_color(P[i], cols[i], cams, V, 7.0), rtol=1e-15)


# -- splatting -------------------------------------------------------------------


INTR = CameraIntrinsics(40.0, 40.0, 16.0, 12.0, 32, 24)
IDENT = CameraExtrinsics.identity()


def lambertian(points, rgb, cams=((0, 0, -5.0),)):
    n = len(points)
    cols = np.repeat(np.asarray(rgb, dtype=float).reshape(-1, 1, 3), len(cams), axis=1)
    cols = np.broadcast_to(cols, (n, len(cams), 3))
    return PlenopticPointCloud(np.asarray(points, dtype=np.float32), cols, np.asarray(cams, dtype=float))


def test_on_axis_point_is_a_centered_disc():
    cloud = lambertian([[0, 0, 2.0]], [[0.2, 0.4, 0.6]])
    img = render_view(cloud, INTR, IDENT, [0, 0, -5], RenderConfig(point_radius_px=2.0, background=(0.1, 0.1, 0.1)))
    ys, xs = np.nonzero(np.any(img.pixels != 0.1, axis=2))
    assert set(zip(xs, ys)) == {(x, y) for x in range(32) for y in range(24) if (x - 16) ** 2 + (y - 12) ** 2 <= 4}
    np.testing.assert_array_equal(img.pixels[12, 16], [0.2, 0.4, 0.6])


def test_nearer_point_wins():
    cloud = lambertian([[0, 0, 3.0], [0, 0, 2.0]], [BLUE, RED])
    img = render_view(cloud, INTR, IDENT, [0, 0, -5])
    np.testing.assert_array_equal(img.pixels[12, 16], RED)


def test_empty_cloud_is_background():
    cloud = PlenopticPointCloud(np.zeros((0, 3)), np.zeros((0, 1, 3)), np.zeros((1, 3)))
    img = render_view(cloud, INTR, IDENT, [0, 0, -5], RenderConfig(background=(0.3, 0.2, 0.1)))
    assert np.all(img.pixels == [0.3, 0.2, 0.1])


def test_missing_capture_cameras():
    cloud = PlenopticPointCloud(np.zeros((1, 3)), np.zeros((1, 1, 3)))
    with pytest.raises(RenderConfigError):
        render_view(cloud, INTR, IDENT, [0, 0, -5])


def test_zbuffer_matches_brute_force():
    rng = np.random.default_rng(4)
    pts = rng.uniform(-0.6, 0.6, (60, 3)) + [0, 0, 2.5]
    pts[5] = pts[6]  # exact tie
    rig = generate_spherical_rig(3, (0, 0, 2.5), 2.0, INTR)
    for cam in rig:
        got, _ = rasterize_points(pts, INTR, cam.extrinsics, 1.7, chunk=17)
        e = cam.extrinsics
        want = zbuffer_literal(pts, e.R, e.translation, INTR.fx, INTR.fy, INTR.cx, INTR.cy, 32, 24, 1.7)
        np.testing.assert_array_equal(got, want)


def test_render_config_rejects_bad_values():
    with pytest.raises(ValueError):
        RenderConfig(sharpness_n=0)
    with pytest.raises(ValueError):
        RenderConfig(point_radius_px=-1)


# -- datasets ------------------------------------------------------------------


def test_png_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    img = Image(rng.integers(0, 256, (5, 7, 3)) / 255)
    img.save_png(tmp_path / "a.png")
    back = Image.load_png(tmp_path / "a.png")
    np.testing.assert_array_equal(back.pixels, img.pixels)


def test_render_dataset_44_views(tmp_path):
    intr = CameraIntrinsics.centered(24, 24, 30.0)
    cams = generate_spherical_rig(6).positions()
    cloud = synth_plenoptic("sphere", 300, cams, seed=0)
    rig = generate_spherical_rig(44, radius=3.0, intrinsics=intr)
    manifest = render_dataset(cloud, rig, RenderConfig(), tmp_path)
    assert len(manifest) == 44
    assert len(list((tmp_path / "images").glob("*.png"))) == 44
    doc = json.loads((tmp_path / MANIFEST_NAME).read_text())
    assert doc["images"][0] == {"image_name": "view_000.png", "camera_id": 1}
    m, cset, images = load_dataset(tmp_path)
    assert m == manifest and len(cset) == 44
    assert import_colmap_cameras(tmp_path / "sparse" / "0")[3].image_name == "view_003.png"


def test_manifest_json_round_trip():
    m = DatasetManifest([("a.png", 3), ("b.png", 1)])
    assert DatasetManifest.from_json(m.to_json()) == m
    with pytest.raises(ValueError):
        DatasetManifest([("a.png", 1), ("a.png", 2)])


def test_lambertian_point_same_color_in_every_view():
    intr = CameraIntrinsics.centered(48, 48, 60.0)
    cams = generate_spherical_rig(8).positions()
    cloud = synth_plenoptic("cube", 400, cams, Material((0.3, 0.6, 0.2), 0.0, 4.0), seed=2)
    rig = generate_spherical_rig(10, radius=3.0, intrinsics=intr)
    cfg = RenderConfig(point_radius_px=1.0)
    seen: dict[int, list] = {}
    for cam in rig:
        idx, _ = rasterize_points(cloud.positions, intr, cam.extrinsics, cfg.point_radius_px)
        img = render_view(cloud, intr, cam.extrinsics, cam.position, cfg)
        q = img.to_uint8()
        for y, x in zip(*np.nonzero(idx >= 0)):
            seen.setdefault(int(idx[y, x]), []).append(q[y, x].astype(int))
    multi = [np.array(v) for v in seen.values() if len(v) > 1]
    assert multi
    for v in multi:
        assert np.all(v.max(axis=0) - v.min(axis=0) <= 1)


def test_specular_render_matches_material_oracle():
    intr = CameraIntrinsics.centered(40, 40, 50.0)
    capture = generate_spherical_rig(12).positions()
    mat = Material((0.4, 0.3, 0.2), 0.6, 6.0)
    cloud = synth_plenoptic("sphere", 300, capture, mat, seed=3)
    cfg = RenderConfig(sharpness_n=10.0, point_radius_px=1.2)
    for cam in generate_spherical_rig(4, radius=3.0, intrinsics=intr):
        img = render_view(cloud, intr, cam.extrinsics, cam.position, cfg)
        got = img.to_uint8().astype(float) / 255
        e = cam.extrinsics
        winners = zbuffer_literal(cloud.positions, e.R, e.translation, intr.fx, intr.fy, intr.cx, intr.cy,
                                  40, 40, 1.2)
        for y, x in zip(*np.nonzero(winners >= 0)):
            k = winners[y, x]
            p = cloud.positions[k].astype(np.float64)
            n = p / np.linalg.norm(p)
            per_view = specular_colors(p[None], n[None], capture, mat)[0]
            want = interp_color_literal(p, per_view, capture, cam.position, 10.0)
            assert np.all(np.abs(got[y, x] - want) <= 2 / 255)
