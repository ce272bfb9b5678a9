import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from plenosplat.camera_rig import (
    Camera,
    CameraExtrinsics,
    CameraIntrinsics,
    CameraSet,
    ColmapParseError,
    PoseError,
    UnsupportedCameraModelError,
    ViewportPose,
    export_colmap_model,
    fibonacci_sphere,
    generate_spherical_rig,
    import_colmap_cameras,
    import_colmap_points,
    look_at_pose,
    project_point,
    project_points,
    quat_to_rotmat,
    rotmat_to_quat,
    viewport_to_colmap,
)
from plenosplat.plenoptic_io import PlenopticPointCloud


def random_pose(rng):
    f = rng.standard_normal(3)
    f /= np.linalg.norm(f)
    u = rng.standard_normal(3)
    u -= (u @ f) * f
    u /= np.linalg.norm(u)
    u -= (u @ f) * f
    u /= np.linalg.norm(u)
    return ViewportPose(rng.standard_normal(3) * 4, u, f)


def naive_quat_to_matrix(q):
    # textbook formula, written out independently of the package
    w, x, y, z = q
    return np.array([
        [w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z],
    ])


# -- rig ---------------------------------------------------------------------


@pytest.mark.parametrize("n", [1, 2, 7, 44, 100])
def test_rig_positions_and_fronts(n):
    center = np.array([0.5, -1.0, 2.0])
    rig = generate_spherical_rig(n, center, 2.5)
    assert len(rig) == n
    assert [c.id for c in rig] == list(range(1, n + 1))
    for cam in rig:
        p = cam.viewport_pose
        assert abs(np.linalg.norm(p.position - center) - 2.5) < 1e-9
        inward = (center - p.position) / np.linalg.norm(center - p.position)
        assert abs(p.front @ inward - 1.0) < 1e-9
        assert abs(p.up @ p.front) < 1e-9
        # up leans toward +Y
        assert p.up[1] >= -1e-12


def test_rig_44_angular_separation():
    d = fibonacci_sphere(44)
    cos = np.clip(d @ d.T, -1, 1)
    np.fill_diagonal(cos, -1)
    min_sep = np.arccos(cos.max())
    ideal = math.sqrt(4 * math.pi / 44)  # side of an equal-area square cell
    assert min_sep >= 0.8 * ideal


def test_rig_center_projects_to_principal_point():
    intr = CameraIntrinsics(90.0, 95.0, 60.0, 40.0, 128, 96)
    rig = generate_spherical_rig(30, (0.2, 0.3, -0.1), 4.0, intr)
    for cam in rig:
        pr = project_point(cam.intrinsics, cam.extrinsics, [0.2, 0.3, -0.1])
        assert np.hypot(*(pr.pixel - [60.0, 40.0])) < 1.0
        assert pr.depth == pytest.approx(4.0)


def test_pole_camera_falls_back_to_x_up():
    pose = look_at_pose([0, 5.0, 0], [0, 0, 0])
    np.testing.assert_allclose(pose.up, [1, 0, 0], atol=1e-12)


# -- viewport -> colmap --------------------------------------------------------


def test_viewport_example_180_about_z():
    e = viewport_to_colmap(ViewportPose([0, 0, 0], [0, 1, 0], [0, 0, 1]))
    np.testing.assert_allclose(e.R, [[-1, 0, 0], [0, -1, 0], [0, 0, 1]], atol=1e-15)
    np.testing.assert_allclose(e.rotation, [0, 0, 0, 1], atol=1e-15)
    np.testing.assert_array_equal(e.translation, [0, 0, 0])
    assert np.linalg.det(e.R) == pytest.approx(1.0)


def test_viewport_identity_alignment():
    pos = np.array([1.0, 2.0, 3.0])
    # right = f x u must be +X, down = -u must be +Y, forward +Z
    e = viewport_to_colmap(ViewportPose(pos, [0, -1, 0], [0, 0, 1]))
    np.testing.assert_allclose(e.R, np.eye(3), atol=1e-15)
    np.testing.assert_allclose(e.rotation, [1, 0, 0, 0], atol=1e-15)
    np.testing.assert_allclose(e.translation, -pos, atol=1e-15)


def test_random_poses_orthonormal_and_fixed_point():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        pose = random_pose(rng)
        e = viewport_to_colmap(pose)
        R = e.R
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-9)
        assert abs(np.linalg.det(R) - 1) < 1e-9
        assert e.rotation[0] >= 0
        q2 = rotmat_to_quat(quat_to_rotmat(e.rotation))
        np.testing.assert_allclose(q2, e.rotation, atol=1e-12)
        # camera axes in world coordinates match the convention
        np.testing.assert_allclose(R[0], np.cross(pose.front, pose.up), atol=1e-12)
        np.testing.assert_allclose(R[1], -pose.up, atol=1e-12)
        np.testing.assert_allclose(R[2], pose.front, atol=1e-12)
        np.testing.assert_allclose(e.center, pose.position, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4))
def test_quaternion_matrix_agrees_with_textbook(q):
    q = np.array(q)
    if np.linalg.norm(q) < 1e-3:
        return
    q /= np.linalg.norm(q)
    np.testing.assert_allclose(quat_to_rotmat(q), naive_quat_to_matrix(q), atol=1e-12)
    back = rotmat_to_quat(quat_to_rotmat(q))
    assert back[0] >= 0
    # same rotation up to sign
    assert min(np.abs(back - q).max(), np.abs(back + q).max()) < 1e-9


def test_non_orthonormal_pose_rejected():
    with pytest.raises((PoseError, ValueError)):
        ViewportPose([0, 0, 0], [0, 1, 0], [0, 0.1, 1])
    bad = object.__new__(ViewportPose)
    object.__setattr__(bad, "position", np.zeros(3))
    object.__setattr__(bad, "up", np.array([0, 1.0, 0]))
    object.__setattr__(bad, "front", np.array([0, 1.0, 0]))
    with pytest.raises(PoseError):
        viewport_to_colmap(bad)


# -- projection ----------------------------------------------------------------


INTR = CameraIntrinsics(100.0, 100.0, 50.0, 50.0, 100, 100)


def test_projection_examples():
    ident = CameraExtrinsics.identity()
    p = project_point(INTR, ident, [0, 0, 1])
    np.testing.assert_array_equal(p.pixel, [50, 50])
    assert p.depth == 1 and not p.behind
    np.testing.assert_allclose(project_point(INTR, ident, [0.1, 0, 1]).pixel, [60, 50])
    assert project_point(INTR, ident, [0, 0, -1]).behind


def test_projection_with_skew():
    intr = CameraIntrinsics(100.0, 80.0, 50.0, 40.0, 100, 80, skew=5.0)
    pix, z = project_points(intr, CameraExtrinsics.identity(), [[0.2, 0.4, 2.0]])
    np.testing.assert_allclose(pix[0], [100 * 0.1 + 5 * 0.2 + 50, 80 * 0.2 + 40])


def test_projection_is_quaternion_consistent():
    rng = np.random.default_rng(5)
    for _ in range(50):
        e = viewport_to_colmap(random_pose(rng))
        pts = rng.standard_normal((20, 3)) * 3
        pix, z = project_points(INTR, e, pts)
        R = naive_quat_to_matrix(e.rotation)
        cam = pts @ R.T + e.translation
        ref = np.stack([100 * cam[:, 0] / cam[:, 2] + 50, 100 * cam[:, 1] / cam[:, 2] + 50], axis=1)
        assert np.all(np.isnan(pix[cam[:, 2] <= 0]))
        # away from the camera plane, so pixel magnitudes stay image-sized
        ok = cam[:, 2] > 0.5
        np.testing.assert_allclose(pix[ok], ref[ok], atol=1e-9, rtol=0)


def test_intrinsics_invariants():
    with pytest.raises(ValueError):
        CameraIntrinsics(0.0, 1.0, 1.0, 1.0, 2, 2)
    with pytest.raises(ValueError):
        CameraIntrinsics(1.0, 1.0, 5.0, 1.0, 2, 2)


def test_camera_ids_unique():
    rig = generate_spherical_rig(2)
    with pytest.raises(ValueError):
        CameraSet([rig[0], rig[0]])


# -- COLMAP text model ------------------------------------------------------------


def test_single_identity_camera_line(tmp_path):
    pose = ViewportPose([0, 0, 0], [0, -1, 0], [0, 0, 1])
    cam = Camera(1, INTR, viewport_to_colmap(pose), pose, "view_000.png")
    export_colmap_model(CameraSet([cam]), None, tmp_path)
    data = [ln for ln in (tmp_path / "images.txt").read_text().splitlines() if not ln.startswith("#")]
    assert data == ["1 1 0 0 0 0 0 0 1 view_000.png", ""]
    cams = [ln for ln in (tmp_path / "cameras.txt").read_text().splitlines() if not ln.startswith("#")]
    assert cams == ["1 PINHOLE 100 100 100 100 50 50"]


def test_round_trip_points_and_cameras(tmp_path):
    rng = np.random.default_rng(2)
    pos = rng.standard_normal((50, 3)).astype(np.float32)
    cols = rng.integers(0, 256, (50, 3, 3)) / 255
    cloud = PlenopticPointCloud(pos, cols)
    rig = generate_spherical_rig(12, (0.1, 0.2, 0.3), 3.3, CameraIntrinsics.centered(64, 48, 70.0))
    export_colmap_model(rig, cloud, tmp_path)
    p, c = import_colmap_points(tmp_path)
    np.testing.assert_allclose(p, pos, atol=1e-6)
    np.testing.assert_array_equal(c * 255, np.rint(cols.mean(axis=1) * 255))
    back = import_colmap_cameras(tmp_path)
    assert len(back) == 12
    for a, b in zip(rig, back):
        assert (a.id, a.image_name, a.intrinsics) == (b.id, b.image_name, b.intrinsics)
        np.testing.assert_allclose(a.extrinsics.rotation, b.extrinsics.rotation, atol=1e-6)
        np.testing.assert_allclose(a.position, b.position, atol=1e-6)
    # one shared intrinsics line
    assert sum(1 for ln in (tmp_path / "cameras.txt").read_text().splitlines() if not ln.startswith("#")) == 1


def test_skew_export_rejected(tmp_path):
    intr = CameraIntrinsics(100.0, 100.0, 50.0, 50.0, 100, 100, skew=0.1)
    pose = look_at_pose([0, 0, -3.0], [0, 0, 0])
    cam = Camera(1, intr, viewport_to_colmap(pose), pose, "a.png")
    with pytest.raises(UnsupportedCameraModelError):
        export_colmap_model(CameraSet([cam]), None, tmp_path)


def test_empty_points_file(tmp_path):
    (tmp_path / "points3D.txt").write_text("# nothing here\n")
    p, c = import_colmap_points(tmp_path)
    assert p.shape == (0, 3) and c.shape == (0, 3)


def test_short_points_line_names_line(tmp_path):
    (tmp_path / "points3D.txt").write_text("# header\n1 0 0 0 1 2 3 0\n2 0 0 0 1 2\n")
    with pytest.raises(ColmapParseError, match=":3"):
        import_colmap_points(tmp_path)


def test_missing_points_file(tmp_path):
    with pytest.raises(ColmapParseError):
        import_colmap_points(tmp_path)
