import numpy as np
import pytest

from descry.core import Image, Rng
from descry.geomcorr import (
    BehindCameraError,
    CameraIntrinsics,
    PosedDepthFrame,
    correspondence_map,
    load_scene_dir,
    occlusion_tolerance,
    project,
    read_depth,
    sample_geometric_correspondences,
    unproject,
    write_depth,
    write_scene_dir,
)
from descry.scenegen import generate_planar_rgbd
from descry.warp import apply_points, solve_homography


K = CameraIntrinsics(fx=60.0, fy=60.0, cx=31.5, cy=31.5)


def rot_y(deg):
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def flat_frame(depth_value=1.0, pose=None, size=64):
    rot, trans = pose if pose else (np.eye(3), np.zeros(3))
    g = np.random.Generator(np.random.PCG64(0))
    rgb = Image(g.uniform(0, 1, size=(size, size, 3)).astype(np.float32))
    return PosedDepthFrame(
        rgb=rgb,
        depth=np.full((size, size), depth_value),
        rotation=rot,
        translation=trans,
        intrinsics=K,
    )


class TestIntrinsicsAndFrames:
    def test_bad_focal_rejected(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=0.0, fy=1.0, cx=0, cy=0)

    def test_non_orthonormal_rotation_rejected(self):
        with pytest.raises(ValueError, match="orthonormal"):
            flat_frame(pose=(np.eye(3) * 1.01, np.zeros(3)))

    def test_negative_depth_rejected(self):
        with pytest.raises(ValueError):
            PosedDepthFrame(
                rgb=Image(np.zeros((4, 4, 3))),
                depth=np.full((4, 4), -1.0),
                rotation=np.eye(3),
                translation=np.zeros(3),
                intrinsics=K,
            )


class TestProjection:
    def test_unproject_project_round_trip(self):
        frame = flat_frame(depth_value=2.0, pose=(rot_y(25.0), np.array([0.3, -0.1, 0.2])))
        for u, v in [(0, 0), (10, 20), (63, 63)]:
            world = unproject(frame, u, v)
            uu, vv, z = project(frame, world)
            assert np.allclose((uu, vv), (u, v), atol=1e-9)
            assert np.isclose(z, 2.0)

    def test_missing_depth_returns_none(self):
        frame = flat_frame()
        d = frame.depth.copy()
        d[5, 5] = 0.0
        frame = PosedDepthFrame(frame.rgb, d, frame.rotation, frame.translation, K)
        assert unproject(frame, 5, 5) is None

    def test_out_of_bounds_pixel_raises(self):
        with pytest.raises(IndexError):
            unproject(flat_frame(), 64, 0)

    def test_behind_camera_raises(self):
        with pytest.raises(BehindCameraError):
            project(flat_frame(), np.array([0.0, 0.0, -1.0]))

    def test_principal_point_maps_to_optical_axis(self):
        frame = flat_frame(depth_value=3.0)
        world = unproject(frame, 31, 31)
        # intrinsics center is at 31.5, so pixel 31 sits just off-axis
        assert np.allclose(world[:2], (-0.5 / 60.0 * 3.0, -0.5 / 60.0 * 3.0))
        assert np.isclose(world[2], 3.0)


class TestOcclusionTolerance:
    def test_floor_at_five_millimeters(self):
        assert occlusion_tolerance(np.array(0.1)) == 0.005

    def test_one_percent_at_range(self):
        assert np.isclose(occlusion_tolerance(np.array(2.0)), 0.02)


class TestCorrespondenceMap:
    def test_identical_frames_map_to_self(self):
        a = flat_frame(depth_value=1.5)
        cmap = correspondence_map(a, a)
        assert cmap.valid.all()
        h, w = a.depth.shape
        vs, us = np.mgrid[0:h, 0:w]
        assert np.allclose(cmap.target[..., 0], us, atol=1e-9)
        assert np.allclose(cmap.target[..., 1], vs, atol=1e-9)

    def test_missing_source_depth_invalid(self):
        a = flat_frame()
        d = a.depth.copy()
        d[3, 4] = 0.0
        a2 = PosedDepthFrame(a.rgb, d, a.rotation, a.translation, K)
        cmap = correspondence_map(a2, a)
        assert not cmap.valid[3, 4]

    def test_planar_pair_matches_analytic_homography(self):
        poses = [
            (np.eye(3), np.array([0.0, 0.0, -1.0])),
            (rot_y(15.0), rot_y(15.0) @ np.array([0.0, 0.0, -1.1]) + np.array([0.05, 0.0, 0.0])),
        ]
        frames = generate_planar_rgbd(
            K, plane_point=np.zeros(3), plane_normal=np.array([0.0, 0.0, -1.0]),
            camera_poses=poses, width=64, height=64,
        )
        a, b = frames
        cmap = correspondence_map(a, b)
        assert cmap.valid.mean() > 0.5
        # exact homography from 4 unprojected/projected reference points
        src = np.array([[5.0, 5.0], [58.0, 5.0], [58.0, 58.0], [5.0, 58.0]])
        dst = []
        for u, v in src:
            world = unproject(a, int(u), int(v))
            uu, vv, _ = project(b, world)
            dst.append([uu, vv])
        hmat = solve_homography(src, np.asarray(dst))
        vs, us = np.nonzero(cmap.valid)
        want = apply_points(hmat, np.stack([us, vs], axis=1).astype(np.float64))
        got = cmap.target[vs, us]
        err = np.linalg.norm(got - want, axis=1)
        assert (err < 0.5).mean() >= 0.99

    def test_occluded_surface_is_masked(self):
        # frame A sees a near plane over the left half; frame B's depth shows
        # only the far plane there, so those pixels must be masked out
        size = 64
        far = flat_frame(depth_value=2.0, size=size)
        near_depth = np.full((size, size), 2.0)
        near_depth[:, : size // 2] = 1.0
        a = PosedDepthFrame(far.rgb, near_depth, np.eye(3), np.zeros(3), K)
        cmap = correspondence_map(a, far)
        # reprojected depth 1.0 vs measured 2.0 disagrees far beyond tolerance
        assert not cmap.valid[:, : size // 2].any()
        assert cmap.valid[:, size // 2 :].all()


class TestSampling:
    def test_sample_counts_and_validity(self):
        a = flat_frame(depth_value=1.2)
        cmap = correspondence_map(a, a)
        corr = sample_geometric_correspondences(cmap, 100, Rng(0))
        assert len(corr) == 100
        assert corr.source == "geometric"
        assert not corr.short
        assert np.array_equal(corr.pixels_a, corr.pixels_b)  # identity pair

    def test_short_flag_when_not_enough_valid(self):
        a = flat_frame(size=8)
        cmap = correspondence_map(a, a)
        corr = sample_geometric_correspondences(cmap, 1000, Rng(0))
        assert corr.short and len(corr) == 64

    def test_empty_map_raises(self):
        a = flat_frame(size=8)
        zero = PosedDepthFrame(a.rgb, np.zeros((8, 8)), a.rotation, a.translation, K)
        with pytest.raises(ValueError):
            sample_geometric_correspondences(correspondence_map(zero, a), 5, Rng(0))


class TestSceneIO:
    def test_depth_round_trip(self, tmp_path):
        d = np.random.Generator(np.random.PCG64(1)).uniform(0.5, 3.0, size=(16, 24))
        write_depth(tmp_path / "d.depth", d)
        back = read_depth(tmp_path / "d.depth")
        assert np.allclose(back, d, atol=1e-6)  # float32 storage

    def test_depth_bad_magic(self, tmp_path):
        (tmp_path / "x.depth").write_bytes(b"JUNKxxxx")
        with pytest.raises(ValueError, match="magic"):
            read_depth(tmp_path / "x.depth")

    def test_scene_dir_round_trip(self, tmp_path):
        poses = [
            (np.eye(3), np.array([0.0, 0.0, -1.0])),
            (rot_y(10.0), np.array([0.1, 0.0, -1.0])),
        ]
        frames = generate_planar_rgbd(
            K, np.zeros(3), np.array([0.0, 0.0, -1.0]), poses, width=32, height=32
        )
        write_scene_dir(tmp_path / "scene", frames)
        back = load_scene_dir(tmp_path / "scene")
        assert len(back) == 2
        for f, g in zip(frames, back):
            assert np.allclose(f.depth, g.depth, atol=1e-6)
            assert np.allclose(f.rotation, g.rotation)
            assert np.allclose(f.translation, g.translation)
            assert np.allclose(f.rgb.data, g.rgb.data, atol=1 / 254)
