import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvfusion.errors import ValidationError
from mvfusion.projection import (ObjectVisibility, ProjectionConfig, build_visibility,
                                 in_fov, is_visible, object_visibility, project_point)
from mvfusion.scene import CameraIntrinsics, PointCloud, Scene, aggregate_cloud, depth_to_points
from mvfusion.synth import SynthConfig, gen_scene

from testutil import identity_view


class TestProjectPoint:
    def test_identity_camera(self):
        view = identity_view(np.ones((1, 1), dtype=np.float32))
        np.testing.assert_allclose(project_point([0, 0, 1], view), [0, 0, 1])

    def test_hand_arithmetic(self):
        view = identity_view(np.ones((3, 3), dtype=np.float32))
        u = project_point([1, 2, 2], view)
        np.testing.assert_allclose(u, [1, 2, 2])
        np.testing.assert_allclose([u[0] / u[2], u[1] / u[2]], [0.5, 1.0])

    def test_roundtrip_recovers_pixels(self, small_synth):
        _, scene, _, _, _ = small_synth
        view = scene.views[2]
        cloud = depth_to_points(view)
        vv, uu = np.nonzero(view.depth > 0)
        for i in range(0, len(cloud), 197):
            u = project_point(cloud.points[i], view)
            assert abs(u[0] / u[2] - uu[i]) < 0.5
            assert abs(u[1] / u[2] - vv[i]) < 0.5


class TestInFov:
    INTR = CameraIntrinsics(fx=1, fy=1, cx=0, cy=0, width=100, height=100)

    def test_inside(self):
        assert in_fov(np.array([0.0, 0.0, 1.0]), self.INTR)

    def test_negative_x(self):
        assert not in_fov(np.array([-1.0, 0.0, 1.0]), self.INTR)

    def test_zero_uz(self):
        assert not in_fov(np.array([50.0, 50.0, 0.0]), self.INTR)

    def test_behind_camera(self):
        assert not in_fov(np.array([10.0, 10.0, -1.0]), self.INTR)

    def test_boundary_is_half_open(self):
        assert in_fov(np.array([0.0, 0.0, 1.0]), self.INTR)
        assert not in_fov(np.array([100.0, 0.0, 1.0]), self.INTR)


class TestIsVisible:
    def _view(self):
        return identity_view(np.full((4, 4), 1.0, dtype=np.float32))

    def test_occluded_by_foreground(self):
        # back-projected depth 2.0 vs sensor depth 1.0
        assert not is_visible(np.array([0, 0, 2.0]), self._view(), ProjectionConfig(0.02))

    def test_within_tolerance(self):
        assert is_visible(np.array([0, 0, 1.01]), self._view(), ProjectionConfig(0.02))

    def test_invalid_depth_pixel(self):
        view = identity_view(np.zeros((4, 4), dtype=np.float32))
        assert not is_visible(np.array([0, 0, 1.0]), view, ProjectionConfig(0.02))

    def test_requires_fov(self):
        with pytest.raises(ValidationError):
            is_visible(np.array([-5.0, 0, 1.0]), self._view(), ProjectionConfig(0.02))


class TestBuildVisibility:
    def test_self_consistency_single_view(self, small_synth):
        _, scene, _, _, _ = small_synth
        sub = Scene(views=(scene.views[0],), num_objects=scene.num_objects,
                    object_instance_ids=scene.object_instance_ids)
        cloud, _ = aggregate_cloud(sub)
        vis = build_visibility(sub, cloud, ProjectionConfig(c_thr=1e-4))
        assert vis.point_vis.shape == (1, len(cloud))
        assert vis.point_vis.all()

    def test_empty_cloud(self, small_synth):
        _, scene, _, _, _ = small_synth
        vis = build_visibility(scene, PointCloud(np.empty((0, 3))))
        assert vis.point_vis.shape == (scene.num_views, 0)

    def test_point_behind_wall_invisible(self):
        # wall at depth 1; probe 1 m behind it
        view = identity_view(np.full((8, 8), 1.0, dtype=np.float32), fx=4, fy=4, cx=4, cy=4)
        scene = Scene(views=(view,), num_objects=0, object_instance_ids=())
        hidden = PointCloud(np.array([[0.0, 0.0, 2.0]]))
        vis = build_visibility(scene, hidden, ProjectionConfig(0.02))
        assert vis.point_vis[0, 0] == 0

    def test_occlusion_monotone_in_c_thr(self, small_synth):
        _, scene, _, _, _ = small_synth
        cloud, _ = aggregate_cloud(scene)
        sub = PointCloud(cloud.points[::37])
        prev = None
        for c_thr in (1e-4, 1e-3, 1e-2, 1e-1):
            vis = build_visibility(scene, sub, ProjectionConfig(c_thr))
            if prev is not None:
                assert np.all(vis.point_vis >= prev)
            prev = vis.point_vis

    def test_pixel_of_defined_iff_visible(self, small_synth):
        _, scene, _, _, _ = small_synth
        cloud, _ = aggregate_cloud(scene)
        vis = build_visibility(scene, PointCloud(cloud.points[::31]))
        visible = vis.point_vis.astype(bool)
        assert np.all(vis.pixel_of[visible] >= 0)
        assert np.all(vis.pixel_of[~visible] == -1)
        w = scene.views[0].intrinsics.width
        h = scene.views[0].intrinsics.height
        assert vis.pixel_of[visible][:, 0].max() < w
        assert vis.pixel_of[visible][:, 1].max() < h

    def test_threads_do_not_change_result(self, small_synth):
        _, scene, _, _, _ = small_synth
        cloud, _ = aggregate_cloud(scene)
        v1 = build_visibility(scene, cloud, threads=1)
        v8 = build_visibility(scene, cloud, threads=8)
        np.testing.assert_array_equal(v1.point_vis, v8.point_vis)
        np.testing.assert_array_equal(v1.pixel_of, v8.pixel_of)


class TestObjectVisibility:
    def test_pixel_count_definition(self):
        mask = np.zeros((10, 10), dtype=np.uint16)
        mask[:4, :5] = 2  # 20 pixels
        mask[6, 6] = 1
        view = identity_view(np.ones((10, 10), dtype=np.float32), mask)
        scene = Scene(views=(view,), num_objects=2, object_instance_ids=(5, 6))
        ov = object_visibility(scene)
        assert ov.counts[0][2] == 20
        assert ov.counts[0][1] == 1

    def test_absent_object_counts_zero(self):
        view = identity_view(np.ones((4, 4), dtype=np.float32))
        scene = Scene(views=(view,), num_objects=3, object_instance_ids=(1, 2, 3))
        ov = object_visibility(scene)
        assert np.all(ov.counts[0][1:] == 0)

    def test_matches_brute_force_pixel_scan(self, small_synth):
        _, scene, _, _, _ = small_synth
        ov = object_visibility(scene)
        for v in scene.views:
            for n in range(scene.num_objects + 1):
                expected = sum(1 for px in v.mask2d.reshape(-1) if px == n)
                assert ov.counts[v.id][n] == expected

    def test_zero_count_implies_no_visible_points(self, small_synth):
        # objects fully hidden in a view contribute no visible points there
        _, scene, _, _, _ = small_synth
        cloud, mask = aggregate_cloud(scene)
        vis = build_visibility(scene, cloud, ProjectionConfig(0.02))
        ov = object_visibility(scene)
        for v in range(scene.num_views):
            for n in range(1, scene.num_objects + 1):
                if ov.counts[v][n] == 0:
                    pts = mask.labels == n
                    assert vis.point_vis[v][pts].sum() == 0
