import json
import os

import numpy as np
import pytest

from mvfusion.cli import EXIT_OK, EXIT_VALIDATION, main
from mvfusion.errors import ValidationError
from mvfusion.scene import PointCloud, aggregate_cloud
from mvfusion.sceneio import (load_labels, load_points_binary, load_scene, save_labels,
                              save_ply, save_points_binary, save_scene)
from mvfusion.synth import SynthConfig, gen_scene


class TestManifestRoundTrip:
    def test_scene_survives_save_load(self, tmp_path, small_synth):
        _, scene, _, _, _ = small_synth
        out = str(tmp_path / "scene")
        save_scene(scene, out)
        back = load_scene(out)
        assert back.num_objects == scene.num_objects
        assert back.object_instance_ids == scene.object_instance_ids
        for a, b in zip(back.views, scene.views):
            np.testing.assert_array_equal(a.depth, b.depth)
            np.testing.assert_array_equal(a.mask2d, b.mask2d)
            np.testing.assert_allclose(a.pose.matrix, b.pose.matrix)
            assert a.intrinsics == b.intrinsics

    def test_upscale_scales_world_coordinates(self, tmp_path, small_synth):
        # x10 upscale at load: lifted clouds are exactly 10x the original
        _, scene, _, _, _ = small_synth
        out = str(tmp_path / "scene")
        save_scene(scene, out)
        manifest = json.load(open(os.path.join(out, "manifest.json")))
        manifest["upscale"] = 10.0
        json.dump(manifest, open(os.path.join(out, "manifest.json"), "w"))
        scaled = load_scene(out)
        base_cloud, _ = aggregate_cloud(scene)
        scaled_cloud, _ = aggregate_cloud(scaled)
        np.testing.assert_allclose(scaled_cloud.points, base_cloud.points * 10.0,
                                   rtol=1e-5, atol=1e-5)

    def test_size_mismatch_rejected(self, tmp_path, small_synth):
        _, scene, _, _, _ = small_synth
        out = str(tmp_path / "scene")
        save_scene(scene, out)
        with open(os.path.join(out, "depth_000.bin"), "ab") as fh:
            fh.write(b"\x00\x00\x00\x00")
        with pytest.raises(ValidationError):
            load_scene(out)


class TestBinaryExports:
    def test_points_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        cloud = PointCloud(rng.standard_normal((17, 3)))
        path = str(tmp_path / "pts.bin")
        save_points_binary(path, cloud)
        back = load_points_binary(path)
        np.testing.assert_allclose(back.points, cloud.points, atol=1e-6)

    def test_labels_round_trip(self, tmp_path):
        labels = np.array([0, 3, 65535, 7], dtype=np.int64)
        path = str(tmp_path / "lab.u16")
        save_labels(path, labels)
        np.testing.assert_array_equal(load_labels(path), labels)

    def test_labels_range_checked(self, tmp_path):
        with pytest.raises(ValidationError):
            save_labels(str(tmp_path / "bad.u16"), np.array([70000]))

    def test_ply_format(self, tmp_path):
        cloud = PointCloud(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
        colors = np.array([[255, 0, 0], [0, 255, 0]], dtype=np.uint8)
        path = str(tmp_path / "c.ply")
        save_ply(path, cloud, colors)
        lines = open(path).read().splitlines()
        assert lines[0] == "ply"
        assert "element vertex 2" in lines
        assert lines[-2:] == ["1.000000 2.000000 3.000000 255 0 0",
                              "4.000000 5.000000 6.000000 0 255 0"]


class TestCliExports:
    @pytest.fixture()
    def fused(self, tmp_path):
        scene = str(tmp_path / "scene")
        out = str(tmp_path / "fused")
        assert main(["synth", "--out", scene, "--seed", "3", "--objects", "2",
                     "--views", "4", "--no-dense"]) == EXIT_OK
        assert main(["fuse", "--scene", scene, "--out", out]) == EXIT_OK
        return scene, os.path.join(out, "fused.bin")

    def test_export_points_binary(self, tmp_path, fused):
        _, cloud = fused
        out = str(tmp_path / "pts.bin")
        assert main(["export-ply", "--cloud", cloud, "--out", out, "--format", "bin"]) == EXIT_OK
        pts = load_points_binary(out)
        assert len(pts) > 0

    def test_eval_distill_task(self, tmp_path, fused):
        scene, cloud = fused
        out = str(tmp_path / "ev")
        assert main(["eval", "--task", "distill", "--scene", scene, "--cloud", cloud,
                     "--target", cloud, "--out", out]) == EXIT_OK
        report = json.load(open(os.path.join(out, "report.json")))
        assert report["aggregates"]["distill_loss"] == pytest.approx(0.0, abs=1e-9)

    def test_eval_distill_needs_target(self, tmp_path, fused):
        scene, cloud = fused
        assert main(["eval", "--task", "distill", "--scene", scene, "--cloud", cloud,
                     "--out", str(tmp_path / "e2")]) == EXIT_VALIDATION
