import hashlib
import json
import os

import numpy as np
import pytest

from mvfusion.cli import EXIT_IO, EXIT_OK, EXIT_VALIDATION, main
from mvfusion.fusion import FeatureCloud
from mvfusion.sceneio import load_labels


def _run(*argv):
    return main(list(argv))


def _hash_dir(path, skip=("run_manifest.json",)):
    """Stable digest of every artifact byte in a directory tree."""
    digest = hashlib.sha256()
    for root, _, files in sorted(os.walk(path)):
        for name in sorted(files):
            if name in skip:
                continue
            digest.update(name.encode())
            with open(os.path.join(root, name), "rb") as fh:
                digest.update(fh.read())
    return digest.hexdigest()


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("cli") / "scene")
    assert _run("synth", "--out", out, "--seed", "21", "--objects", "3",
                "--views", "6", "--sigma-feat", "0.05") == EXIT_OK
    return out


class TestSynth:
    def test_outputs_exist(self, scene_dir):
        for name in ("manifest.json", "bank.bin", "objfeat.bin", "gt.json",
                     "depth_000.bin", "mask_000.bin", "dense_000.bin", "run_manifest.json"):
            assert os.path.exists(os.path.join(scene_dir, name)), name

    def test_manifest_lists_payloads(self, scene_dir):
        manifest = json.load(open(os.path.join(scene_dir, "manifest.json")))
        assert manifest["num_objects"] == 3
        assert len(manifest["views"]) == 6
        assert all("dense_features" in v for v in manifest["views"])
        assert manifest["bank"] == "bank.bin"

    def test_rerun_is_byte_identical(self, tmp_path, scene_dir):
        other = str(tmp_path / "again")
        assert _run("synth", "--out", other, "--seed", "21", "--objects", "3",
                    "--views", "6", "--sigma-feat", "0.05") == EXIT_OK
        assert _hash_dir(other) == _hash_dir(scene_dir)


class TestFuseGroundClusterEval:
    def test_full_pipeline_deterministic_across_threads(self, tmp_path, scene_dir):
        hashes = set()
        for threads in ("1", "2", "8"):
            out = str(tmp_path / f"t{threads}")
            assert _run("fuse", "--scene", scene_dir, "--out", out,
                        "--threads", threads) == EXIT_OK
            hashes.add(_hash_dir(out))
        assert len(hashes) == 1

    def test_point_fusion_runs(self, tmp_path, scene_dir):
        out = str(tmp_path / "pt")
        assert _run("fuse", "--scene", scene_dir, "--out", out,
                    "--fusion", "point", "--weighting", "uniform") == EXIT_OK
        fc = FeatureCloud.load(os.path.join(out, "fused.bin"))
        assert len(fc.cloud) > 0

    def test_ground_and_cluster_and_eval(self, tmp_path, scene_dir):
        fused = str(tmp_path / "f")
        assert _run("fuse", "--scene", scene_dir, "--out", fused) == EXIT_OK
        cloud = os.path.join(fused, "fused.bin")
        manifest = json.load(open(os.path.join(scene_dir, "manifest.json")))
        k = str(manifest["object_instance_ids"][1])

        gdir = str(tmp_path / "g")
        assert _run("ground", "--cloud", cloud, "--bank",
                    os.path.join(scene_dir, "bank.bin"), "--out", gdir,
                    "--query-id", k, "--negatives", "scene", "--scene", scene_dir) == EXIT_OK
        labels = load_labels(os.path.join(gdir, "labels.u16"))
        gt = load_labels(os.path.join(fused, "gt_labels.u16"))
        np.testing.assert_array_equal(labels == 1, gt == 2)
        assert open(os.path.join(gdir, "heatmap.ply")).readline().strip() == "ply"

        cdir = str(tmp_path / "c")
        assert _run("cluster", "--cloud", cloud, "--out", cdir) == EXIT_OK
        inst = load_labels(os.path.join(cdir, "instances.u16"))
        assert len(set(inst[inst > 0])) == 3

        edir = str(tmp_path / "e")
        assert _run("eval", "--task", "referring", "--scene", scene_dir,
                    "--cloud", cloud, "--out", edir) == EXIT_OK
        report = json.load(open(os.path.join(edir, "report.json")))
        assert report["aggregates"]["miou"] == 1.0
        assert len(report["records"]) == 3
        assert report["interpretation_notes"]

    def test_semantic_and_instance_tasks(self, tmp_path, scene_dir):
        fused = str(tmp_path / "f2")
        assert _run("fuse", "--scene", scene_dir, "--out", fused) == EXIT_OK
        cloud = os.path.join(fused, "fused.bin")
        for task, key in (("semantic", "macc@25"), ("instance", "ap25")):
            out = str(tmp_path / task)
            assert _run("eval", "--task", task, "--scene", scene_dir,
                        "--cloud", cloud, "--out", out) == EXIT_OK
            report = json.load(open(os.path.join(out, "report.json")))
            assert report["aggregates"][key] == 1.0

    def test_sweep_views_has_one_row_per_count(self, tmp_path, scene_dir):
        out = str(tmp_path / "sweep")
        assert _run("eval", "--scene", scene_dir, "--out", out, "--sweep-views") == EXIT_OK
        rows = open(os.path.join(out, "report.csv")).read().strip().splitlines()
        assert rows[0].startswith("views,")
        assert [int(r.split(",")[0]) for r in rows[1:]] == [2, 4, 6]


class TestExitCodes:
    def test_missing_file_is_io_error(self, tmp_path):
        assert _run("fuse", "--scene", str(tmp_path / "nope"),
                    "--out", str(tmp_path / "o")) == EXIT_IO

    def test_validation_error(self, tmp_path, scene_dir):
        fused = str(tmp_path / "f")
        assert _run("fuse", "--scene", scene_dir, "--out", fused) == EXIT_OK
        # scene negatives without --scene
        assert _run("ground", "--cloud", os.path.join(fused, "fused.bin"),
                    "--bank", os.path.join(scene_dir, "bank.bin"),
                    "--out", str(tmp_path / "g"), "--query-id", "1",
                    "--negatives", "scene") == EXIT_VALIDATION

    def test_env_override(self, tmp_path, scene_dir, monkeypatch):
        monkeypatch.setenv("MVFUSION_WEIGHTING", "uniform")
        out = str(tmp_path / "envf")
        assert _run("fuse", "--scene", scene_dir, "--out", out) == EXIT_OK
        manifest = json.load(open(os.path.join(out, "run_manifest.json")))
        assert manifest["config"]["weighting"] == "uniform"
