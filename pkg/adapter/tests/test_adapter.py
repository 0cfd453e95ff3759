"""Round-trip acceptance for the adapter: every file it writes must load in
the fusion engine, with unit-norm embeddings and deterministic outputs."""

import json
import os

import numpy as np
import pytest

from clipexport.cli import main as cli_main
from clipexport.extract import AdapterConfig, masked_crop, preprocess, tight_box
from clipexport.model import encode_images, tiny_random_bundle

from mvfusion.fusion import DenseFeatureMap, ObjectFeatureSet
from mvfusion.projection import object_visibility
from mvfusion.prompts import PromptBank
from mvfusion.sceneio import load_scene

UNIT_TOL = 1e-5


def _run(*argv):
    return cli_main(list(argv))


class TestObjectFeatures:
    def test_round_trip_into_engine(self, tmp_path, scene_dir):
        out = str(tmp_path / "objfeat.bin")
        assert _run("extract-objects", "--scene", scene_dir, "--out", out,
                    "--model", "tiny-debug") == 0
        objs = ObjectFeatureSet.load(out)
        scene = load_scene(scene_dir)
        assert objs.num_views == scene.num_views
        assert objs.num_objects == scene.num_objects
        assert objs.dim == 768
        counts = object_visibility(scene).counts[:, 1:]
        np.testing.assert_array_equal(objs.valid, counts > 0)
        norms = np.linalg.norm(objs.features[objs.valid], axis=1)
        assert np.abs(norms - 1.0).max() <= UNIT_TOL

    def test_eval_mode_is_deterministic(self, tmp_path, scene_dir):
        a, b = str(tmp_path / "a.bin"), str(tmp_path / "b.bin")
        for out in (a, b):
            assert _run("extract-objects", "--scene", scene_dir, "--out", out,
                        "--model", "tiny-debug") == 0
        assert open(a, "rb").read() == open(b, "rb").read()

    def test_payload_feeds_object_fusion(self, tmp_path, scene_dir, bundle):
        from mvfusion.fusion import fuse_objectwise, scatter_object_features
        from mvfusion.scene import aggregate_cloud, voxel_downsample

        out = str(tmp_path / "objfeat.bin")
        assert _run("extract-objects", "--scene", scene_dir, "--out", out,
                    "--model", "tiny-debug") == 0
        scene = load_scene(scene_dir)
        objs = ObjectFeatureSet.load(out)
        res = fuse_objectwise(objs, object_visibility(scene), weighting="lambda")
        assert not res.failed
        cloud, mask = aggregate_cloud(scene)
        cloud, mask = voxel_downsample(cloud, mask, 0.02)
        fc = scatter_object_features(res.features, mask, cloud, res.failed).normalized_copy()
        assert fc.dim == 768
        assert (fc.flags == 0).any()

    def test_missing_scene_is_io_error(self, tmp_path):
        assert _run("extract-objects", "--scene", str(tmp_path / "nope"),
                    "--out", str(tmp_path / "o.bin"), "--model", "tiny-debug") == 2


class TestCrops:
    def test_tight_box(self):
        mask = np.zeros((20, 30), bool)
        mask[5, 7] = mask[9, 12] = True
        assert tight_box(mask) == (7, 5, 6, 5)
        assert tight_box(np.zeros((4, 4), bool)) is None

    def test_crop_mask_paints_background(self):
        image = np.full((10, 10, 3), 200, np.uint8)
        mask = np.zeros((10, 10), bool)
        mask[2:5, 3:6] = True
        crop = masked_crop(image, mask, "crop-mask", "black")
        assert crop.shape == (3, 3, 3)
        assert (crop == 200).all()  # box is fully inside the mask
        mask[2, 3] = False
        crop = masked_crop(image, mask, "crop-mask", "black")
        assert (crop[0, 0] == 0).all()

    def test_crop_vs_crop_mask_differ_on_clutter(self, bundle):
        rng = np.random.default_rng(3)
        image = rng.integers(0, 255, (24, 24, 3), dtype=np.uint8)
        mask = np.zeros((24, 24), bool)
        mask[4:20, 4:12] = True
        mask[14:20, 12:20] = True  # L-shape: the tight box contains clutter
        a = masked_crop(image, mask, "crop", "black")
        b = masked_crop(image, mask, "crop-mask", "black")
        ea = encode_images(bundle, preprocess(a, bundle.image_size)[None])
        eb = encode_images(bundle, preprocess(b, bundle.image_size)[None])
        assert float(ea[0] @ eb[0]) < 1.0 - 1e-6

    def test_identical_crops_identical_embeddings(self, bundle):
        rng = np.random.default_rng(4)
        crop = rng.integers(0, 255, (16, 12, 3), dtype=np.uint8)
        x = preprocess(crop, bundle.image_size)
        e1 = encode_images(bundle, x[None])
        e2 = encode_images(bundle, x[None])
        assert float(e1[0] @ e2[0]) >= 1.0 - UNIT_TOL

    def test_preprocess_shape_and_padding(self):
        crop = np.full((10, 40, 3), 255, np.uint8)
        x = preprocess(crop, 32)
        assert x.shape == (32, 32, 3)
        # padded rows normalize to the dataset mean, i.e. near zero
        assert np.abs(x[0]).max() < 0.05


class TestDenseFeatures:
    def test_round_trip_into_engine(self, tmp_path, scene_dir):
        manifest = json.load(open(os.path.join(scene_dir, "manifest.json")))
        rgb = os.path.join(scene_dir, manifest["views"][0]["rgb"])
        out = str(tmp_path / "dense.bin")
        assert _run("extract-dense", "--image", rgb, "--out", out,
                    "--model", "tiny-debug", "--grid-divisor", "8") == 0
        dm = DenseFeatureMap.load(out, image_height=48, image_width=64)
        assert dm.grid.shape == (6, 8, 768)
        norms = np.linalg.norm(dm.grid.reshape(-1, 768), axis=1)
        assert np.abs(norms - 1.0).max() <= UNIT_TOL
        sample = dm.sample(np.array([[0, 0], [63, 47]]))
        assert sample.shape == (2, 768)

    def test_divisor_must_divide(self, tmp_path, scene_dir):
        manifest = json.load(open(os.path.join(scene_dir, "manifest.json")))
        rgb = os.path.join(scene_dir, manifest["views"][0]["rgb"])
        assert _run("extract-dense", "--image", rgb, "--out", str(tmp_path / "d.bin"),
                    "--model", "tiny-debug", "--grid-divisor", "7") == 3

    def test_deterministic(self, tmp_path, scene_dir):
        manifest = json.load(open(os.path.join(scene_dir, "manifest.json")))
        rgb = os.path.join(scene_dir, manifest["views"][0]["rgb"])
        a, b = str(tmp_path / "a.bin"), str(tmp_path / "b.bin")
        for out in (a, b):
            assert _run("extract-dense", "--image", rgb, "--out", out,
                        "--model", "tiny-debug") == 0
        assert open(a, "rb").read() == open(b, "rb").read()


class TestTextBank:
    def _spec(self, tmp_path):
        spec = {"instances": [
            {"id": 3, "texts": ["a red mug", "the crimson cup"]},
            {"id": 7, "texts": ["a cardboard box"]},
        ]}
        path = str(tmp_path / "texts.json")
        json.dump(spec, open(path, "w"))
        return path

    def test_round_trip_into_engine(self, tmp_path):
        out = str(tmp_path / "bank.bin")
        assert _run("embed-texts", "--texts", self._spec(tmp_path), "--out", out,
                    "--model", "tiny-debug", "--canonical") == 0
        bank = PromptBank.load(out)
        assert bank.dim == 768
        assert bank.instance_ids == [3, 7]
        assert bank.prompt_sets[3].shape == (2, 768)
        assert bank.canonical is not None and bank.canonical.shape == (4, 768)
        for k in bank.instance_ids:
            norms = np.linalg.norm(bank.prompt_sets[k], axis=1)
            assert np.abs(norms - 1.0).max() <= UNIT_TOL
            assert np.linalg.norm(bank.mean_prompt(k)) == pytest.approx(1.0, abs=1e-9)

    def test_deterministic(self, tmp_path):
        spec = self._spec(tmp_path)
        a, b = str(tmp_path / "a.bin"), str(tmp_path / "b.bin")
        for out in (a, b):
            assert _run("embed-texts", "--texts", spec, "--out", out,
                        "--model", "tiny-debug") == 0
        assert open(a, "rb").read() == open(b, "rb").read()

    def test_empty_texts_rejected(self, tmp_path):
        path = str(tmp_path / "bad.json")
        json.dump({"instances": [{"id": 1, "texts": []}]}, open(path, "w"))
        assert _run("embed-texts", "--texts", path, "--out", str(tmp_path / "o.bin"),
                    "--model", "tiny-debug") == 3
