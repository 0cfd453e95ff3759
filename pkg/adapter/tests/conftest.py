import json
import os

import numpy as np
import pytest
from PIL import Image

from clipexport.model import tiny_random_bundle

from mvfusion.sceneio import read_manifest, save_scene
from mvfusion.synth import SynthConfig, gen_scene


@pytest.fixture(scope="session")
def bundle():
    return tiny_random_bundle(seed=7)


@pytest.fixture(scope="session")
def scene_dir(tmp_path_factory):
    """Synthetic scene directory extended with RGB renders (flat mask colors)."""
    out = str(tmp_path_factory.mktemp("adapter") / "scene")
    cfg = SynthConfig(seed=31, num_objects=3, num_views=4)
    scene, _ = gen_scene(cfg)
    save_scene(scene, out)
    palette = np.array([[40, 40, 40], [220, 60, 60], [60, 220, 60], [60, 60, 220]],
                       dtype=np.uint8)
    manifest = read_manifest(out)
    for meta in manifest["views"]:
        view = scene.views[int(meta["id"])]
        rgb = palette[np.minimum(view.mask2d, len(palette) - 1)]
        name = f"rgb_{view.id:03d}.png"
        Image.fromarray(rgb).save(os.path.join(out, name))
        meta["rgb"] = name
    with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return out
