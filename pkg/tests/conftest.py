import pytest

from mvfusion.synth import SynthConfig, gen_scene, gen_view_features, make_concept_bank


@pytest.fixture(scope="session")
def small_synth():
    """One deterministic 4-object, 8-view scene with clean features."""
    cfg = SynthConfig(seed=11, num_objects=4, num_views=8)
    scene, truth = gen_scene(cfg)
    bank = make_concept_bank(cfg)
    feats = gen_view_features(scene, bank, cfg)
    return cfg, scene, truth, bank, feats


@pytest.fixture(scope="session")
def corrupt_synth():
    """Scene with noisy features and 40% view corruption."""
    cfg = SynthConfig(seed=7, num_objects=6, num_views=16, sigma_feat=0.1, corruption=0.4)
    scene, truth = gen_scene(cfg)
    bank = make_concept_bank(cfg)
    feats = gen_view_features(scene, bank, cfg)
    return cfg, scene, truth, bank, feats
