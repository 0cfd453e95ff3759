import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvfusion.errors import ValidationError
from mvfusion.fusion import FeatureCloud
from mvfusion.grounding import (GroundingConfig, RansacConfig, dbscan_labels,
                                instance_segment, refer_probabilities, refer_segment,
                                remove_table, semantic_segment)
from mvfusion.prompts import QueryContext
from mvfusion.scene import PointCloud
from mvfusion.util import unit_rows

from oracles import brute_dbscan, same_partition


def _fc(rows, flags=None, normalized=False):
    rows = np.asarray(rows, dtype=np.float64)
    return FeatureCloud(PointCloud(np.zeros((rows.shape[0], 3))), rows, flags,
                        normalized=normalized)


def _ctx(pos, negs):
    negs = np.asarray(negs, dtype=np.float64).reshape(-1, len(pos)) if len(negs) else np.empty((0, len(pos)))
    strategy = "scene" if len(negs) else "none"
    return QueryContext(positive=np.asarray(pos, float), negatives=negs, strategy=strategy)


E = np.eye(4)


class TestSemanticSegment:
    def test_single_class(self):
        fc = _fc([E[0], E[1]])
        seg = semantic_segment(fc, E[2][None, :])
        assert np.all(seg.labels == 1)

    def test_exact_prototypes_recover_ground_truth(self):
        fc = _fc([E[0], E[1], E[2], E[1]])
        seg = semantic_segment(fc, np.stack([E[0], E[1], E[2]]))
        np.testing.assert_array_equal(seg.labels, [1, 2, 3, 2])
        np.testing.assert_allclose(seg.scores, 1.0)

    def test_ties_take_lowest_class(self):
        z = unit_rows(E[0] + E[1])
        seg = semantic_segment(_fc([z]), np.stack([E[0], E[1]]))
        assert seg.labels[0] == 1

    def test_matches_bruteforce_argmax(self):
        rng = np.random.default_rng(0)
        feats = rng.standard_normal((200, 8))
        prompts = rng.standard_normal((5, 8))
        seg = semantic_segment(_fc(feats), prompts)
        zn = unit_rows(feats)
        qn = unit_rows(prompts)
        for i in range(200):
            sims = [float(zn[i] @ qn[k]) for k in range(5)]
            assert seg.labels[i] == int(np.argmax(sims)) + 1
            assert seg.scores[i] == pytest.approx(max(sims), abs=1e-12)

    def test_flagged_rows_get_label_zero(self):
        fc = _fc([E[0], E[1]], flags=[0, 1])
        seg = semantic_segment(fc, np.stack([E[0], E[1]]))
        assert seg.labels[1] == 0 and seg.scores[1] == 0.0

    def test_empty_prompts_rejected(self):
        with pytest.raises(ValidationError):
            semantic_segment(_fc([E[0]]), np.empty((0, 4)))

    def test_argmax_invariant_to_feature_scaling_and_dominated_query(self):
        rng = np.random.default_rng(1)
        prompts = np.zeros((4, 7))
        prompts[:, :6] = unit_rows(rng.standard_normal((4, 6)))
        assign = rng.integers(0, 4, size=100)
        feats = prompts[assign] + 0.1 * np.pad(rng.standard_normal((100, 6)), ((0, 0), (0, 1)))
        base = semantic_segment(_fc(feats), prompts)
        scaled = semantic_segment(_fc(feats * 3.7), prompts)
        np.testing.assert_array_equal(base.labels, scaled.labels)
        # a query with cosine 0 everywhere is strictly dominated (winners > 0)
        assert base.scores.min() > 0
        dominated = np.zeros((1, 7))
        dominated[0, 6] = 1.0
        seg2 = semantic_segment(_fc(feats), np.concatenate([prompts, dominated]))
        np.testing.assert_array_equal(base.labels, seg2.labels)


class TestReferProbabilities:
    def test_equal_cosines_give_uniform_softmax(self):
        # the all-ones feature has cosine 1/2 to every basis query
        z = unit_rows(np.ones(4))
        fc = _fc([z, z])
        for gamma in (0.05, 0.1, 1.0):
            rho, pneg = refer_probabilities(fc, _ctx(E[0], [E[1], E[2], E[3]]), gamma)
            np.testing.assert_allclose(rho, 0.25, atol=1e-9)
            np.testing.assert_allclose(pneg, 0.25, atol=1e-9)

    def test_no_negatives_degenerates_to_one(self):
        fc = _fc([E[0], E[1]])
        rho, pneg = refer_probabilities(fc, _ctx(E[0], []), 0.1)
        np.testing.assert_allclose(rho, 1.0)
        assert pneg.shape == (2, 0)

    def test_scalar_softmax_value(self):
        # cosines (1, 0, 0, 0) at gamma=1 -> e / (e + 3)
        fc = _fc([E[0]])
        rho, _ = refer_probabilities(fc, _ctx(E[0], [E[1], E[2], E[3]]), 1.0)
        assert rho[0] == pytest.approx(np.e / (np.e + 3.0), abs=1e-9)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        fc = _fc(rng.standard_normal((50, 8)))
        ctx = _ctx(unit_rows(rng.standard_normal(8)), unit_rows(rng.standard_normal((4, 8))))
        rho, pneg = refer_probabilities(fc, ctx, 0.1)
        np.testing.assert_allclose(rho + pneg.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(rho > 0) and np.all(rho < 1)

    def test_gamma_must_be_positive(self):
        with pytest.raises(ValidationError):
            refer_probabilities(_fc([E[0]]), _ctx(E[0], [E[1]]), 0.0)


class TestReferSegment:
    def test_threshold_rule_hand_case(self):
        # rho = (0.96, 0.50) against s_thr = 0.95 -> labels (1, 0)
        # with one negative, rho = sigmoid((c_pos - c_neg)/gamma), so the
        # cosine gap for rho=0.96 is gamma*ln(24); build unit rows
        # (a, b, 0, 0) with a - b = gap and a^2 + b^2 = 1
        gamma = 0.1
        ctx = _ctx(E[0], [E[1]])
        gap1 = gamma * np.log(0.96 / 0.04)
        rows = []
        for gap in (gap1, 0.0):
            a = (np.sqrt(2 - gap * gap) + gap) / 2
            b = a - gap
            rows.append(np.array([a, b, 0.0, 0.0]))
        fc = _fc(rows)
        cfg = GroundingConfig(gamma=gamma, s_thr=0.95, rule="threshold")
        seg = refer_segment(fc, ctx, cfg)
        rho, _ = refer_probabilities(fc, ctx, gamma)
        assert rho[0] == pytest.approx(0.96, abs=1e-9)
        assert rho[1] == pytest.approx(0.50, abs=1e-9)
        np.testing.assert_array_equal(seg.labels, [1, 0])

    def test_pos_vs_neg_all_dominant(self):
        rng = np.random.default_rng(4)
        pos = E[0]
        fc = _fc(unit_rows(pos + 0.05 * rng.standard_normal((20, 4))))
        cfg = GroundingConfig(rule="pos-vs-neg")
        seg = refer_segment(fc, _ctx(pos, [E[1], E[2]]), cfg)
        assert np.all(seg.labels == 1)

    def test_pos_vs_neg_requires_negatives(self):
        with pytest.raises(ValidationError):
            refer_segment(_fc([E[0]]), _ctx(E[0], []), GroundingConfig(rule="pos-vs-neg"))

    def test_threshold_without_negatives_uses_raw_cosine(self):
        fc = _fc([E[0], unit_rows(E[0] + E[1])])
        seg = refer_segment(fc, _ctx(E[0], []), GroundingConfig(s_thr=0.9))
        np.testing.assert_array_equal(seg.labels, [1, 0])
        assert seg.scores[0] == pytest.approx(1.0)

    @given(st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_shift_invariance_of_pos_vs_neg(self, seed):
        # adding a constant to every cosine of a point preserves the decision
        rng = np.random.default_rng(seed)
        sims = rng.uniform(-1, 1, size=5)
        shift = rng.uniform(-0.5, 0.5)
        gamma = 0.1
        e0 = np.exp((sims - sims.max()) / gamma)
        p0 = e0 / e0.sum()
        e1 = np.exp((sims + shift - (sims + shift).max()) / gamma)
        p1 = e1 / e1.sum()
        assert (p0[0] > p0[1:].max()) == (p1[0] > p1[1:].max())


class TestInstanceSegment:
    def test_two_well_separated_groups(self):
        rng = np.random.default_rng(5)
        a = unit_rows(np.ones(8))
        b = unit_rows(np.concatenate([np.ones(4), -np.ones(4)]))
        rows = [a + rng.normal(0, 0.0003, 8) for _ in range(3)]
        rows += [b + rng.normal(0, 0.0003, 8) for _ in range(3)]
        fc = _fc(unit_rows(np.stack(rows)), normalized=True)
        seg = instance_segment(fc, GroundingConfig(cluster_eps=0.01, cluster_min_samples=2))
        assert set(seg.labels[:3]) == {1}
        assert set(seg.labels[3:]) == {2}

    def test_all_isolated_is_noise(self):
        fc = _fc(np.eye(6), normalized=True)
        seg = instance_segment(fc, GroundingConfig(cluster_eps=0.01, cluster_min_samples=2))
        assert np.all(seg.labels == 0)

    def test_flagged_rows_are_noise(self):
        rows = np.tile(unit_rows(np.ones(4)), (4, 1))
        fc = _fc(rows, flags=[0, 0, 0, 1], normalized=True)
        seg = instance_segment(fc)
        assert seg.labels[3] == 0
        assert set(seg.labels[:3]) == {1}

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_matches_quadratic_oracle(self, seed):
        rng = np.random.default_rng(seed)
        m = int(rng.integers(5, 120))
        centers = rng.standard_normal((int(rng.integers(1, 5)), 3))
        pts = centers[rng.integers(0, len(centers), m)] + rng.normal(0, 0.05, (m, 3))
        eps = float(rng.uniform(0.02, 0.3))
        min_samples = int(rng.integers(1, 5))
        ours = dbscan_labels(pts, eps, min_samples)
        ref = brute_dbscan(pts, eps, min_samples)
        assert same_partition(ours, ref)


class TestRemoveTable:
    def test_plane_plus_floaters(self):
        rng = np.random.default_rng(6)
        table = np.column_stack([rng.uniform(-1, 1, 100), rng.uniform(-1, 1, 100), np.zeros(100)])
        objects = rng.uniform(-0.2, 0.2, (20, 3)) + [0, 0, 1.0]
        cloud = PointCloud(np.concatenate([table, objects]))
        kept, plane = remove_table(cloud, RansacConfig(distance_thr=0.1))
        assert len(kept) == 20
        assert abs(abs(plane.normal[2]) - 1.0) < 1e-6
        assert plane.inliers == 100

    def test_all_coplanar_keeps_nothing(self):
        rng = np.random.default_rng(7)
        pts = np.column_stack([rng.uniform(-1, 1, 50), rng.uniform(-1, 1, 50), np.full(50, 0.3)])
        kept, _ = remove_table(PointCloud(pts))
        assert len(kept) == 0

    def test_too_few_points(self):
        with pytest.raises(ValidationError):
            remove_table(PointCloud(np.zeros((2, 3))))

    def test_fixed_seed_is_deterministic(self):
        rng = np.random.default_rng(8)
        pts = rng.standard_normal((300, 3))
        cloud = PointCloud(pts)
        k1, p1 = remove_table(cloud, RansacConfig(seed=42))
        k2, p2 = remove_table(cloud, RansacConfig(seed=42))
        np.testing.assert_array_equal(k1.points, k2.points)
        np.testing.assert_array_equal(p1.normal, p2.normal)

    def test_synthetic_tabletop_table_recall(self, small_synth):
        # rendered scene: virtually all table points removed (objects rest on
        # the plane, so the contact band is legitimately swept up too)
        from mvfusion.scene import aggregate_cloud, voxel_downsample

        _, scene, _, _, _ = small_synth
        cloud, mask = aggregate_cloud(scene)
        cloud, mask = voxel_downsample(cloud, mask, 0.02)
        rng = np.random.default_rng(9)
        noisy = PointCloud(cloud.points + rng.normal(0, 0.005, cloud.points.shape))
        kept, plane = remove_table(noisy, RansacConfig(distance_thr=0.1, seed=3))
        table = mask.labels == 0
        removed = plane.distances(noisy.points) <= 0.1
        assert removed[table].mean() >= 0.99
