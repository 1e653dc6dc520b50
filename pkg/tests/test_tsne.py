import numpy as np
import pytest

from nodulecbir.data import generate_synthetic
from nodulecbir.errors import ArgumentError, JoinError
from nodulecbir.head import Embedding
from nodulecbir.tsne import (
    ProjectedPoint,
    TsneConfig,
    color_by_malignancy,
    conditional_affinities,
    joint_affinities,
    kl_divergence,
    tsne,
    tsne_coordinates,
)


@pytest.fixture(scope="module")
def gaussian_cloud():
    return np.random.default_rng(3).normal(size=(60, 10))


class TestAffinities:
    def test_regular_simplex_gives_uniform_rows(self):
        points = np.eye(8)  # all pairwise distances equal
        conditional, _ = conditional_affinities(points, 2.5)
        for i in range(8):
            row = conditional[i][conditional[i] > 0]
            assert np.all(np.abs(row - 1.0 / 7.0) < 1e-12)
        assert np.all(np.diag(conditional) == 0.0)

    def test_entropy_calibration(self, gaussian_cloud):
        perplexity = 12.0
        conditional, _ = conditional_affinities(gaussian_cloud, perplexity)
        target = np.log2(perplexity)
        for i in range(len(gaussian_cloud)):
            row = conditional[i][conditional[i] > 0]
            entropy = -(row * np.log2(row)).sum()
            assert abs(entropy - target) < 1e-5

    def test_joint_matrix_properties(self, gaussian_cloud):
        conditional, _ = conditional_affinities(gaussian_cloud, 12.0)
        joint = joint_affinities(conditional)
        assert np.array_equal(joint, joint.T)
        assert np.all(joint >= 0.0)
        assert abs(joint.sum() - 1.0) < 1e-9

    def test_infeasible_perplexity(self):
        with pytest.raises(ArgumentError):
            conditional_affinities(np.eye(4), 10.0)


class TestProjection:
    def test_deterministic_per_seed(self, gaussian_cloud):
        config = TsneConfig(perplexity=10.0, iterations=60, seed=5)
        ya, _ = tsne_coordinates(gaussian_cloud, config)
        yb, _ = tsne_coordinates(gaussian_cloud, config)
        assert np.array_equal(ya, yb)

    def test_different_seed_different_map(self, gaussian_cloud):
        base = TsneConfig(perplexity=10.0, iterations=60, seed=5)
        other = TsneConfig(perplexity=10.0, iterations=60, seed=6)
        ya, _ = tsne_coordinates(gaussian_cloud, base)
        yb, _ = tsne_coordinates(gaussian_cloud, other)
        assert not np.array_equal(ya, yb)

    def test_kl_descends_after_exaggeration(self, gaussian_cloud):
        config = TsneConfig(perplexity=10.0, iterations=400, seed=0)
        _, kl = tsne_coordinates(gaussian_cloud, config)
        assert kl[399] < kl[249]

    def test_translation_invariance_of_objective(self, gaussian_cloud):
        conditional, _ = conditional_affinities(gaussian_cloud, 10.0)
        joint = joint_affinities(conditional)
        config = TsneConfig(perplexity=10.0, iterations=50, seed=2)
        y, _ = tsne_coordinates(gaussian_cloud, config)
        shifted = y + np.array([250.0, -40.0])
        assert abs(kl_divergence(joint, y) - kl_divergence(joint, shifted)) < 1e-9

    def test_perplexity_feasibility_rule(self, gaussian_cloud):
        config = TsneConfig(perplexity=20.0, iterations=10, seed=0)
        with pytest.raises(ArgumentError):
            tsne_coordinates(gaussian_cloud[:40], config)  # needs < (40-1)/3

    def test_needs_five_embeddings(self):
        embeddings = [Embedding(f"n{i}", np.zeros(10)) for i in range(4)]
        with pytest.raises(ArgumentError):
            tsne(embeddings, TsneConfig(perplexity=2.0))

    def test_points_keep_ids(self, gaussian_cloud):
        embeddings = [
            Embedding(f"n{i:03d}", gaussian_cloud[i]) for i in range(len(gaussian_cloud))
        ]
        result = tsne(embeddings, TsneConfig(perplexity=10.0, iterations=30, seed=1))
        assert [p.nodule_id for p in result.points] == [e.nodule_id for e in embeddings]
        assert result.kl_history.shape == (30,)
        for point in result.points:
            assert np.isfinite(point.x) and np.isfinite(point.y)
            assert point.malignancy is None


class TestColorByMalignancy:
    def test_tags_and_conservation(self):
        dataset = generate_synthetic(20, 8, noise_sigma=0.4, seed=9)
        points = [ProjectedPoint(r.nodule_id, 0.0, 0.0) for r in dataset.records]
        tagged = color_by_malignancy(points, dataset)
        expected = {r.nodule_id: r.malignancy for r in dataset.records}
        assert {p.nodule_id: p.malignancy for p in tagged} == expected
        counts = {"benign": 0, "malignant": 0}
        for p in tagged:
            counts[p.malignancy] += 1
        assert counts["benign"] + counts["malignant"] == len(dataset)

    def test_strict_threshold_tagging(self):
        from conftest import raw
        from nodulecbir.data import NoduleRecord

        records = [
            NoduleRecord("exact3", "s1", (raw(3, 3, 3, 3, 3),) * 3),
            NoduleRecord("above3", "s2", (raw(3, 3, 3, 3, 4),) * 3),
        ]
        points = [ProjectedPoint("exact3", 0, 0), ProjectedPoint("above3", 1, 1)]
        tagged = color_by_malignancy(points, records)
        assert tagged[0].malignancy == "benign"
        assert tagged[1].malignancy == "malignant"

    def test_unknown_id_rejected(self):
        dataset = generate_synthetic(5, 8, seed=1)
        points = [ProjectedPoint("nope", 0.0, 0.0)]
        with pytest.raises(JoinError):
            color_by_malignancy(points, dataset)
