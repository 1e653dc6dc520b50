import numpy as np
import pytest

from nodulecbir.data import generate_synthetic
from nodulecbir.errors import (
    ArgumentError,
    IndexBuildError,
    JoinError,
    RetrievalError,
    ShapeError,
)
from nodulecbir.head import Embedding
from nodulecbir.index import (
    build_index,
    distance,
    predict_ratings_topk,
    query_top_k,
)
from oracles import full_sort_topk


def _padded(value):
    """1-D point embedded in the first coordinate of a 10-D vector."""
    v = np.zeros(10)
    v[0] = value
    return v


@pytest.fixture(scope="module")
def three_entry_index():
    dataset = generate_synthetic(3, 8, seed=1)
    embeddings = [
        Embedding(r.nodule_id, _padded(x))
        for r, x in zip(dataset.records, (0.0, 1.0, 3.0))
    ]
    return build_index(embeddings, dataset), dataset


@pytest.fixture(scope="module")
def random_index():
    dataset = generate_synthetic(80, 8, seed=2)
    rng = np.random.default_rng(5)
    values = rng.normal(size=(80, 10))
    values[7] = values[3]  # exact duplicates force distance ties
    values[40] = values[3]
    embeddings = [Embedding(r.nodule_id, values[i]) for i, r in enumerate(dataset.records)]
    return embeddings, dataset


class TestDistance:
    def test_identity(self):
        v = np.arange(10, dtype=float)
        assert distance(v, v) == 0.0

    def test_unit_basis(self):
        a = np.zeros(10)
        b = np.zeros(10)
        b[0] = 1.0
        assert distance(a, b) == 1.0

    def test_cosine_scale_invariance(self):
        a = np.array([1.0, 1.0])
        assert abs(distance(a, 7.0 * a, metric="cosine")) < 1e-12

    def test_cosine_zero_vector_case(self):
        assert distance(np.zeros(4), np.ones(4), metric="cosine") == 1.0
        assert distance(np.zeros(4), np.zeros(4), metric="cosine") == 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            distance(np.zeros(3), np.zeros(4))

    def test_unknown_metric(self):
        with pytest.raises(ArgumentError):
            distance(np.zeros(3), np.zeros(3), metric="manhattan")

    def test_euclidean_axioms_on_random_triples(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            a, b, c = rng.normal(size=(3, 6))
            assert abs(distance(a, b) - distance(b, a)) < 1e-12
            assert distance(a, c) <= distance(a, b) + distance(b, c) + 1e-9


class TestBuildIndex:
    def test_entry_count_and_order(self, random_index):
        embeddings, dataset = random_index
        index = build_index(embeddings, dataset)
        assert len(index) == len(dataset)
        ids = [e.nodule_id for e in index.entries]
        assert ids == sorted(ids)

    def test_rebuild_identical(self, random_index):
        embeddings, dataset = random_index
        a = build_index(embeddings, dataset)
        b = build_index(embeddings, dataset)
        for ea, eb in zip(a.entries, b.entries):
            assert ea.nodule_id == eb.nodule_id
            assert np.array_equal(ea.embedding, eb.embedding)
            assert np.array_equal(ea.consensus.values, eb.consensus.values)

    def test_entry_consensus_is_dataset_consensus(self, random_index):
        embeddings, dataset = random_index
        index = build_index(embeddings, dataset)
        for entry in index.entries[:5]:
            record = dataset.get(entry.nodule_id)
            assert np.array_equal(entry.consensus.values, record.consensus().values)
            assert entry.malignancy == record.malignancy

    def test_duplicate_id_rejected(self, random_index):
        embeddings, dataset = random_index
        with pytest.raises(IndexBuildError):
            build_index(embeddings + [embeddings[0]], dataset)

    def test_unknown_id_rejected(self, random_index):
        embeddings, dataset = random_index
        stranger = Embedding("missing", np.zeros(10))
        with pytest.raises(JoinError):
            build_index(embeddings + [stranger], dataset)


class TestQueryTopK:
    def test_hand_distances(self, three_entry_index):
        index, dataset = three_entry_index
        ids = dataset.nodule_ids
        result = query_top_k(index, _padded(0.9), 2)
        assert result.neighbor_ids == (ids[1], ids[0])
        assert abs(result.neighbors[0][1] - 0.1) < 1e-12
        assert abs(result.neighbors[1][1] - 0.9) < 1e-12

    def test_exclusion(self, three_entry_index):
        index, dataset = three_entry_index
        ids = dataset.nodule_ids
        result = query_top_k(index, _padded(1.0), 3, exclude={ids[1]})
        assert ids[1] not in result.neighbor_ids

    def test_scan_exclusion(self, random_index):
        embeddings, dataset = random_index
        index = build_index(embeddings, dataset)
        scan = dataset.records[0].scan_id
        result = query_top_k(index, embeddings[0], len(dataset), exclude_scan=scan)
        banned = {r.nodule_id for r in dataset.records if r.scan_id == scan}
        assert banned.isdisjoint(result.neighbor_ids)

    def test_truncation_flagged(self, three_entry_index):
        index, _ = three_entry_index
        result = query_top_k(index, _padded(0.0), 10)
        assert result.truncated and len(result.neighbors) == 3

    def test_k_below_one_rejected(self, three_entry_index):
        index, _ = three_entry_index
        with pytest.raises(ArgumentError):
            query_top_k(index, _padded(0.0), 0)

    def test_distances_non_decreasing(self, random_index):
        embeddings, dataset = random_index
        index = build_index(embeddings, dataset)
        result = query_top_k(index, np.zeros(10), len(dataset))
        dists = [d for _, d in result.neighbors]
        assert all(dists[i] <= dists[i + 1] for i in range(len(dists) - 1))

    def test_full_k_returns_sorted_by_distance_then_id(self, random_index):
        embeddings, dataset = random_index
        index = build_index(embeddings, dataset)
        result = query_top_k(index, embeddings[3], len(dataset))
        keyed = [(d, nid) for nid, d in result.neighbors]
        assert keyed == sorted(keyed)
        assert len(result.neighbors) == len(dataset)

    def test_monotone_containment(self, random_index):
        embeddings, dataset = random_index
        index = build_index(embeddings, dataset)
        for k in (1, 3, 7):
            small = query_top_k(index, embeddings[0], k).neighbor_ids
            bigger = query_top_k(index, embeddings[0], k + 1).neighbor_ids
            assert bigger[:k] == small

    def test_repeated_queries_identical(self, random_index):
        embeddings, dataset = random_index
        index = build_index(embeddings, dataset)
        a = query_top_k(index, embeddings[10], 5)
        b = query_top_k(index, embeddings[10], 5)
        assert a.neighbors == b.neighbors

    @pytest.mark.parametrize("metric", ["euclidean", "cosine"])
    def test_matches_full_sort_oracle(self, random_index, metric):
        embeddings, dataset = random_index
        index = build_index(embeddings, dataset, metric=metric)
        entries = [(e.nodule_id, e.values.tolist()) for e in embeddings]
        rng = np.random.default_rng(23)
        queries = list(rng.normal(size=(20, 10)))
        queries.append(embeddings[3].values.copy())  # lands on the duplicates
        for q in queries:
            mine = query_top_k(index, q, 8).neighbor_ids
            reference = full_sort_topk(entries, q.tolist(), 8, metric)
            assert list(mine) == reference


class TestPredictRatings:
    def test_single_neighbor_verbatim(self, random_index):
        embeddings, dataset = random_index
        index = build_index(embeddings, dataset)
        result = query_top_k(index, embeddings[5], 1)
        prediction = predict_ratings_topk(index, embeddings[5], 1)
        neighbor = index.entry(result.neighbor_ids[0])
        assert np.array_equal(prediction.values, neighbor.consensus.values)

    def test_two_neighbor_midpoint(self):
        from nodulecbir.data import Dataset, NoduleRecord, RatingVector

        low = tuple(RatingVector(np.ones(5)) for _ in range(3))
        high = tuple(RatingVector(np.full(5, 5.0)) for _ in range(3))
        records = (
            NoduleRecord("a", "s1", low, np.zeros(4)),
            NoduleRecord("b", "s2", high, np.zeros(4)),
        )
        dataset = Dataset(records, 4, "synthetic")
        embeddings = [Embedding("a", _padded(0.0)), Embedding("b", _padded(1.0))]
        index = build_index(embeddings, dataset)
        prediction = predict_ratings_topk(index, _padded(0.4), 2)
        assert np.array_equal(prediction.values, np.full(5, 3.0))

    def test_k4_matches_oracle_composition(self, random_index):
        embeddings, dataset = random_index
        index = build_index(embeddings, dataset)
        entries = [(e.nodule_id, e.values.tolist()) for e in embeddings]
        q = np.full(10, 0.25)
        ids = full_sort_topk(entries, q.tolist(), 4, "euclidean")
        expected = np.mean(
            [dataset.get(nid).consensus().values for nid in ids], axis=0
        )
        prediction = predict_ratings_topk(index, q, 4)
        assert np.all(np.abs(prediction.values - expected) < 1e-12)

    def test_no_eligible_entries(self, three_entry_index):
        index, dataset = three_entry_index
        with pytest.raises(RetrievalError):
            predict_ratings_topk(index, _padded(0.0), 2, exclude=set(dataset.nodule_ids))

    def test_k_equal_to_index_size_is_global_mean(self, random_index):
        embeddings, dataset = random_index
        index = build_index(embeddings, dataset)
        prediction = predict_ratings_topk(index, np.zeros(10), len(dataset))
        expected = np.mean([r.consensus().values for r in dataset.records], axis=0)
        assert np.all(np.abs(prediction.values - expected) < 1e-12)
