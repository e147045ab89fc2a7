import math
import random

import numpy as np
import pytest

from gencache.clustering import Cluster, ClusterStore, ClusterThresholds
from gencache.embeddings import HashedEmbedder, as_unit_embedding, cosine
from gencache.prompt_model import Exemplar, PromptRecord, ResponseDoc, make_exemplar

DIMS = 16


def unit(vec):
    return as_unit_embedding(np.asarray(vec, dtype=np.float64))


def basis(i, dims=DIMS):
    vec = np.zeros(dims)
    vec[i] = 1.0
    return unit(vec)


def exemplar_from_vectors(prompt_vec, value_vecs, kind="structured", text="p"):
    if kind == "structured":
        doc = ResponseDoc.structured([(f"k{i}", f"v{i}") for i in range(len(value_vecs))])
    else:
        doc = ResponseDoc.plain("v")
    return Exemplar(
        prompt=PromptRecord.create(text),
        response=doc,
        prompt_embedding=prompt_vec,
        response_embeddings=tuple(value_vecs),
    )


def make_store(**kwargs):
    kwargs.setdefault("thresholds", ClusterThresholds())
    return ClusterStore(DIMS, **kwargs)


class TestSimilarities:
    def test_singleton_prompt_similarity_is_one(self):
        store = make_store()
        ex = exemplar_from_vectors(basis(0), [basis(1)])
        store.assign(ex)
        assert store.prompt_similarity(store.get(0), basis(0)) == pytest.approx(1.0)

    def test_zero_query_similarity_is_zero(self):
        store = make_store()
        store.assign(exemplar_from_vectors(basis(0), [basis(1)]))
        assert store.prompt_similarity(store.get(0), unit(np.zeros(DIMS))) == 0.0

    def test_three_member_centroid_matches_hand_computation(self):
        # Independent recompute: mean the three prompt vectors, renormalize,
        # then take the cosine against a fixed query.
        vecs = [
            np.array([2.0, 1.0, 0.0, 0.0] + [0.0] * (DIMS - 4)),
            np.array([2.0, 0.0, 1.0, 0.0] + [0.0] * (DIMS - 4)),
            np.array([2.0, 0.0, 0.0, 1.0] + [0.0] * (DIMS - 4)),
        ]
        units = [unit(v) for v in vecs]
        store = make_store(thresholds=ClusterThresholds(t_prompt=0.5, t_response=0.5))
        for u in units:
            store.assign(exemplar_from_vectors(u, [basis(5)]))
        assert len(store) == 1
        query = basis(0)
        mean = sum(u.values for u in units) / 3
        expected = float(np.dot(mean / np.linalg.norm(mean), query.values))
        assert store.prompt_similarity(store.get(0), query) == pytest.approx(expected, abs=1e-12)

    def test_response_similarity_arity_gate(self):
        store = make_store()
        store.assign(exemplar_from_vectors(basis(0), [basis(1), basis(2)]))
        cluster = store.get(0)
        assert store.response_similarity(cluster, [basis(1), basis(2), basis(3)]) is None

    def test_response_similarity_identical_singleton(self):
        store = make_store()
        store.assign(exemplar_from_vectors(basis(0), [basis(1), basis(2)]))
        cluster = store.get(0)
        assert store.response_similarity(cluster, [basis(1), basis(2)]) == pytest.approx(1.0)

    def test_response_similarity_is_slot_mean(self):
        store = make_store()
        store.assign(exemplar_from_vectors(basis(0), [basis(1), basis(2)]))
        cluster = store.get(0)
        # slot 0 identical (cosine 1), slot 1 orthogonal (cosine 0)
        assert store.response_similarity(cluster, [basis(1), basis(3)]) == pytest.approx(0.5)


class TestAssign:
    def test_first_exemplar_creates_cluster_zero(self):
        store = make_store()
        result = store.assign(exemplar_from_vectors(basis(0), [basis(1)]))
        assert result.created is True
        assert result.cluster_id == 0

    def test_identical_exemplar_joins_with_perfect_scores(self):
        store = make_store()
        ex = exemplar_from_vectors(basis(0), [basis(1)])
        store.assign(ex)
        result = store.assign(exemplar_from_vectors(basis(0), [basis(1)]))
        assert result.created is False
        assert result.s_p == pytest.approx(1.0)
        assert result.s_r == pytest.approx(1.0)

    def test_argmax_picks_highest_combined_score(self):
        store = make_store(thresholds=ClusterThresholds(t_prompt=0.5, t_response=0.5))
        # Two clusters on different prompt axes mixed with a shared axis.
        a = unit([1.0, 0.2] + [0.0] * (DIMS - 2))
        b = unit([0.2, 1.0] + [0.0] * (DIMS - 2))
        store.assign(exemplar_from_vectors(a, [basis(5)]))
        store.assign(exemplar_from_vectors(b, [basis(5)]))
        query = exemplar_from_vectors(unit([0.4, 1.0] + [0.0] * (DIMS - 2)), [basis(5)])
        result = store.assign(query)
        assert result.cluster_id == 1

    def test_tie_breaks_to_lowest_id(self):
        store = make_store(thresholds=ClusterThresholds(t_prompt=0.5, t_response=0.5))
        shared = unit([1.0, 1.0] + [0.0] * (DIMS - 2))
        store.assign(exemplar_from_vectors(basis(0), [basis(5)]))
        store.assign(exemplar_from_vectors(basis(1), [basis(5)]))
        result = store.assign(exemplar_from_vectors(shared, [basis(5)]))
        assert result.cluster_id == 0

    def test_below_threshold_creates_new_cluster(self):
        store = make_store()
        store.assign(exemplar_from_vectors(basis(0), [basis(5)]))
        result = store.assign(exemplar_from_vectors(basis(1), [basis(5)]))
        assert result.created is True
        assert result.cluster_id == 1

    def test_response_gate_separates_same_prompts(self):
        store = make_store()
        store.assign(exemplar_from_vectors(basis(0), [basis(5)]))
        result = store.assign(exemplar_from_vectors(basis(0), [basis(6)]))
        assert result.created is True

    def test_plain_never_joins_structured_of_same_arity(self):
        store = make_store()
        store.assign(exemplar_from_vectors(basis(0), [basis(5)], kind="structured"))
        result = store.assign(exemplar_from_vectors(basis(0), [basis(5)], kind="plain"))
        assert result.created is True

    def test_monotone_ids(self):
        store = make_store()
        ids = [store.assign(exemplar_from_vectors(basis(i), [basis(8)])).cluster_id for i in range(4)]
        assert ids == [0, 1, 2, 3]


class TestAddExemplar:
    def test_full_cluster_rejects_and_seals(self):
        store = make_store(max_exemplars=3)
        ex = exemplar_from_vectors(basis(0), [basis(5)])
        store.assign(ex)
        cluster = store.get(0)
        assert store.add_exemplar(cluster, exemplar_from_vectors(basis(0), [basis(5)]))
        assert store.add_exemplar(cluster, exemplar_from_vectors(basis(0), [basis(5)]))
        assert cluster.sealed is True
        before = cluster.prompt_centroid.values.copy()
        assert store.add_exemplar(cluster, exemplar_from_vectors(basis(1), [basis(5)])) is False
        assert cluster.size == 3
        assert np.array_equal(cluster.prompt_centroid.values, before)

    def test_identical_exemplar_leaves_centroid_unchanged(self):
        store = make_store()
        ex = exemplar_from_vectors(basis(0), [basis(5)])
        store.assign(ex)
        cluster = store.get(0)
        before = cluster.prompt_centroid.values.copy()
        store.add_exemplar(cluster, exemplar_from_vectors(basis(0), [basis(5)]))
        assert np.allclose(cluster.prompt_centroid.values, before)

    def test_arity_mismatch_rejected(self):
        store = make_store()
        store.assign(exemplar_from_vectors(basis(0), [basis(5)]))
        with pytest.raises(ValueError):
            store.add_exemplar(store.get(0), exemplar_from_vectors(basis(0), [basis(5), basis(6)]))

    def test_incremental_centroid_matches_batch_mean(self):
        rng = random.Random(5)
        store = make_store(thresholds=ClusterThresholds(t_prompt=0.01, t_response=0.01), max_exemplars=50)
        vectors = []
        for _ in range(12):
            raw = np.array([rng.uniform(0.5, 1.0) for _ in range(DIMS)])
            vectors.append(unit(raw))
        first = exemplar_from_vectors(vectors[0], [basis(5)])
        store.assign(first)
        cluster = store.get(0)
        for v in vectors[1:]:
            assert store.add_exemplar(cluster, exemplar_from_vectors(v, [basis(5)]))
        batch = sum(v.values for v in vectors) / len(vectors)
        batch = batch / np.linalg.norm(batch)
        assert np.allclose(cluster.prompt_centroid.values, batch, atol=1e-5)


class TestNearestByPrompt:
    def test_empty_store(self):
        assert make_store().nearest_by_prompt(basis(0), 0.8) is None

    def test_above_threshold_returns_cluster(self):
        store = make_store()
        store.assign(exemplar_from_vectors(basis(0), [basis(5)]))
        query = unit([0.95, math.sqrt(1 - 0.95**2)] + [0.0] * (DIMS - 2))
        assert store.nearest_by_prompt(query, 0.8) == 0

    def test_threshold_is_strict(self):
        store = make_store()
        store.assign(exemplar_from_vectors(basis(0), [basis(5)]))
        query = unit([0.79, math.sqrt(1 - 0.79**2)] + [0.0] * (DIMS - 2))
        assert store.nearest_by_prompt(query, 0.8) is None
        assert store.nearest_by_prompt(query, 0.78) == 0


# -- brute-force replay reference -------------------------------------------


class ReferenceStore:
    """From-scratch reference: recompute centroids over stored members at
    every step; same thresholds, kind gate, and lowest-id tie-break."""

    def __init__(self, thresholds, max_exemplars):
        self.thresholds = thresholds
        self.max_exemplars = max_exemplars
        self.members = []  # list of lists of exemplars

    @staticmethod
    def _centroid(vectors):
        total = vectors[0].copy()
        for vec in vectors[1:]:
            total = total + vec
        mean = total / len(vectors)
        norm = np.linalg.norm(mean)
        return mean / norm if norm > 0 else mean

    def assign(self, exemplar):
        best_id, best_score = None, None
        for cid, members in enumerate(self.members):
            first = members[0]
            if first.response.kind != exemplar.response.kind:
                continue
            if len(first.response_embeddings) != len(exemplar.response_embeddings):
                continue
            centroid = self._centroid([m.prompt_embedding.values for m in members])
            if not np.any(centroid) or exemplar.prompt_embedding.is_zero():
                s_p = 0.0
            else:
                s_p = max(-1.0, min(1.0, float(np.dot(centroid, exemplar.prompt_embedding.values))))
            if s_p <= self.thresholds.t_prompt:
                continue
            arity = len(exemplar.response_embeddings)
            if arity == 0:
                s_r = 1.0
            else:
                sims = []
                for j in range(arity):
                    slot = self._centroid([m.response_embeddings[j].values for m in members])
                    e = exemplar.response_embeddings[j]
                    if not np.any(slot) or e.is_zero():
                        sims.append(0.0)
                    else:
                        sims.append(max(-1.0, min(1.0, float(np.dot(slot, e.values)))))
                s_r = float(sum(sims) / len(sims))
            if s_r <= self.thresholds.t_response:
                continue
            score = s_p + s_r
            if best_score is None or score > best_score:
                best_id, best_score = cid, score
        if best_id is None:
            self.members.append([exemplar])
            return len(self.members) - 1
        if len(self.members[best_id]) < self.max_exemplars:
            self.members[best_id].append(exemplar)
        return best_id


def random_exemplar_stream(seed, count, embedder):
    rng = random.Random(seed)
    vocab = ["alpha", "beta", "gamma", "delta", "omega", "sensor", "cable", "shoe", "lamp"]
    stream = []
    for i in range(count):
        words = [rng.choice(vocab) for _ in range(rng.randint(1, 6))]
        prompt = PromptRecord.create(" ".join(words), request_id=f"s{seed}-{i}")
        if rng.random() < 0.3:
            doc = ResponseDoc.plain(rng.choice(vocab))
        else:
            arity = rng.randint(0, 3)
            doc = ResponseDoc.structured(
                [(f"k{j}", rng.choice(vocab)) for j in range(arity)]
            )
        stream.append(make_exemplar(prompt, doc, embedder))
    return stream


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_replay_matches_reference(seed):
    embedder = HashedEmbedder(dims=32)
    thresholds = ClusterThresholds(t_prompt=0.4, t_response=0.4)
    store = ClusterStore(32, thresholds, max_exemplars=6)
    reference = ReferenceStore(thresholds, max_exemplars=6)
    for exemplar in random_exemplar_stream(seed, 120, embedder):
        got = store.assign(exemplar).cluster_id
        want = reference.assign(exemplar)
        assert got == want


class TestPersistence:
    def test_round_trip_preserves_memberships_and_centroids(self):
        embedder = HashedEmbedder(dims=32)
        store = ClusterStore(32, ClusterThresholds(t_prompt=0.4, t_response=0.4), max_exemplars=6)
        for exemplar in random_exemplar_stream(3, 60, embedder):
            store.assign(exemplar)
        store.get(0).retries_used = 5
        store.get(0).has_cache = True
        records = store.dump_records()
        loaded = ClusterStore.load_records(
            records, embedder, ClusterThresholds(t_prompt=0.4, t_response=0.4), max_exemplars=6
        )
        assert len(loaded) == len(store)
        for cid in range(len(store)):
            original, restored = store.get(cid), loaded.get(cid)
            assert restored.size == original.size
            assert restored.sealed == original.sealed
            assert restored.retries_used == original.retries_used
            assert restored.has_cache == original.has_cache
            assert np.allclose(
                restored.prompt_centroid.values, original.prompt_centroid.values, atol=1e-5
            )

    def test_bad_record_ids_rejected(self):
        embedder = HashedEmbedder(dims=32)
        with pytest.raises(ValueError):
            ClusterStore.load_records([{"id": 3, "exemplars": []}], embedder)
