import numpy as np
import pytest
from numpy.testing import assert_allclose

from oracles import average_linkage_heights_bruteforce, silhouette_bruteforce

from sigla.clustering import (
    LINKAGES,
    agglomerate,
    save_hierarchy_json,
    score_partition,
    select_clustering,
)
from sigla.similarity import SimilarityMatrix

rng = np.random.default_rng(31)


def random_sim(n, seed=0):
    r = np.random.default_rng(seed)
    a = r.uniform(0.0, 1.0, size=(n, n))
    vals = (a + a.T) / 2
    np.fill_diagonal(vals, 1.0)
    return SimilarityMatrix(vals, ("w",))


def block_sim(sizes, within=1.0, across=0.0):
    n = sum(sizes)
    vals = np.full((n, n), across)
    start = 0
    for s in sizes:
        vals[start : start + s, start : start + s] = within
        start += s
    np.fill_diagonal(vals, 1.0)
    return SimilarityMatrix(vals, ("w",))


class TestAgglomerate:
    def test_two_perfect_pairs_merge_first(self):
        sim = block_sim([2, 2])
        for linkage in LINKAGES:
            h = agglomerate(sim, linkage)
            first_two = h.merges[:2, :2].astype(int)
            assert {tuple(sorted(r)) for r in first_two} == {(0, 1), (2, 3)}
            assert_allclose(h.merges[:2, 2], 0.0, atol=1e-12)

    def test_average_linkage_matches_bruteforce(self):
        for seed in range(8):
            sim = random_sim(8, seed=seed)
            h = agglomerate(sim, "average")
            expected = average_linkage_heights_bruteforce(1.0 - sim.values)
            assert_allclose(h.heights, expected, rtol=1e-9, atol=1e-12)

    def test_all_linkages_match_scipy(self):
        from scipy.cluster.hierarchy import linkage as scipy_linkage
        from scipy.spatial.distance import squareform

        for seed in range(5):
            sim = random_sim(7, seed=100 + seed)
            condensed = squareform(1.0 - sim.values, checks=False)
            for method in LINKAGES:
                ours = agglomerate(sim, method).heights
                theirs = scipy_linkage(condensed, method=method)[:, 2]
                assert_allclose(ours, theirs, rtol=1e-9, atol=1e-12)

    def test_single_chains_before_complete(self):
        # chain: consecutive vehicles similar, ends dissimilar
        n = 5
        vals = np.eye(n)
        for i in range(n):
            for j in range(n):
                if i != j:
                    vals[i, j] = max(0.0, 1.0 - 0.3 * abs(i - j))
        sim = SimilarityMatrix(vals, ("w",))
        single = agglomerate(sim, "single")
        complete = agglomerate(sim, "complete")
        # single joins the whole chain at the link distance; complete has to
        # bridge the chain ends eventually
        assert single.heights[-1] < complete.heights[-1]
        assert_allclose(single.heights, 0.3, atol=1e-12)

    def test_heights_non_decreasing(self):
        for linkage in ("ward", "complete", "average"):
            for seed in range(5):
                h = agglomerate(random_sim(7, seed=seed), linkage)
                assert np.all(np.diff(h.heights) >= -1e-12)

    def test_relabeling_equivariance(self):
        sim = random_sim(6, seed=3)
        perm = np.array([3, 1, 5, 0, 2, 4])
        vals_p = sim.values[np.ix_(perm, perm)]
        sim_p = SimilarityMatrix(vals_p, ("w",))
        for linkage in LINKAGES:
            labels = agglomerate(sim, linkage).assignments_at(3)
            labels_p = agglomerate(sim_p, linkage).assignments_at(3)
            # partition of permuted matrix == permuted partition
            for i in range(6):
                for j in range(6):
                    assert (labels_p[i] == labels_p[j]) == (
                        labels[perm[i]] == labels[perm[j]]
                    )

    def test_hierarchy_cuts_are_nested(self):
        sim = random_sim(9, seed=8)
        for linkage in LINKAGES:
            h = agglomerate(sim, linkage)
            for k in range(2, 9):
                fine = h.assignments_at(k)
                coarse = h.assignments_at(k - 1)
                # same fine cluster -> same coarse cluster
                for i in range(9):
                    for j in range(9):
                        if fine[i] == fine[j]:
                            assert coarse[i] == coarse[j]

    def test_merge_count(self):
        h = agglomerate(random_sim(6, seed=1), "ward")
        assert h.merges.shape == (5, 4)

    def test_too_small_matrix_rejected(self):
        vals = np.array([[1.0]])
        with pytest.raises(ValueError):
            agglomerate(SimilarityMatrix(vals, ("w",)), "ward")


class TestScorePartition:
    def test_perfect_blocks_score_one(self):
        sim = block_sim([3, 3])
        labels = np.array([0, 0, 0, 1, 1, 1])
        sil, ch = score_partition(sim, labels)
        assert_allclose(sil, 1.0, atol=1e-12)
        assert ch > 100 or ch == float("inf")

    def test_random_labels_never_beat_truth(self):
        sim = block_sim([3, 3], within=0.9, across=0.1)
        truth = np.array([0, 0, 0, 1, 1, 1])
        best, _ = score_partition(sim, truth)
        r = np.random.default_rng(5)
        for _ in range(20):
            labels = r.integers(0, 2, 6)
            if len(np.unique(labels)) < 2:
                continue
            sil, _ = score_partition(sim, labels)
            assert sil <= best + 1e-12

    def test_matches_bruteforce_silhouette(self):
        for seed in range(6):
            sim = random_sim(6, seed=seed)
            labels = np.random.default_rng(seed).integers(0, 3, 6)
            if len(np.unique(labels)) < 2:
                continue
            sil, _ = score_partition(sim, labels)
            assert_allclose(sil, silhouette_bruteforce(1.0 - sim.values, labels), rtol=1e-9)

    def test_singletons_contribute_zero(self):
        sim = block_sim([2, 1])
        labels = np.array([0, 0, 1])
        sil, _ = score_partition(sim, labels)
        # members of the pair have a=0, b=1 -> 1; the singleton adds 0
        assert_allclose(sil, 2 / 3, atol=1e-12)

    def test_all_singletons_convention(self):
        sim = random_sim(4, seed=2)
        sil, ch = score_partition(sim, np.arange(4))
        assert sil == 0.0
        assert ch == 0.0

    def test_single_cluster_rejected(self):
        with pytest.raises(ValueError):
            score_partition(random_sim(4), np.zeros(4, dtype=int))


class TestSelectClustering:
    def test_recovers_planted_blocks(self):
        sim = block_sim([3, 3, 3], within=0.9, across=0.2)
        choice = select_clustering(sim, range(2, 8))
        assert choice.n_clusters == 3
        expected = np.array([0, 0, 0, 1, 1, 1, 2, 2, 2])
        assert np.array_equal(choice.labels, expected)
        assert choice.coarser_n_clusters == 2
        # every chosen cluster sits inside exactly one coarser cluster
        for c in range(3):
            members = np.flatnonzero(choice.labels == c)
            assert len(np.unique(choice.coarser_labels[members])) == 1

    def test_two_vehicles_boundary(self):
        vals = np.array([[1.0, 0.4], [0.4, 1.0]])
        choice = select_clustering(SimilarityMatrix(vals, ("w",)), [2])
        assert choice.n_clusters == 2
        assert choice.silhouette == 0.0  # both singletons, by convention
        assert choice.coarser_n_clusters == 2

    def test_tie_breaks_follow_linkage_order(self):
        # two perfect pairs: every linkage finds the identical partition,
        # so the first linkage in preference order must win
        sim = block_sim([2, 2])
        choice = select_clustering(sim, [2])
        assert choice.linkage == "ward"
        assert choice.n_clusters == 2

    def test_deterministic(self):
        sim = random_sim(7, seed=9)
        a = select_clustering(sim, range(2, 7))
        b = select_clustering(sim, range(2, 7))
        assert a.linkage == b.linkage
        assert a.n_clusters == b.n_clusters
        assert np.array_equal(a.labels, b.labels)

    def test_empty_k_range_rejected(self):
        with pytest.raises(ValueError):
            select_clustering(random_sim(5), [])

    def test_out_of_range_k_rejected(self):
        with pytest.raises(ValueError):
            select_clustering(random_sim(5), [1, 2])

    def test_hierarchy_export(self, tmp_path):
        import json

        h = agglomerate(random_sim(5, seed=4), "average")
        path = tmp_path / "tree.json"
        save_hierarchy_json(h, path)
        doc = json.loads(path.read_text())
        assert doc["linkage"] == "average"
        assert len(doc["merges"]) == 4
