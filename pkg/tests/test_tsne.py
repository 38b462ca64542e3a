"""t-SNE affinities and embedding: perplexity matching, descent invariants.

Oracles: Shannon entropy recomputed per row from the returned bandwidths,
k-NN label agreement against the cluster generator, and direct recomputation
of the Student-t similarity matrix from the final coordinates.
"""

import math

import numpy as np
import pytest

from leaderlens.data import AnalysisTable, ModelRecord
from leaderlens.errors import DataError
from leaderlens.schema import DEFAULT_SCHEMA
from leaderlens.tsne import (
    DegenerateDistances,
    NumericalOverflow,
    PerplexityTooLarge,
    TsneParams,
    compute_affinities,
    embed,
    kl_divergence,
    score_features,
)


def equilateral_triangle():
    return np.array([[0.0, 0.0], [1.0, 0.0], [0.5, math.sqrt(3.0) / 2.0]])


def three_clusters(n_per=100, d=10, sep=10.0, sigma=0.1, seed=5):
    rng = np.random.default_rng(seed)
    centers = np.zeros((3, d))
    for k in range(3):
        centers[k, k] = sep / math.sqrt(2.0)  # pairwise center distance = sep
    feats = np.vstack([centers[k] + sigma * rng.normal(size=(n_per, d))
                       for k in range(3)])
    return feats, np.repeat(np.arange(3), n_per)


def sq_dists(x):
    return ((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=-1)


def knn_agreement(coords, labels, k=10):
    d2 = sq_dists(coords)
    np.fill_diagonal(d2, np.inf)
    nn = np.argsort(d2, axis=1)[:, :k]
    return float((labels[nn] == labels[:, None]).mean())


class TestAffinities:
    def test_equidistant_triangle_uniform(self):
        aff = compute_affinities(equilateral_triangle(), perplexity=2.0)
        off = aff.p[~np.eye(3, dtype=bool)]
        assert np.max(np.abs(off - 1.0 / 6.0)) <= 1e-12
        assert np.all(np.diag(aff.p) == 0.0)

    def test_distribution_invariants(self):
        rng = np.random.default_rng(11)
        aff = compute_affinities(rng.normal(size=(120, 5)), perplexity=20.0)
        assert aff.n == 120
        assert np.all(np.diag(aff.p) == 0.0)
        assert np.all(aff.p >= 0.0)
        assert abs(aff.p.sum() - 1.0) <= 1e-9
        assert np.max(np.abs(aff.p - aff.p.T)) <= 1e-12

    def test_row_perplexity_matches_target(self):
        # independent oracle: Shannon entropy of each conditional, rebuilt
        # from the returned bandwidth, within 1e-3 bits of log2(perplexity)
        rng = np.random.default_rng(42)
        x = rng.normal(size=(200, 6))
        aff = compute_affinities(x, perplexity=30.0)
        d2 = sq_dists(x)
        target = math.log2(30.0)
        for i in range(200):
            beta = 0.5 / aff.bandwidths[i] ** 2
            row = np.delete(d2[i], i)
            w = np.exp(-beta * (row - row.min()))
            p = w / w.sum()
            h = float(-(p * np.log2(p, where=p > 0.0)).sum())
            assert abs(h - target) <= 1e-3

    def test_duplicate_points_stay_finite(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(50, 4))
        x[7] = x[3]
        x[11] = x[3]
        aff = compute_affinities(x, perplexity=10.0)
        assert np.all(np.isfinite(aff.p))
        assert abs(aff.p.sum() - 1.0) <= 1e-9
        assert np.all(aff.bandwidths > 0.0)

    def test_perplexity_above_n_minus_1_raises(self):
        with pytest.raises(PerplexityTooLarge):
            compute_affinities(np.eye(5), perplexity=4.5)

    def test_perplexity_at_n_minus_1_is_reachable(self):
        aff = compute_affinities(np.eye(5), perplexity=4.0)
        assert abs(aff.p.sum() - 1.0) <= 1e-9

    def test_perplexity_at_most_one_rejected(self):
        with pytest.raises(DataError):
            compute_affinities(np.eye(5), perplexity=1.0)

    def test_all_identical_points_degenerate(self):
        with pytest.raises(DegenerateDistances):
            compute_affinities(np.ones((6, 3)), perplexity=2.0)

    def test_non_finite_features_rejected(self):
        x = np.ones((10, 2))
        x[4, 1] = np.nan
        with pytest.raises(DataError):
            compute_affinities(x, perplexity=3.0)

    def test_affinities_permutation_equivariant(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(60, 5))
        keys = [f"model-{i:03d}" for i in range(60)]
        perm = rng.permutation(60)
        a = compute_affinities(x, 12.0, point_keys=keys)
        b = compute_affinities(x[perm], 12.0,
                               point_keys=[keys[i] for i in perm])
        assert np.array_equal(b.p, a.p[np.ix_(perm, perm)])
        assert np.array_equal(b.bandwidths, a.bandwidths[perm])


@pytest.fixture(scope="module")
def cluster_run():
    feats, labels = three_clusters()
    aff = compute_affinities(feats, perplexity=30.0)
    return aff, embed(aff, seed=0), labels


class TestEmbed:
    def test_three_clusters_knn_agreement(self, cluster_run):
        _, emb, labels = cluster_run
        assert knn_agreement(emb.coords, labels, k=10) > 0.95

    def test_final_kl_below_post_exaggeration(self, cluster_run):
        _, emb, _ = cluster_run
        by_iter = dict(zip(emb.kl_iterations, emb.kl_trace))
        assert by_iter[1000] < by_iter[250]

    def test_coords_finite_and_shaped(self, cluster_run):
        _, emb, _ = cluster_run
        assert emb.coords.shape == (300, 2)
        assert np.all(np.isfinite(emb.coords))

    def test_same_seed_bit_identical(self, cluster_run):
        aff, emb, _ = cluster_run
        again = embed(aff, seed=0)
        assert np.array_equal(again.coords, emb.coords)
        assert again.kl_trace == emb.kl_trace

    def test_different_seed_differs(self, cluster_run):
        aff, emb, _ = cluster_run
        other = embed(aff, seed=1)
        assert not np.array_equal(other.coords, emb.coords)

    def test_q_matrix_is_a_distribution(self, cluster_run):
        _, emb, _ = cluster_run
        num = 1.0 / (1.0 + sq_dists(emb.coords))
        np.fill_diagonal(num, 0.0)
        q = num / num.sum()
        assert abs(q.sum() - 1.0) <= 1e-9
        assert np.all(q >= 0.0)

    def test_kl_rigid_motion_invariant(self, cluster_run):
        aff, emb, _ = cluster_run
        theta = 0.7
        rot = np.array([[math.cos(theta), -math.sin(theta)],
                        [math.sin(theta), math.cos(theta)]])
        moved = emb.coords @ rot.T + np.array([3.5, -2.0])
        assert abs(kl_divergence(aff, moved)
                   - kl_divergence(aff, emb.coords)) <= 1e-10

    def test_metadata_recorded(self, cluster_run):
        _, emb, _ = cluster_run
        assert emb.seed == 0
        assert emb.hyperparams == (30.0, 1000, 12.0, 250, 200.0,
                                   (0.5, 0.8, 250))
        assert 250 in emb.kl_iterations
        assert emb.kl_iterations[-1] == 1000
        assert all(math.isfinite(v) and v > 0.0 for v in emb.kl_trace)

    def test_embedding_permutation_equivariant(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(60, 5))
        keys = [f"model-{i:03d}" for i in range(60)]
        perm = rng.permutation(60)
        params = TsneParams(iterations=400, exaggeration_iters=100,
                            momentum_switch=100)
        a = compute_affinities(x, 12.0, point_keys=keys)
        b = compute_affinities(x[perm], 12.0,
                               point_keys=[keys[i] for i in perm])
        ea = embed(a, seed=3, params=params, point_keys=keys)
        eb = embed(b, seed=3, params=params,
                   point_keys=[keys[i] for i in perm])
        assert np.array_equal(eb.coords, ea.coords[perm])
        assert eb.kl_trace == ea.kl_trace

    def test_runaway_learning_rate_overflows(self):
        rng = np.random.default_rng(9)
        aff = compute_affinities(rng.normal(size=(40, 4)), 8.0)
        with pytest.raises(NumericalOverflow):
            embed(aff, seed=0,
                  params=TsneParams(iterations=50, learning_rate=1e300))

    def test_short_run_trace_includes_exaggeration_end(self):
        rng = np.random.default_rng(9)
        aff = compute_affinities(rng.normal(size=(40, 4)), 8.0)
        emb = embed(aff, seed=1,
                    params=TsneParams(iterations=120, exaggeration_iters=37,
                                      momentum_switch=37))
        assert emb.kl_iterations == (37, 50, 100, 120)


def _record(name, scores):
    return ModelRecord(name=name, params_b=7.0, training_type="pretrained",
                       architecture_raw="llama", arch_category="LLaMA",
                       scores=scores, precision=None, license=None)


class TestScoreFeatures:
    def make_table(self, n=40, missing=()):
        rng = np.random.default_rng(13)
        names = DEFAULT_SCHEMA.benchmark_names
        recs = []
        for i in range(n):
            scores = {b: float(rng.uniform(20.0, 90.0)) for b in names}
            if i in missing:
                del scores[names[i % len(names)]]
            recs.append(_record(f"m{i}", scores))
        return AnalysisTable(records=tuple(recs), schema=DEFAULT_SCHEMA)

    def test_zscored_columns(self):
        feats, kept, dropped = score_features(self.make_table())
        assert feats.shape == (40, 6)
        assert dropped.size == 0
        assert np.allclose(feats.mean(axis=0), 0.0, atol=1e-12)
        assert np.allclose(feats.std(axis=0), 1.0, atol=1e-12)

    def test_incomplete_records_excluded_and_listed(self):
        feats, kept, dropped = score_features(self.make_table(missing=(4, 17)))
        assert list(dropped) == [4, 17]
        assert feats.shape == (38, 6)
        assert 4 not in kept and 17 not in kept

    def test_too_few_complete_records(self):
        table = self.make_table(n=4, missing=(0, 1))
        with pytest.raises(DataError):
            score_features(table)

    def test_constant_column_zscores_to_zero(self):
        names = DEFAULT_SCHEMA.benchmark_names
        rng = np.random.default_rng(5)
        recs = []
        for i in range(10):
            scores = {b: float(rng.uniform(0, 100)) for b in names}
            scores[names[0]] = 55.0
            recs.append(_record(f"m{i}", scores))
        table = AnalysisTable(records=tuple(recs), schema=DEFAULT_SCHEMA)
        feats, _, _ = score_features(table)
        assert np.all(feats[:, 0] == 0.0)
