import itertools
import unittest

import numpy as np

from src.landscape_sa.anova_sa import fit_saturated_anova
from src.landscape_sa.clustering import (
    Partition,
    adjusted_rand,
    bootstrap_stability,
    canonical_labels,
    chi_square_association,
    classify_angle,
    cluster_series,
    cut,
    elbow,
    factor_associations,
    kmeans,
    minimal_agreement_M,
    si_feature_matrix,
    synthesize,
    ward,
)
from src.landscape_sa.errors import DegenerateTable, ObjectMismatch, TooFewPoints
from src.landscape_sa.gf3design import DesignMatrix


def blobs(seed: int = 0, per: int = 10) -> np.ndarray:
    rng = np.random.default_rng(seed)
    centers = np.array([[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]])
    return np.vstack([c + rng.normal(scale=0.5, size=(per, 2)) for c in centers])


def manual_partition(labels) -> Partition:
    labels = canonical_labels(labels)
    return Partition(labels, int(labels.max()), "manual", 0.0)


class TestPartitions(unittest.TestCase):
    def test_canonical_labels(self):
        np.testing.assert_array_equal(canonical_labels([7, 7, 2, 9, 2]), [1, 1, 2, 3, 2])

    def test_kmeans_and_ward_agree_on_blobs(self):
        X = blobs()
        km = kmeans(X, 3, seed=1)
        hc = cut(ward(X), 3)
        self.assertEqual(adjusted_rand(km, hc), 1.0)
        np.testing.assert_array_equal(km.labels, hc.labels)
        self.assertGreater(km.inertia_explained, 0.99)

    def test_kmeans_is_reproducible(self):
        X = blobs(seed=3)
        np.testing.assert_array_equal(kmeans(X, 4, seed=5).labels, kmeans(X, 4, seed=5).labels)

    def test_one_cluster_per_object_explains_everything(self):
        X = blobs(per=3)
        self.assertEqual(cut(ward(X), X.shape[0]).inertia_explained, 1.0)
        self.assertEqual(cut(ward(X), 1).inertia_explained, 0.0)

    def test_ward_height_is_half_squared_distance(self):
        X = np.array([[0.0, 0.0], [3.0, 4.0]])
        tree = ward(X)
        self.assertEqual(len(tree.merges), 1)
        self.assertAlmostEqual(tree.merges[0].height, 12.5)
        self.assertEqual(tree.merges[0].size, 2)
        self.assertEqual(list(tree.to_frame().columns), ["left", "right", "height", "size"])

    def test_cut_bounds(self):
        with self.assertRaises(ValueError):
            cut(ward(blobs(per=2)), 7)

    def test_adjusted_rand_object_mismatch(self):
        with self.assertRaises(ObjectMismatch):
            adjusted_rand(manual_partition([1, 2, 1]), manual_partition([1, 2]))


class TestElbow(unittest.TestCase):
    def test_clear_elbow(self):
        self.assertEqual(elbow([0.2, 0.7, 0.74, 0.76, 0.77]), (2, True))

    def test_elbow_uses_given_cluster_counts(self):
        self.assertEqual(elbow([0.2, 0.7, 0.74], [2, 3, 4]).M, 3)

    def test_linear_curve_has_no_elbow(self):
        result = elbow([0.25, 0.5, 0.75, 1.0])
        self.assertFalse(result.has_elbow)
        self.assertEqual(result.M, 1)

    def test_too_few_points(self):
        with self.assertRaises(TooFewPoints):
            elbow([0.2, 0.9])

    def test_decreasing_curve_rejected(self):
        with self.assertRaises(ValueError):
            elbow([0.5, 0.4, 0.9])


def planted_ring(seed: int, n_clusters: int = 5, per: int = 30) -> tuple:
    rng = np.random.default_rng(seed)
    angles = 2.0 * np.pi * np.arange(n_clusters) / n_clusters
    centers = 10.0 * np.column_stack([np.cos(angles), np.sin(angles)])
    X = np.vstack([c + rng.normal(scale=0.5, size=(per, 2)) for c in centers])
    return X, np.repeat(np.arange(n_clusters), per)


class TestMinimalAgreement(unittest.TestCase):
    def test_recovers_five_planted_clusters(self):
        for seed in range(20):
            with self.subTest(seed=seed):
                X, planted = planted_ring(seed)
                self.assertEqual(minimal_agreement_M(X, 8, seed=seed), 5)
                truth = manual_partition(planted + 1)
                self.assertEqual(adjusted_rand(kmeans(X, 5, seed=seed), truth), 1.0)
                self.assertEqual(adjusted_rand(cut(ward(X), 5), truth), 1.0)

    def test_split_of_a_planted_cluster_is_not_preferred(self):
        # the elongated cluster at the origin invites a shared split at M=4
        rng = np.random.default_rng(4)
        centers = np.array([[0.0, 0.0], [30.0, 0.0], [0.0, 30.0]])
        X = np.vstack([c + rng.normal(scale=0.5, size=(20, 2)) for c in centers])
        X[:20, 0] *= 4.0
        self.assertEqual(minimal_agreement_M(X, 5, seed=0), 3)

    def test_two_identical_groups(self):
        X = np.vstack([np.zeros((6, 2)), np.full((6, 2), 5.0)])
        self.assertEqual(minimal_agreement_M(X, 2, seed=0), 2)

    def test_m_max_bounds(self):
        with self.assertRaises(ValueError):
            minimal_agreement_M(blobs(per=2), 1, seed=0)


class TestAssociation(unittest.TestCase):
    def setUp(self):
        codes = np.array(list(itertools.product(range(3), repeat=5)))
        self.design = DesignMatrix(codes, tuple("ABCDE"))

    def test_partition_equal_to_a_factor(self):
        partition = manual_partition(self.design.column("A") + 1)
        own = chi_square_association(partition, self.design.column("A"))
        self.assertAlmostEqual(own.chi2, 486.0)
        self.assertEqual(own.df, 4)
        self.assertTrue(own.significant)
        other = chi_square_association(partition, self.design.column("B"))
        self.assertAlmostEqual(other.chi2, 0.0)
        self.assertAlmostEqual(other.p_value, 1.0)
        self.assertFalse(other.low_expected_flag)

    def test_factor_associations(self):
        partition = manual_partition(self.design.column("C") + 1)
        tests = factor_associations(partition, self.design)
        self.assertEqual(sorted(tests), list("ABCDE"))
        self.assertEqual([f for f, t in tests.items() if t.significant], ["C"])

    def test_uniform_table(self):
        partition = manual_partition([1] * 30 + [2] * 30)
        levels = [0, 1, 2] * 20
        result = chi_square_association(partition, levels)
        self.assertEqual(result.table.to_numpy().tolist(), [[10, 10, 10], [10, 10, 10]])
        self.assertEqual(result.chi2, 0.0)
        self.assertEqual(result.p_value, 1.0)

    def test_single_cluster_is_degenerate(self):
        with self.assertRaises(DegenerateTable):
            chi_square_association(manual_partition([1] * 9), [0, 1, 2] * 3)

    def test_length_mismatch(self):
        with self.assertRaises(ObjectMismatch):
            chi_square_association(manual_partition([1, 2, 1]), [0, 1])


class TestBootstrapAndSeries(unittest.TestCase):
    def test_stable_blobs(self):
        stability = bootstrap_stability(blobs(per=6), 3, B=100, seed=0)
        self.assertEqual(stability.shape, (3,))
        self.assertTrue(np.all(stability >= 0.9))

    def test_bootstrap_needs_100_resamples(self):
        with self.assertRaises(ValueError):
            bootstrap_stability(blobs(), 3, B=50, seed=0)

    def test_series_clusters_follow_curve_shape(self):
        t = np.linspace(0.0, 1.0, 12)
        rng = np.random.default_rng(0)
        rising = np.outer(np.ones(8), t) + rng.normal(scale=0.01, size=(8, 12))
        falling = np.outer(np.ones(8), 1.0 - t) + rng.normal(scale=0.01, size=(8, 12))
        partition = cluster_series(np.vstack([rising, falling]), M=2, seed=0)
        np.testing.assert_array_equal(partition.labels, [1] * 8 + [2] * 8)


class TestFeatures(unittest.TestCase):
    def setUp(self):
        codes = np.array(list(itertools.product(range(3), repeat=3)))
        self.design = DesignMatrix(codes, ("A", "B", "C"))
        self.x = codes.astype(float) - 1.0

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        profiles = {
            "main": fit_saturated_anova(self.design, self.x[:, 0] + 0.2 * self.x[:, 1]),
            "pair": fit_saturated_anova(self.design, self.x[:, 0] * self.x[:, 2]),
        }
        for mode, width in (("per_factor", 6), ("ensemble", 4)):
            names, features, matrix = si_feature_matrix(profiles, mode)
            self.assertEqual(names, ["main", "pair"])
            self.assertEqual(matrix.shape, (2, width))
            np.testing.assert_allclose(matrix.sum(axis=1), 1.0, atol=1e-9)
        _, features, _ = si_feature_matrix(profiles, "per_factor")
        self.assertEqual(features[:2], ["mSI_A", "mSI_B"])
        self.assertIn("iSI_C", features)
        noisy = {"noise": fit_saturated_anova(self.design, rng.normal(size=27))}
        _, features, matrix = si_feature_matrix(noisy, "ensemble")
        self.assertEqual(features[-1], "residual")
        self.assertAlmostEqual(matrix.sum(), 1.0)

    def test_unknown_mode(self):
        with self.assertRaises(ValueError):
            si_feature_matrix({}, "pairs")


class TestSynthesis(unittest.TestCase):
    def test_two_groups(self):
        profiles = np.array([[0.8, 0.1, 0.1]] * 3 + [[0.1, 0.1, 0.8]] * 3)
        result = synthesize(profiles, M_max=2, seed=0, outcomes=list("uvwxyz"), features=["a", "b", "c"])
        self.assertEqual(result.M, 2)
        self.assertTrue(result.agreement)
        np.testing.assert_array_equal(result.partition.labels, [1, 1, 1, 2, 2, 2])
        relations = {(p.first, p.second): p.relation for p in result.arrow_pairs if p.plane == (0, 1)}
        self.assertEqual(relations[("a", "c")], "antiparallel")
        self.assertEqual(relations[("a", "b")], "undefined")
        self.assertAlmostEqual(result.plane_inertia[(0, 1)], 1.0)
        summary = result.cluster_summary()
        self.assertEqual(summary["n_outcomes"].tolist(), [3, 3])
        self.assertEqual(summary["outcomes"].tolist(), ["u;v;w", "x;y;z"])
        frames = result.biplot_frames()
        self.assertEqual(len(frames), 3)
        self.assertIn("PC1", frames[(0, 1)][0].columns)
        self.assertEqual(result.to_dict()["M"], 2)

    def test_rows_must_sum_to_one(self):
        with self.assertRaises(ValueError):
            synthesize(np.array([[0.5, 0.2], [0.3, 0.3]]), M_max=2, seed=0)

    def test_angle_classes(self):
        self.assertEqual(classify_angle(10.0), "parallel")
        self.assertEqual(classify_angle(170.0), "antiparallel")
        self.assertEqual(classify_angle(95.0), "orthogonal")
        self.assertEqual(classify_angle(45.0), "unclassified")
        self.assertEqual(classify_angle(None), "undefined")


if __name__ == "__main__":
    unittest.main()
