import itertools
import unittest

import numpy as np

from src.landscape_sa.anova_sa import (
    INTERACTIONS,
    STRENGTH_CACHE_SIZE,
    _cached_strength,
    conditional_variance_indexes,
    dynamic_sa,
    fit_many,
    fit_saturated_anova,
    profiles_frame,
    spatial_sa,
)
from src.landscape_sa.errors import InsufficientStrength, LengthMismatch
from src.landscape_sa.gf3design import DesignMatrix, generate_regular_design


def full_factorial(ids="ABC") -> DesignMatrix:
    codes = np.array(list(itertools.product(range(3), repeat=len(ids))))
    return DesignMatrix(codes, tuple(ids))


class TestScalarIndexes(unittest.TestCase):
    def setUp(self):
        self.design = full_factorial()
        self.x = self.design.codes.astype(float) - 1.0

    def test_pure_main_effect(self):
        p = fit_saturated_anova(self.design, 4.0 * self.x[:, 0] ** 2 + 1.0)
        self.assertAlmostEqual(p.m_si["A"], 1.0)
        self.assertAlmostEqual(p.t_si["A"], 1.0)
        self.assertAlmostEqual(p.m_si["B"], 0.0)
        self.assertAlmostEqual(p.i_tot, 0.0)
        self.assertEqual(p.dominant_factor(), "A")

    def test_pure_interaction(self):
        p = fit_saturated_anova(self.design, self.x[:, 0] * self.x[:, 1])
        self.assertAlmostEqual(p.i_si[("A", "B")], 1.0)
        self.assertAlmostEqual(p.i_tot, 1.0)
        self.assertAlmostEqual(p.t_si["A"], 1.0)
        self.assertAlmostEqual(p.t_si["C"], 0.0)
        self.assertAlmostEqual(p.interaction_share("A"), 0.5)
        self.assertEqual(p.dominant_factor(), "A")

    def test_matches_conditional_variance_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            y = rng.normal(size=self.design.n_runs)
            p = fit_saturated_anova(self.design, y)
            oracle = conditional_variance_indexes(self.design.codes, y, self.design.factor_ids)
            np.testing.assert_allclose([p.m_si[f] for f in "ABC"], [oracle[f] for f in "ABC"], rtol=0, atol=1e-12)
            pairs = list(itertools.combinations("ABC", 2))
            np.testing.assert_allclose([p.i_si[pair] for pair in pairs], [oracle[f"{f}:{g}"] for f, g in pairs],
                                       rtol=0, atol=1e-12)

    def test_affine_invariance(self):
        rng = np.random.default_rng(5)
        y = rng.normal(size=self.design.n_runs)
        p = fit_saturated_anova(self.design, y)
        q = fit_saturated_anova(self.design, -3.0 * y + 7.0)
        for f in "ABC":
            self.assertAlmostEqual(p.t_si[f], q.t_si[f], places=12)
        self.assertAlmostEqual(p.i_tot, q.i_tot, places=12)

    def test_run_order_invariance(self):
        rng = np.random.default_rng(7)
        y = rng.normal(size=self.design.n_runs)
        perm = rng.permutation(self.design.n_runs)
        shuffled = DesignMatrix(self.design.codes[perm], self.design.factor_ids)
        p = fit_saturated_anova(self.design, y)
        q = fit_saturated_anova(shuffled, y[perm])
        for f in "ABC":
            self.assertAlmostEqual(p.m_si[f], q.m_si[f], places=12)

    def test_constant_response_is_degenerate(self):
        p = fit_saturated_anova(self.design, np.full(27, 2.5))
        self.assertTrue(p.degenerate)
        self.assertEqual(p.i_tot, 0.0)
        self.assertTrue(all(v == 0.0 for v in p.m_si.values()))
        self.assertEqual(p.residual, 0.0)

    def test_length_mismatch(self):
        with self.assertRaises(LengthMismatch):
            fit_saturated_anova(self.design, np.zeros(26))

    def test_non_finite_response(self):
        y = np.zeros(27)
        y[4] = np.nan
        with self.assertRaises(ValueError):
            fit_saturated_anova(self.design, y)

    def test_insufficient_strength(self):
        # Latin square: 9 runs, strength 2 only
        codes = np.array([(i, j, (i + j) % 3) for i in range(3) for j in range(3)])
        design = DesignMatrix(codes, ("A", "B", "C"))
        with self.assertRaises(InsufficientStrength):
            fit_saturated_anova(design, np.arange(9.0))

    def test_profiles_frame(self):
        p = fit_saturated_anova(self.design, self.x[:, 2])
        frame = profiles_frame({"y": p})
        # 3 x (mSI, tSI) + 3 pairs + iTOT
        self.assertEqual(len(frame), 10)
        self.assertEqual(set(frame["index"]), {"mSI", "tSI", "iSI", "iTOT"})
        itot = frame[frame["index"] == "iTOT"]
        self.assertEqual(itot["term"].tolist(), [INTERACTIONS])


class TestSaturatedDesign(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.design = generate_regular_design(11, 5, 5, seed=0)

    def test_indexes_sum_to_one_on_random_responses(self):
        rng = np.random.default_rng(11)
        responses = rng.normal(size=(self.design.n_runs, 100))
        for p in fit_many(self.design, responses):
            self.assertAlmostEqual(sum(p.m_si.values()) + p.i_tot, 1.0, places=9)
            self.assertAlmostEqual(p.residual, 0.0, places=9)
            self.assertTrue(all(v >= 0.0 for v in p.i_si.values()))

    def test_total_index_counts_every_interaction_twice(self):
        rng = np.random.default_rng(13)
        p = fit_saturated_anova(self.design, rng.normal(size=self.design.n_runs))
        self.assertAlmostEqual(sum(p.t_si.values()), sum(p.m_si.values()) + 2.0 * p.i_tot, places=9)
        shares = sum(p.interaction_share(f) for f in p.factors)
        self.assertAlmostEqual(shares, p.i_tot, places=9)

    def test_matches_conditional_variance_oracle(self):
        rng = np.random.default_rng(17)
        ids = self.design.factor_ids
        pairs = list(itertools.combinations(ids, 2))
        for _ in range(50):
            y = rng.normal(size=self.design.n_runs)
            p = fit_saturated_anova(self.design, y)
            oracle = conditional_variance_indexes(self.design.codes, y, ids)
            np.testing.assert_allclose([p.m_si[f] for f in ids], [oracle[f] for f in ids], rtol=0, atol=1e-12)
            np.testing.assert_allclose([p.i_si[pair] for pair in pairs], [oracle[f"{f}:{g}"] for f, g in pairs],
                                       rtol=0, atol=1e-12)

    def test_strength_check_is_cached_by_checksum(self):
        _cached_strength.cache_clear()
        fit_saturated_anova(self.design, np.arange(self.design.n_runs, dtype=float))
        copy = DesignMatrix(self.design.codes.copy(), self.design.factor_ids)
        fit_saturated_anova(copy, np.arange(self.design.n_runs, dtype=float) ** 2)
        info = _cached_strength.cache_info()
        self.assertEqual((info.misses, info.hits), (1, 1))
        self.assertEqual(info.maxsize, STRENGTH_CACHE_SIZE)


class TestDynamicAndSpatial(unittest.TestCase):
    def setUp(self):
        self.design = full_factorial()
        self.x = self.design.codes.astype(float) - 1.0

    def test_alternating_dominance(self):
        series = np.stack([self.x[:, 0] if t % 2 == 0 else self.x[:, 1] for t in range(6)], axis=1)
        dyn = dynamic_sa(self.design, series, time=range(10, 16))
        self.assertEqual(dyn.dominant(), ["A", "B", "A", "B", "A", "B"])
        np.testing.assert_allclose(dyn.m_si[:, 0], [1, 0, 1, 0, 1, 0], atol=1e-12)
        self.assertEqual(dyn.time.tolist(), list(range(10, 16)))
        summary = dyn.summary().set_index("term")
        self.assertAlmostEqual(summary.loc["A", "mean"], 0.5)
        frame = dyn.to_frame()
        self.assertEqual(set(frame["time"]), set(range(10, 16)))

    def test_window_dominant(self):
        series = np.stack([self.x[:, 0], self.x[:, 1], self.x[:, 1], np.zeros(27)], axis=1)
        dyn = dynamic_sa(self.design, series)
        self.assertEqual(dyn.window_dominant(np.array([False, True, True, False])), "B")
        self.assertEqual(dyn.window_dominant(np.array([True, True, True, True])), "B")
        self.assertIsNone(dyn.window_dominant(np.array([False, False, False, True])))
        with self.assertRaises(LengthMismatch):
            dyn.window_dominant(np.array([True, False]))

    def test_time_label_mismatch(self):
        with self.assertRaises(LengthMismatch):
            dynamic_sa(self.design, np.zeros((27, 3)), time=[0, 1])

    def test_degenerate_steps_excluded_from_summary(self):
        series = np.stack([self.x[:, 2], np.zeros(27)], axis=1)
        dyn = dynamic_sa(self.design, series)
        self.assertEqual(dyn.degenerate.tolist(), [False, True])
        summary = dyn.summary().set_index("term")
        self.assertAlmostEqual(summary.loc["C", "mean"], 1.0)

    def test_spatial_layers(self):
        maps = np.stack([
            self.x[:, 2] + 5.0,
            np.zeros(27),
            self.x[:, 0] * self.x[:, 1] + self.x[:, 0] * self.x[:, 2] + self.x[:, 1] * self.x[:, 2] + 5.0,
        ], axis=1)
        spatial = spatial_sa(self.design, maps)
        self.assertEqual(spatial.argmax[0], "C")
        self.assertEqual(spatial.argmax[2], INTERACTIONS)
        self.assertTrue(spatial.degenerate[1])
        self.assertTrue(spatial.rsd_flag[1])
        self.assertEqual(spatial.rsd[1], 0.0)
        self.assertAlmostEqual(spatial.mean[0], 5.0)
        self.assertAlmostEqual(spatial.rsd[0], np.std(self.x[:, 2]) / 5.0)
        layers = spatial.layers()
        self.assertIn("tSI_A", layers)
        self.assertEqual(layers["argmax"].shape, (3,))


if __name__ == "__main__":
    unittest.main()
