import tempfile
import unittest
from dataclasses import replace
from pathlib import Path

import numpy as np

from src.landscape_sa.factors import FACTOR_TABLE, factor_table
from src.landscape_sa.forcing import DAYS_PER_YEAR, Forcing
from src.landscape_sa.landscape_sim import (
    DEFAULT_OUTCOMES,
    MAP_OUTCOMES,
    OUTCOMES,
    OUTFLOW_OUTCOMES,
    FactorAssignment,
    LandscapeConfig,
    RateConstants,
    build_land_use,
    fertilization_schedule,
    fertilizer_inputs,
    mass_balance,
    read_run_output,
    simulate,
    write_run_output,
)
from src.landscape_sa.tensor_store import FARM, MAIZE, UNMANAGED, WHEAT

SMALL = LandscapeConfig(n_x_ref=4, n_y_ref=4, sim_years=2, spinup_years=1, plot_cells=2)


def assignment(**codes):
    return FactorAssignment.from_codes(codes)


class TestLandUse(unittest.TestCase):
    def test_default_layout_proportions(self):
        lu = build_land_use(20, 20, 5)
        counts = np.bincount(lu.ravel(), minlength=4)
        self.assertEqual(counts[UNMANAGED], 64)  # 48 / 300 of the pixels
        self.assertEqual(counts[FARM], 2)
        self.assertLessEqual(abs(int(counts[MAIZE]) - int(counts[WHEAT])), 1)
        self.assertEqual(counts.sum(), 400)

    def test_tiny_layout(self):
        lu = build_land_use(4, 4, 2)
        self.assertEqual(lu.shape, (4, 4))
        self.assertTrue(np.all(lu >= 0))

    def test_layout_too_small(self):
        with self.assertRaises(ValueError):
            build_land_use(1, 1, 1)


class TestConfig(unittest.TestCase):
    def test_defaults(self):
        config = LandscapeConfig()
        self.assertAlmostEqual(config.area_ha, 100.0)
        self.assertEqual(config.n_days, 5 * DAYS_PER_YEAR)
        self.assertEqual(config.retained_years, 3)
        self.assertAlmostEqual(config.slope, 0.05)

    def test_grid_refinement_keeps_land_use_areas(self):
        config = LandscapeConfig()
        fine = config.grid(12.5)
        self.assertEqual((fine.n_x, fine.n_y), (80, 80))
        self.assertEqual(fine.land_use_area_ha(), config.reference_grid().land_use_area_ha())
        with self.assertRaises(ValueError):
            config.grid(30.0)

    def test_validation(self):
        with self.assertRaises(ValueError):
            LandscapeConfig(sim_years=2, spinup_years=2)
        with self.assertRaises(ValueError):
            LandscapeConfig(n_x_ref=1)
        with self.assertRaises(ValueError):
            RateConstants(volatilization=1.5)
        with self.assertRaises(ValueError):
            RateConstants(q10=-1.0)

    def test_dict_round_trip(self):
        config = LandscapeConfig.from_dict({"n_x_ref": 6, "rates": {"nitrification": 0.02}})
        self.assertEqual(config.rates.nitrification, 0.02)
        self.assertEqual(LandscapeConfig.from_dict(config.to_dict()), config)
        with self.assertRaises(ValueError):
            LandscapeConfig.from_dict({"n_cells": 3})
        with self.assertRaises(ValueError):
            RateConstants.from_dict({"speed": 1})


class TestFactorAssignment(unittest.TestCase):
    def test_from_codes_defaults_to_middle_level(self):
        a = assignment(A=0, J=2)
        self.assertEqual(a.mesh_width, 12.5)
        self.assertEqual(a.fertilizer_type, "INO")
        self.assertEqual(a.fertilizer_amount, 180.0)
        self.assertEqual(a.value("C"), 8.0)

    def test_validate_rejects_off_level_values(self):
        a = assignment().with_values(transmissivity=3.0)
        with self.assertRaises(ValueError):
            a.validate(FACTOR_TABLE)
        with self.assertRaises(ValueError):
            simulate(a, SMALL)

    def test_overridden_levels(self):
        table = factor_table({"C": [1, 4, 9]})
        a = FactorAssignment.from_codes({"C": 2}, table)
        self.assertEqual(a.transmissivity, 9.0)
        a.validate(table)


class TestFertilization(unittest.TestCase):
    def test_schedule_totals(self):
        a = assignment(K=2)
        schedule = fertilization_schedule(a, SMALL)
        maize = sum(v[MAIZE] for v in schedule.values())
        wheat = sum(v[WHEAT] for v in schedule.values())
        self.assertAlmostEqual(maize, 216.0 * 1.1)
        self.assertAlmostEqual(wheat, 216.0 * 0.9)
        self.assertEqual(sum(v[UNMANAGED] + v[FARM] for v in schedule.values()), 0.0)

    def test_inputs_independent_of_mesh_width(self):
        self.assertAlmostEqual(fertilizer_inputs(assignment(A=0), SMALL), fertilizer_inputs(assignment(A=2), SMALL))


class TestSimulate(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.output = simulate(assignment(), SMALL)

    def test_output_shapes(self):
        out = self.output
        self.assertEqual(set(out.outflow), set(OUTFLOW_OUTCOMES))
        self.assertEqual(set(out.maps), set(MAP_OUTCOMES))
        for series in out.outflow.values():
            self.assertEqual(series.shape, (DAYS_PER_YEAR,))
        for values in out.maps.values():
            self.assertEqual(values.shape, (12, 16))
            self.assertTrue(np.all(np.isfinite(values)))
        self.assertEqual(len(out.budget), 2)
        self.assertTrue(out.budget[0].spin_up)
        self.assertFalse(out.budget[1].spin_up)

    def test_outcome_registry(self):
        self.assertEqual(len(OUTCOMES), 21)
        self.assertEqual(len(DEFAULT_OUTCOMES), 17)
        self.assertTrue(set(DEFAULT_OUTCOMES) <= set(OUTCOMES))

    def test_deterministic(self):
        again = simulate(assignment(), SMALL)
        for name in MAP_OUTCOMES:
            np.testing.assert_array_equal(again.maps[name], self.output.maps[name])
        np.testing.assert_array_equal(again.outflow["discharge"], self.output.outflow["discharge"])

    def test_nitrogen_and_water_balance(self):
        rng = np.random.default_rng(4)
        for _ in range(4):
            codes = dict(zip("ABCDEFGHIJK", rng.integers(0, 3, size=11)))
            a = assignment(**codes)
            for row in mass_balance(simulate(a, SMALL), a, SMALL):
                self.assertLessEqual(abs(row.residual), 1e-6, row)
                self.assertLessEqual(abs(row.water_residual), 1e-6, row)

    def test_fertilizer_amount_raises_emissions(self):
        totals = []
        for k in (0, 1, 2):
            out = simulate(assignment(K=k), SMALL)
            totals.append(out.maps["nox_emission"].sum())
        self.assertLess(totals[0], totals[1])
        self.assertLess(totals[1], totals[2])

    def test_fertilizer_amount_raises_inputs_and_exports(self):
        rng = np.random.default_rng(7)
        settings = [{}] + [dict(zip("ABCDEFGHIJ", rng.integers(0, 3, size=10))) for _ in range(3)]
        for codes in settings:
            with self.subTest(codes=codes):
                outputs = [simulate(assignment(K=k, **codes), SMALL) for k in (0, 1, 2)]
                inputs = [o.total_inputs() for o in outputs]
                exports = [o.total_exports() for o in outputs]
                self.assertLess(inputs[0], inputs[1])
                self.assertLess(inputs[1], inputs[2])
                self.assertLessEqual(exports[0], exports[1] * (1.0 + 1e-12))
                self.assertLessEqual(exports[1], exports[2] * (1.0 + 1e-12))

    def test_halving_mesh_width_keeps_total_export(self):
        exports = {a: simulate(assignment(A=a), SMALL).total_exports() for a in (0, 1, 2)}
        # A levels: 0 -> 12.5 m, 1 -> 25 m, 2 -> 50 m
        self.assertLess(abs(exports[1] - exports[2]) / exports[2], 0.05)
        self.assertLess(abs(exports[0] - exports[1]) / exports[1], 0.05)

    def test_no_leaching_exports_only_gases_and_uptake(self):
        config = replace(SMALL, rates=replace(SMALL.rates, leaching_rate=0.0))
        a = assignment()
        out = simulate(a, config)
        for b in out.budget:
            self.assertEqual(b.outlet_nh4, 0.0)
            self.assertEqual(b.outlet_no3, 0.0)
            self.assertAlmostEqual(b.n_exports, b.nh3 + b.nox + b.n2o + b.uptake_nh4 + b.uptake_no3)
        np.testing.assert_array_equal(out.outflow["no3_load"], 0.0)
        np.testing.assert_array_equal(out.maps["leaching"], 0.0)
        for row in mass_balance(out, a, config):
            self.assertLessEqual(abs(row.residual), 1e-6, row)

    def test_without_fertilizer_nitrogen_only_decays(self):
        config = replace(SMALL, fertilizer_scale=0.0)
        a = assignment()
        out = simulate(a, config)
        self.assertEqual(out.total_inputs(retained_only=False), 0.0)
        storage = out.storage_series
        self.assertGreater(storage[0], 0.0)
        self.assertTrue(np.all(np.diff(storage) <= 1e-9 * storage[0]))
        self.assertLess(out.budget[-1].storage_end, out.budget[0].storage_start)
        for row in mass_balance(out, a, config):
            self.assertEqual(row.inputs, 0.0)
            self.assertLessEqual(abs(row.residual), 1e-6, row)

    def test_budget_inputs_match_schedule(self):
        expected = fertilizer_inputs(assignment(), SMALL)
        for b in self.output.budget:
            self.assertAlmostEqual(b.fertilizer_input, expected, places=6)

    def test_dry_forcing_has_no_discharge(self):
        out = simulate(assignment(), SMALL, Forcing.dry(SMALL.n_days))
        self.assertEqual(out.outflow["discharge"].sum(), 0.0)
        np.testing.assert_array_equal(out.outflow["no3_conc"], 0.0)

    def test_short_forcing_rejected(self):
        with self.assertRaises(ValueError):
            simulate(assignment(), SMALL, Forcing.dry(10))

    def test_fine_mesh_resampled_to_reference(self):
        fine = simulate(assignment(A=0), SMALL)
        self.assertEqual(fine.grid.n_pixels, 256)
        coarse = fine.on_grid(SMALL.reference_mesh)
        self.assertEqual(coarse.grid.n_pixels, 16)
        for name in MAP_OUTCOMES:
            np.testing.assert_allclose(coarse.maps[name].mean(axis=1), fine.maps[name].mean(axis=1),
                                       rtol=1e-10, atol=1e-12)
        self.assertIs(self.output.on_grid(SMALL.reference_mesh), self.output)

    def test_to_tensors(self):
        tensors = {t.name: t for t in self.output.to_tensors("abc")}
        self.assertEqual(len(tensors), 21)
        self.assertIsNone(tensors["discharge"].grid)
        self.assertEqual(tensors["discharge"].time_axis.start, DAYS_PER_YEAR)
        self.assertEqual(tensors["gw_depth"].time_axis.kind, "monthly")
        self.assertEqual(tensors["nh3_emission"].aggregation, "sum")

    def test_run_output_round_trip(self):
        with tempfile.TemporaryDirectory() as tmp:
            write_run_output(self.output, Path(tmp) / "run0", "abc")
            back = read_run_output(Path(tmp) / "run0")
        self.assertEqual(back.assignment, self.output.assignment)
        self.assertEqual(back.budget, self.output.budget)
        np.testing.assert_array_equal(back.maps["hs_no3"], self.output.maps["hs_no3"])
        np.testing.assert_array_equal(back.outflow["no3_load"], self.output.outflow["no3_load"])
        self.assertTrue(back.grid.same_as(self.output.grid))


if __name__ == "__main__":
    unittest.main()
