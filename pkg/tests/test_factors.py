import unittest

from src.landscape_sa.factors import (
    BASE_FERTILIZER_AMOUNT,
    FACTOR_IDS,
    FACTOR_TABLE,
    FERTILIZER_TYPES,
    FactorSpec,
    by_id,
    check_unique_ids,
    factor_table,
    select,
)


class TestFactorTable(unittest.TestCase):
    def test_eleven_factors_a_to_k(self):
        self.assertEqual(FACTOR_IDS, tuple("ABCDEFGHIJK"))
        self.assertTrue(all(len(f.levels) == 3 for f in FACTOR_TABLE))

    def test_fertilizer_amount_levels(self):
        k = by_id(FACTOR_TABLE)["K"]
        self.assertEqual(k.levels, (0.8 * BASE_FERTILIZER_AMOUNT, BASE_FERTILIZER_AMOUNT, 1.2 * BASE_FERTILIZER_AMOUNT))
        self.assertEqual(by_id(FACTOR_TABLE)["J"].levels, FERTILIZER_TYPES)

    def test_mesh_widths_nest_into_reference(self):
        widths = by_id(FACTOR_TABLE)["A"].levels
        self.assertTrue(all((50.0 / w).is_integer() for w in widths))

    def test_level_and_code_round_trip(self):
        c = by_id(FACTOR_TABLE)["C"]
        self.assertEqual(c.level(2), 15.0)
        self.assertEqual(c.code_of(8.0), 1)
        with self.assertRaises(ValueError):
            c.level(3)
        with self.assertRaises(ValueError):
            c.code_of(9.0)

    def test_invalid_specs_rejected(self):
        with self.assertRaises(ValueError):
            FactorSpec("a", "lower-case id", (1, 2, 3), "-", "physical")
        with self.assertRaises(ValueError):
            FactorSpec("Z", "two levels", (1, 2), "-", "physical")
        with self.assertRaises(ValueError):
            FactorSpec("Z", "repeated level", (1, 1, 2), "-", "physical")
        with self.assertRaises(ValueError):
            FactorSpec("Z", "bad kind", (1, 2, 3), "-", "economic")

    def test_overrides_replace_levels_only_for_named_factor(self):
        table = factor_table({"C": [1, 4, 9]})
        self.assertEqual(by_id(table)["C"].levels, (1, 4, 9))
        self.assertEqual(by_id(table)["D"], by_id(FACTOR_TABLE)["D"])

    def test_override_errors(self):
        with self.assertRaises(ValueError):
            factor_table({"Z": [1, 2, 3]})
        with self.assertRaises(ValueError):
            factor_table({"J": ["OL", "OF", "XX"]})

    def test_select_keeps_order_and_checks_ids(self):
        self.assertEqual([f.id for f in select(FACTOR_TABLE, ["K", "B"])], ["K", "B"])
        with self.assertRaises(ValueError):
            select(FACTOR_TABLE, ["B", "Q"])
        with self.assertRaises(ValueError):
            check_unique_ids([FACTOR_TABLE[0], FACTOR_TABLE[0]])


if __name__ == "__main__":
    unittest.main()
