import json
import shutil
import tempfile
import unittest
from pathlib import Path

import pandas as pd

from src.landscape_sa.errors import MissingArtifact
from src.landscape_sa.pipeline import Pipeline, PipelineConfig
from src.landscape_sa.report import FIGURES, QUANTILES, report

EXPERIMENT = {
    "seed": 11,
    "factors": ["C", "J", "K"],
    "n_basic": 3,
    "landscape": {"n_x_ref": 4, "n_y_ref": 4, "sim_years": 2, "spinup_years": 1, "plot_cells": 2},
    "outcomes": ["discharge", "nox_emission", "nh4_uptake", "hs_no3", "leaching"],
    "M_max": 3,
}


class TestReport(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.mkdtemp()
        cls.result = Pipeline(PipelineConfig.from_dict(EXPERIMENT), cls.tmp).run()
        cls.out = Path(cls.tmp) / "report"

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmp, ignore_errors=True)

    def test_every_figure_is_emitted(self):
        self.assertEqual(self.result.executed[-1], "report")
        for name in FIGURES:
            self.assertTrue((self.out / name).exists(), name)
            self.assertIn(f"report/{name}", self.result.manifest)
        manifest = json.loads((self.out / "manifest.json").read_text())
        self.assertEqual(set(manifest["files"]), set(FIGURES) | {"dendrogram_leaves.json"})
        self.assertEqual(manifest["dynamic_outcome"], "nox_emission")

    def test_quantile_columns(self):
        frame = pd.read_csv(self.out / "dynamic_quantiles.csv")
        self.assertEqual(len(frame), 12)
        self.assertEqual(list(frame.columns), ["time", *[f"q{int(round(q * 100)):02d}" for q in QUANTILES], "mean"])
        self.assertTrue((frame["q05"] <= frame["q95"]).all())

    def test_runs_are_long_form(self):
        frame = pd.read_csv(self.out / "dynamic_runs.csv")
        self.assertEqual(list(frame.columns), ["run", "time", "value"])
        self.assertEqual(len(frame), 27 * 12)

    def test_map_layers(self):
        argmax = pd.read_csv(self.out / "map_argmax.csv")
        self.assertEqual(len(argmax), 16)
        self.assertTrue(set(argmax["argmax"]) <= {"C", "J", "K", "interactions"})
        rsd = pd.read_csv(self.out / "map_rsd.csv")
        self.assertTrue((rsd["rsd"] >= 0).all())

    def test_biplots_hold_outcomes_and_arrows(self):
        for tag in ("PC1-PC2", "PC1-PC3", "PC2-PC3"):
            frame = pd.read_csv(self.out / f"biplot_{tag}.csv")
            self.assertEqual(set(frame["kind"]), {"outcome", "arrow"})

    def test_dendrogram_leaves(self):
        leaves = json.loads((self.out / "dendrogram_leaves.json").read_text())["leaves"]
        dendrogram = pd.read_csv(self.out / "synthesis_dendrogram.csv")
        self.assertEqual(len(dendrogram), len(leaves) - 1)

    def test_rebuild_is_byte_identical(self):
        before = {name: (self.out / name).read_bytes() for name in FIGURES}
        report(self.tmp)
        after = {name: (self.out / name).read_bytes() for name in FIGURES}
        self.assertEqual(before, after)


class TestMissingArtifacts(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmp, ignore_errors=True)

    def test_empty_directory(self):
        with self.assertRaises(MissingArtifact):
            report(self.tmp)

    def test_missing_directory(self):
        with self.assertRaises(MissingArtifact):
            report(Path(self.tmp) / "absent")

    def test_partial_tree_writes_nothing(self):
        (Path(self.tmp) / "design").mkdir()
        (Path(self.tmp) / "design" / "design.csv").write_text("A,B,C\n0,0,0\n")
        with self.assertRaises(MissingArtifact):
            report(self.tmp)
        self.assertFalse((Path(self.tmp) / "report").exists())


if __name__ == "__main__":
    unittest.main()
