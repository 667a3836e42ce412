import io
import json
import tempfile
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, tag

from var.services import VarModel, simulate
from vstap import error_codes as EC
from vstap.storage_utils import load_json, read_series_csv, write_series_csv

from .services import (
    RunConfig,
    check_psi_vs_mc,
    check_solver_round_trip,
    check_truncated_moments,
    realization_paths,
)


def skewed_series(n, seed):
    model = VarModel(A=[[[0.5, 0.1], [0.2, 0.4]]], sigma_e=np.eye(2))
    z = simulate(model, n, seed)
    return np.vstack([np.exp(z[0]), z[1] ** 3])


class CommandTestCase(SimpleTestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)
        self.addCleanup(self._tmp.cleanup)

    def call(self, name, **options):
        out = io.StringIO()
        call_command(name, stdout=out, **options)
        return json.loads(out.getvalue())

    def call_failing(self, name, **options):
        out = io.StringIO()
        with self.assertRaises(CommandError) as ctx:
            call_command(name, stdout=out, **options)
        self.assertEqual(ctx.exception.returncode, 2)
        return json.loads(out.getvalue())["error"]

    def write_input(self, x, names=("flow", "load")):
        path = self.tmp / "series.csv"
        write_series_csv(x, list(names), path=path)
        return str(path)


class RunConfigTests(SimpleTestCase):
    def test_defaults(self):
        config = RunConfig.from_options("fit", input="a.csv", output="m.json", order=2)
        self.assertEqual(config.breakpoints, 20)
        self.assertEqual(config.epsilon, 1e-5)
        self.assertEqual(config.max_iter, 200)
        self.assertEqual(config.mode, "exact")
        self.assertEqual(config.realizations, 1)

    def test_realization_paths(self):
        self.assertEqual(realization_paths("out/run.csv", 1), [Path("out/run.csv")])
        self.assertEqual(
            realization_paths("out/run.csv", 2),
            [Path("out/run_0000.csv"), Path("out/run_0001.csv")],
        )


class FitCommandTests(CommandTestCase):
    def test_fit_writes_model_and_report(self):
        src = self.write_input(skewed_series(600, seed=1))
        model_path = self.tmp / "model.json"
        summary = self.call("fit", input=src, output=str(model_path), order=1)

        self.assertEqual(summary["command"], "fit")
        self.assertIsNone(summary["error"])
        self.assertEqual(summary["channels"], ["flow", "load"])
        self.assertNotIn("cells", summary)

        model = load_json(model_path)
        self.assertEqual(model["channel_names"], ["flow", "load"])
        self.assertEqual(model["var"]["seed"], 0)
        report = load_json(self.tmp / "model.report.json")
        self.assertEqual(len(report["cells"]), 5)
        self.assertEqual(report["model_file"], str(model_path))

    def test_constant_channel_fails_with_its_name(self):
        x = np.vstack([np.random.default_rng(2).standard_normal(300), np.full(300, 1.5)])
        src = self.write_input(x, names=("noise", "flat"))
        error = self.call_failing("fit", input=src, output=str(self.tmp / "m.json"), order=1)
        self.assertEqual(error["errorCode"], EC.PIPE_DEGENERATE_INPUT)
        self.assertEqual(error["context"]["channel"], "flat")
        self.assertFalse((self.tmp / "m.json").exists())

    def test_missing_options(self):
        src = self.write_input(skewed_series(200, seed=3))
        error = self.call_failing("fit", input=src)
        self.assertEqual(error["errorCode"], EC.GEN_INVALID_CONFIG)
        self.assertIn("order", error["errorMessage"])

    def test_missing_input_file(self):
        error = self.call_failing(
            "fit", input=str(self.tmp / "absent.csv"), output=str(self.tmp / "m.json"), order=1
        )
        self.assertEqual(error["errorCode"], EC.GEN_FILE_NOT_FOUND)

    def test_same_input_and_output(self):
        src = self.write_input(skewed_series(200, seed=4))
        error = self.call_failing("fit", input=src, output=src, order=1)
        self.assertEqual(error["errorCode"], EC.GEN_INVALID_CONFIG)


class GenerateCommandTests(CommandTestCase):
    def setUp(self):
        super().setUp()
        self.x = skewed_series(600, seed=5)
        self.model_path = str(self.tmp / "model.json")
        self.call("fit", input=self.write_input(self.x), output=self.model_path, order=1)

    def test_single_realization(self):
        out = self.tmp / "run.csv"
        summary = self.call("generate", input=self.model_path, output=str(out), length=600, seed=7)
        self.assertIsNone(summary["error"])
        names, y = read_series_csv(out)
        self.assertEqual(names, ["flow", "load"])
        for i in range(2):
            np.testing.assert_array_equal(np.sort(y[i]), np.sort(self.x[i]))

        sidecar = load_json(self.tmp / "run.sidecar.json")
        self.assertEqual(len(sidecar["realizations"]), 1)
        self.assertIn("max_abs_deviation", sidecar["realizations"][0])
        self.assertIsNone(sidecar["fisher_bands"][0][0][0])
        self.assertNotIn("ensemble_coverage", sidecar)

    def test_ensemble(self):
        out = self.tmp / "run.csv"
        self.call("generate", input=self.model_path, output=str(out), length=400, realizations=3, seed=1)
        for b in range(3):
            self.assertTrue((self.tmp / f"run_{b:04d}.csv").exists())
        sidecar = load_json(self.tmp / "run.sidecar.json")
        self.assertEqual([r["seed"] for r in sidecar["realizations"]], [1, 2, 3])
        self.assertGreaterEqual(sidecar["ensemble_coverage"], 0.0)
        self.assertLessEqual(sidecar["ensemble_coverage"], 1.0)

    def test_same_seed_same_file(self):
        a, b = self.tmp / "a.csv", self.tmp / "b.csv"
        self.call("generate", input=self.model_path, output=str(a), length=100, seed=3, mode="piecewise")
        self.call("generate", input=self.model_path, output=str(b), length=100, seed=3, mode="piecewise")
        self.assertEqual(a.read_text(), b.read_text())

    def test_invalid_model_file(self):
        bad = self.tmp / "bad.json"
        bad.write_text(json.dumps({"schema_version": "1.0"}))
        error = self.call_failing("generate", input=str(bad), output=str(self.tmp / "o.csv"), length=10)
        self.assertEqual(error["errorCode"], EC.CLI_MODEL_FILE_INVALID)


class SurrogateCommandTests(CommandTestCase):
    def test_surrogates_keep_values(self):
        x = skewed_series(500, seed=8)
        src = self.write_input(x)
        out = self.tmp / "surr.csv"
        summary = self.call("surrogate", input=src, output=str(out), order=1, realizations=2, seed=4)
        self.assertEqual(summary["seeds"], [4, 5])
        for b in range(2):
            _, y = read_series_csv(self.tmp / f"surr_{b:04d}.csv")
            for i in range(2):
                np.testing.assert_array_equal(np.sort(y[i]), np.sort(x[i]))
        manifest = load_json(self.tmp / "surr.manifest.json")
        self.assertEqual(len(manifest["surrogates"]), 2)
        self.assertLess(manifest["surrogates"][0]["max_abs_corr_diff"], 0.3)


@tag("slow")
class ValidateCommandTests(CommandTestCase):
    def test_all_checks_pass(self):
        out = self.tmp / "validate.json"
        summary = self.call("validate", output=str(out), seed=0)
        self.assertTrue(summary["passed"], summary["checks"])
        report = load_json(out)
        self.assertEqual(
            [c["name"] for c in report["checks"]],
            [
                "bvn_quadrant_probability",
                "bvn_truncated_moments_vs_monte_carlo",
                "bvn_total_expectation",
                "bvn_psi_vs_monte_carlo",
                "solver_round_trip",
                "norta_uniform_triple",
                "psd_repair_example",
                "yule_walker_round_trip",
            ],
        )


class CrossCheckTests(SimpleTestCase):
    def test_psi_against_monte_carlo(self):
        check = check_psi_vs_mc(seed=3)
        self.assertTrue(check["passed"], check)
        self.assertEqual(set(check["details"]["max_abs_gap"]), {"2", "3"})

    def test_solver_round_trip(self):
        check = check_solver_round_trip(seed=4)
        self.assertTrue(check["passed"], check)
        self.assertEqual(len(check["details"]["errors"]), 7)

    @tag("slow")
    def test_truncated_moment_grid(self):
        check = check_truncated_moments(seed=5)
        self.assertTrue(check["passed"], check)
        self.assertEqual(check["details"]["cells"], 45)
