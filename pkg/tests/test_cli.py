import json
import re
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np
from click.testing import CliRunner

from support import read_csv

from ipiano_ps import create_cli  # noqa: E402
from ipiano_ps.config import TRACE_COLUMNS  # noqa: E402
from ipiano_ps.errors import DivergenceError  # noqa: E402
from ipiano_ps.file_formats import read_image_directory, read_pfm, write_pfm  # noqa: E402

cli = create_cli()


def reported_values(output):
    values = {}
    for line in output.splitlines():
        key, separator, raw = line.partition(": ")
        if separator:
            try:
                values[key.strip()] = float(raw)
            except ValueError:
                continue
    return values


class CliTestCase(unittest.TestCase):
    def setUp(self):
        self.runner = CliRunner()
        self._tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self._tmp.cleanup)
        self.root = Path(self._tmp.name)

    def invoke(self, *args):
        return self.runner.invoke(cli, [str(arg) for arg in args])

    def assertSucceeded(self, result):
        self.assertEqual(result.exit_code, 0, msg=result.output + repr(result.exception))

    def synth(self, out_dir, *extra):
        result = self.invoke("synth", "--out-dir", out_dir, *extra)
        self.assertSucceeded(result)
        return out_dir

    def write_lights(self, rows, name="lights.csv"):
        path = self.root / name
        path.write_text("".join(",".join(str(value) for value in row) + "\n" for row in rows), encoding="utf-8")
        return path


class SynthCommandTest(CliTestCase):
    def test_writes_every_artifact(self):
        out_dir = self.synth(self.root / "synth", "--scene", "gaussian-bump", "--size", "10x8", "--num-lights", "5")
        images = sorted(path.name for path in (out_dir / "images").glob("*.pgm"))
        self.assertEqual(images, [f"img_{index:03d}.pgm" for index in range(5)])
        for name in ("lights.csv", "depth_gt.pfm", "normals_gt.pfm", "albedo_gt.pfm", "manifest.json"):
            self.assertTrue((out_dir / name).exists(), name)
        self.assertEqual(read_pfm(out_dir / "depth_gt.pfm").shape, (8, 10))
        self.assertEqual(read_pfm(out_dir / "normals_gt.pfm").shape, (8, 10, 3))
        manifest = json.loads((out_dir / "manifest.json").read_text(encoding="utf-8"))
        self.assertEqual(manifest["command"], "synth")
        self.assertEqual(len(manifest["outputs"]), 9)

    def test_same_seed_gives_identical_files(self):
        first = self.synth(self.root / "a", "--size", "12", "--noise", "0.05", "--seed", "7")
        second = self.synth(self.root / "b", "--size", "12", "--noise", "0.05", "--seed", "7")
        for relative in ("images/img_000.pgm", "images/img_007.pgm", "lights.csv", "depth_gt.pfm", "normals_gt.pfm"):
            self.assertEqual((first / relative).read_bytes(), (second / relative).read_bytes(), relative)
        other = self.synth(self.root / "c", "--size", "12", "--noise", "0.05", "--seed", "8")
        self.assertNotEqual((first / "images/img_000.pgm").read_bytes(), (other / "images/img_000.pgm").read_bytes())

    def test_lights_file_sets_image_count(self):
        rng = np.random.default_rng(0)
        rows = rng.standard_normal((20, 3))
        rows[:, 2] = np.abs(rows[:, 2]) + 1.0
        out_dir = self.synth(self.root / "many", "--size", "8", "--lights", self.write_lights(rows))
        self.assertEqual(len(list((out_dir / "images").glob("*.pgm"))), 20)

    def test_invalid_scene_parameters(self):
        result = self.invoke("synth", "--out-dir", self.root / "x", "--param", "radius=2", "--size", "16")
        self.assertEqual(result.exit_code, 1)
        self.assertIn("radius", result.output)

    def test_missing_option_is_a_usage_error(self):
        self.assertEqual(self.invoke("synth").exit_code, 1)


class PipelineTest(CliTestCase):
    def setUp(self):
        super().setUp()
        self.data = self.synth(
            self.root / "synth", "--scene", "sphere-cap", "--size", "12", "--num-lights", "6", "--noise", "0.01"
        )

    def classic(self, out_dir, images=None, lights=None):
        return self.invoke(
            "classic",
            "--images",
            images or self.data / "images",
            "--lights",
            lights or self.data / "lights.csv",
            "--out-dir",
            out_dir,
        )

    def test_classic_refine_eval(self):
        self.assertSucceeded(self.classic(self.root / "classic"))
        classic_dir = self.root / "classic"
        for name in ("depth_classic.pfm", "albedo_classic.pfm", "normals_classic.pfm", "residual_classic.pfm"):
            self.assertTrue((classic_dir / name).exists(), name)

        config = self.root / "config.json"
        config.write_text(json.dumps({"outer_max_iters": 5, "inner_max_iters": 20}), encoding="utf-8")
        refined_dir = self.root / "refined"
        result = self.invoke(
            "refine",
            "--images", self.data / "images",
            "--lights", self.data / "lights.csv",
            "--init-depth", classic_dir / "depth_classic.pfm",
            "--init-albedo", classic_dir / "albedo_classic.pfm",
            "--gt-normals", self.data / "normals_gt.pfm",
            "--config", config,
            "--out-dir", refined_dir,
        )
        self.assertSucceeded(result)
        match = re.search(r"f\+g (\S+) -> (\S+) after (\d+) outer", result.output)
        self.assertIsNotNone(match)
        self.assertLess(float(match.group(2)), float(match.group(1)))
        self.assertLessEqual(int(match.group(3)), 5)

        with open(refined_dir / "trace.csv", encoding="utf-8") as handle:
            self.assertEqual(handle.readline().strip().split(","), list(TRACE_COLUMNS))
        outer = read_csv(refined_dir / "outer.csv")
        self.assertEqual(len(outer), int(match.group(3)))
        self.assertNotEqual(outer[-1]["mae"], "")
        for name in ("depth_refined.pfm", "albedo_refined.pfm", "normals_refined.pfm", "reprojection_error.pfm"):
            self.assertTrue((refined_dir / name).exists(), name)

        report_path = self.root / "eval.json"
        result = self.invoke(
            "eval",
            "--depth", refined_dir / "depth_refined.pfm",
            "--gt-normals", self.data / "normals_gt.pfm",
            "--images", self.data / "images",
            "--lights", self.data / "lights.csv",
            "--albedo", refined_dir / "albedo_refined.pfm",
            "--out", report_path,
        )
        self.assertSucceeded(result)
        values = reported_values(result.output)
        self.assertIn("mae_degrees", values)
        self.assertEqual(values["pixels"], 144)
        self.assertGreaterEqual(values["reprojection_error_total"], 0.0)
        saved = json.loads(report_path.read_text(encoding="utf-8"))
        self.assertAlmostEqual(saved["mae_degrees"], values["mae_degrees"], places=6)

    def test_exact_gradient_trace_descends(self):
        self.assertSucceeded(self.classic(self.root / "classic"))
        refined_dir = self.root / "refined"
        config = self.root / "config.json"
        config.write_text(json.dumps({"outer_max_iters": 3, "inner_max_iters": 30}), encoding="utf-8")
        result = self.invoke(
            "refine",
            "--images", self.data / "images",
            "--lights", self.data / "lights.csv",
            "--init-depth", self.root / "classic" / "depth_classic.pfm",
            "--init-albedo", self.root / "classic" / "albedo_classic.pfm",
            "--config", config,
            "--gradient", "exact",
            "--out-dir", refined_dir,
        )
        self.assertSucceeded(result)
        rows = read_csv(refined_dir / "trace.csv")
        for previous, current in zip(rows, rows[1:]):
            if previous["k"] != current["k"]:
                continue
            allowed = float(previous["H_delta"]) - 0.01 * float(current["Delta"]) + 1e-10
            self.assertLessEqual(float(current["H_delta"]), allowed)

    def test_classic_with_identity_lights(self):
        lights = self.write_lights([(1, 0, 0), (0, 1, 0), (0, 0, 1)], "identity.csv")
        data = self.synth(self.root / "identity", "--size", "8", "--lights", lights)
        self.assertSucceeded(self.classic(self.root / "out", data / "images", lights))
        stack = read_image_directory(data / "images")
        albedo = read_pfm(self.root / "out" / "albedo_classic.pfm")
        np.testing.assert_allclose(albedo, np.linalg.norm(stack, axis=0), rtol=1e-6)

    def test_coplanar_lights_fail_with_input_error(self):
        images_dir = self.root / "three"
        images_dir.mkdir()
        for index in range(3):
            (images_dir / f"img_{index:03d}.pgm").write_bytes((self.data / "images" / f"img_{index:03d}.pgm").read_bytes())
        lights = self.write_lights([(1, 0, 0), (0, 1, 0), (1, 1, 0)], "coplanar.csv")
        result = self.classic(self.root / "out", images_dir, lights)
        self.assertEqual(result.exit_code, 1)
        self.assertIn("coplanar", result.output)

    def test_light_count_mismatch(self):
        lights = self.write_lights([(0, 0, 1), (1, 0, 1), (0, 1, 1)], "three.csv")
        self.assertEqual(self.classic(self.root / "out", lights=lights).exit_code, 1)

    def test_malformed_configuration(self):
        self.assertSucceeded(self.classic(self.root / "classic"))
        for name, content in (("broken.json", "{outer"), ("unknown.json", '{"lam": 0.1}'), ("bad.json", '{"c": 2.0}')):
            with self.subTest(config=name):
                config = self.root / name
                config.write_text(content, encoding="utf-8")
                result = self.invoke(
                    "refine",
                    "--images", self.data / "images",
                    "--lights", self.data / "lights.csv",
                    "--init-depth", self.root / "classic" / "depth_classic.pfm",
                    "--init-albedo", self.root / "classic" / "albedo_classic.pfm",
                    "--config", config,
                    "--out-dir", self.root / "refined",
                )
                self.assertEqual(result.exit_code, 1, result.output)

    def test_solver_failure_exits_with_two(self):
        self.assertSucceeded(self.classic(self.root / "classic"))
        with patch(
            "ipiano_ps.commands.refine.alternating_solve",
            side_effect=DivergenceError("backtracking diverged", lipschitz=1e31),
        ):
            result = self.invoke(
                "refine",
                "--images", self.data / "images",
                "--lights", self.data / "lights.csv",
                "--init-depth", self.root / "classic" / "depth_classic.pfm",
                "--init-albedo", self.root / "classic" / "albedo_classic.pfm",
                "--out-dir", self.root / "refined",
            )
        self.assertEqual(result.exit_code, 2)
        self.assertIn("diverged", result.output)


class FixedPointTest(CliTestCase):
    def test_plane_is_a_fixed_point_through_files(self):
        lights = self.write_lights([(0, 0, 1), (1, 0, 1), (0, 1, 1)])
        data = self.synth(self.root / "plane", "--scene", "plane", "--size", "6", "--albedo", "1.0", "--lights", lights)
        np.testing.assert_array_equal(read_image_directory(data / "images"), np.ones((3, 6, 6)))

        classic_dir = self.root / "classic"
        self.assertSucceeded(
            self.invoke("classic", "--images", data / "images", "--lights", lights, "--out-dir", classic_dir)
        )
        result = self.invoke(
            "eval", "--normals", classic_dir / "normals_classic.pfm", "--gt-normals", data / "normals_gt.pfm"
        )
        self.assertSucceeded(result)
        self.assertLessEqual(reported_values(result.output)["mae_degrees"], 1e-6)

        refined_dir = self.root / "refined"
        result = self.invoke(
            "refine",
            "--images", data / "images",
            "--lights", lights,
            "--init-depth", classic_dir / "depth_classic.pfm",
            "--init-albedo", classic_dir / "albedo_classic.pfm",
            "--out-dir", refined_dir,
        )
        self.assertSucceeded(result)
        self.assertEqual(len(read_csv(refined_dir / "outer.csv")), 1)
        np.testing.assert_allclose(
            read_pfm(refined_dir / "depth_refined.pfm"), read_pfm(classic_dir / "depth_classic.pfm"), atol=1e-12
        )
        np.testing.assert_allclose(read_pfm(refined_dir / "albedo_refined.pfm"), 1.0, atol=1e-12)


class EvalCommandTest(CliTestCase):
    def write_normals(self, name, normal):
        path = self.root / name
        write_pfm(path, np.broadcast_to(np.asarray(normal, dtype=float), (4, 5, 3)))
        return path

    def test_identical_and_orthogonal_normals(self):
        frontal = self.write_normals("frontal.pfm", (0.0, 0.0, 1.0))
        sideways = self.write_normals("side.pfm", (1.0, 0.0, 0.0))
        same = self.invoke("eval", "--normals", frontal, "--gt-normals", frontal)
        self.assertSucceeded(same)
        self.assertEqual(reported_values(same.output)["mae_degrees"], 0.0)
        orthogonal = self.invoke("eval", "--normals", sideways, "--gt-normals", frontal)
        self.assertSucceeded(orthogonal)
        self.assertAlmostEqual(reported_values(orthogonal.output)["mae_degrees"], 90.0, places=9)

    def test_requires_exactly_one_estimate(self):
        frontal = self.write_normals("frontal.pfm", (0.0, 0.0, 1.0))
        self.assertEqual(self.invoke("eval", "--gt-normals", frontal).exit_code, 1)
        result = self.invoke("eval", "--normals", frontal, "--depth", frontal, "--gt-normals", frontal)
        self.assertEqual(result.exit_code, 1)

    def test_grid_mismatch(self):
        frontal = self.write_normals("frontal.pfm", (0.0, 0.0, 1.0))
        other = self.root / "other.pfm"
        write_pfm(other, np.broadcast_to(np.array([0.0, 0.0, 1.0]), (3, 3, 3)))
        self.assertEqual(self.invoke("eval", "--normals", other, "--gt-normals", frontal).exit_code, 1)


class DiagCommandTest(CliTestCase):
    def test_gradcheck(self):
        out = self.root / "gradcheck.json"
        result = self.invoke("diag", "gradcheck", "--size", "6", "--seed", "0", "--out", out)
        self.assertSucceeded(result)
        values = reported_values(result.output)
        self.assertLessEqual(values["fd_max_rel_error"], 1e-5)
        self.assertLessEqual(values["oracle_max_rel_error"], 1e-12)
        self.assertLessEqual(values["approx_gap_rel_error"], 1e-10)
        self.assertTrue(out.exists())

    def test_bounds_with_zero_albedo(self):
        result = self.invoke("diag", "bounds", "--size", "8", "--albedo", "0", "--samples", "10")
        self.assertSucceeded(result)
        values = reported_values(result.output)
        for key in ("L_A", "L_f", "L_p", "L_q", "L_grad_f", "empirical_q", "empirical_grad_f"):
            self.assertEqual(values[key], 0.0, key)

    def test_bounds_dominate_samples(self):
        result = self.invoke("--threads", "2", "diag", "bounds", "--size", "10", "--samples", "50")
        self.assertSucceeded(result)
        values = reported_values(result.output)
        self.assertLessEqual(values["empirical_grad_f"], values["L_grad_f"])
        self.assertLessEqual(values["empirical_q"], values["L_q"])

    def test_descent_at_perfect_fit(self):
        result = self.invoke("diag", "descent", "--size", "8", "--noise", "0", "--start", "truth")
        self.assertSucceeded(result)
        lines = [line for line in result.output.splitlines() if "\t" in line]
        self.assertTrue(lines)
        for line in lines:
            _, value, objective = line.split("\t")
            self.assertLessEqual(abs(float(value)), 1e-20)
            self.assertLessEqual(float(objective), 1e-20)

    def test_noise_sweep(self):
        out = self.root / "sweep.csv"
        result = self.invoke(
            "diag", "sweep-noise",
            "--size", "8", "--levels", "0.01,0.02", "--seeds", "0-1",
            "--num-lights", "4", "--outer-max-iters", "2", "--out", out,
        )
        self.assertSucceeded(result)
        rows = read_csv(out)
        self.assertEqual(len(rows), 4)
        self.assertEqual([row["noise"] for row in rows], ["0.01", "0.01", "0.02", "0.02"])
        for row in rows:
            self.assertLess(float(row["final_objective"]), float(row["initial_objective"]))

    def test_image_sweep_rejects_small_counts(self):
        result = self.invoke("diag", "sweep-images", "--counts", "2,5", "--out", self.root / "x.csv")
        self.assertEqual(result.exit_code, 1)


if __name__ == "__main__":
    unittest.main()
