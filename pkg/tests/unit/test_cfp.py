# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

import csv
import io
import json
import os
import shutil
import tempfile
import unittest
from unittest.mock import patch

from cfp import build_parser, main
from constants import EXIT_NUMERIC, EXIT_OK, EXIT_TOLERANCE, EXIT_USAGE
from utils import load_defaults


def csv_rows(text):
    lines = [line for line in text.splitlines() if not line.startswith("#")]
    return list(csv.DictReader(lines))


class TestCfp(unittest.TestCase):
    def setUp(self):
        self.directory = tempfile.mkdtemp()
        self.addCleanup(shutil.rmtree, self.directory)

    def path(self, name):
        return os.path.join(self.directory, name)

    def run_cli(self, argv):
        """Run the command line with stdout captured; returns (exit code, stdout)."""
        with patch("sys.stdout", new_callable=io.StringIO) as stdout:
            code = main(argv + ["--log-level", "ERROR"])
        return code, stdout.getvalue()

    def test_defaults_from_config(self):
        defaults = load_defaults()
        self.assertEqual(defaults["numeric"], "rational")
        self.assertEqual(defaults["replicas"], 16)
        args = build_parser(defaults).parse_args(["simulate", "--n", "3"])
        self.assertEqual(args.replicas, 16)
        self.assertEqual(args.burn_in_fraction, 0.1)
        self.assertEqual(args.format, "csv")
        self.assertEqual(args.a, ["1"])

    def test_exact_csv(self):
        code, out = self.run_cli(["exact", "--n", "3", "--a", "1"])
        self.assertEqual(code, EXIT_OK)
        self.assertIn("# subcommand: exact", out)
        rows = csv_rows(out)
        self.assertEqual([row["pi_exact"] for row in rows], ["3/11", "6/11", "2/11"])
        self.assertEqual([row["K"] for row in rows], ["1", "2", "3"])
        code, out = self.run_cli(["exact", "--n", "2", "--a", "1/2"])
        self.assertEqual([row["pi_exact"] for row in csv_rows(out)], ["2/3", "1/3"])

    def test_exact_json(self):
        path = self.path("exact.json")
        code, _ = self.run_cli(["exact", "--n", "2,3", "--a", "1", "--json", "--out", path])
        self.assertEqual(code, EXIT_OK)
        with open(path) as file:
            content = json.load(file)
        self.assertEqual([point["n"] for point in content["points"]], [2, 3])
        self.assertEqual(content["points"][1]["p2"], "5/11")
        self.assertEqual(content["points"][1]["mean_clusters"], "21/11")
        self.assertEqual(content["metadata"]["subcommand"], "exact")
        self.assertEqual(len(content["metadata"]["manifest"]), 64)

    def test_exact_float(self):
        code, out = self.run_cli(["exact", "--n", "3", "--a", "1", "--numeric", "float"])
        self.assertEqual(code, EXIT_OK)
        rows = csv_rows(out)
        self.assertNotIn("pi_exact", rows[0])
        self.assertAlmostEqual(float(rows[1]["pi"]), 6 / 11, places=12)

    def test_nucleation_limit(self):
        path = self.path("limit.json")
        argv = ["exact", "--kernel", "bounded", "--m", "4", "--n", "9", "--a", "0"]
        code, _ = self.run_cli(argv + ["--nucleation-limit", "--json", "--out", path])
        self.assertEqual(code, EXIT_OK)
        with open(path) as file:
            (point,) = json.load(file)["points"]
        probabilities = {
            tuple(tuple(pair) for pair in entry["config"]): entry["probability"]
            for entry in point["configurations"]
        }
        self.assertEqual(
            probabilities,
            {((1, 1), (4, 2)): "3/10", ((2, 1), (3, 1), (4, 1)): "3/5", ((3, 3),): "1/10"},
        )
        self.assertEqual(point["p2"], "7/24")

    def test_analytic(self):
        argv = ["analytic", "--n", "3", "--a", "1", "--quantity", "g1"]
        for method in ("exact", "continued_fraction"):
            code, out = self.run_cli(argv + ["--method", method])
            self.assertEqual(code, EXIT_OK)
            self.assertEqual(csv_rows(out)[0]["value_exact"], "5/11")
        code, out = self.run_cli(
            ["analytic", "--n", "3", "--a", "1", "--quantity", "variance"]
        )
        self.assertEqual(csv_rows(out)[0]["value_exact"], "54/121")
        code, out = self.run_cli(
            ["analytic", "--n", "3", "--a", "1", "--quantity", "mu", "--order", "2"]
        )
        self.assertEqual(csv_rows(out)[0]["value_exact"], "45/11")

    def test_analytic_needs_constant_kernel(self):
        argv = ["analytic", "--kernel", "linear", "--n", "3", "--quantity", "g1"]
        self.assertEqual(self.run_cli(argv)[0], EXIT_USAGE)

    def test_pairtimes(self):
        code, out = self.run_cli(["pairtimes", "--n", "3", "--a", "1"])
        self.assertEqual(code, EXIT_OK)
        (row,) = csv_rows(out)
        self.assertAlmostEqual(float(row["t_s"]), 5 / 6, places=10)
        self.assertAlmostEqual(float(row["t_r"]), 1.0, places=10)
        self.assertAlmostEqual(float(row["p2_ratio"]), 5 / 11, places=10)

    def test_sweep(self):
        argv = ["sweep", "--n", "3,4", "--a", "0.5,1,2", "--quantity", "mean-counts"]
        code, out = self.run_cli(argv)
        self.assertEqual(code, EXIT_OK)
        rows = csv_rows(out)
        self.assertEqual(len(rows), 3 * 3 + 3 * 4)
        self.assertEqual([rows[0]["n"], rows[0]["a"]], ["3", "0.5"])
        self.assertEqual([rows[3]["n"], rows[3]["a"]], ["3", "1"])
        self.assertEqual(rows[3]["mean_count_exact"], "12/11")

        code, out = self.run_cli(["sweep", "--n", "3", "--a", "1", "--quantity", "pi-k"])
        self.assertEqual(code, EXIT_OK)
        header = [line for line in out.splitlines() if not line.startswith("#")][0]
        self.assertEqual(header, "n,a,K,pi,pi_exact")

    def test_sweep_workers(self):
        argv = ["sweep", "--n", "5,6", "--a", "0.5,3", "--quantity", "p2"]
        self.assertEqual(self.run_cli(argv), self.run_cli(argv + ["--workers", "2"]))

    def test_emit_g1_error(self):
        n_grid = ",".join(str(n) for n in range(2, 41))
        code, out = self.run_cli(
            ["emit", "--n", n_grid, "--a", "10", "--quantity", "g1-error", "--numeric", "float"]
        )
        self.assertEqual(code, EXIT_OK)
        signs = [float(row["error"]) > 0 for row in csv_rows(out)]
        self.assertEqual(signs, [True] * 22 + [False] * 17)

    def test_emit_p2_plateaus(self):
        argv = ["emit", "--kernel", "bounded", "--m", "4,9", "--n", "9", "--a", "1e-5"]
        code, out = self.run_cli(argv + ["--quantity", "p2-vs-a"])
        self.assertEqual(code, EXIT_OK)
        rows = csv_rows(out)
        self.assertEqual([row["m"] for row in rows], ["4", "9"])
        self.assertAlmostEqual(float(rows[0]["p2"]), 7 / 24, delta=1e-3)
        self.assertAlmostEqual(float(rows[1]["p2"]), 1.0, delta=1e-3)

    def test_simulate_with_events(self):
        events = self.path("events.csv")
        argv = ["simulate", "--n", "4", "--a", "1", "--sim-t", "50", "--replicas", "2"]
        code, out = self.run_cli(argv + ["--track-pair", "--events", events])
        self.assertEqual(code, EXIT_OK)
        quantities = {row["quantity"] for row in csv_rows(out)}
        self.assertEqual(quantities, {"pi", "mean-count", "mean-clusters", "p2", "t_s", "t_r"})
        with open(events) as file:
            lines = [line for line in file.read().splitlines() if not line.startswith("#")]
        self.assertEqual(lines[0], "time,kind,size_a,size_b")
        self.assertGreater(len(lines), 1)

    def test_compare(self):
        argv = [
            "compare",
            "--n",
            "3",
            "--a",
            "1",
            "--sim-t",
            "400",
            "--replicas",
            "8",
            "--sigma",
            "6",
            "--seed",
            "4",
        ]
        first, second = self.path("first.csv"), self.path("second.csv")
        code, summary = self.run_cli(argv + ["--out", first])
        self.assertEqual(code, EXIT_OK)
        self.assertIn("N=3 a=1:", summary)
        self.assertTrue(summary.endswith("Result: PASS\n"))
        self.assertEqual(self.run_cli(argv + ["--out", second])[0], EXIT_OK)
        with open(first, "rb") as left, open(second, "rb") as right:
            self.assertEqual(left.read(), right.read())
        with open(first) as file:
            rows = csv_rows(file.read())
        self.assertEqual(
            {row["quantity"] for row in rows}, {"pi", "mean-count", "config", "flux"}
        )
        self.assertTrue(all(row["ok"] == "true" for row in rows))

    def test_compare_with_pair_tracking(self):
        argv = ["compare", "--n", "3", "--a", "1", "--sim-t", "200", "--replicas", "4"]
        argv += ["--seed", "7", "--track-pair", "--sigma", "6"]
        path = self.path("compare.json")
        code, _ = self.run_cli(argv + ["--json", "--out", path])
        self.assertIn(code, (EXIT_OK, EXIT_TOLERANCE))
        with open(path) as file:
            (point,) = json.load(file)["points"]
        checks = point["checks"]
        self.assertTrue(checks)
        self.assertTrue(all(isinstance(check["ok"], bool) for check in checks))

        path = self.path("compare.csv")
        code, _ = self.run_cli(argv + ["--out", path])
        self.assertIn(code, (EXIT_OK, EXIT_TOLERANCE))
        with open(path) as file:
            rows = csv_rows(file.read())
        self.assertIn("p2", {row["quantity"] for row in rows})
        self.assertTrue(all(row["ok"] in ("true", "false") for row in rows))

    def test_compare_outside_tolerance(self):
        argv = ["compare", "--n", "3", "--a", "1", "--sim-t", "20", "--replicas", "2"]
        argv += ["--sigma", "0", "--compare-floor", "0", "--out", self.path("miss.csv")]
        code, summary = self.run_cli(argv)
        self.assertEqual(code, EXIT_TOLERANCE)
        self.assertIn("MISS", summary)
        self.assertTrue(summary.endswith("Result: FAIL\n"))

    def test_usage_errors(self):
        with patch("sys.stderr", new_callable=io.StringIO):
            with self.assertRaises(SystemExit) as context:
                main(["exact", "--a", "1"])
        self.assertEqual(context.exception.code, EXIT_USAGE)
        with patch("sys.stderr", new_callable=io.StringIO):
            with self.assertRaises(SystemExit) as context:
                main(["exact", "--n", "three"])
        self.assertEqual(context.exception.code, EXIT_USAGE)
        invalid = [
            ["exact", "--n", "3", "--workers", "0"],
            ["simulate", "--n", "3,4", "--sim-t", "5", "--events", self.path("e.csv")],
            ["simulate", "--n", "3", "--kernel", "bounded", "--m", "2", "--a", "0"],
            ["compare", "--n", "3", "--sim-t", "5", "--replicas", "1"],
            ["exact", "--n", "3", "--kernel", "spec-file"],
            ["exact", "--n", "3", "--nucleation-limit", "--a", "0"],
        ]
        for argv in invalid:
            self.assertEqual(self.run_cli(argv)[0], EXIT_USAGE, argv)

    def test_spec_file(self):
        spec = self.path("kernel.json")
        with open(spec, "w") as file:
            json.dump({"family": "constant", "a": "1"}, file)
        code, out = self.run_cli(
            ["exact", "--n", "3", "--kernel", "spec-file", "--kernel-file", spec]
        )
        self.assertEqual(code, EXIT_OK)
        self.assertIn("# kernel_digest: ", out)
        self.assertEqual(csv_rows(out)[0]["pi_exact"], "3/11")
        missing = self.path("missing.json")
        argv = ["exact", "--n", "3", "--kernel", "spec-file", "--kernel-file", missing]
        self.assertEqual(self.run_cli(argv)[0], EXIT_NUMERIC)


if __name__ == "__main__":
    unittest.main()
