import json
import shutil
import unittest
from pathlib import Path

import pandas as pd
from typer.testing import CliRunner

from bayesid.data import bundled_cad_params, bundled_empirical_table, bundled_robot, document_json, load_dataset, save_catalog, save_params
from bayesid.domain import PriorType
from bayesid.dynamics import condition_number, extract_base_params
from bayesid.evaluation import EvalReport, ReportRow, RunMetadata
from bayesid.main import app
from bayesid.priors import build_prior

runner = CliRunner()


class CliTest(unittest.TestCase):

    PATH = Path.cwd() / ".temp" / "test-main"

    def setUp(self) -> None:
        super().setUp()
        shutil.rmtree(CliTest.PATH, ignore_errors=True)
        CliTest.PATH.mkdir(parents=True, exist_ok=True)
        self.truth = CliTest.PATH / "truth.json"
        save_params(bundled_cad_params(), self.truth, name="cad")

    def test_no_args_shows_help(self):
        result = runner.invoke(app, [])
        self.assertIn("zero-shot", result.output)

    def test_gen(self):
        out = CliTest.PATH / "gen"
        result = runner.invoke(app, ["gen", "--truth", str(self.truth), "--n", "10", "--out", str(out)])
        self.assertEqual(result.exit_code, 0, result.output)
        frame = pd.read_csv(out / "dataset.csv")
        self.assertEqual(len(frame), 60)
        self.assertEqual(list(frame.columns), [f"pose_q{j}" for j in range(1, 7)] + ["axis", "inertia"])
        self.assertTrue((frame["inertia"] > 0.0).all())

    def test_gen_needs_truth(self):
        result = runner.invoke(app, ["gen", "--n", "10"])
        self.assertEqual(result.exit_code, 2)

    def test_gen_with_missing_truth_file(self):
        result = runner.invoke(app, ["gen", "--truth", str(CliTest.PATH / "nothing.json"), "--out", str(CliTest.PATH)])
        self.assertEqual(result.exit_code, 2)
        self.assertIn("DataValidationError", result.output)

    def test_zero_shot_diffuse(self):
        out = CliTest.PATH / "zs"
        result = runner.invoke(app, ["zero-shot", "--n-samples", "1000", "--poses", "3", "--out", str(out)])
        self.assertEqual(result.exit_code, 0, result.output)
        summary = json.loads((out / "zero_shot.json").read_text())
        self.assertEqual(summary["n_samples"], 1000)
        self.assertEqual(summary["n_poses"], 3)
        self.assertEqual(summary["prior_type"], PriorType.DIFFUSE.value)
        self.assertEqual(len(pd.read_csv(out / "zero_shot_mp.csv")), 66)
        self.assertEqual(len(pd.read_csv(out / "zero_shot_x.csv")), 18)

    def test_zero_shot_point_catalog(self):
        catalog = CliTest.PATH / "point.json"
        save_catalog(build_prior(PriorType.CAD, bundled_robot(), cad_params=bundled_cad_params(), cad_spread=0.0), catalog)
        out = CliTest.PATH / "zs-point"
        result = runner.invoke(app, ["zero-shot", "--catalog", str(catalog), "--n-samples", "1000", "--poses", "2", "--out", str(out)])
        self.assertEqual(result.exit_code, 0, result.output)
        frame = pd.read_csv(out / "zero_shot_x.csv")
        spread = (frame["prior_upper"] - frame["prior_lower"]) / frame["prior_median"].abs()
        self.assertTrue((spread < 1e-9).all())
        check = json.loads((out / "zero_shot.json").read_text())["check"]
        self.assertEqual(check["mp_total"], 66)

    def test_infer_small_run(self):
        out = CliTest.PATH / "run"
        args = [
            "infer", "--truth", str(self.truth), "--prior", "cad", "--n", "12", "--n-train", "6",
            "--iters", "2000", "--n-samples", "1000", "--seed", "3", "--out", str(out),
        ]
        result = runner.invoke(app, args)
        self.assertIn(result.exit_code, (0, 4), result.output)
        report = EvalReport.model_validate_json((out / "report.json").read_text())
        self.assertEqual([(r.approach, r.stage) for r in report.rows][-2:], [("cad", "prior"), ("cad", "posterior")])
        self.assertEqual(report.metadata.n_train, 36)
        self.assertEqual(report.metadata.n_test, 36)
        for name in ("chain.csv", "posterior_mp.csv", "posterior_bp.csv", "plot_mp_pdf.csv", "tvd_mp.csv", "plot_inertia.csv", "report.csv"):
            self.assertTrue((out / name).exists(), name)
        self.assertEqual(result.exit_code == 4, (out / "FAILED_ESS").exists())

        again = CliTest.PATH / "run-again"
        args[-1] = str(again)
        runner.invoke(app, args)
        self.assertEqual((out / "chain.csv").read_bytes(), (again / "chain.csv").read_bytes())

    def test_infer_empty_dataset(self):
        data = CliTest.PATH / "empty.csv"
        data.write_text("pose_q1,pose_q2,pose_q3,pose_q4,pose_q5,pose_q6,axis,inertia\n")
        out = CliTest.PATH / "empty"
        result = runner.invoke(app, ["infer", "--data", str(data), "--iters", "100", "--n-samples", "1000", "--out", str(out)])
        self.assertEqual(result.exit_code, 2)
        result = runner.invoke(app, [
            "infer", "--data", str(data), "--allow-empty", "--prior", "cad",
            "--iters", "1000", "--n-samples", "1000", "--out", str(out),
        ])
        self.assertIn(result.exit_code, (0, 4), result.output)
        report = EvalReport.model_validate_json((out / "report.json").read_text())
        self.assertEqual(report.metadata.n_train, 0)
        self.assertFalse(any(r.approach == "ols" for r in report.rows))

    def test_infer_with_two_data_sources(self):
        data = CliTest.PATH / "data.csv"
        data.write_text("pose_q1,axis,inertia\n0.1,1,1.0\n")
        result = runner.invoke(app, ["infer", "--data", str(data), "--truth", str(self.truth)])
        self.assertEqual(result.exit_code, 2)

    def write_donors(self) -> Path:
        path = CliTest.PATH / "donors.csv"
        total_mass = bundled_robot().metadata.total_mass
        lines = ["robot,axis,mass,com_length,idiag1,idiag2,idiag3,ioff1,ioff2,ioff3,datasheet_mass"]
        for name, f in (("small", 0.9), ("mid", 1.0), ("large", 1.1)):
            for k, axis in enumerate(bundled_empirical_table().axes, start=1):
                d = axis.i_diag.mu * f
                o = axis.i_off.sigma
                lines.append(
                    f"{name},{k},{axis.mass.mu * f},{axis.com_length.mu * f},{d},{d * f},{d / f},{o},{-o * f},0,{total_mass * f}"
                )
        path.write_text("\n".join(lines) + "\n")
        return path

    def test_zero_shot_from_donor_table(self):
        out = CliTest.PATH / "zs-donors"
        result = runner.invoke(app, [
            "zero-shot", "--prior", "empirical", "--donors", str(self.write_donors()),
            "--n-samples", "500", "--poses", "2", "--out", str(out),
        ])
        self.assertEqual(result.exit_code, 0, result.output)
        summary = json.loads((out / "zero_shot.json").read_text())
        self.assertEqual(summary["prior_type"], PriorType.EMPIRICAL.value)
        frame = pd.read_csv(out / "zero_shot_mp.csv").set_index("target")
        # masses scaled by 1, so the median sits near the mean donor mass
        first = bundled_empirical_table().axes[0].mass.mu
        self.assertAlmostEqual(frame.loc["m1", "prior_median"] / first, 1.0, delta=0.25)

    def test_donor_table_needs_the_empirical_prior(self):
        donors = self.write_donors()
        result = runner.invoke(app, ["zero-shot", "--prior", "cad", "--donors", str(donors), "--out", str(CliTest.PATH / "x")])
        self.assertEqual(result.exit_code, 2)
        self.assertIn("ConfigurationError", result.output)
        empirical = CliTest.PATH / "table.json"
        empirical.write_text(document_json(bundled_empirical_table()))
        result = runner.invoke(app, [
            "zero-shot", "--prior", "empirical", "--donors", str(donors), "--empirical", str(empirical), "--out", str(CliTest.PATH / "y"),
        ])
        self.assertEqual(result.exit_code, 2)

    def test_missing_donor_table(self):
        result = runner.invoke(app, ["zero-shot", "--prior", "empirical", "--donors", str(CliTest.PATH / "none.csv")])
        self.assertEqual(result.exit_code, 2)
        self.assertIn("DataValidationError", result.output)

    def test_report_carries_the_training_condition_number(self):
        out = CliTest.PATH / "cond"
        result = runner.invoke(app, [
            "infer", "--truth", str(self.truth), "--prior", "cad", "--n", "40", "--n-train", "30",
            "--iters", "1000", "--n-samples", "500", "--seed", "2", "--out", str(out),
        ])
        self.assertIn(result.exit_code, (0, 4), result.output)
        report = EvalReport.model_validate_json((out / "report.json").read_text())
        train = load_dataset(out / "train.csv")
        expected = condition_number(list(train.pose_groups()), extract_base_params(bundled_robot()))
        self.assertGreater(report.metadata.condition_number, 1.0)
        self.assertAlmostEqual(report.metadata.condition_number / expected, 1.0, places=9)

    def test_condition_number_omitted_without_measurements(self):
        data = CliTest.PATH / "empty.csv"
        data.write_text("pose_q1,pose_q2,pose_q3,pose_q4,pose_q5,pose_q6,axis,inertia\n")
        out = CliTest.PATH / "cond-empty"
        result = runner.invoke(app, [
            "infer", "--data", str(data), "--allow-empty", "--prior", "cad",
            "--iters", "500", "--n-samples", "500", "--out", str(out),
        ])
        self.assertIn(result.exit_code, (0, 4), result.output)
        report = EvalReport.model_validate_json((out / "report.json").read_text())
        self.assertIsNone(report.metadata.condition_number)

    def test_evaluate(self):
        paths = []
        for run_id in ("a", "b"):
            report = EvalReport(
                run_id=run_id, robot="robot", metadata=RunMetadata(),
                rows=[ReportRow(approach="cad", stage="posterior", bp_mae=8.0, rmse_test=7.0)],
            )
            path = CliTest.PATH / f"report-{run_id}.json"
            path.write_text(document_json(report))
            paths.append(str(path))
        result = runner.invoke(app, ["evaluate", *paths, "--out", str(CliTest.PATH)])
        self.assertEqual(result.exit_code, 0, result.output)
        frame = pd.read_csv(CliTest.PATH / "table.csv")
        self.assertEqual(frame["label"].tolist(), ["cad (a)", "cad (b)"])

    def test_evaluate_needs_reports(self):
        result = runner.invoke(app, ["evaluate"])
        self.assertEqual(result.exit_code, 2)


if __name__ == "__main__":
    unittest.main()
