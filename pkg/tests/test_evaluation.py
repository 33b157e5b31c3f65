import math
import unittest

import numpy as np

from bayesid.data import SyntheticConfig, bundled_cad_params, bundled_robot, generate_synthetic, split
from bayesid.domain import (
    SCHEMA_VERSION,
    ConfigurationError,
    ContractViolation,
    Measurement,
    MeasurementDataset,
    Pose,
    RankDeficientError,
    UndefinedMetricError,
    params_to_array,
)
from bayesid.dynamics import extract_base_params
from bayesid.evaluation import (
    REPORT_COLUMNS,
    ApproachResult,
    EvalReport,
    ReportRow,
    RunMetadata,
    approach_from_draws,
    approach_from_ols,
    bp_log_frame,
    build_report,
    confidence_interval,
    cosine_similarity,
    interval_frame,
    mae_percent,
    mp_group_mae,
    ols_fit,
    ols_predict,
    report_frame,
    rmse_percent,
    tvd,
)
from bayesid.inference import PredictiveSummary, measurement_rows

robot = bundled_robot()
cad = bundled_cad_params()


class MetricsTest(unittest.TestCase):

    def test_mae_percent(self):
        self.assertAlmostEqual(mae_percent([1.1, 1.8], [1.0, 2.0]), 100.0 * 0.15 / 1.5)
        self.assertEqual(mae_percent([3.0, -4.0], [3.0, -4.0]), 0.0)

    def test_mae_zero_reference(self):
        with self.assertRaises(UndefinedMetricError):
            mae_percent([1.0, 2.0], [0.0, 0.0])

    def test_cosine_similarity(self):
        self.assertAlmostEqual(cosine_similarity([1.0, 0.0], [0.0, 1.0]), 0.0)
        self.assertAlmostEqual(cosine_similarity([1.0, 2.0], [-1.0, -2.0]), -1.0)
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=20), rng.normal(size=20)
        self.assertAlmostEqual(cosine_similarity(3.0 * a, 0.5 * b), cosine_similarity(a, b))
        with self.assertRaises(UndefinedMetricError):
            cosine_similarity([0.0, 0.0], [1.0, 1.0])

    def test_rmse_percent(self):
        self.assertAlmostEqual(rmse_percent([1.1, 0.9], [1.0, 1.0]), 10.0)
        with self.assertRaises(UndefinedMetricError):
            rmse_percent([1.0], [0.0])

    def test_length_mismatch(self):
        with self.assertRaises(ContractViolation):
            mae_percent([1.0, 2.0], [1.0])

    def test_tvd_identical_and_disjoint(self):
        x = np.random.default_rng(1).normal(size=1000)
        self.assertEqual(tvd(x, x), 0.0)
        self.assertAlmostEqual(tvd(np.zeros(100), np.ones(100)), 1.0)

    def test_tvd_symmetric_and_bounded(self):
        rng = np.random.default_rng(2)
        p, q = rng.normal(size=5000), rng.normal(0.5, 1.0, size=3000)
        self.assertAlmostEqual(tvd(p, q), tvd(q, p))
        self.assertTrue(0.0 <= tvd(p, q) <= 1.0)

    def test_tvd_of_shifted_uniforms(self):
        rng = np.random.default_rng(3)
        p = rng.uniform(0.0, 1.0, 200_000)
        q = rng.uniform(0.5, 1.5, 200_000)
        self.assertAlmostEqual(tvd(p, q), 0.5, delta=0.02)

    def test_tvd_arguments(self):
        with self.assertRaises(ContractViolation):
            tvd([], [1.0])
        with self.assertRaises(ContractViolation):
            tvd([1.0], [2.0], n_bins=1)


class ConfidenceIntervalTest(unittest.TestCase):

    def test_uniform_draws(self):
        ci = confidence_interval(np.linspace(0.0, 1.0, 100_001))
        self.assertAlmostEqual(ci.lower, 0.025, places=6)
        self.assertAlmostEqual(ci.upper, 0.975, places=6)
        self.assertFalse(ci.precision_warning)

    def test_full_level_is_the_range(self):
        ci = confidence_interval([3.0, 1.0, 2.0], level=1.0)
        self.assertEqual((ci.lower, ci.upper), (1.0, 3.0))

    def test_single_draw(self):
        with self.assertLogs(level="WARNING"):
            ci = confidence_interval([4.2])
        self.assertEqual((ci.lower, ci.upper), (4.2, 4.2))
        self.assertTrue(ci.precision_warning)

    def test_too_few_draws_for_the_tails(self):
        with self.assertLogs(level="WARNING"):
            ci = confidence_interval(np.arange(20.0))
        self.assertTrue(ci.precision_warning)

    def test_bad_arguments(self):
        with self.assertRaises(ContractViolation):
            confidence_interval([])
        with self.assertRaises(ContractViolation):
            confidence_interval([1.0, 2.0], level=0.0)


class OlsTest(unittest.TestCase):

    @classmethod
    def setUpClass(cls) -> None:
        cls.base_map = extract_base_params(robot)

    def test_noiseless_recovery(self):
        dataset = generate_synthetic(robot, cad, SyntheticConfig(n_poses=60, noise_c=0.0, seed=1))
        result = ols_fit(dataset, self.base_map)
        expected = self.base_map.values(cad)
        self.assertLess(np.linalg.norm(result.lambda_hat - expected) / np.linalg.norm(expected), 1e-8)
        self.assertEqual(result.rank, self.base_map.count)
        self.assertTrue(math.isfinite(result.condition))

    def test_residuals_orthogonal_to_regressor(self):
        dataset = generate_synthetic(robot, cad, SyntheticConfig(n_poses=60, noise_c=0.02, seed=2))
        result = ols_fit(dataset, self.base_map)
        rows = measurement_rows(robot, dataset)[:, self.base_map.independent]
        scale = np.linalg.norm(rows, axis=0) * np.linalg.norm(result.residuals)
        np.testing.assert_allclose(rows.T @ result.residuals / scale, 0.0, atol=1e-8)
        np.testing.assert_allclose(ols_predict(result, self.base_map, dataset), dataset.inertias() - result.residuals, rtol=1e-10)

    def test_repeated_pose_is_rank_deficient(self):
        pose = Pose(q=[0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
        entries = [Measurement(pose=pose, axis=a, inertia=1.0 + a) for a in range(1, 7)] * 20
        with self.assertRaises(RankDeficientError):
            ols_fit(MeasurementDataset(entries=entries), self.base_map)

    def test_empty_dataset_is_rank_deficient(self):
        with self.assertRaises(RankDeficientError):
            ols_fit(MeasurementDataset(entries=[]), self.base_map)


class ReportTest(unittest.TestCase):

    @classmethod
    def setUpClass(cls) -> None:
        cls.base_map = extract_base_params(robot)
        dataset = generate_synthetic(robot, cad, SyntheticConfig(n_poses=40, noise_c=0.0, seed=3))
        cls.train, cls.test = split(dataset, 30, seed=3)

    def nominal_result(self, approach: str, stage: str) -> ApproachResult:
        draws = np.repeat(params_to_array(cad)[None], 3, axis=0)
        return approach_from_draws(approach, stage, draws, self.base_map, self.train, self.test)

    def test_nominal_draws_score_perfectly(self):
        report = build_report(
            self.nominal_result("cad", "prior"), self.nominal_result("cad", "posterior"), None,
            cad, (self.train, self.test), self.base_map, run_id="exact",
        )
        for row in report.rows:
            self.assertAlmostEqual(row.mp_mae, 0.0, places=8)
            self.assertAlmostEqual(row.mp_cs, 1.0, places=10)
            self.assertAlmostEqual(row.bp_mae, 0.0, places=8)
            self.assertAlmostEqual(row.rmse_train, 0.0, places=6)
            self.assertAlmostEqual(row.rmse_test, 0.0, places=6)
        self.assertEqual(report.metadata.n_train, len(self.train))
        self.assertEqual(report.robot, robot.name)

    def test_row_order_and_references(self):
        ols = approach_from_ols(ols_fit(self.train, self.base_map), self.base_map, self.train, self.test)
        report = build_report(
            self.nominal_result("empirical", "posterior"), self.nominal_result("empirical", "prior"), ols,
            cad, (self.train, self.test), self.base_map,
        )
        self.assertEqual([(r.approach, r.stage) for r in report.rows], [("ols", "fit"), ("empirical", "prior"), ("empirical", "posterior")])
        self.assertIsNone(report.rows[0].mp_mae)
        self.assertAlmostEqual(report.rows[0].bp_mae, 0.0, places=4)
        self.assertEqual(report.rows[2].reference["mp_mae"], 31.06)

    def test_empty_test_split(self):
        empty = MeasurementDataset(entries=[])
        prior = approach_from_draws("cad", "prior", params_to_array(cad)[None], self.base_map, self.train, empty)
        report = build_report(prior, prior.model_copy(update={"stage": "posterior"}), None, cad, (self.train, empty), self.base_map)
        self.assertIsNone(report.rows[0].rmse_test)

    def test_mp_group_mae(self):
        nominal = params_to_array(cad)
        heavier = nominal.copy()
        heavier[:, 0] *= 1.1
        # only the mass group is off, by 10 %
        self.assertAlmostEqual(mp_group_mae(heavier, nominal), 2.5)


class ReportFrameTest(unittest.TestCase):

    def report(self, run_id: str, approach: str) -> EvalReport:
        rows = [
            ReportRow(approach=approach, stage="prior", mp_mae=40.0, bp_mae=30.0, rmse_test=20.0),
            ReportRow(approach=approach, stage="posterior", mp_mae=20.0, bp_mae=10.0, rmse_test=7.0),
        ]
        return EvalReport(run_id=run_id, robot="r", rows=rows, metadata=RunMetadata())

    def test_merge(self):
        frame = report_frame([self.report("a", "cad"), self.report("b", "empirical")])
        self.assertEqual(list(frame.columns), list(REPORT_COLUMNS))
        self.assertEqual(len(frame), 4)
        self.assertEqual(frame["label"].tolist(), ["cad", "cad", "empirical", "empirical"])

    def test_duplicate_labels_carry_run_id(self):
        frame = report_frame([self.report("a", "cad"), self.report("b", "cad")])
        self.assertEqual(frame["label"].tolist(), ["cad (a)", "cad (a)", "cad (b)", "cad (b)"])

    def test_schema_mismatch(self):
        old = self.report("old", "cad").model_copy(update={"schema_version": SCHEMA_VERSION + 1})
        with self.assertRaises(ConfigurationError):
            report_frame([old])

    def test_interval_frame(self):
        prior = [PredictiveSummary(target="m1", mean=1.0, median=1.0, lower=0.0, upper=2.0, count=10)]
        posterior = [PredictiveSummary(target="m1", mean=1.1, median=1.1, lower=0.9, upper=1.3, count=10)]
        frame = interval_frame(prior, posterior, [1.0])
        self.assertEqual(list(frame.columns), [
            "target", "nominal", "prior_lower", "prior_median", "prior_upper",
            "posterior_lower", "posterior_median", "posterior_upper",
        ])

    def test_bp_log_frame_sorted_by_magnitude(self):
        prior = [
            PredictiveSummary(target=name, mean=v, median=v, lower=v - 1.0, upper=v + 1.0, count=10)
            for name, v in (("lambda1", 2.0), ("lambda2", -30.0), ("lambda3", 5.0))
        ]
        frame = bp_log_frame(prior, None, np.array([2.0, -30.0, 5.0]))
        self.assertEqual(frame["target"].tolist(), ["lambda2", "lambda3", "lambda1"])
        self.assertEqual(frame["magnitude"].tolist(), [30.0, 5.0, 2.0])
        self.assertEqual(frame["nominal"].tolist(), [-30.0, 5.0, 2.0])

    def test_bp_log_frame_keeps_intervals_across_zero(self):
        prior = [PredictiveSummary(target="lambda1", mean=0.1, median=0.1, lower=-0.9, upper=1.1, count=10)]
        frame = bp_log_frame(prior, None, np.array([0.2]))
        row = frame.iloc[0]
        self.assertEqual((row["prior_lower"], row["prior_median"], row["prior_upper"]), (-0.9, 0.1, 1.1))
        self.assertTrue(row["prior_lower"] <= row["nominal"] <= row["prior_upper"])


if __name__ == "__main__":
    unittest.main()
