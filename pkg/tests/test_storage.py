import shutil
import unittest
from pathlib import Path

import pandas as pd

from bayesid.domain import ContractViolation
from bayesid.evaluation import EvalReport, ReportRow, RunMetadata
from bayesid.storage import FAILED_ESS_MARKER, ArtifactStore, UpdateResult

report = EvalReport(
    run_id="run-1",
    robot="robot",
    rows=[ReportRow(approach="cad", stage="prior", bp_mae=12.5)],
    metadata=RunMetadata(seed=7, n_train=75, n_test=72),
)


class ArtifactStoreTest(unittest.TestCase):

    PATH = Path.cwd() / ".temp" / "test-storage"

    def setUp(self) -> None:
        super().setUp()
        shutil.rmtree(ArtifactStoreTest.PATH, ignore_errors=True)
        ArtifactStoreTest.PATH.mkdir(parents=True, exist_ok=True)

    def test_write_results(self):
        store = ArtifactStore(ArtifactStoreTest.PATH)
        self.assertEqual(store.write_text("notes.txt", "a\n"), UpdateResult.NEW)
        self.assertEqual(store.write_text("notes.txt", "a\n"), UpdateResult.UNCHANGED)
        self.assertEqual(store.write_text("notes.txt", "b\n"), UpdateResult.MODIFIED)
        self.assertEqual((ArtifactStoreTest.PATH / "notes.txt").read_text(), "b\n")
        self.assertEqual(store.written, {"notes.txt": UpdateResult.MODIFIED})

    def test_repeated_run_is_unchanged(self):
        frame = pd.DataFrame({"target": ["m1", "m2"], "value": [0.1, 1.0 / 3.0]})
        first = ArtifactStore(ArtifactStoreTest.PATH)
        first.write_document("report.json", report)
        first.write_frame("values.csv", frame)
        second = ArtifactStore(ArtifactStoreTest.PATH)
        second.write_document("report.json", report)
        second.write_frame("values.csv", frame)
        self.assertEqual(set(second.written.values()), {UpdateResult.UNCHANGED})
        loaded = EvalReport.model_validate_json((ArtifactStoreTest.PATH / "report.json").read_text())
        self.assertEqual(loaded, report)
        self.assertEqual(pd.read_csv(ArtifactStoreTest.PATH / "values.csv")["value"].tolist(), [0.1, 1.0 / 3.0])

    def test_creates_output_directory(self):
        nested = ArtifactStoreTest.PATH / "a" / "b"
        ArtifactStore(nested).write_text("x.txt", "x")
        self.assertTrue((nested / "x.txt").exists())

    def test_names_outside_the_directory(self):
        store = ArtifactStore(ArtifactStoreTest.PATH)
        with self.assertRaises(ContractViolation):
            store.write_text("../escape.txt", "x")

    def test_failed_ess_marker(self):
        store = ArtifactStore(ArtifactStoreTest.PATH)
        store.mark_failed_ess(["m1", "c"])
        marker = ArtifactStoreTest.PATH / FAILED_ESS_MARKER
        self.assertEqual(marker.read_text().split(), ["m1", "c"])
        store.clear_marker()
        self.assertFalse(marker.exists())
        # clearing twice is fine
        store.clear_marker()


if __name__ == "__main__":
    unittest.main()
