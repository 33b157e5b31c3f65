import math
import unittest
from pathlib import Path

import numpy as np

from bayesid.data import (
    SyntheticConfig,
    bundled_cad_params,
    bundled_empirical_table,
    bundled_robot,
    generate_synthetic,
    load_catalog,
    load_dataset,
    load_donors,
    load_params,
    load_robot,
    save_catalog,
    save_dataset,
    save_params,
    split,
)
from bayesid.domain import ContractViolation, DataValidationError, PriorType
from bayesid.dynamics import apparent_inertia
from bayesid.priors import build_prior, feasibility_log_factor

robot = bundled_robot()
cad = bundled_cad_params()


class SyntheticTest(unittest.TestCase):

    def test_noiseless_measurements_are_exact(self):
        dataset = generate_synthetic(robot, cad, SyntheticConfig(n_poses=10, noise_c=0.0, seed=1))
        self.assertEqual(len(dataset), 60)
        for q, indices in dataset.pose_groups().items():
            expected = apparent_inertia(robot, cad, q)
            actual = dataset.inertias()[indices]
            np.testing.assert_allclose(actual, expected[dataset.axes()[indices] - 1], rtol=1e-12)

    def test_relative_noise_level(self):
        dataset = generate_synthetic(robot, cad, SyntheticConfig(n_poses=300, noise_c=0.02, seed=2))
        relative = []
        for q, indices in dataset.pose_groups().items():
            truth = apparent_inertia(robot, cad, q)[dataset.axes()[indices] - 1]
            relative.extend(dataset.inertias()[indices] / truth - 1.0)
        self.assertAlmostEqual(float(np.std(relative)), 0.02, delta=0.002)
        self.assertAlmostEqual(float(np.mean(relative)), 0.0, delta=0.002)

    def test_axis_order_and_provenance(self):
        dataset = generate_synthetic(robot, cad, SyntheticConfig(n_poses=3, seed=3))
        self.assertEqual(dataset.axes().tolist(), [1, 2, 3, 4, 5, 6] * 3)
        self.assertEqual(dataset.provenance, "synthetic")
        self.assertEqual(dataset.ground_truth, cad)
        self.assertTrue(np.all(np.abs(dataset.pose_array()) <= math.pi))

    def test_seed_determinism(self):
        config = SyntheticConfig(n_poses=20, seed=4)
        a = generate_synthetic(robot, cad, config)
        b = generate_synthetic(robot, cad, config)
        self.assertEqual(a.model_dump(), b.model_dump())
        c = generate_synthetic(robot, cad, config.model_copy(update={"seed": 5}))
        self.assertNotEqual(a.inertias().tolist(), c.inertias().tolist())

    def test_infeasible_truth(self):
        params = list(cad)
        params[2] = params[2].model_copy(update={"m": -1.0})
        with self.assertRaises(DataValidationError):
            generate_synthetic(robot, params, SyntheticConfig(n_poses=2))

    def test_wrong_number_of_links(self):
        with self.assertRaises(DataValidationError):
            generate_synthetic(robot, cad[:4], SyntheticConfig(n_poses=2))


class SplitTest(unittest.TestCase):

    @classmethod
    def setUpClass(cls) -> None:
        cls.dataset = generate_synthetic(robot, cad, SyntheticConfig(n_poses=147, seed=0))

    def test_default_proportions(self):
        train, test = split(self.dataset, 75, seed=0)
        self.assertEqual(len(train.pose_groups()), 75)
        self.assertEqual(len(test.pose_groups()), 72)
        self.assertEqual(len(train), 450)
        self.assertEqual(len(test), 432)

    def test_partition_keeps_poses_together(self):
        train, test = split(self.dataset, 30, seed=1)
        train_poses = set(train.pose_groups())
        test_poses = set(test.pose_groups())
        self.assertEqual(train_poses & test_poses, set())
        self.assertEqual(train_poses | test_poses, set(self.dataset.pose_groups()))
        for indices in train.pose_groups().values():
            self.assertEqual(len(indices), 6)

    def test_all_but_one_pose(self):
        train, test = split(self.dataset, 146, seed=2)
        self.assertEqual(len(test.pose_groups()), 1)

    def test_seeds(self):
        a, _ = split(self.dataset, 75, seed=3)
        b, _ = split(self.dataset, 75, seed=3)
        c, _ = split(self.dataset, 75, seed=4)
        self.assertEqual(set(a.pose_groups()), set(b.pose_groups()))
        self.assertNotEqual(set(a.pose_groups()), set(c.pose_groups()))

    def test_out_of_range(self):
        for n_train in (0, 147, 200):
            with self.assertRaises(ContractViolation):
                split(self.dataset, n_train, seed=0)


class FilesTest(unittest.TestCase):

    PATH = Path.cwd() / ".temp" / "test-data"

    def setUp(self) -> None:
        super().setUp()
        FilesTest.PATH.mkdir(parents=True, exist_ok=True)

    def test_dataset_round_trip(self):
        dataset = generate_synthetic(robot, cad, SyntheticConfig(n_poses=8, seed=6))
        path = FilesTest.PATH / "dataset.csv"
        save_dataset(dataset, path)
        loaded = load_dataset(path)
        self.assertEqual(loaded.provenance, "imported")
        self.assertEqual(loaded.pose_array().tolist(), dataset.pose_array().tolist())
        self.assertEqual(loaded.axes().tolist(), dataset.axes().tolist())
        self.assertEqual(loaded.inertias().tolist(), dataset.inertias().tolist())

    def test_header_only_dataset(self):
        path = FilesTest.PATH / "empty.csv"
        path.write_text("pose_q1,pose_q2,axis,inertia\n")
        self.assertEqual(len(load_dataset(path)), 0)

    def test_missing_column(self):
        path = FilesTest.PATH / "no-inertia.csv"
        path.write_text("pose_q1,axis\n0.1,1\n")
        with self.assertRaisesRegex(DataValidationError, "'inertia'"):
            load_dataset(path)

    def test_negative_inertia_names_the_line(self):
        path = FilesTest.PATH / "negative.csv"
        path.write_text("pose_q1,axis,inertia\n0.1,1,2.0\n0.2,1,-1.0\n")
        with self.assertRaisesRegex(DataValidationError, "line 3"):
            load_dataset(path)

    def test_bad_number_and_axis(self):
        path = FilesTest.PATH / "bad.csv"
        path.write_text("pose_q1,axis,inertia\nabc,1,2.0\n")
        with self.assertRaisesRegex(DataValidationError, "line 2, column 'pose_q1'"):
            load_dataset(path)
        path.write_text("pose_q1,axis,inertia\n0.5,2,2.0\n")
        with self.assertRaisesRegex(DataValidationError, "column 'axis'"):
            load_dataset(path)

    def test_malformed_pose_header(self):
        path = FilesTest.PATH / "pose-qx.csv"
        for header in ("pose_q1,pose_qx,axis,inertia", "pose_q0,pose_q1,axis,inertia", "pose_q,axis,inertia"):
            path.write_text(f"{header}\n0.1,0.2,1,2.0\n")
            with self.assertRaisesRegex(DataValidationError, "unexpected column 'pose_q"):
                load_dataset(path)

    def test_pose_columns_in_any_order(self):
        path = FilesTest.PATH / "shuffled.csv"
        path.write_text("inertia,pose_q2,axis,pose_q1\n2.0,0.2,1,0.1\n")
        loaded = load_dataset(path)
        self.assertEqual(loaded.pose_array().tolist(), [[0.1, 0.2]])

    def test_params_round_trip(self):
        path = FilesTest.PATH / "params.json"
        save_params(cad, path, name="cad")
        self.assertEqual([p.model_dump() for p in load_params(path)], [p.model_dump() for p in cad])

    def test_catalog_round_trip(self):
        catalog = build_prior(PriorType.EMPIRICAL, robot, empirical_table=bundled_empirical_table())
        path = FilesTest.PATH / "catalog.json"
        save_catalog(catalog, path)
        self.assertEqual(load_catalog(path), catalog)

    def test_invalid_documents(self):
        with self.assertRaises(DataValidationError):
            load_robot(FilesTest.PATH / "does-not-exist.json")
        path = FilesTest.PATH / "robot.json"
        path.write_text('{"name": "broken", "joints": []}')
        with self.assertRaises(DataValidationError):
            load_robot(path)

    def test_donor_table(self):
        path = FilesTest.PATH / "donors.csv"
        path.write_text(
            "robot,axis,mass,com_length,idiag1,idiag2,idiag3,ioff1,ioff2,ioff3,datasheet_mass\n"
            "a,1,10,0.2,1,1,1,0.1,0,0,100\n"
            "a,2,5,0.1,0.5,0.5,0.5,0,0.1,0,100\n"
            "b,2,6,0.12,0.6,0.6,0.6,0,0,0.1,120\n"
            "b,1,12,0.25,1.2,1.2,1.2,0.1,0,0,120\n"
        )
        donors = load_donors(path)
        self.assertEqual([d.name for d in donors], ["a", "b"])
        self.assertEqual(donors[1].datasheet_mass, 120.0)
        self.assertEqual([axis.mass for axis in donors[1].axes], [12.0, 6.0])

    def test_donor_table_missing_column(self):
        path = FilesTest.PATH / "donors-bad.csv"
        path.write_text("robot,axis,mass\na,1,10\n")
        with self.assertRaisesRegex(DataValidationError, "com_length"):
            load_donors(path)


class BundledTest(unittest.TestCase):

    def test_resources(self):
        self.assertEqual(robot.n_joints, 6)
        self.assertEqual(len(cad), 6)
        self.assertTrue(math.isfinite(feasibility_log_factor(cad, robot)))
        self.assertEqual(len(bundled_empirical_table().axes), 6)
        self.assertAlmostEqual(robot.rotor_inertias()[-1], 6.362)


if __name__ == "__main__":
    unittest.main()
