"""
Synthetic measurements, train/test splits and reading / writing of every
input document: datasets (CSV), robots, parameter sets, prior catalogs and
empirical tables (JSON) and donor tables (CSV).
"""
import logging
import math
from importlib import resources
from pathlib import Path
from typing import Sequence, TypeVar

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, ValidationError

from bayesid.domain import (
    ContractViolation,
    DataValidationError,
    LinkInertialParams,
    Measurement,
    MeasurementDataset,
    ParameterSet,
    Pose,
    RobotDescription,
)
from bayesid.dynamics import apparent_inertia
from bayesid.priors import DonorAxis, DonorRobot, EmpiricalTable, PriorCatalog, feasibility_log_factor

FLOAT_FORMAT = "%.17g"
ROBOT_RESOURCE = "robot_6dof.json"
CAD_RESOURCE = "cad_6dof.json"
EMPIRICAL_RESOURCE = "empirical_6dof.json"

Document = TypeVar("Document", bound=BaseModel)


class SyntheticConfig(BaseModel):
    n_poses: int = Field(default=147, ge=1)
    noise_c: float = Field(default=0.02, ge=0.0)
    pose_low: float = -math.pi
    pose_high: float = math.pi
    seed: int = 0


def _sample_poses(rng: np.random.Generator, config: SyntheticConfig, n_joints: int) -> np.ndarray:
    if not config.pose_low < config.pose_high:
        raise ContractViolation("pose bounds must satisfy low < high")
    return rng.uniform(config.pose_low, config.pose_high, (config.n_poses, n_joints))


def generate_synthetic(
    robot: RobotDescription,
    truth_params: Sequence[LinkInertialParams],
    config: SyntheticConfig,
    rng: np.random.Generator | None = None,
) -> MeasurementDataset:
    """
    One entry per pose and axis with inertia X_true * (1 + c * z), z standard
    normal. Non-positive results are redrawn.
    """
    if len(truth_params) != robot.n_joints:
        raise DataValidationError(f"{len(truth_params)} truth links for a robot with {robot.n_joints} joints")
    if not math.isfinite(feasibility_log_factor(truth_params, robot)):
        raise DataValidationError("ground truth parameters are not physically feasible")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    entries = []
    redraws = 0
    for q in _sample_poses(rng, config, robot.n_joints):
        x_true = apparent_inertia(robot, truth_params, q)
        pose = Pose(q=[float(v) for v in q])
        for axis, x in enumerate(x_true, start=1):
            noisy = x * (1.0 + config.noise_c * rng.standard_normal())
            while noisy <= 0.0:
                redraws += 1
                noisy = x * (1.0 + config.noise_c * rng.standard_normal())
            entries.append(Measurement(pose=pose, axis=axis, inertia=float(noisy)))
    if redraws:
        logging.warning("redrew %d non-positive synthetic measurements", redraws)
    return MeasurementDataset(entries=entries, provenance="synthetic", ground_truth=list(truth_params))


def split(dataset: MeasurementDataset, n_train: int, seed: int) -> tuple[MeasurementDataset, MeasurementDataset]:
    """
    Random partition of the distinct poses into `n_train` training poses and
    the rest. All axes of one pose stay on the same side.
    """
    groups = list(dataset.pose_groups().values())
    if not 1 <= n_train < len(groups):
        raise ContractViolation(f"n_train must lie in [1, {len(groups) - 1}], got {n_train}")
    order = np.random.default_rng(seed).permutation(len(groups))
    in_train = np.zeros(len(dataset), dtype=bool)
    for g in order[:n_train]:
        in_train[groups[g]] = True
    train = dataset.subset(np.flatnonzero(in_train).tolist())
    test = dataset.subset(np.flatnonzero(~in_train).tolist())
    return train, test


def dataset_frame(dataset: MeasurementDataset, n_joints: int | None = None) -> pd.DataFrame:
    if n_joints is None:
        n_joints = len(dataset.entries[0].pose.q) if dataset.entries else 0
    columns = [f"pose_q{j + 1}" for j in range(n_joints)]
    frame = pd.DataFrame(dataset.pose_array().reshape(len(dataset), n_joints), columns=columns)
    frame["axis"] = dataset.axes()
    frame["inertia"] = dataset.inertias()
    return frame


def save_dataset(dataset: MeasurementDataset, path: Path, n_joints: int | None = None) -> None:
    dataset_frame(dataset, n_joints).to_csv(path, index=False, float_format=FLOAT_FORMAT)


def _parse_number(raw: str, line: int, column: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise DataValidationError(f"line {line}, column '{column}': not a number ({raw!r})") from None
    if not math.isfinite(value):
        raise DataValidationError(f"line {line}, column '{column}': not finite ({raw!r})")
    return value


def load_dataset(path: Path) -> MeasurementDataset:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise DataValidationError(f"{path}: empty file, expected a header line") from None
    pose_columns = [c for c in frame.columns if c.startswith("pose_q")]
    for column in pose_columns:
        suffix = column[len("pose_q"):]
        if not (suffix.isdecimal() and suffix.isascii() and int(suffix) >= 1):
            raise DataValidationError(f"{path}: unexpected column '{column}', pose columns are pose_q1, pose_q2, ...")
    if not pose_columns:
        raise DataValidationError(f"{path}: missing column 'pose_q1'")
    expected = [f"pose_q{j + 1}" for j in range(len(pose_columns))]
    for column in expected + ["axis", "inertia"]:
        if column not in frame.columns:
            raise DataValidationError(f"{path}: missing column '{column}'")

    entries = []
    for i, row in enumerate(frame.itertuples(index=False)):
        record = row._asdict()
        # header is line 1
        line = i + 2
        q = [_parse_number(record[c], line, c) for c in expected]
        axis_value = _parse_number(record["axis"], line, "axis")
        if axis_value != int(axis_value) or axis_value < 1 or axis_value > len(expected):
            raise DataValidationError(f"line {line}, column 'axis': expected an integer in [1, {len(expected)}], got {record['axis']!r}")
        inertia = _parse_number(record["inertia"], line, "inertia")
        if inertia <= 0.0:
            raise DataValidationError(f"line {line}, column 'inertia': measured inertia must be positive, got {inertia}")
        entries.append(Measurement(pose=Pose(q=q), axis=int(axis_value), inertia=inertia))
    logging.info("loaded %d measurements from %s", len(entries), path)
    return MeasurementDataset(entries=entries, provenance="imported")


def _load_document(path: Path, model: type[Document]) -> Document:
    try:
        return model.model_validate_json(Path(path).read_text())
    except FileNotFoundError:
        raise DataValidationError(f"{path}: no such file") from None
    except ValidationError as e:
        raise DataValidationError(f"{path}: invalid {model.__name__}: {e}") from e


def document_json(document: BaseModel) -> str:
    return document.model_dump_json(indent=2) + "\n"


def load_robot(path: Path) -> RobotDescription:
    return _load_document(path, RobotDescription)


def load_params(path: Path) -> list[LinkInertialParams]:
    return _load_document(path, ParameterSet).links


def save_params(params: Sequence[LinkInertialParams], path: Path, name: str = "params") -> None:
    Path(path).write_text(document_json(ParameterSet(name=name, links=list(params))))


def load_catalog(path: Path) -> PriorCatalog:
    return _load_document(path, PriorCatalog)


def save_catalog(catalog: PriorCatalog, path: Path) -> None:
    Path(path).write_text(document_json(catalog))


def load_empirical_table(path: Path) -> EmpiricalTable:
    return _load_document(path, EmpiricalTable)


def load_donors(path: Path) -> list[DonorRobot]:
    """
    Donor table with columns robot, axis, mass, com_length, idiag1..3,
    ioff1..3 and datasheet_mass, one row per robot axis.
    """
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError:
        raise DataValidationError(f"{path}: no such file") from None
    required = ["robot", "axis", "mass", "com_length", "idiag1", "idiag2", "idiag3", "ioff1", "ioff2", "ioff3", "datasheet_mass"]
    for column in required:
        if column not in frame.columns:
            raise DataValidationError(f"{path}: missing column '{column}'")
    donors = []
    for name, rows in frame.groupby("robot", sort=False):
        rows = rows.sort_values("axis")
        donors.append(DonorRobot(
            name=str(name),
            datasheet_mass=float(rows["datasheet_mass"].iloc[0]),
            axes=[
                DonorAxis(
                    mass=r.mass, com_length=r.com_length,
                    idiag=(r.idiag1, r.idiag2, r.idiag3), ioff=(r.ioff1, r.ioff2, r.ioff3),
                )
                for r in rows.itertuples(index=False)
            ],
        ))
    return donors


def _resource(name: str) -> str:
    return resources.files("bayesid.resources").joinpath(name).read_text()


def bundled_robot() -> RobotDescription:
    return RobotDescription.model_validate_json(_resource(ROBOT_RESOURCE))


def bundled_cad_params() -> list[LinkInertialParams]:
    return ParameterSet.model_validate_json(_resource(CAD_RESOURCE)).links


def bundled_empirical_table() -> EmpiricalTable:
    return EmpiricalTable.model_validate_json(_resource(EMPIRICAL_RESOURCE))
