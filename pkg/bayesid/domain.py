import math
from enum import Enum
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, field_validator, model_validator

SCHEMA_VERSION = 1

# order of the 11 mechanical parameters of one body
MECHANICAL_NAMES = ("m", "rx", "ry", "rz", "Ixx", "Ixy", "Ixz", "Iyy", "Iyz", "Izz", "J")
N_LINK_PARAMS = len(MECHANICAL_NAMES)


class BayesIdError(Exception):
    """
    Base class of all errors raised by bayesid. The `exit_code` is what the
    command line front end returns when the error reaches it.
    """
    exit_code = 2


class ContractViolation(BayesIdError):
    exit_code = 2


class ConfigurationError(BayesIdError):
    exit_code = 2


class DataValidationError(BayesIdError):
    exit_code = 2


class UndefinedMetricError(BayesIdError):
    exit_code = 2


class RankDeficientError(BayesIdError):
    exit_code = 2


class RankInstabilityError(BayesIdError):
    exit_code = 2


class InitializationError(BayesIdError):
    exit_code = 3


class CatalogInfeasibleError(BayesIdError):
    exit_code = 3


class DiagnosticsGateError(BayesIdError):
    exit_code = 4


class PriorType(str, Enum):
    DIFFUSE = "diffuse"
    INFORMED_DIFFUSE = "informed_diffuse"
    EMPIRICAL = "empirical"
    CAD = "cad"


Vector3 = tuple[float, float, float]


class LinkInertialParams(BaseModel):
    """
    The 11 mechanical parameters of one body: mass, CoM in the link frame,
    the inertia tensor about the CoM (components in the link's inertia frame,
    see `LinkSpec.inertia_rotation`) and the motor inertia reflected to the joint.
    Feasibility is not validated here, the sampler visits infeasible points
    and rejects them.
    """
    m: float
    r: Vector3
    I: tuple[float, float, float, float, float, float]
    J: float

    def to_vector(self) -> list[float]:
        return [self.m, *self.r, *self.I, self.J]

    @staticmethod
    def from_vector(values: Sequence[float]) -> "LinkInertialParams":
        if len(values) != N_LINK_PARAMS:
            raise ContractViolation(f"expected {N_LINK_PARAMS} values per link, got {len(values)}")
        v = [float(x) for x in values]
        return LinkInertialParams(m=v[0], r=(v[1], v[2], v[3]), I=(v[4], v[5], v[6], v[7], v[8], v[9]), J=v[10])

    def tensor(self) -> np.ndarray:
        ixx, ixy, ixz, iyy, iyz, izz = self.I
        return np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])


def params_to_array(params: Sequence[LinkInertialParams]) -> np.ndarray:
    return np.array([p.to_vector() for p in params], dtype=float)


class ParameterSet(BaseModel):
    schema_version: int = SCHEMA_VERSION
    name: str = "params"
    links: list[LinkInertialParams]


class JointSpec(BaseModel):
    # URDF convention: fixed transform (translation, rpy) in the parent frame,
    # followed by a rotation about `axis` given in the joint frame
    axis: Vector3
    translation: Vector3
    rotation: Vector3 = (0.0, 0.0, 0.0)

    @field_validator("axis")
    @classmethod
    def unit_axis(cls, axis: Vector3) -> Vector3:
        norm = math.sqrt(sum(a * a for a in axis))
        if norm == 0.0:
            raise ValueError("joint axis must not be the zero vector")
        return (axis[0] / norm, axis[1] / norm, axis[2] / norm)


class LinkSpec(BaseModel):
    com_bound: float
    nominal_rotor_inertia: float
    # translation vector that the spherical CoM parametrization is centred on;
    # defaults to the next joint's translation
    distal_translation: Vector3 | None = None
    # rpy of the frame in which the CoM-centred tensor components are given
    inertia_rotation: Vector3 = (0.0, 0.0, 0.0)

    @field_validator("com_bound", "nominal_rotor_inertia")
    @classmethod
    def positive(cls, value: float) -> float:
        if not value > 0.0:
            raise ValueError("must be positive")
        return value


class RobotMetadata(BaseModel):
    total_mass: float
    base_mass: float = 0.0
    flange_translation: Vector3 | None = None


class RobotDescription(BaseModel):
    schema_version: int = SCHEMA_VERSION
    name: str = "robot"
    joints: list[JointSpec]
    links: list[LinkSpec]
    metadata: RobotMetadata

    @model_validator(mode="after")
    def consistent_chain(self) -> "RobotDescription":
        if len(self.joints) < 1:
            raise ValueError("a robot needs at least one joint")
        if len(self.links) != len(self.joints):
            raise ValueError(f"{len(self.joints)} joints but {len(self.links)} links")
        return self

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    def rotor_inertias(self) -> list[float]:
        return [link.nominal_rotor_inertia for link in self.links]

    def com_bounds(self) -> np.ndarray:
        return np.array([link.com_bound for link in self.links])

    def link_translation(self, k: int) -> np.ndarray:
        """
        Translation vector of link `k` (0-based) in its own frame: the explicit
        `distal_translation`, the next joint's origin or, for the last link,
        the flange translation. Zero when none is known.
        """
        link = self.links[k]
        if link.distal_translation is not None:
            return np.array(link.distal_translation, dtype=float)
        if k + 1 < self.n_joints:
            return np.array(self.joints[k + 1].translation, dtype=float)
        if self.metadata.flange_translation is not None:
            return np.array(self.metadata.flange_translation, dtype=float)
        return np.zeros(3)


class Pose(BaseModel):
    q: list[float]

    @field_validator("q")
    @classmethod
    def finite(cls, q: list[float]) -> list[float]:
        if not all(math.isfinite(x) for x in q):
            raise ValueError("joint positions must be finite")
        return q


class Measurement(BaseModel):
    pose: Pose
    axis: int
    inertia: float

    @field_validator("axis")
    @classmethod
    def one_based(cls, axis: int) -> int:
        if axis < 1:
            raise ValueError("axes are numbered from 1")
        return axis

    @field_validator("inertia")
    @classmethod
    def positive(cls, inertia: float) -> float:
        if not inertia > 0.0:
            raise ValueError("measured inertia must be positive")
        return inertia


class MeasurementDataset(BaseModel):
    entries: list[Measurement]
    provenance: Literal["synthetic"] | Literal["imported"] = "imported"
    ground_truth: list[LinkInertialParams] | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def inertias(self) -> np.ndarray:
        return np.array([e.inertia for e in self.entries], dtype=float)

    def axes(self) -> np.ndarray:
        return np.array([e.axis for e in self.entries], dtype=int)

    def pose_array(self) -> np.ndarray:
        return np.array([e.pose.q for e in self.entries], dtype=float)

    def check_robot(self, robot: RobotDescription) -> None:
        for i, e in enumerate(self.entries):
            if len(e.pose.q) != robot.n_joints:
                raise DataValidationError(f"entry {i}: pose has {len(e.pose.q)} joints, robot has {robot.n_joints}")
            if e.axis > robot.n_joints:
                raise DataValidationError(f"entry {i}: axis {e.axis} outside [1, {robot.n_joints}]")

    def pose_groups(self) -> dict[tuple[float, ...], list[int]]:
        """
        Entry indices grouped by identical pose, in order of first appearance.
        """
        groups: dict[tuple[float, ...], list[int]] = {}
        for i, e in enumerate(self.entries):
            groups.setdefault(tuple(e.pose.q), []).append(i)
        return groups

    def subset(self, indices: Sequence[int]) -> "MeasurementDataset":
        return MeasurementDataset(
            entries=[self.entries[i] for i in indices],
            provenance=self.provenance,
            ground_truth=self.ground_truth,
        )