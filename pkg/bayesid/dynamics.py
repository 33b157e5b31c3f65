"""
Rigid-body dynamics of a serial chain of revolute joints.

Everything is built on spatial (6D) algebra: per pose the joint transforms are
computed once and the composite-rigid-body recursion yields the joint-space
mass matrix. The apparent inertia of axis i is its diagonal entry.

Internally each body is carried as its *standard* parameter vector

    phi_k = (m, m*rx, m*ry, m*rz, IOxx, IOxy, IOxz, IOyy, IOyz, IOzz, J)

with the inertia tensor taken about the link origin in link coordinates. The
mass matrix is linear in phi, which gives the regressor and from it the base
parameters.
"""
import logging
from fractions import Fraction
from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy import linalg

from bayesid.domain import (
    N_LINK_PARAMS,
    ContractViolation,
    LinkInertialParams,
    Pose,
    RankInstabilityError,
    RobotDescription,
    params_to_array,
)

# symmetric tensor packing (xx, xy, xz, yy, yz, zz)
_TENSOR_ROWS = np.array([0, 0, 0, 1, 1, 2])
_TENSOR_COLS = np.array([0, 1, 2, 1, 2, 2])

STANDARD_NAMES = ("m", "hx", "hy", "hz", "IOxx", "IOxy", "IOxz", "IOyy", "IOyz", "IOzz", "J")


def rotation_from_rpy(rpy: Sequence[float]) -> np.ndarray:
    """Fixed-axis roll, pitch, yaw: R = Rz(yaw) Ry(pitch) Rx(roll)."""
    roll, pitch, yaw = rpy
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    return rz @ ry @ rx


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix, batched over leading dimensions."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def rotation_about_axis(axis: Sequence[float], angle: float) -> np.ndarray:
    k = skew(np.asarray(axis, dtype=float))
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def unpack_tensor(packed: np.ndarray) -> np.ndarray:
    packed = np.asarray(packed, dtype=float)
    out = np.zeros(packed.shape[:-1] + (3, 3))
    out[..., _TENSOR_ROWS, _TENSOR_COLS] = packed
    out[..., _TENSOR_COLS, _TENSOR_ROWS] = packed
    return out


def pack_tensor(tensor: np.ndarray) -> np.ndarray:
    return np.asarray(tensor)[..., _TENSOR_ROWS, _TENSOR_COLS]


def _motion_transform(rotation: np.ndarray, translation: np.ndarray) -> np.ndarray:
    # child frame sits at `translation` with axes `rotation`, both in parent coordinates
    e = rotation.T
    x = np.zeros((6, 6))
    x[:3, :3] = e
    x[3:, 3:] = e
    x[3:, :3] = -e @ skew(translation)
    return x


def _inertia_rotations(robot: RobotDescription) -> np.ndarray:
    return np.array([rotation_from_rpy(link.inertia_rotation) for link in robot.links])


def _kinematics(robot: RobotDescription, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = robot.n_joints
    x_up = np.empty((n, 6, 6))
    s = np.zeros((n, 6))
    for i, joint in enumerate(robot.joints):
        rotation = rotation_from_rpy(joint.rotation) @ rotation_about_axis(joint.axis, q[i])
        x_up[i] = _motion_transform(rotation, np.array(joint.translation, dtype=float))
        s[i, :3] = joint.axis
    return x_up, s


def _pose_vector(robot: RobotDescription, pose: Pose | Sequence[float] | np.ndarray) -> np.ndarray:
    q = np.asarray(pose.q if isinstance(pose, Pose) else pose, dtype=float).reshape(-1)
    if q.shape[0] != robot.n_joints:
        raise ContractViolation(f"pose has {q.shape[0]} joints, robot has {robot.n_joints}")
    if not np.all(np.isfinite(q)):
        raise ContractViolation("pose contains non-finite joint positions")
    return q


def mechanical_array(robot: RobotDescription, params: Sequence[LinkInertialParams] | np.ndarray) -> np.ndarray:
    """
    Parameters as an array of shape (..., n, 11); accepts model lists or arrays.
    """
    if isinstance(params, np.ndarray):
        mech = np.asarray(params, dtype=float)
    else:
        mech = params_to_array(params)
    if mech.ndim < 2 or mech.shape[-2:] != (robot.n_joints, N_LINK_PARAMS):
        raise ContractViolation(f"expected parameters of shape (..., {robot.n_joints}, {N_LINK_PARAMS}), got {mech.shape}")
    return mech


def standard_vector(robot: RobotDescription, params: Sequence[LinkInertialParams] | np.ndarray) -> np.ndarray:
    """
    Standard parameter vectors, shape (..., n, 11), from mechanical parameters.
    """
    mech = mechanical_array(robot, params)
    m = mech[..., 0]
    c = mech[..., 1:4]
    rot = _inertia_rotations(robot)
    ic = np.einsum("kab,...kbc,kdc->...kad", rot, unpack_tensor(mech[..., 4:10]), rot)
    cc = np.einsum("...i,...i->...", c, c)
    io = ic + m[..., None, None] * (cc[..., None, None] * np.eye(3) - c[..., :, None] * c[..., None, :])
    phi = np.empty_like(mech)
    phi[..., 0] = m
    phi[..., 1:4] = m[..., None] * c
    phi[..., 4:10] = pack_tensor(io)
    phi[..., 10] = mech[..., 10]
    return phi


def mechanical_from_standard(robot: RobotDescription, phi: np.ndarray) -> np.ndarray:
    """Inverse of `standard_vector`; links with a non-positive mass come back as NaN."""
    phi = np.asarray(phi, dtype=float)
    m = phi[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(m[..., None] > 0.0, phi[..., 1:4] / m[..., None], np.nan)
    cc = np.einsum("...i,...i->...", c, c)
    ic = unpack_tensor(phi[..., 4:10]) - m[..., None, None] * (cc[..., None, None] * np.eye(3) - c[..., :, None] * c[..., None, :])
    rot = _inertia_rotations(robot)
    mech = np.empty_like(phi)
    mech[..., 0] = m
    mech[..., 1:4] = c
    mech[..., 4:10] = pack_tensor(np.einsum("kba,...kbc,kcd->...kad", rot, ic, rot))
    mech[..., 10] = phi[..., 10]
    return mech


def _spatial_inertia(phi: np.ndarray) -> np.ndarray:
    out = np.zeros(phi.shape[:-1] + (6, 6))
    hx = skew(phi[..., 1:4])
    out[..., :3, :3] = unpack_tensor(phi[..., 4:10])
    out[..., :3, 3:] = hx
    out[..., 3:, :3] = -hx
    out[..., 3:, 3:] = phi[..., 0, None, None] * np.eye(3)
    return out


def _composite_inertias(x_up: np.ndarray, phi: np.ndarray) -> np.ndarray:
    ic = _spatial_inertia(phi)
    for i in range(x_up.shape[0] - 1, 0, -1):
        ic[..., i - 1, :, :] += np.einsum("ji,...jk,kl->...il", x_up[i], ic[..., i, :, :], x_up[i])
    return ic


def _apparent_from_standard(x_up: np.ndarray, s: np.ndarray, phi: np.ndarray) -> np.ndarray:
    ic = _composite_inertias(x_up, phi)
    return np.einsum("ka,...kab,kb->...k", s, ic, s) + phi[..., 10]


def mass_matrix(robot: RobotDescription, params: Sequence[LinkInertialParams] | np.ndarray, pose: Pose | Sequence[float]) -> np.ndarray:
    """
    Joint-space mass matrix M(q) including reflected rotor inertias on the diagonal.
    """
    q = _pose_vector(robot, pose)
    phi = standard_vector(robot, params)
    if phi.ndim != 2:
        raise ContractViolation("mass_matrix takes a single parameter set")
    x_up, s = _kinematics(robot, q)
    ic = _composite_inertias(x_up, phi)
    n = robot.n_joints
    h = np.zeros((n, n))
    for i in range(n):
        f = ic[i] @ s[i]
        h[i, i] = s[i] @ f
        for j in range(i, 0, -1):
            f = x_up[j].T @ f
            h[i, j - 1] = h[j - 1, i] = s[j - 1] @ f
    h[np.diag_indices(n)] += phi[:, 10]
    return h


def apparent_inertia(robot: RobotDescription, params: Sequence[LinkInertialParams] | np.ndarray, pose: Pose | Sequence[float]) -> np.ndarray:
    """
    Apparent inertia of every axis at `pose`, i.e. diag M(q). Parameter
    arrays with leading batch dimensions give a batch of results.
    """
    q = _pose_vector(robot, pose)
    x_up, s = _kinematics(robot, q)
    return _apparent_from_standard(x_up, s, standard_vector(robot, params))


def regressor(robot: RobotDescription, pose: Pose | Sequence[float]) -> np.ndarray:
    """
    Y(q) of shape (n, 11n) with diag M(q) = Y(q) @ phi, phi the flattened
    standard parameters. Column 11k + j is parameter j of body k.
    """
    q = _pose_vector(robot, pose)
    x_up, s = _kinematics(robot, q)
    n = robot.n_joints
    units = np.eye(n * N_LINK_PARAMS).reshape(n * N_LINK_PARAMS, n, N_LINK_PARAMS)
    return _apparent_from_standard(x_up, s, units).T


def stacked_regressor(robot: RobotDescription, poses: np.ndarray) -> np.ndarray:
    return np.vstack([regressor(robot, q) for q in np.asarray(poses, dtype=float)])


def stacked_condition_number(matrix: np.ndarray) -> float:
    """2-norm condition number, infinite when columns are rank deficient."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape[0] < matrix.shape[1] or np.linalg.matrix_rank(matrix) < matrix.shape[1]:
        return float("inf")
    return float(np.linalg.cond(matrix))


def _numeric_rank(r_diagonal: np.ndarray, rtol: float) -> int:
    d = np.abs(r_diagonal)
    if d.size == 0 or d[0] == 0.0:
        return 0
    return int(np.count_nonzero(d > rtol * d[0]))


def _snap(value: float, tolerance: float = 1e-10) -> float:
    snapped = float(Fraction(value).limit_denominator(10_000))
    return snapped if abs(snapped - value) <= tolerance else value


class BaseParamMap(BaseModel):
    """
    Linear map from standard parameters to base parameters, lambda = C @ phi.
    Independent columns map to the identity, dependent ones through beta.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    robot: RobotDescription
    combination: np.ndarray
    independent: list[int]
    dependent: list[int]
    rtol: float

    @property
    def count(self) -> int:
        return len(self.independent)

    def names(self) -> list[str]:
        return [f"lambda{j + 1}" for j in range(self.count)]

    def reduced_regressor(self, pose: Pose | Sequence[float]) -> np.ndarray:
        return regressor(self.robot, pose)[:, self.independent]

    def stacked_reduced_regressor(self, poses: np.ndarray) -> np.ndarray:
        return stacked_regressor(self.robot, poses)[:, self.independent]

    def values(self, params: Sequence[LinkInertialParams] | np.ndarray) -> np.ndarray:
        phi = standard_vector(self.robot, params)
        flat = phi.reshape(phi.shape[:-2] + (-1,))
        return flat @ self.combination.T


def extract_base_params(robot: RobotDescription, n_sample_poses: int = 1000, seed: int = 0, rtol: float = 1e-9) -> BaseParamMap:
    """
    Finds the identifiable linear combinations of the standard parameters by a
    column-pivoted QR of the regressor stacked over random poses. The rank is
    cross-checked on an independent pose sample.
    """
    if n_sample_poses < 1:
        raise ContractViolation("need at least one sample pose")
    n = robot.n_joints
    columns = n * N_LINK_PARAMS
    main_rng = np.random.default_rng([seed, 0])
    check_rng = np.random.default_rng([seed, 1])
    y = stacked_regressor(robot, main_rng.uniform(-np.pi, np.pi, (n_sample_poses, n)))
    _, r, perm = linalg.qr(y, mode="economic", pivoting=True)
    rank = _numeric_rank(np.diag(r), rtol)

    y_check = stacked_regressor(robot, check_rng.uniform(-np.pi, np.pi, (n_sample_poses, n)))
    check_rank = _numeric_rank(np.diag(linalg.qr(y_check, mode="r", pivoting=True)[0]), rtol)
    if check_rank != rank:
        raise RankInstabilityError(f"regressor rank {rank} differs from {check_rank} on an independent pose sample")

    independent = sorted(int(i) for i in perm[:rank])
    dependent = [j for j in range(columns) if j not in set(independent)]
    beta_pivoted = linalg.solve_triangular(r[:rank, :rank], r[:rank, rank:])
    # reorder rows from pivot order to ascending column order
    row_order = np.argsort(perm[:rank])
    dep_pivot = list(perm[rank:])
    combination = np.zeros((rank, columns))
    combination[:, independent] = np.eye(rank)
    for col_pos, column in enumerate(dep_pivot):
        combination[:, column] = [_snap(b) for b in beta_pivoted[row_order, col_pos]]

    residual = np.max(np.abs(y[:, independent] @ combination - y)) if columns else 0.0
    if residual > 1e-8 * max(1.0, float(np.max(np.abs(y)))):
        logging.warning("base parameter reconstruction residual %.3e", residual)
    logging.debug("robot '%s': %d base parameters out of %d", robot.name, rank, columns)
    return BaseParamMap(robot=robot, combination=combination, independent=independent, dependent=dependent, rtol=rtol)


def base_param_values(base_map: BaseParamMap, params: Sequence[LinkInertialParams] | np.ndarray) -> np.ndarray:
    return base_map.values(params)


def condition_number(poses: np.ndarray | Sequence[Pose], base_map: BaseParamMap) -> float:
    q = np.array([p.q if isinstance(p, Pose) else p for p in poses], dtype=float)
    if q.size == 0:
        return float("inf")
    return stacked_condition_number(base_map.stacked_reduced_regressor(q))


def last_axis_coefficients(base_map: BaseParamMap) -> np.ndarray:
    """The reduced regressor row of the last axis, constant over all poses."""
    return base_map.reduced_regressor(np.zeros(base_map.robot.n_joints))[-1]


def last_axis_base_parameter(base_map: BaseParamMap, params: Sequence[LinkInertialParams] | np.ndarray) -> float:
    return float(last_axis_coefficients(base_map) @ base_map.values(params))
