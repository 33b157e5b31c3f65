"""
Distribution specs, the prior catalogs and the feasibility / soft constraint
factors that make up the joint prior over the mechanical parameters.

Per body the sampled coordinates are

    (m, radius, polar, azimuth, Ixx, Ixy, Ixz, Iyy, Iyz, Izz, J)

i.e. the CoM is parametrized in spherical coordinates whose z-axis is the
link translation vector. The noise scale c is one extra coordinate at the end.
"""
import logging
import math
from enum import Enum
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy import special, stats

from bayesid.domain import (
    N_LINK_PARAMS,
    SCHEMA_VERSION,
    CatalogInfeasibleError,
    ConfigurationError,
    ContractViolation,
    LinkInertialParams,
    Pose,
    PriorType,
    RobotDescription,
    params_to_array,
)
from bayesid.dynamics import stacked_regressor, standard_vector, unpack_tensor

LINK_COORDINATES = ("m", "radius", "polar", "azimuth", "Ixx", "Ixy", "Ixz", "Iyy", "Iyz", "Izz", "J")
NOISE_COORDINATE = "c"

DIFFUSE_COM_COMPONENT_BOUND = 1.0
DIFFUSE_I_DIAG_BOUNDS = (0.0, 50.0)
DIFFUSE_I_OFF_BOUNDS = (-2.0, 2.0)
TOTAL_MASS_SPREAD = 0.1
CAD_SPREAD = 0.1
CHECK_POSE_COUNT = 20
SOFT_BLOCK = 1 << 16
MIN_SOFT_DRAWS = 1 << 20
MIN_SOFT_ACCEPTANCE = 1e-6

_DIAG = (4, 7, 9)
_OFF = (5, 6, 8)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

SoftConstraint = Literal["total_mass", "com_alignment"]


class DistributionKind(str, Enum):
    UNIFORM = "Uniform"
    NORMAL = "Normal"
    TRUNC_NORMAL = "TruncNormal"
    LOGNORMAL = "Lognormal"
    FIXED = "Fixed"


class DistributionSpec(BaseModel):
    """
    One marginal prior. `mu`/`sigma` of a Lognormal are log-space parameters.
    Normal and Lognormal take optional bounds, TruncNormal and Uniform require
    them. A Fixed spec is a point mass at `mu`.
    """
    model_config = ConfigDict(frozen=True)

    kind: DistributionKind
    mu: float = 0.0
    sigma: float = 1.0
    a: float | None = None
    b: float | None = None

    @model_validator(mode="after")
    def valid_parameters(self) -> "DistributionSpec":
        if self.kind in (DistributionKind.UNIFORM, DistributionKind.TRUNC_NORMAL):
            if self.a is None or self.b is None:
                raise ValueError(f"{self.kind.value} needs both bounds")
        if self.a is not None and self.b is not None and not self.a < self.b:
            raise ValueError(f"lower bound {self.a} must be below upper bound {self.b}")
        if self.kind in (DistributionKind.NORMAL, DistributionKind.TRUNC_NORMAL, DistributionKind.LOGNORMAL):
            if not self.sigma > 0.0:
                raise ValueError(f"{self.kind.value} needs sigma > 0")
        if self.kind == DistributionKind.LOGNORMAL and self.b is not None and self.b <= 0.0:
            raise ValueError("Lognormal upper bound must be positive")
        return self

    @staticmethod
    def uniform(a: float, b: float) -> "DistributionSpec":
        return DistributionSpec(kind=DistributionKind.UNIFORM, a=a, b=b)

    @staticmethod
    def normal(mu: float, sigma: float, a: float | None = None, b: float | None = None) -> "DistributionSpec":
        return DistributionSpec(kind=DistributionKind.NORMAL, mu=mu, sigma=sigma, a=a, b=b)

    @staticmethod
    def trunc_normal(mu: float, sigma: float, a: float, b: float) -> "DistributionSpec":
        return DistributionSpec(kind=DistributionKind.TRUNC_NORMAL, mu=mu, sigma=sigma, a=a, b=b)

    @staticmethod
    def lognormal(mu: float, sigma: float, a: float | None = None, b: float | None = None) -> "DistributionSpec":
        return DistributionSpec(kind=DistributionKind.LOGNORMAL, mu=mu, sigma=sigma, a=a, b=b)

    @staticmethod
    def fixed(value: float) -> "DistributionSpec":
        return DistributionSpec(kind=DistributionKind.FIXED, mu=value)


def lognormal_from_moments(mean: float, std: float, a: float | None = None, b: float | None = None) -> DistributionSpec:
    """Lognormal whose physical-unit mean and standard deviation are `mean`, `std`."""
    if mean <= 0.0:
        # a zero mean carries no scale information, use a unit coefficient of variation
        mean = std
    s2 = math.log1p((std / mean) ** 2)
    return DistributionSpec.lognormal(math.log(mean) - 0.5 * s2, math.sqrt(s2), a=a, b=b)


_UNIFORM, _GAUSS, _LOGN, _FIXED = 0, 1, 2, 3
_KIND_CODES = {
    DistributionKind.UNIFORM: _UNIFORM,
    DistributionKind.NORMAL: _GAUSS,
    DistributionKind.TRUNC_NORMAL: _GAUSS,
    DistributionKind.LOGNORMAL: _LOGN,
    DistributionKind.FIXED: _FIXED,
}


def _log_normal_mass(alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """log(Phi(beta) - Phi(alpha)), evaluated on the tail that keeps precision."""
    flip = alpha > 0.0
    lo = np.where(flip, -beta, alpha)
    hi = np.where(flip, -alpha, beta)
    log_hi = special.log_ndtr(hi)
    log_lo = special.log_ndtr(lo)
    with np.errstate(divide="ignore", invalid="ignore"):
        return log_hi + np.log1p(-np.exp(log_lo - log_hi))


class CompiledSpecs:
    """
    A sequence of `DistributionSpec` turned into parameter arrays so that
    densities and draws are evaluated for all coordinates at once.
    """

    def __init__(self, specs: Sequence[DistributionSpec]):
        self.specs = list(specs)
        self.kind = np.array([_KIND_CODES[s.kind] for s in self.specs], dtype=int)
        self.mu = np.array([s.mu for s in self.specs], dtype=float)
        self.sigma = np.array([s.sigma if s.kind != DistributionKind.FIXED else 1.0 for s in self.specs], dtype=float)
        self.lo = np.array([-np.inf if s.a is None else s.a for s in self.specs], dtype=float)
        self.hi = np.array([np.inf if s.b is None else s.b for s in self.specs], dtype=float)
        fixed = self.kind == _FIXED
        self.lo = np.where(fixed, self.mu, self.lo)
        self.hi = np.where(fixed, self.mu, self.hi)

        logn = self.kind == _LOGN
        with np.errstate(divide="ignore", invalid="ignore"):
            lo_t = np.where(logn, np.where(self.lo > 0.0, np.log(np.where(self.lo > 0.0, self.lo, 1.0)), -np.inf), self.lo)
            hi_t = np.where(logn, np.log(np.where(self.hi > 0.0, self.hi, 1.0)), self.hi)
        gauss_like = (self.kind == _GAUSS) | logn
        self.alpha = np.where(gauss_like, (lo_t - self.mu) / self.sigma, -np.inf)
        self.beta = np.where(gauss_like, (hi_t - self.mu) / self.sigma, np.inf)
        self.log_mass = np.where(gauss_like, _log_normal_mass(self.alpha, self.beta), 0.0)
        uniform = self.kind == _UNIFORM
        self.log_width = np.where(uniform, np.log(np.where(uniform, self.hi - self.lo, 1.0)), 0.0)

    def __len__(self) -> int:
        return len(self.specs)

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        """Elementwise log densities, x of shape (..., k)."""
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            positive = x > 0.0
            log_x = np.log(np.where(positive, x, 1.0))
            t = np.where(self.kind == _LOGN, log_x, x)
            z = (t - self.mu) / self.sigma
            gauss = -0.5 * z * z - np.log(self.sigma) - _HALF_LOG_2PI - self.log_mass
            value = np.where(
                self.kind == _UNIFORM, -self.log_width,
                np.where(self.kind == _GAUSS, gauss, np.where(self.kind == _LOGN, gauss - log_x, 0.0)),
            )
        ok = (x >= self.lo) & (x <= self.hi)
        ok &= np.where(self.kind == _LOGN, positive, True)
        return np.where(ok, value, -np.inf)

    def sample(self, rng: np.random.Generator, size: int, columns: Sequence[int] | None = None) -> np.ndarray:
        """Independent draws of all coordinates, or of `columns` only, shape (size, k)."""
        cols = np.arange(len(self)) if columns is None else np.asarray(columns, dtype=int)
        kind, lo, hi = self.kind[cols], self.lo[cols], self.hi[cols]
        u = rng.random((size, cols.size))
        uniform = kind == _UNIFORM
        draws = np.where(uniform, lo + u * np.where(uniform, hi - lo, 0.0), self.mu[cols])
        g = np.flatnonzero((kind == _GAUSS) | (kind == _LOGN))
        if g.size:
            gauss_u = np.clip(u[:, g], np.finfo(float).tiny, 1.0 - np.finfo(float).eps)
            t = self.mu[cols[g]] + self.sigma[cols[g]] * stats.truncnorm.ppf(gauss_u, self.alpha[cols[g]], self.beta[cols[g]])
            logn = kind[g] == _LOGN
            t[:, logn] = np.exp(t[:, logn])
            draws[:, g] = t
        return np.clip(draws, lo, hi)

    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean and standard deviation per coordinate (zero spread for Fixed)."""
        mean = np.array(self.mu, copy=True)
        std = np.zeros(len(self))
        for i, code in enumerate(self.kind):
            if code == _UNIFORM:
                mean[i] = 0.5 * (self.lo[i] + self.hi[i])
                std[i] = (self.hi[i] - self.lo[i]) / math.sqrt(12.0)
            elif code == _GAUSS:
                m, v = stats.truncnorm.stats(self.alpha[i], self.beta[i], moments="mv")
                mean[i] = self.mu[i] + self.sigma[i] * float(m)
                std[i] = self.sigma[i] * math.sqrt(float(v))
            elif code == _LOGN:
                mean[i], std[i] = self._lognormal_moments(i)
        return mean, std

    def _lognormal_moments(self, i: int) -> tuple[float, float]:
        mu, s, a, b = self.mu[i], self.sigma[i], self.alpha[i], self.beta[i]

        def raw(k: int) -> float:
            log_ratio = _log_normal_mass(np.array(a - k * s), np.array(b - k * s)) - self.log_mass[i]
            return math.exp(k * mu + 0.5 * k * k * s * s + float(log_ratio))

        first, second = raw(1), raw(2)
        var = second - first * first
        if not var > 0.0:
            var = (first * s) ** 2
        return first, math.sqrt(var)


def log_pdf(spec: DistributionSpec, x: float) -> float:
    return float(CompiledSpecs([spec]).log_pdf(np.array([x], dtype=float))[0])


def sample(spec: DistributionSpec, rng: np.random.Generator) -> float:
    return float(CompiledSpecs([spec]).sample(rng, 1)[0, 0])


def spherical_frame(translation: Sequence[float]) -> np.ndarray:
    """
    Orthonormal basis (columns e1, e2, e3) with e3 along `translation`,
    the link frame z-axis for a zero vector.
    """
    t = np.asarray(translation, dtype=float)
    norm = float(np.linalg.norm(t))
    e3 = t / norm if norm > 0.0 else np.array([0.0, 0.0, 1.0])
    helper = np.array([1.0, 0.0, 0.0]) if abs(e3[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = helper - (helper @ e3) * e3
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(e3, e1)
    return np.column_stack([e1, e2, e3])


def com_spherical_to_cartesian(radius, polar, azimuth, link_translation_axis: Sequence[float]) -> np.ndarray:
    radius, polar, azimuth = np.asarray(radius, float), np.asarray(polar, float), np.asarray(azimuth, float)
    local = np.stack([
        radius * np.sin(polar) * np.cos(azimuth),
        radius * np.sin(polar) * np.sin(azimuth),
        radius * np.cos(polar),
    ], axis=-1)
    return local @ spherical_frame(link_translation_axis).T


def com_cartesian_to_spherical(r: Sequence[float] | np.ndarray, link_translation_axis: Sequence[float]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    local = np.asarray(r, dtype=float) @ spherical_frame(link_translation_axis)
    radius = np.linalg.norm(local, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cos_polar = np.where(radius > 0.0, local[..., 2] / np.where(radius > 0.0, radius, 1.0), 1.0)
    polar = np.arccos(np.clip(cos_polar, -1.0, 1.0))
    azimuth = np.mod(np.arctan2(local[..., 1], local[..., 0]), 2.0 * np.pi)
    return radius, polar, azimuth


class PriorCatalog(BaseModel):
    schema_version: int = SCHEMA_VERSION
    prior_type: PriorType
    links: list[dict[str, DistributionSpec]]
    noise: DistributionSpec
    constraints: list[SoftConstraint] = []
    # uniform radius/polar specs describe a CoM uniform in Cartesian space
    com_jacobian: bool = False

    @model_validator(mode="after")
    def complete_links(self) -> "PriorCatalog":
        for k, link in enumerate(self.links):
            if set(link) != set(LINK_COORDINATES):
                missing = sorted(set(LINK_COORDINATES) - set(link))
                extra = sorted(set(link) - set(LINK_COORDINATES))
                raise ValueError(f"link {k + 1}: missing {missing}, unknown {extra}")
        if len(set(self.constraints)) != len(self.constraints):
            raise ValueError("constraint listed twice")
        return self

    def coordinate_names(self) -> list[str]:
        names = [f"{name}{k + 1}" for k in range(len(self.links)) for name in LINK_COORDINATES]
        return names + [NOISE_COORDINATE]

    def specs(self) -> list[DistributionSpec]:
        return [link[name] for link in self.links for name in LINK_COORDINATES] + [self.noise]


def default_check_poses(robot: RobotDescription, count: int = CHECK_POSE_COUNT, seed: int = 0) -> np.ndarray:
    return np.random.default_rng([seed, 2]).uniform(-np.pi, np.pi, (count, robot.n_joints))


def check_rows(robot: RobotDescription, check_poses: np.ndarray | Sequence[Pose] | None = None) -> np.ndarray:
    """Stacked regressor at the feasibility check poses."""
    if check_poses is None:
        poses = default_check_poses(robot)
    else:
        poses = np.array([p.q if isinstance(p, Pose) else p for p in check_poses], dtype=float)
    if poses.size == 0:
        raise ContractViolation("feasibility needs at least one check pose")
    return stacked_regressor(robot, poses)


def feasibility_mask(robot: RobotDescription, mech: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
    """
    Physical consistency of parameter arrays (..., n, 11): positive masses and
    rotor inertias, a positive definite tensor satisfying the triangle
    inequalities, the CoM inside the link bound and, given `rows`, positive
    apparent inertia at the check poses.
    """
    mech = np.asarray(mech, dtype=float)
    finite = np.all(np.isfinite(mech), axis=(-2, -1))
    mech = np.where(np.isfinite(mech), mech, 0.0)
    ok = finite & np.all((mech[..., 0] > 0.0) & (mech[..., 10] > 0.0), axis=-1)

    diag = mech[..., list(_DIAG)]
    total = diag.sum(axis=-1, keepdims=True)
    ok &= np.all(np.all(diag > 0.0, axis=-1), axis=-1)
    ok &= np.all(np.all(diag <= total - diag, axis=-1), axis=-1)

    eig = np.linalg.eigvalsh(unpack_tensor(mech[..., 4:10]))
    ok &= np.all(eig[..., 0] > 0.0, axis=-1)
    ok &= np.all(eig[..., 0] + eig[..., 1] >= eig[..., 2] - 1e-12 * np.abs(eig[..., 2]), axis=-1)

    ok &= np.all(np.linalg.norm(mech[..., 1:4], axis=-1) <= robot.com_bounds(), axis=-1)
    if rows is not None:
        phi = standard_vector(robot, mech)
        x = phi.reshape(phi.shape[:-2] + (-1,)) @ rows.T
        ok &= np.all(x > 0.0, axis=-1)
    return ok


def feasibility_log_factor(params: Sequence[LinkInertialParams] | np.ndarray, robot: RobotDescription, check_poses: np.ndarray | Sequence[Pose] | None = None) -> float:
    mech = params if isinstance(params, np.ndarray) else params_to_array(params)
    if mech.shape != (robot.n_joints, N_LINK_PARAMS):
        raise ContractViolation(f"expected {robot.n_joints} links of {N_LINK_PARAMS} parameters")
    return 0.0 if bool(feasibility_mask(robot, mech, check_rows(robot, check_poses))) else -math.inf


def soft_log_factors(robot: RobotDescription, mech: np.ndarray, kinds: Sequence[str]) -> np.ndarray:
    mech = np.asarray(mech, dtype=float)
    out = np.zeros(mech.shape[:-2])
    for kind in kinds:
        if kind == "total_mass":
            total = robot.metadata.total_mass
            sd = TOTAL_MASS_SPREAD * total
            z = (mech[..., 0].sum(axis=-1) + robot.metadata.base_mass - total) / sd
            out = out - 0.5 * z * z - math.log(sd) - _HALF_LOG_2PI
        elif kind == "com_alignment":
            # carried by the polar angle bounds of the catalog
            continue
        else:
            raise ContractViolation(f"unknown soft constraint '{kind}'")
    return out


def soft_constraint_log_factor(params: Sequence[LinkInertialParams] | np.ndarray, robot: RobotDescription, kind: str) -> float:
    mech = params if isinstance(params, np.ndarray) else params_to_array(params)
    return float(soft_log_factors(robot, mech, [kind]))


class CompiledCatalog:
    """
    A catalog bound to a robot: vectorized coordinate densities and draws and
    the mapping from catalog coordinates to mechanical parameters.
    """

    def __init__(self, catalog: PriorCatalog, robot: RobotDescription):
        if len(catalog.links) != robot.n_joints:
            raise ConfigurationError(f"catalog has {len(catalog.links)} links, robot has {robot.n_joints}")
        self.catalog = catalog
        self.robot = robot
        self.names = catalog.coordinate_names()
        self.specs = CompiledSpecs(catalog.specs())
        self.frames = np.array([spherical_frame(robot.link_translation(k)) for k in range(robot.n_joints)])
        self.dimension = len(self.names)
        # recovered azimuths land within half a turn of the prior centre
        self.azimuth_center = np.array([
            0.5 * (link["azimuth"].a + link["azimuth"].b) if link["azimuth"].kind == DistributionKind.UNIFORM else link["azimuth"].mu
            for link in catalog.links
        ], dtype=float)
        if catalog.com_jacobian:
            for k, link in enumerate(catalog.links):
                for name in ("radius", "polar"):
                    spec = link[name]
                    if spec.kind != DistributionKind.UNIFORM or spec.a != 0.0:
                        raise ContractViolation(f"link {k + 1}: {name} must be Uniform(0, b) for a Cartesian-uniform CoM")
            self.radius_max = np.array([link["radius"].b for link in catalog.links], dtype=float)
            self.polar_max = np.array([link["polar"].b for link in catalog.links], dtype=float)

    def _link_columns(self, offset: int) -> np.ndarray:
        return np.arange(self.robot.n_joints) * N_LINK_PARAMS + offset

    def jacobian_log_factor(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if not self.catalog.com_jacobian:
            return np.zeros(v.shape[:-1])
        rho = v[..., self._link_columns(1)]
        theta = v[..., self._link_columns(2)]
        with np.errstate(divide="ignore", invalid="ignore"):
            # uniform radius/polar densities replaced by 3 rho^2 / R^3 and sin(theta) / (1 - cos(Theta))
            radial = np.log(3.0 * rho * rho / self.radius_max ** 2)
            polar = np.log(self.polar_max * np.sin(theta) / (1.0 - np.cos(self.polar_max)))
            total = np.sum(radial + polar, axis=-1)
        return np.where(np.isnan(total), -np.inf, total)

    def log_density(self, v: np.ndarray) -> np.ndarray:
        """Sum of coordinate log densities, including the CoM volume element."""
        base = np.sum(self.specs.log_pdf(v), axis=-1)
        with np.errstate(invalid="ignore"):
            out = base + self.jacobian_log_factor(v)
        return np.where(np.isneginf(base), -np.inf, out)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        v = self.specs.sample(rng, size)
        if self.catalog.com_jacobian:
            u = rng.random((size, 2, self.robot.n_joints))
            v[:, self._link_columns(1)] = self.radius_max * np.cbrt(u[:, 0])
            v[:, self._link_columns(2)] = np.arccos(1.0 - u[:, 1] * (1.0 - np.cos(self.polar_max)))
        return v

    def sample_constrained(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """
        Draws from the coordinate priors times the soft constraint factors.
        The total mass factor only involves the masses, so masses are drawn
        first and accepted with probability exp(-z^2 / 2); the remaining
        coordinates are independent of them.
        """
        v = self.sample(rng, size)
        if "total_mass" not in self.catalog.constraints:
            return v
        columns = self._link_columns(0)
        total = self.robot.metadata.total_mass
        sd = TOTAL_MASS_SPREAD * total
        kept: list[np.ndarray] = []
        count = 0
        raw = 0
        while count < size:
            masses = self.specs.sample(rng, SOFT_BLOCK, columns=columns)
            raw += SOFT_BLOCK
            z = (masses.sum(axis=1) + self.robot.metadata.base_mass - total) / sd
            block = masses[rng.random(SOFT_BLOCK) < np.exp(-0.5 * z * z)]
            kept.append(block)
            count += block.shape[0]
            if raw >= MIN_SOFT_DRAWS and count < MIN_SOFT_ACCEPTANCE * raw:
                raise CatalogInfeasibleError(
                    f"the total mass constraint accepts {count} of {raw} mass draws"
                )
        v[:, columns] = np.concatenate(kept)[:size]
        return v

    def to_mechanical(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        v = np.asarray(v, dtype=float)
        n = self.robot.n_joints
        blocks = v[..., : n * N_LINK_PARAMS].reshape(v.shape[:-1] + (n, N_LINK_PARAMS))
        rho, theta, phi = blocks[..., 1], blocks[..., 2], blocks[..., 3]
        local = np.stack([rho * np.sin(theta) * np.cos(phi), rho * np.sin(theta) * np.sin(phi), rho * np.cos(theta)], axis=-1)
        mech = np.array(blocks, copy=True)
        mech[..., 1:4] = np.einsum("kab,...kb->...ka", self.frames, local)
        return mech, v[..., -1]

    def from_mechanical(self, mech: np.ndarray, c: float | np.ndarray) -> np.ndarray:
        mech = np.asarray(mech, dtype=float)
        n = self.robot.n_joints
        local = np.einsum("kba,...kb->...ka", self.frames, mech[..., 1:4])
        blocks = np.array(mech, copy=True)
        rho = np.linalg.norm(local, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            cos_polar = np.where(rho > 0.0, local[..., 2] / np.where(rho > 0.0, rho, 1.0), 1.0)
        blocks[..., 1] = rho
        blocks[..., 2] = np.arccos(np.clip(cos_polar, -1.0, 1.0))
        azimuth = np.arctan2(local[..., 1], local[..., 0])
        blocks[..., 3] = self.azimuth_center + np.mod(azimuth - self.azimuth_center + np.pi, 2.0 * np.pi) - np.pi
        flat = blocks.reshape(mech.shape[:-2] + (n * N_LINK_PARAMS,))
        c = np.broadcast_to(np.asarray(c, dtype=float), flat.shape[:-1])
        return np.concatenate([flat, c[..., None]], axis=-1)

    def joint_log_density(self, v: np.ndarray, rows: np.ndarray | None, mech: np.ndarray | None = None) -> np.ndarray:
        """
        Coordinate densities plus feasibility and soft constraint factors.
        `mech` may pass the mechanical parameters of `v` when already known.
        """
        lp = self.log_density(v)
        if mech is None:
            mech, _ = self.to_mechanical(v)
        feasible = feasibility_mask(self.robot, mech, rows)
        soft = soft_log_factors(self.robot, mech, self.catalog.constraints)
        return np.where(feasible & np.isfinite(lp), lp + soft, -np.inf)


def catalog_log_density(catalog: PriorCatalog, robot: RobotDescription, coordinates: Sequence[float], check_poses: np.ndarray | None = None) -> float:
    compiled = CompiledCatalog(catalog, robot)
    return float(compiled.joint_log_density(np.asarray(coordinates, dtype=float), check_rows(robot, check_poses)))


class MomentPair(BaseModel):
    mu: float
    sigma: float


class EmpiricalAxis(BaseModel):
    mass: MomentPair
    com_length: MomentPair
    i_diag: MomentPair
    i_off: MomentPair
    # None means sigma equal to the robot's nominal rotor inertia
    rotor: MomentPair | None = None


class EmpiricalTable(BaseModel):
    schema_version: int = SCHEMA_VERSION
    source: str = ""
    axes: list[EmpiricalAxis]


class DonorAxis(BaseModel):
    mass: float
    com_length: float
    idiag: tuple[float, float, float]
    ioff: tuple[float, float, float]


class DonorRobot(BaseModel):
    name: str
    datasheet_mass: float
    axes: list[DonorAxis]


def _floored(values: np.ndarray, label: str, zero_mean: bool = False) -> MomentPair:
    if zero_mean:
        mu, sigma = 0.0, float(np.sqrt(np.mean(values ** 2)))
    else:
        mu, sigma = float(np.mean(values)), float(np.std(values, ddof=1))
    if sigma <= 0.0:
        floor = 0.01 * abs(mu) if mu != 0.0 else 1e-6
        logging.warning("degenerate spread for %s, flooring sigma at %g", label, floor)
        sigma = floor
    return MomentPair(mu=mu, sigma=sigma)


def empirical_prior_from_cad(robot_cad_list: Sequence[DonorRobot], target_total_mass: float) -> EmpiricalTable:
    """
    Per-axis statistics over donor robots of a similar class. Masses are
    scaled by the ratio of the target mass to the mean donor datasheet mass.
    """
    if len(robot_cad_list) < 2:
        raise ConfigurationError("empirical statistics need at least two donor robots")
    n_axes = {len(d.axes) for d in robot_cad_list}
    if len(n_axes) != 1:
        raise ConfigurationError(f"donor robots disagree on the number of axes: {sorted(n_axes)}")
    scale = target_total_mass / float(np.mean([d.datasheet_mass for d in robot_cad_list]))
    logging.info("scaling donor masses by %.4f", scale)
    axes = []
    for k in range(n_axes.pop()):
        donors = [d.axes[k] for d in robot_cad_list]
        axes.append(EmpiricalAxis(
            mass=_floored(np.array([a.mass for a in donors]) * scale, f"mass {k + 1}"),
            com_length=_floored(np.array([a.com_length for a in donors]), f"CoM length {k + 1}"),
            i_diag=_floored(np.array([a.idiag for a in donors]).ravel(), f"diagonal inertia {k + 1}"),
            i_off=_floored(np.array([a.ioff for a in donors]).ravel(), f"off-diagonal inertia {k + 1}", zero_mean=True),
        ))
    return EmpiricalTable(source=f"{len(robot_cad_list)} donor robots, mass scale {scale:.4f}", axes=axes)


def _noise_spec() -> DistributionSpec:
    return DistributionSpec.trunc_normal(0.05, 0.05, 1e-4, 1.0)


def _diffuse_link(robot: RobotDescription, k: int, polar_max: float) -> dict[str, DistributionSpec]:
    link = robot.links[k]
    radius_max = min(math.sqrt(3.0) * DIFFUSE_COM_COMPONENT_BOUND, link.com_bound)
    diag = DistributionSpec.uniform(*DIFFUSE_I_DIAG_BOUNDS)
    off = DistributionSpec.uniform(*DIFFUSE_I_OFF_BOUNDS)
    return {
        "m": DistributionSpec.uniform(0.0, robot.metadata.total_mass),
        "radius": DistributionSpec.uniform(0.0, radius_max),
        "polar": DistributionSpec.uniform(0.0, polar_max),
        "azimuth": DistributionSpec.uniform(0.0, 2.0 * math.pi),
        "Ixx": diag, "Ixy": off, "Ixz": off, "Iyy": diag, "Iyz": off, "Izz": diag,
        "J": DistributionSpec.uniform(link.nominal_rotor_inertia, 2.0 * link.nominal_rotor_inertia),
    }


def _empirical_link(robot: RobotDescription, k: int, axis: EmpiricalAxis) -> dict[str, DistributionSpec]:
    link = robot.links[k]
    radius_max = min(math.sqrt(3.0) * DIFFUSE_COM_COMPONENT_BOUND, link.com_bound)
    nominal = link.nominal_rotor_inertia
    rotor = axis.rotor or MomentPair(mu=nominal, sigma=nominal)
    diag = lognormal_from_moments(axis.i_diag.mu, axis.i_diag.sigma, b=DIFFUSE_I_DIAG_BOUNDS[1])
    off = DistributionSpec.normal(0.0, axis.i_off.sigma, *DIFFUSE_I_OFF_BOUNDS)
    return {
        "m": DistributionSpec.trunc_normal(axis.mass.mu, axis.mass.sigma, 0.0, robot.metadata.total_mass),
        "radius": DistributionSpec.trunc_normal(axis.com_length.mu, axis.com_length.sigma, 0.0, radius_max),
        "polar": DistributionSpec.uniform(0.0, 0.5 * math.pi),
        "azimuth": DistributionSpec.uniform(0.0, 2.0 * math.pi),
        "Ixx": diag, "Ixy": off, "Ixz": off, "Iyy": diag, "Iyz": off, "Izz": diag,
        "J": DistributionSpec.trunc_normal(rotor.mu, rotor.sigma, nominal, 2.0 * nominal),
    }


def _cad_link(robot: RobotDescription, k: int, params: LinkInertialParams, spread: float) -> dict[str, DistributionSpec]:
    radius, polar, azimuth = (float(x) for x in com_cartesian_to_spherical(params.r, robot.link_translation(k)))
    tensor_floor = 1e-3 * max(abs(x) for x in params.I)

    def around(mean: float, floor: float = 0.0, a: float | None = None, b: float | None = None) -> DistributionSpec:
        if spread == 0.0:
            return DistributionSpec.fixed(mean)
        return DistributionSpec.normal(mean, max(spread * abs(mean), floor), a=a, b=b)

    specs = {
        "m": around(params.m, a=0.0),
        "radius": around(radius, floor=1e-3, a=0.0, b=robot.links[k].com_bound),
        "polar": around(polar, floor=0.05, a=0.0, b=math.pi),
        "azimuth": around(azimuth, floor=0.05),
        "J": around(params.J, a=0.0),
    }
    for name, value in zip(LINK_COORDINATES[4:10], params.I):
        specs[name] = around(value, floor=tensor_floor)
    return specs


def build_prior(
    prior_type: PriorType,
    robot: RobotDescription,
    empirical_table: EmpiricalTable | None = None,
    cad_params: Sequence[LinkInertialParams] | None = None,
    cad_spread: float = CAD_SPREAD,
) -> PriorCatalog:
    n = robot.n_joints
    match prior_type:
        case PriorType.DIFFUSE:
            links = [_diffuse_link(robot, k, math.pi) for k in range(n)]
            return PriorCatalog(prior_type=prior_type, links=links, noise=_noise_spec(), com_jacobian=True)
        case PriorType.INFORMED_DIFFUSE:
            links = [_diffuse_link(robot, k, 0.5 * math.pi) for k in range(n)]
            return PriorCatalog(
                prior_type=prior_type, links=links, noise=_noise_spec(),
                constraints=["total_mass", "com_alignment"], com_jacobian=True,
            )
        case PriorType.EMPIRICAL:
            if empirical_table is None:
                raise ConfigurationError("the empirical prior needs an empirical table")
            if len(empirical_table.axes) != n:
                raise ConfigurationError(f"empirical table has {len(empirical_table.axes)} axes, robot has {n}")
            links = [_empirical_link(robot, k, axis) for k, axis in enumerate(empirical_table.axes)]
            return PriorCatalog(prior_type=prior_type, links=links, noise=_noise_spec())
        case PriorType.CAD:
            if cad_params is None:
                raise ConfigurationError("the CAD prior needs per-link CAD values")
            if len(cad_params) != n:
                raise ConfigurationError(f"{len(cad_params)} CAD links for a robot with {n} joints")
            if cad_spread < 0.0:
                raise ConfigurationError("CAD spread must not be negative")
            links = [_cad_link(robot, k, p, cad_spread) for k, p in enumerate(cad_params)]
            return PriorCatalog(prior_type=prior_type, links=links, noise=_noise_spec())
    raise ConfigurationError(f"unknown prior type {prior_type}")
