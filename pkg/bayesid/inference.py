"""
Posterior assembly and prediction.

The sampler works in a rescaled space. A link whose catalog coordinates are
all free is sampled in its standard parameters (m, m*r, the tensor about the
joint origin, J), in which the apparent inertia is linear, so that the
products of mass and CoM the data pins down are straight directions; its
prior density carries the inverse volume element m^3 rho^2 sin(polar) of the
map from the catalog coordinates. Links with a Fixed coordinate sample their
free catalog coordinates (the CoM spherical). Every sampled coordinate is
shifted by its prior mean and divided by its prior standard deviation. The
noise scale c is the last coordinate.
"""
import logging
import math
from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict

from bayesid.domain import (
    MECHANICAL_NAMES,
    N_LINK_PARAMS,
    CatalogInfeasibleError,
    ContractViolation,
    DataValidationError,
    InitializationError,
    LinkInertialParams,
    MeasurementDataset,
    Pose,
    RobotDescription,
    params_to_array,
)
from bayesid.dynamics import (
    STANDARD_NAMES,
    BaseParamMap,
    apparent_inertia,
    extract_base_params,
    mechanical_from_standard,
    regressor,
    stacked_regressor,
    standard_vector,
)
from bayesid.priors import CompiledCatalog, DistributionKind, PriorCatalog, check_rows, feasibility_mask
from bayesid.sampler import AdaptConfig, ChainSamples, EssReport, check_ess_gate, metropolis_run
from bayesid.utils import parallel_map, spawn_generators, thread_count

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
MAX_INIT_DRAWS = 10_000
MAX_SUMMARY_DRAWS = 10_000
MIN_ZERO_SHOT_SAMPLES = 1000
ZERO_SHOT_CHUNKS = 8
ZERO_SHOT_CHUNK_SIZE = 2048
MAX_REJECTION_RATE = 0.999
MOMENT_DRAWS = 4000
MOMENT_SEED = 0
START_PRIOR_DRAWS = 4000
START_CANDIDATES = 2000
NOISE_ITERATIONS = 4
NOISE_PSEUDO_COUNT = 2.0
DIFFERENCE_STEP = 1e-3


class SamplingTransform:
    """
    Bijection between mechanical parameters (plus c) and the sampling space.
    """

    def __init__(self, catalog: PriorCatalog, robot: RobotDescription, moment_draws: int = MOMENT_DRAWS):
        self.compiled = CompiledCatalog(catalog, robot)
        self.robot = robot
        n = robot.n_joints
        mean, std = self.compiled.specs.moments()
        specs = catalog.specs()
        fixed = np.array([s.kind == DistributionKind.FIXED for s in specs])
        self.fixed = np.flatnonzero(fixed)
        self.fixed_values = self.compiled.specs.mu[self.fixed]
        standard = ~fixed[: n * N_LINK_PARAMS].reshape(n, N_LINK_PARAMS).any(axis=1)
        self.standard_links = np.flatnonzero(standard)

        names: list[str] = []
        standard_slots, catalog_slots, catalog_columns = [], [], []
        for k in range(n):
            if standard[k]:
                standard_slots.append(np.arange(len(names), len(names) + N_LINK_PARAMS))
                names += [f"{name}{k + 1}" for name in STANDARD_NAMES]
                continue
            for j in range(k * N_LINK_PARAMS, (k + 1) * N_LINK_PARAMS):
                if not fixed[j]:
                    catalog_slots.append(len(names))
                    catalog_columns.append(j)
                    names.append(self.compiled.names[j])
        self.noise_slot = None
        if not fixed[-1]:
            self.noise_slot = len(names)
            catalog_slots.append(len(names))
            catalog_columns.append(self.compiled.dimension - 1)
            names.append(self.compiled.names[-1])
        self.names = names
        self.standard_slots = np.array(standard_slots, dtype=int).reshape(-1, N_LINK_PARAMS)
        self.standard_columns = (self.standard_links[:, None] * N_LINK_PARAMS + np.arange(N_LINK_PARAMS)).ravel()
        self.catalog_slots = np.array(catalog_slots, dtype=int)
        self.catalog_columns = np.array(catalog_columns, dtype=int)

        self.loc = np.zeros(len(names))
        self.scale = np.ones(len(names))
        self.loc[self.catalog_slots] = mean[self.catalog_columns]
        self.scale[self.catalog_slots] = std[self.catalog_columns]
        if self.standard_links.size:
            self._standard_moments(moment_draws)

        lo = self.compiled.specs.lo[self.catalog_columns]
        hi = self.compiled.specs.hi[self.catalog_columns]
        azimuth = (self.catalog_columns < n * N_LINK_PARAMS) & (self.catalog_columns % N_LINK_PARAMS == 3)
        uniform = np.array([specs[j].kind == DistributionKind.UNIFORM for j in self.catalog_columns], dtype=bool)
        with np.errstate(invalid="ignore"):
            full_turn = np.isclose(hi - lo, 2.0 * math.pi)
        periodic = azimuth & uniform & full_turn
        self.periodic = self.catalog_slots[periodic]
        self._period_start = (lo[periodic] - self.loc[self.periodic]) / self.scale[self.periodic]
        self._period = 2.0 * math.pi / self.scale[self.periodic]

    def _standard_moments(self, size: int) -> None:
        # Monte Carlo moments of the standard parameters under the catalog, from a fixed stream
        v = self.compiled.sample_constrained(np.random.default_rng(MOMENT_SEED), size)
        mech, _ = self.compiled.to_mechanical(v)
        feasible = feasibility_mask(self.robot, mech)
        if np.count_nonzero(feasible) > size // 10:
            mech = mech[feasible]
        phi = standard_vector(self.robot, mech)[:, self.standard_links, :]
        std = phi.std(axis=0)
        self.loc[self.standard_slots] = phi.mean(axis=0)
        self.scale[self.standard_slots] = np.where(std > 0.0, std, 1.0)

    @property
    def dimension(self) -> int:
        return len(self.names)

    def parameters(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Catalog coordinates, mechanical and standard parameters of sampling points."""
        u = self.loc + self.scale * np.asarray(theta, dtype=float)
        shape = u.shape[:-1]
        n = self.robot.n_joints
        v = np.empty(shape + (self.compiled.dimension,))
        v[..., self.fixed] = self.fixed_values
        v[..., self.catalog_columns] = u[..., self.catalog_slots]
        if self.standard_links.size:
            phi_links = np.zeros(shape + (n, N_LINK_PARAMS))
            phi_links[..., 0] = 1.0
            phi_links[..., self.standard_links, :] = u[..., self.standard_slots]
            mech_links = mechanical_from_standard(self.robot, phi_links)
            v[..., self.standard_columns] = self.compiled.from_mechanical(mech_links, 0.0)[..., self.standard_columns]
        mech, _ = self.compiled.to_mechanical(v)
        if self.standard_links.size:
            mech[..., self.standard_links, :] = mech_links[..., self.standard_links, :]
        phi = standard_vector(self.robot, mech)
        if self.standard_links.size:
            phi[..., self.standard_links, :] = u[..., self.standard_slots]
        return v, mech, phi

    def coordinates(self, theta: np.ndarray) -> np.ndarray:
        return self.parameters(theta)[0]

    def log_jacobian(self, v: np.ndarray) -> np.ndarray:
        """Log density correction from catalog coordinates to standard parameters."""
        v = np.asarray(v, dtype=float)
        if not self.standard_links.size:
            return np.zeros(v.shape[:-1])
        first = self.standard_links * N_LINK_PARAMS
        m, rho, polar = v[..., first], v[..., first + 1], v[..., first + 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = -np.sum(3.0 * np.log(m) + 2.0 * np.log(rho) + np.log(np.sin(polar)), axis=-1)
        return np.where(np.isfinite(out), out, -np.inf)

    def sampling_point(self, v: np.ndarray, mech: np.ndarray | None = None) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        u = np.empty(v.shape[:-1] + (self.dimension,))
        u[..., self.catalog_slots] = v[..., self.catalog_columns]
        if self.standard_links.size:
            if mech is None:
                mech, _ = self.compiled.to_mechanical(v)
            u[..., self.standard_slots] = standard_vector(self.robot, mech)[..., self.standard_links, :]
        return (u - self.loc) / self.scale

    def forward(self, mech: np.ndarray | Sequence[LinkInertialParams], c: float | np.ndarray) -> np.ndarray:
        mech = mech if isinstance(mech, np.ndarray) else params_to_array(mech)
        return self.sampling_point(self.compiled.from_mechanical(mech, c), mech)

    def inverse(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        v, mech, _ = self.parameters(theta)
        return mech, v[..., -1]

    def wrap(self, theta: np.ndarray) -> np.ndarray:
        """Periodic azimuths mapped back into their catalog range."""
        theta = np.array(theta, dtype=float, copy=True)
        start = self._period_start
        theta[..., self.periodic] = start + np.mod(theta[..., self.periodic] - start, self._period)
        return theta


def measurement_rows(robot: RobotDescription, dataset: MeasurementDataset) -> np.ndarray:
    """Regressor row of every entry; each distinct pose is evaluated once."""
    rows = np.empty((len(dataset), robot.n_joints * len(MECHANICAL_NAMES)))
    axes = dataset.axes()
    for q, indices in dataset.pose_groups().items():
        y = regressor(robot, q)
        rows[indices] = y[axes[indices] - 1]
    return rows


def _gaussian_log_likelihood(predicted: np.ndarray, measured: np.ndarray, c: float | np.ndarray) -> np.ndarray:
    sd = np.asarray(c, dtype=float)[..., None] * measured
    z = (predicted - measured) / sd
    return np.sum(-0.5 * z * z - np.log(sd), axis=-1) - measured.shape[0] * _HALF_LOG_2PI


def log_likelihood(dataset: MeasurementDataset, params: Sequence[LinkInertialParams] | np.ndarray, c: float, robot: RobotDescription) -> float:
    """
    Gaussian likelihood with standard deviation c * mu_i around each measured
    inertia mu_i; the model inertia comes from the mass matrix diagonal.
    """
    if not c > 0.0:
        raise ContractViolation(f"noise scale must be positive, got {c}")
    measured = dataset.inertias()
    if np.any(measured <= 0.0):
        raise DataValidationError("measured inertias must be positive")
    dataset.check_robot(robot)
    predicted = np.empty(len(dataset))
    axes = dataset.axes()
    for q, indices in dataset.pose_groups().items():
        predicted[indices] = apparent_inertia(robot, params, q)[axes[indices] - 1]
    return float(_gaussian_log_likelihood(predicted, measured, c))


class Posterior:
    """
    Log posterior over the sampling space. Regressor rows of the dataset and
    of the feasibility check poses are precomputed, so one evaluation is a
    few matrix products. `log_prior`, `log_density` and `predicted` take any
    number of points along the leading axes.
    """

    def __init__(self, dataset: MeasurementDataset, catalog: PriorCatalog, robot: RobotDescription, check_poses: np.ndarray | None = None):
        dataset.check_robot(robot)
        self.robot = robot
        self.catalog = catalog
        self.transform = SamplingTransform(catalog, robot)
        self.compiled = self.transform.compiled
        self.check_rows = check_rows(robot, check_poses)
        self.measured = dataset.inertias()
        if np.any(self.measured <= 0.0):
            raise DataValidationError("measured inertias must be positive")
        self.rows = measurement_rows(robot, dataset)

    @property
    def dimension(self) -> int:
        return self.transform.dimension

    def _prior(self, v: np.ndarray, mech: np.ndarray) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            lp = self.compiled.joint_log_density(v, self.check_rows, mech=mech) + self.transform.log_jacobian(v)
        return np.where(np.isnan(lp), -np.inf, lp)

    def log_prior(self, theta: np.ndarray) -> np.ndarray:
        v, mech, _ = self.transform.parameters(theta)
        return self._prior(v, mech)

    def predicted(self, theta: np.ndarray) -> np.ndarray:
        """Model inertias of the dataset entries."""
        _, _, phi = self.transform.parameters(theta)
        return phi.reshape(phi.shape[:-2] + (-1,)) @ self.rows.T

    def log_density(self, theta: np.ndarray) -> np.ndarray:
        v, mech, phi = self.transform.parameters(theta)
        lp = self._prior(v, mech)
        if self.measured.shape[0]:
            ok = np.isfinite(lp)
            predicted = phi.reshape(phi.shape[:-2] + (-1,)) @ self.rows.T
            c = np.where(ok, v[..., -1], 1.0)
            with np.errstate(invalid="ignore", over="ignore"):
                lp = np.where(ok, lp + _gaussian_log_likelihood(predicted, self.measured, c), -np.inf)
        return lp

    def __call__(self, theta: np.ndarray) -> float:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dimension,):
            raise ContractViolation(f"expected a point of dimension {self.dimension}, got shape {theta.shape}")
        return float(self.log_density(theta))


def log_posterior(theta: np.ndarray, dataset: MeasurementDataset, catalog: PriorCatalog, robot: RobotDescription) -> float:
    return Posterior(dataset, catalog, robot)(theta)


class PredictiveSummary(BaseModel):
    target: str
    mean: float
    median: float
    lower: float
    upper: float
    count: int


def summarize(names: Sequence[str], draws: np.ndarray, level: float = 0.95) -> list[PredictiveSummary]:
    arr = np.asarray(draws, dtype=float)
    draws = arr.reshape(arr.shape[0], -1)
    tail = 50.0 * (1.0 - level)
    lower, median, upper = np.percentile(draws, [tail, 50.0, 100.0 - tail], axis=0)
    mean = draws.mean(axis=0)
    return [
        PredictiveSummary(
            target=name, mean=float(mean[j]), median=float(median[j]),
            lower=float(min(lower[j], median[j])), upper=float(max(upper[j], median[j])), count=draws.shape[0],
        )
        for j, name in enumerate(names)
    ]


def mp_names(n_joints: int) -> list[str]:
    return [f"{name}{k + 1}" for k in range(n_joints) for name in MECHANICAL_NAMES]


def x_names(axes: Sequence[int]) -> list[str]:
    return [f"entry{i + 1}_axis{a}" for i, a in enumerate(axes)]


class PredictiveDraws(BaseModel):
    """Draws pushed through to base parameters and apparent inertias."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    mech: np.ndarray
    bp: np.ndarray
    x: np.ndarray
    noise: np.ndarray | None = None
    bp_names: list[str]
    x_names: list[str]

    @property
    def mp_names(self) -> list[str]:
        return mp_names(self.mech.shape[1])

    def mp_flat(self) -> np.ndarray:
        return self.mech.reshape(self.mech.shape[0], -1)


def pushforward(base_map: BaseParamMap, mech: np.ndarray, rows: np.ndarray, axes: Sequence[int], noise: np.ndarray | None = None) -> PredictiveDraws:
    phi = standard_vector(base_map.robot, mech)
    flat = phi.reshape(phi.shape[0], -1)
    return PredictiveDraws(
        mech=mech,
        bp=flat @ base_map.combination.T,
        x=flat @ rows.T,
        noise=noise,
        bp_names=base_map.names(),
        x_names=x_names(axes),
    )


class PredictionSet(BaseModel):
    mp: list[PredictiveSummary]
    bp: list[PredictiveSummary]
    x: list[PredictiveSummary]
    noise: PredictiveSummary | None = None


def prediction_set(draws: PredictiveDraws, level: float = 0.95) -> PredictionSet:
    noise = None
    if draws.noise is not None:
        noise = summarize(["c"], draws.noise[:, None], level)[0]
    return PredictionSet(
        mp=summarize(draws.mp_names, draws.mp_flat(), level),
        bp=summarize(draws.bp_names, draws.bp, level),
        x=summarize(draws.x_names, draws.x, level) if draws.x.shape[1] else [],
        noise=noise,
    )


class InferenceResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    chain: ChainSamples
    ess: EssReport
    flagged: bool
    draws: PredictiveDraws
    summary: PredictionSet


def initial_point(posterior: Posterior, rng: np.random.Generator, max_draws: int = MAX_INIT_DRAWS) -> np.ndarray:
    """First prior draw with a finite posterior, in sampling coordinates."""
    compiled = posterior.compiled
    drawn = 0
    while drawn < max_draws:
        batch = min(1000, max_draws - drawn)
        v = compiled.sample(rng, batch)
        drawn += batch
        lp = compiled.joint_log_density(v, posterior.check_rows)
        for i in np.flatnonzero(np.isfinite(lp)):
            theta = posterior.transform.sampling_point(v[i])
            if math.isfinite(posterior(theta)):
                return theta
    raise InitializationError(f"no feasible starting point among {max_draws} prior draws")


def _linearized_update(posterior: Posterior, mean: np.ndarray, cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Gaussian prior moments updated with the model linearized at `mean` and a
    noise scale refitted to the relative residuals.
    """
    transform = posterior.transform
    d = mean.shape[0]
    measured = posterior.measured
    n = measured.shape[0]
    offsets = DIFFERENCE_STEP * np.eye(d)
    jac = ((posterior.predicted(mean + offsets) - posterior.predicted(mean - offsets)) / (2.0 * DIFFERENCE_STEP)).T
    x0 = posterior.predicted(mean)
    precision = np.linalg.pinv(cov, hermitian=True)

    specs = transform.compiled.specs
    prior_c, prior_c_std = (float(x[-1]) for x in specs.moments())
    c_lo, c_hi = max(float(specs.lo[-1]), 1e-12), float(specs.hi[-1])
    c = prior_c
    for _ in range(NOISE_ITERATIONS):
        w = 1.0 / (c * measured) ** 2
        h = precision + jac.T @ (w[:, None] * jac)
        delta = np.linalg.solve(h, jac.T @ (w * (measured - x0)))
        r = (x0 + jac @ delta - measured) / measured
        c = math.sqrt((float(r @ r) + NOISE_PSEUDO_COUNT * prior_c ** 2) / (n + NOISE_PSEUDO_COUNT))
        c = min(max(c, c_lo), c_hi)
    updated = mean + delta
    updated_cov = np.linalg.inv(h)
    updated_cov = 0.5 * (updated_cov + updated_cov.T)
    j = transform.noise_slot
    if j is not None:
        information = 2.0 * n / c ** 2 + (1.0 / prior_c_std ** 2 if prior_c_std > 0.0 else 0.0)
        updated_cov[j, :] = 0.0
        updated_cov[:, j] = 0.0
        updated_cov[j, j] = 1.0 / information / transform.scale[j] ** 2
        updated[j] = (c - transform.loc[j]) / transform.scale[j]
    logging.debug("linearized start: noise scale %.4f from %d entries", c, n)
    return updated, updated_cov


def gaussian_start(
    posterior: Posterior,
    rng: np.random.Generator,
    n_prior: int = START_PRIOR_DRAWS,
    n_candidates: int = START_CANDIDATES,
) -> tuple[np.ndarray, np.ndarray] | None:
    """
    Starting point and proposal covariance from a Gaussian approximation of
    the posterior: the prior moments of the sampling coordinates, updated
    with the linearized model when there is data. The start is the best of
    the approximation's draws and the feasible prior draws. None when no
    prior draw is feasible.
    """
    d = posterior.dimension
    if d == 0:
        return None
    theta = posterior.transform.sampling_point(posterior.compiled.sample_constrained(rng, n_prior))
    theta = theta[np.isfinite(posterior.log_prior(theta))]
    if theta.shape[0] <= d:
        return None
    mean = theta.mean(axis=0)
    cov = np.atleast_2d(np.cov(theta, rowvar=False))
    if posterior.measured.shape[0]:
        mean, cov = _linearized_update(posterior, mean, cov)
    candidates = np.vstack([mean[None], rng.multivariate_normal(mean, cov, n_candidates), theta])
    lp = posterior.log_density(candidates)
    best = int(np.argmax(lp))
    if not math.isfinite(lp[best]):
        return None
    return candidates[best], cov


def _prediction_rows(robot: RobotDescription, predict_on: MeasurementDataset) -> np.ndarray:
    predict_on.check_robot(robot)
    return measurement_rows(robot, predict_on)


def infer(
    dataset: MeasurementDataset,
    catalog: PriorCatalog,
    robot: RobotDescription,
    config: AdaptConfig,
    rng: np.random.Generator,
    n_iter: int = 200_000,
    predict_on: MeasurementDataset | None = None,
    base_map: BaseParamMap | None = None,
    check_poses: np.ndarray | None = None,
    seed: int | None = None,
    level: float = 0.95,
) -> InferenceResult:
    """
    Runs the adaptive Metropolis chain on the posterior and summarizes
    mechanical parameters, base parameters and inertias at `predict_on`
    (the dataset itself by default) from the thinned post burn-in draws.
    An empty dataset samples the prior.
    """
    posterior = Posterior(dataset, catalog, robot, check_poses)
    start = gaussian_start(posterior, rng)
    if start is None:
        init, proposal_cov = initial_point(posterior, rng), None
    else:
        init, proposal_cov = start
    transform = posterior.transform
    chain = metropolis_run(
        posterior, init, n_iter, config, rng, names=transform.names, seed=seed,
        proposal_cov=proposal_cov, wrap=transform.wrap if transform.periodic.size else None,
    )
    ess = check_ess_gate(chain, config)

    mech, c = transform.inverse(chain.thinned(MAX_SUMMARY_DRAWS))
    feasible = feasibility_mask(robot, mech, posterior.check_rows)
    if not np.all(feasible):
        raise ContractViolation(f"{int(np.count_nonzero(~feasible))} posterior draws violate feasibility")

    base_map = base_map if base_map is not None else extract_base_params(robot)
    predict_on = predict_on if predict_on is not None else dataset
    draws = pushforward(base_map, mech, _prediction_rows(robot, predict_on), predict_on.axes(), noise=c)
    return InferenceResult(chain=chain, ess=ess, flagged=not ess.passed, draws=draws, summary=prediction_set(draws, level))


class ZeroShotResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    n_samples: int
    rejection_rate: float
    draws: PredictiveDraws
    summary: PredictionSet


def _feasible_coordinates(compiled: CompiledCatalog, rows: np.ndarray, needed: int, rng: np.random.Generator, threads: int) -> tuple[np.ndarray, int]:
    def accepted(child: np.random.Generator) -> np.ndarray:
        v = compiled.sample_constrained(child, ZERO_SHOT_CHUNK_SIZE)
        mech, _ = compiled.to_mechanical(v)
        ok = feasibility_mask(compiled.robot, mech, rows) & np.isfinite(compiled.log_density(v))
        return v[ok]

    kept: list[np.ndarray] = []
    count = 0
    raw = 0
    while count < needed:
        for block in parallel_map(accepted, spawn_generators(rng, ZERO_SHOT_CHUNKS), threads):
            kept.append(block)
            count += block.shape[0]
        raw += ZERO_SHOT_CHUNKS * ZERO_SHOT_CHUNK_SIZE
        if count < needed and 1.0 - count / raw > MAX_REJECTION_RATE:
            raise CatalogInfeasibleError(
                f"catalog rejects {100.0 * (1.0 - count / raw):.3f}% of {raw} draws on feasibility"
            )
    return np.concatenate(kept), raw


def zero_shot_predict(
    catalog: PriorCatalog,
    robot: RobotDescription,
    poses: np.ndarray | Sequence[Pose],
    n_samples: int,
    rng: np.random.Generator,
    base_map: BaseParamMap | None = None,
    check_poses: np.ndarray | None = None,
    threads: int | None = None,
    level: float = 0.95,
) -> ZeroShotResult:
    """
    Predictive distributions of the parameters, base parameters and the
    inertia of every axis at `poses` from the prior alone. Draws follow the
    coordinate priors times the soft constraint factors exactly; feasible
    ones are then kept by rejection.
    """
    if n_samples < MIN_ZERO_SHOT_SAMPLES:
        raise ContractViolation(f"zero-shot prediction needs at least {MIN_ZERO_SHOT_SAMPLES} samples")
    compiled = CompiledCatalog(catalog, robot)
    rows_check = check_rows(robot, check_poses)
    threads = threads if threads is not None else thread_count()
    v, raw = _feasible_coordinates(compiled, rows_check, n_samples, rng, threads)
    rejection_rate = 1.0 - v.shape[0] / raw if raw else 0.0
    mech, _ = compiled.to_mechanical(v[:n_samples])
    logging.info("zero-shot: %d draws, feasibility rejection rate %.4f", n_samples, rejection_rate)

    q = np.array([p.q if isinstance(p, Pose) else p for p in poses], dtype=float).reshape(-1, robot.n_joints)
    rows = stacked_regressor(robot, q) if q.shape[0] else np.zeros((0, compiled.dimension - 1))
    axes = np.tile(np.arange(1, robot.n_joints + 1), q.shape[0])
    base_map = base_map if base_map is not None else extract_base_params(robot)
    draws = pushforward(base_map, mech, rows, axes)
    return ZeroShotResult(n_samples=n_samples, rejection_rate=rejection_rate, draws=draws, summary=prediction_set(draws, level))


class PriorCheck(BaseModel):
    mp_inside: int
    mp_total: int
    bp_inside: int
    bp_total: int
    mp_outside: list[str]
    bp_outside: list[str]


def prior_predictive_check(summary: PredictionSet, nominal: Sequence[LinkInertialParams], base_map: BaseParamMap) -> PriorCheck:
    """Which nominal parameters fall inside the prior intervals."""
    mp_values = params_to_array(nominal).ravel()
    bp_values = base_map.values(nominal)
    mp_out = [s.target for s, v in zip(summary.mp, mp_values) if not s.lower <= v <= s.upper]
    bp_out = [s.target for s, v in zip(summary.bp, bp_values) if not s.lower <= v <= s.upper]
    return PriorCheck(
        mp_inside=len(summary.mp) - len(mp_out), mp_total=len(summary.mp),
        bp_inside=len(summary.bp) - len(bp_out), bp_total=len(summary.bp),
        mp_outside=mp_out, bp_outside=bp_out,
    )
