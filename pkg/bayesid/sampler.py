"""
Adaptive Metropolis sampling and chain diagnostics.

The proposal covariance starts as `initial_step`² times the identity, or as a
supplied covariance estimate, and is replaced, from `adapt_start` on, by a
scaled and regularized estimate of the chain covariance recomputed every
`adapt_interval` iterations from running moment sums. A supplied estimate
stays in the mix with the weight of `seed_weight` draws. With a
`target_acceptance` a global log step factor follows the acceptance rate of
each block with a decaying gain.
"""
import logging
import math
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from bayesid.domain import ContractViolation, InitializationError

LogTarget = Callable[[np.ndarray], float]
Wrap = Callable[[np.ndarray], np.ndarray]


class AdaptConfig(BaseModel):
    burn_in: int | None = Field(default=None, ge=0)
    adapt_start: int = Field(default=1000, ge=1)
    adapt_interval: int = Field(default=100, ge=1)
    epsilon: float = Field(default=1e-6, gt=0.0)
    scale: float | None = Field(default=None, gt=0.0)
    initial_step: float = Field(default=0.1, ge=0.0)
    target_min_ess: float = Field(default=100.0, ge=0.0)
    target_acceptance: float | None = Field(default=0.234, gt=0.0, lt=1.0)
    seed_weight: int = Field(default=10_000, ge=0)

    def burn_in_for(self, n_iter: int) -> int:
        return self.burn_in if self.burn_in is not None else n_iter // 5

    def scale_for(self, dimension: int) -> float:
        return self.scale if self.scale is not None else 2.38 ** 2 / dimension


class ChainSamples(BaseModel):
    """
    Chain states after each iteration (the initial state is not included).
    Rejected proposals repeat the previous state.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    draws: np.ndarray
    log_target: np.ndarray
    names: list[str]
    accepted: int = 0
    burn_in: int = 0
    seed: int | None = None
    adaptations: list[int] = []

    @staticmethod
    def from_array(draws: np.ndarray, names: Sequence[str] | None = None, burn_in: int = 0) -> "ChainSamples":
        draws = np.asarray(draws, dtype=float)
        if draws.ndim == 1:
            draws = draws[:, None]
        names = list(names) if names is not None else [f"x{j + 1}" for j in range(draws.shape[1])]
        return ChainSamples(draws=draws, log_target=np.zeros(draws.shape[0]), names=names, burn_in=burn_in)

    @property
    def n_iter(self) -> int:
        return self.draws.shape[0]

    @property
    def dimension(self) -> int:
        return self.draws.shape[1]

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.n_iter if self.n_iter else 0.0

    def retained(self) -> np.ndarray:
        return self.draws[self.burn_in:]

    def thinned(self, max_draws: int) -> np.ndarray:
        """At most `max_draws` evenly spaced retained draws."""
        kept = self.retained()
        if kept.shape[0] <= max_draws:
            return kept
        index = np.linspace(0, kept.shape[0] - 1, max_draws).round().astype(int)
        return kept[index]


def _cholesky(cov: np.ndarray, t: int) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as e:
        raise ContractViolation(f"proposal covariance not positive definite at iteration {t}") from e


def metropolis_run(
    log_target: LogTarget,
    init: Sequence[float] | np.ndarray,
    n_iter: int,
    config: AdaptConfig,
    rng: np.random.Generator,
    names: Sequence[str] | None = None,
    seed: int | None = None,
    proposal_cov: np.ndarray | None = None,
    wrap: Wrap | None = None,
) -> ChainSamples:
    """
    Random walk Metropolis with Haario-type adaptation. `proposal_cov` is an
    estimate of the target covariance to start from; with it the moment sums
    are restarted halfway through the burn-in so that the transient towards
    the bulk of the target does not inflate the estimate. `wrap` maps
    proposals back into the range of periodic coordinates.
    """
    if n_iter < 1:
        raise ContractViolation("n_iter must be at least 1")
    current = np.array(init, dtype=float).reshape(-1)
    d = current.shape[0]
    current_lp = float(log_target(current))
    if not math.isfinite(current_lp):
        raise InitializationError("log target is not finite at the initial point")

    scale = config.scale_for(d)
    seed_cov = None
    if proposal_cov is not None:
        seed_cov = np.asarray(proposal_cov, dtype=float)
        if seed_cov.shape != (d, d):
            raise ContractViolation(f"proposal covariance of shape {seed_cov.shape} for dimension {d}")
        seed_cov = 0.5 * (seed_cov + seed_cov.T)
        chol = _cholesky(scale * (seed_cov + config.epsilon * np.eye(d)), 0)
    else:
        chol = config.initial_step * np.eye(d)
    restart = config.burn_in_for(n_iter) // 2 if seed_cov is not None else 0
    log_lambda = 0.0
    draws = np.empty((n_iter, d))
    lps = np.empty(n_iter)
    # moment sums about the initial point
    anchor = current.copy()
    s1 = np.zeros(d)
    s2 = np.zeros((d, d))
    window = 0
    accepted = 0
    adaptations: list[int] = []

    t = 0
    while t < n_iter:
        block = min(config.adapt_interval, n_iter - t)
        steps = rng.standard_normal((block, d)) @ chol.T
        log_u = -rng.standard_exponential(block)
        alpha = 0.0
        for i in range(block):
            proposal = current + steps[i]
            if wrap is not None:
                proposal = wrap(proposal)
            proposal_lp = float(log_target(proposal))
            log_ratio = proposal_lp - current_lp
            # NaN compares false and is rejected
            if log_ratio == log_ratio:
                alpha += math.exp(min(0.0, log_ratio))
            if log_u[i] <= log_ratio:
                current = proposal
                current_lp = proposal_lp
                accepted += 1
            draws[t + i] = current
            lps[t + i] = current_lp
        if restart and t < restart <= t + block:
            anchor = current.copy()
            s1[:] = 0.0
            s2[:] = 0.0
            window = 0
        else:
            centred = draws[t:t + block] - anchor
            s1 += centred.sum(axis=0)
            s2 += centred.T @ centred
            window += block
        t += block
        if t >= config.adapt_start and t < n_iter and window > 0:
            if config.target_acceptance is not None:
                gain = (len(adaptations) + 1) ** -0.6
                log_lambda += gain * (alpha / block - config.target_acceptance)
            mean = s1 / window
            cov = s2 / window - np.outer(mean, mean)
            cov = 0.5 * (cov + cov.T)
            if seed_cov is not None:
                cov = (config.seed_weight * seed_cov + window * cov) / (config.seed_weight + window)
            chol = _cholesky(scale * math.exp(log_lambda) * (cov + config.epsilon * np.eye(d)), t)
            adaptations.append(t)

    logging.info("chain of %d iterations, acceptance rate %.3f, step factor %.3f", n_iter, accepted / n_iter, math.exp(log_lambda))
    return ChainSamples(
        draws=draws,
        log_target=lps,
        names=list(names) if names is not None else [f"x{j + 1}" for j in range(d)],
        accepted=accepted,
        burn_in=min(config.burn_in_for(n_iter), n_iter - 1),
        seed=seed,
        adaptations=adaptations,
    )


def _series(chain: ChainSamples, param_index: int) -> np.ndarray:
    if not 0 <= param_index < chain.dimension:
        raise ContractViolation(f"parameter index {param_index} outside [0, {chain.dimension})")
    return chain.retained()[:, param_index]


def autocovariance(chain: ChainSamples, param_index: int, lag: int) -> float:
    x = _series(chain, param_index)
    n = x.shape[0]
    if not 0 <= lag < n:
        raise ContractViolation(f"lag {lag} outside [0, {n})")
    centred = x - x.mean()
    return float(centred[: n - lag] @ centred[lag:] / n)


def _autocorrelation(x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    centred = x - x.mean()
    spectrum = np.fft.rfft(centred, 2 * n)
    acov = np.fft.irfft(spectrum * np.conj(spectrum))[:n] / n
    return acov / acov[0]


class EffectiveSampleSize(BaseModel):
    value: float
    degenerate: bool = False


def effective_sample_size(chain: ChainSamples, param_index: int) -> EffectiveSampleSize:
    """
    ESS with autocorrelations truncated by Geyer's initial positive sequence:
    pair sums rho(2m) + rho(2m+1) are accumulated while they stay positive.
    """
    x = _series(chain, param_index)
    n = x.shape[0]
    if n < 10:
        raise ContractViolation("ESS needs at least 10 retained draws")
    if np.ptp(x) == 0.0:
        return EffectiveSampleSize(value=0.0, degenerate=True)
    rho = _autocorrelation(x)
    pairs = rho[: 2 * (n // 2)].reshape(-1, 2).sum(axis=1)
    negative = np.flatnonzero(pairs <= 0.0)
    stop = negative[0] if negative.size else pairs.shape[0]
    tau = -1.0 + 2.0 * float(pairs[:stop].sum())
    return EffectiveSampleSize(value=n / max(tau, 1.0 / n))


class EssReport(BaseModel):
    per_parameter: dict[str, float]
    failed: list[str]
    mean_ess: float
    target_min_ess: float

    @property
    def passed(self) -> bool:
        return not self.failed


def check_ess_gate(chain: ChainSamples, config: AdaptConfig) -> EssReport:
    per_parameter = {}
    for j, name in enumerate(chain.names):
        per_parameter[name] = effective_sample_size(chain, j).value
    failed = [name for name, value in per_parameter.items() if value < config.target_min_ess]
    mean_ess = float(np.mean(list(per_parameter.values()))) if per_parameter else 0.0
    if failed:
        logging.warning("%d parameters below %g effective samples: %s", len(failed), config.target_min_ess, ", ".join(failed))
    return EssReport(per_parameter=per_parameter, failed=failed, mean_ess=mean_ess, target_min_ess=config.target_min_ess)


def chain_frame(chain: ChainSamples, thin: int = 1) -> pd.DataFrame:
    """Chain dump with iteration number, coordinates and log target."""
    index = np.arange(0, chain.n_iter, max(1, thin))
    frame = pd.DataFrame(chain.draws[index], columns=chain.names)
    frame.insert(0, "iteration", index + 1)
    frame["log_target"] = chain.log_target[index]
    return frame
