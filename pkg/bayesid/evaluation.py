"""
Comparison metrics, the least squares baseline and the prior / posterior
report.
"""
import logging
import math
from typing import Literal, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict
from scipy import linalg

from bayesid.domain import (
    SCHEMA_VERSION,
    ConfigurationError,
    ContractViolation,
    LinkInertialParams,
    MeasurementDataset,
    RankDeficientError,
    UndefinedMetricError,
    params_to_array,
)
from bayesid.dynamics import BaseParamMap, stacked_condition_number, standard_vector
from bayesid.inference import PredictiveSummary, measurement_rows

APPROACH_ORDER = ("ols", "diffuse", "informed_diffuse", "empirical", "cad")
STAGE_ORDER = ("fit", "prior", "posterior")
METRICS = ("mp_mae", "mp_cs", "bp_mae", "bp_cs", "rmse_train", "rmse_test")
REPORT_COLUMNS = ("run_id", "label", "approach", "stage", *METRICS, *(f"reference_{m}" for m in METRICS))
DEFAULT_BINS = 64

Stage = Literal["fit", "prior", "posterior"]

# reference results on real measurements of a 1050 kg six-axis robot; MP are indeterminable for least squares
REFERENCE_RESULTS: dict[str, dict[str, dict[str, float]]] = {
    "ols": {
        "fit": {"bp_mae": 33.37, "bp_cs": 0.990, "rmse_train": 5.30, "rmse_test": 9.81},
    },
    "diffuse": {
        "prior": {"mp_mae": 189.83, "mp_cs": 0.605, "bp_mae": 486.62, "bp_cs": 0.979, "rmse_train": 354.69, "rmse_test": 340.86},
        "posterior": {"mp_mae": 87.54, "mp_cs": 0.847, "bp_mae": 26.42, "bp_cs": 0.991, "rmse_train": 17.42, "rmse_test": 19.23},
    },
    "informed_diffuse": {
        "prior": {"mp_mae": 189.83, "mp_cs": 0.789, "bp_mae": 502.73, "bp_cs": 0.980, "rmse_train": 366.14, "rmse_test": 338.87},
        "posterior": {"mp_mae": 83.12, "mp_cs": 0.895, "bp_mae": 21.52, "bp_cs": 0.994, "rmse_train": 13.19, "rmse_test": 14.43},
    },
    "empirical": {
        "prior": {"mp_mae": 47.98, "mp_cs": 0.953, "bp_mae": 31.24, "bp_cs": 0.977, "rmse_train": 23.06, "rmse_test": 22.98},
        "posterior": {"mp_mae": 31.06, "mp_cs": 0.957, "bp_mae": 11.55, "bp_cs": 0.998, "rmse_train": 7.27, "rmse_test": 7.65},
    },
    "cad": {
        "prior": {"mp_mae": 18.79, "mp_cs": 0.999, "bp_mae": 19.44, "bp_cs": 0.993, "rmse_train": 23.29, "rmse_test": 26.49},
        "posterior": {"mp_mae": 9.57, "mp_cs": 0.998, "bp_mae": 8.09, "bp_cs": 0.999, "rmse_train": 7.34, "rmse_test": 7.36},
    },
}


def _pair(a: Sequence[float] | np.ndarray, b: Sequence[float] | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ContractViolation(f"vectors of different length: {a.shape[0]} and {b.shape[0]}")
    return a, b


def mae_percent(a: Sequence[float] | np.ndarray, b: Sequence[float] | np.ndarray) -> float:
    """Mean absolute error of `a` relative to the mean magnitude of reference `b`."""
    a, b = _pair(a, b)
    reference = float(np.mean(np.abs(b))) if b.size else 0.0
    if reference == 0.0:
        raise UndefinedMetricError("MAE% is undefined for a zero reference")
    return 100.0 * float(np.mean(np.abs(a - b))) / reference


def cosine_similarity(a: Sequence[float] | np.ndarray, b: Sequence[float] | np.ndarray) -> float:
    a, b = _pair(a, b)
    norm = float(np.linalg.norm(a)) * float(np.linalg.norm(b))
    if norm == 0.0:
        raise UndefinedMetricError("cosine similarity is undefined for a zero vector")
    return float(np.clip(a @ b / norm, -1.0, 1.0))


def rmse_percent(pred: Sequence[float] | np.ndarray, meas: Sequence[float] | np.ndarray) -> float:
    pred, meas = _pair(pred, meas)
    scale = math.sqrt(float(np.mean(meas ** 2))) if meas.size else 0.0
    if scale == 0.0:
        raise UndefinedMetricError("RMSE% is undefined for zero measurements")
    return 100.0 * math.sqrt(float(np.mean((pred - meas) ** 2))) / scale


def _shared_edges(a: np.ndarray, b: np.ndarray, n_bins: int) -> np.ndarray:
    lo = min(float(a.min()), float(b.min()))
    hi = max(float(a.max()), float(b.max()))
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    return np.linspace(lo, hi, n_bins + 1)


def tvd(prior_draws: Sequence[float] | np.ndarray, post_draws: Sequence[float] | np.ndarray, n_bins: int = DEFAULT_BINS) -> float:
    """Total variation distance between histograms on bins spanning both sets."""
    p = np.asarray(prior_draws, dtype=float).ravel()
    q = np.asarray(post_draws, dtype=float).ravel()
    if p.size == 0 or q.size == 0:
        raise ContractViolation("TVD needs two non-empty sample sets")
    if n_bins < 2:
        raise ContractViolation("TVD needs at least two bins")
    edges = _shared_edges(p, q, n_bins)
    hp = np.histogram(p, bins=edges)[0] / p.size
    hq = np.histogram(q, bins=edges)[0] / q.size
    return 0.5 * float(np.abs(hp - hq).sum())


class ConfidenceInterval(BaseModel):
    lower: float
    upper: float
    count: int
    precision_warning: bool = False


def confidence_interval(draws: Sequence[float] | np.ndarray, level: float = 0.95) -> ConfidenceInterval:
    x = np.asarray(draws, dtype=float).ravel()
    if x.size == 0:
        raise ContractViolation("no draws")
    if not 0.0 < level <= 1.0:
        raise ContractViolation(f"level must lie in (0, 1], got {level}")
    tail = 50.0 * (1.0 - level)
    lower, upper = np.percentile(x, [tail, 100.0 - tail])
    # each tail needs at least one draw
    warn = level < 1.0 and x.size * (1.0 - level) / 2.0 < 1.0
    if warn:
        logging.warning("%d draws are too few for a %.0f%% interval", x.size, 100.0 * level)
    return ConfidenceInterval(lower=float(lower), upper=float(upper), count=int(x.size), precision_warning=bool(warn))


class OlsResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    lambda_hat: np.ndarray
    residuals: np.ndarray
    rank: int
    condition: float


def ols_fit(dataset: MeasurementDataset, base_map: BaseParamMap) -> OlsResult:
    """
    Minimum-norm least squares estimate of the base parameters. Requires the
    stacked reduced regressor to have full column rank.
    """
    rows = measurement_rows(base_map.robot, dataset)[:, base_map.independent]
    y = dataset.inertias()
    rank = int(np.linalg.matrix_rank(rows)) if rows.size else 0
    if rank < base_map.count:
        raise RankDeficientError(f"regressor rank {rank} below {base_map.count} base parameters")
    lambda_hat, _, _, _ = linalg.lstsq(rows, y)
    return OlsResult(
        lambda_hat=lambda_hat,
        residuals=y - rows @ lambda_hat,
        rank=rank,
        condition=stacked_condition_number(rows),
    )


def ols_predict(result: OlsResult, base_map: BaseParamMap, dataset: MeasurementDataset) -> np.ndarray:
    return measurement_rows(base_map.robot, dataset)[:, base_map.independent] @ result.lambda_hat


class ApproachResult(BaseModel):
    """Point predictions of one approach, the means of its draws."""
    approach: str
    stage: Stage
    mp: list[float] | None = None
    bp: list[float]
    x_train: list[float]
    x_test: list[float]


def approach_from_draws(
    approach: str,
    stage: Stage,
    mech_draws: np.ndarray,
    base_map: BaseParamMap,
    train: MeasurementDataset,
    test: MeasurementDataset,
) -> ApproachResult:
    phi = standard_vector(base_map.robot, mech_draws)
    phi_mean = phi.reshape(phi.shape[0], -1).mean(axis=0)
    return ApproachResult(
        approach=approach,
        stage=stage,
        mp=mech_draws.reshape(mech_draws.shape[0], -1).mean(axis=0).tolist(),
        bp=(base_map.combination @ phi_mean).tolist(),
        x_train=(measurement_rows(base_map.robot, train) @ phi_mean).tolist(),
        x_test=(measurement_rows(base_map.robot, test) @ phi_mean).tolist(),
    )


def approach_from_ols(result: OlsResult, base_map: BaseParamMap, train: MeasurementDataset, test: MeasurementDataset) -> ApproachResult:
    return ApproachResult(
        approach="ols",
        stage="fit",
        bp=result.lambda_hat.tolist(),
        x_train=ols_predict(result, base_map, train).tolist(),
        x_test=ols_predict(result, base_map, test).tolist(),
    )


class ReportRow(BaseModel):
    approach: str
    stage: Stage
    mp_mae: float | None = None
    mp_cs: float | None = None
    bp_mae: float | None = None
    bp_cs: float | None = None
    rmse_train: float | None = None
    rmse_test: float | None = None
    reference: dict[str, float] = {}


class RunMetadata(BaseModel):
    seed: int | None = None
    n_iter: int | None = None
    n_samples: int | None = None
    n_train: int = 0
    n_test: int = 0
    acceptance_rate: float | None = None
    mean_ess: float | None = None
    min_ess: float | None = None
    ess_failed: list[str] = []
    rejection_rate: float | None = None
    noise_c: float | None = None
    condition_number: float | None = None


class EvalReport(BaseModel):
    schema_version: int = SCHEMA_VERSION
    run_id: str
    robot: str
    rows: list[ReportRow]
    metadata: RunMetadata


def mp_group_mae(mp: np.ndarray, nominal: np.ndarray) -> float:
    """Average of the MAE% of masses, CoM, motor inertias and tensor components."""
    mp = np.asarray(mp, dtype=float).reshape(-1, 11)
    nominal = np.asarray(nominal, dtype=float).reshape(-1, 11)
    groups = (slice(0, 1), slice(1, 4), slice(10, 11), slice(4, 10))
    return float(np.mean([mae_percent(mp[:, g], nominal[:, g]) for g in groups]))


def _row(result: ApproachResult, nominal_mp: np.ndarray, nominal_bp: np.ndarray, train: MeasurementDataset, test: MeasurementDataset) -> ReportRow:
    row = ReportRow(approach=result.approach, stage=result.stage)
    if result.mp is not None:
        row.mp_mae = mp_group_mae(np.array(result.mp), nominal_mp)
        row.mp_cs = cosine_similarity(result.mp, nominal_mp)
    row.bp_mae = mae_percent(result.bp, nominal_bp)
    row.bp_cs = cosine_similarity(result.bp, nominal_bp)
    if len(train):
        row.rmse_train = rmse_percent(result.x_train, train.inertias())
    if len(test):
        row.rmse_test = rmse_percent(result.x_test, test.inertias())
    row.reference = REFERENCE_RESULTS.get(result.approach, {}).get(result.stage, {})
    return row


def build_report(
    prior_summary: ApproachResult,
    posterior_summary: ApproachResult,
    ols_result: ApproachResult | None,
    nominal_params: Sequence[LinkInertialParams],
    dataset_split: tuple[MeasurementDataset, MeasurementDataset],
    base_map: BaseParamMap,
    run_id: str = "run",
    metadata: RunMetadata | None = None,
) -> EvalReport:
    train, test = dataset_split
    nominal_mp = params_to_array(nominal_params).ravel()
    nominal_bp = base_map.values(nominal_params)
    results = [r for r in (ols_result, prior_summary, posterior_summary) if r is not None]
    rows = [_row(r, nominal_mp, nominal_bp, train, test) for r in results]
    rows.sort(key=_row_order)
    return EvalReport(
        run_id=run_id,
        robot=base_map.robot.name,
        rows=rows,
        metadata=metadata or RunMetadata(n_train=len(train), n_test=len(test)),
    )


def _row_order(row: ReportRow) -> tuple[int, int]:
    approach = APPROACH_ORDER.index(row.approach) if row.approach in APPROACH_ORDER else len(APPROACH_ORDER)
    return approach, STAGE_ORDER.index(row.stage)


def report_frame(reports: Sequence[EvalReport]) -> pd.DataFrame:
    """
    One row per approach and stage of every report, in a fixed column order.
    Approach labels occurring in several reports carry the run id.
    """
    for report in reports:
        if report.schema_version != SCHEMA_VERSION:
            raise ConfigurationError(f"report '{report.run_id}' has schema version {report.schema_version}, expected {SCHEMA_VERSION}")
    seen: dict[tuple[str, str], int] = {}
    for report in reports:
        for row in report.rows:
            seen[(row.approach, row.stage)] = seen.get((row.approach, row.stage), 0) + 1
    records = []
    for report in reports:
        for row in report.rows:
            label = row.approach if seen[(row.approach, row.stage)] == 1 else f"{row.approach} ({report.run_id})"
            record = {"run_id": report.run_id, "label": label, "approach": row.approach, "stage": row.stage}
            record.update({m: getattr(row, m) for m in METRICS})
            record.update({f"reference_{m}": row.reference.get(m) for m in METRICS})
            records.append(record)
    return pd.DataFrame.from_records(records, columns=list(REPORT_COLUMNS))


def pdf_frame(names: Sequence[str], prior_draws: np.ndarray, post_draws: np.ndarray, n_bins: int = DEFAULT_BINS) -> pd.DataFrame:
    """Histogram densities of prior and posterior per target on shared bins."""
    frames = []
    for j, name in enumerate(names):
        p, q = prior_draws[:, j], post_draws[:, j]
        edges = _shared_edges(p, q, n_bins)
        width = np.diff(edges)
        frames.append(pd.DataFrame({
            "target": name,
            "bin_left": edges[:-1],
            "bin_right": edges[1:],
            "prior_density": np.histogram(p, bins=edges)[0] / (p.size * width),
            "posterior_density": np.histogram(q, bins=edges)[0] / (q.size * width),
            "tvd": tvd(p, q, n_bins),
        }))
    return pd.concat(frames, ignore_index=True)


def tvd_frame(names: Sequence[str], prior_draws: np.ndarray, post_draws: np.ndarray, n_bins: int = DEFAULT_BINS) -> pd.DataFrame:
    return pd.DataFrame({
        "target": list(names),
        "tvd": [tvd(prior_draws[:, j], post_draws[:, j], n_bins) for j in range(len(names))],
    })


def interval_frame(
    prior: Sequence[PredictiveSummary],
    posterior: Sequence[PredictiveSummary] | None = None,
    nominal: Sequence[float] | np.ndarray | None = None,
) -> pd.DataFrame:
    frame = pd.DataFrame({
        "target": [s.target for s in prior],
        "prior_lower": [s.lower for s in prior],
        "prior_median": [s.median for s in prior],
        "prior_upper": [s.upper for s in prior],
    })
    if posterior is not None:
        frame["posterior_lower"] = [s.lower for s in posterior]
        frame["posterior_median"] = [s.median for s in posterior]
        frame["posterior_upper"] = [s.upper for s in posterior]
    if nominal is not None:
        frame.insert(1, "nominal", np.asarray(nominal, dtype=float))
    return frame


def bp_log_frame(prior: Sequence[PredictiveSummary], posterior: Sequence[PredictiveSummary] | None, nominal: np.ndarray) -> pd.DataFrame:
    """
    Base parameter intervals sorted by decreasing nominal magnitude. Bounds
    keep their sign; `magnitude` is the absolute nominal value for log axes.
    """
    frame = interval_frame(prior, posterior, nominal)
    frame.insert(2, "magnitude", frame["nominal"].abs())
    return frame.sort_values("magnitude", ascending=False, kind="stable").reset_index(drop=True)


def inertia_frame(measured: np.ndarray, prior: Sequence[PredictiveSummary], posterior: Sequence[PredictiveSummary] | None = None) -> pd.DataFrame:
    """Predicted inertia intervals against measurements, sorted by measured value."""
    frame = interval_frame(prior, posterior)
    frame.insert(1, "measured", np.asarray(measured, dtype=float))
    return frame.sort_values("measured", kind="stable").reset_index(drop=True)
