import functools
import logging
import math
import time
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError, model_validator
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table
from typer import Argument, Exit, Option, Typer

from bayesid.data import (
    SyntheticConfig,
    bundled_cad_params,
    bundled_empirical_table,
    bundled_robot,
    dataset_frame,
    generate_synthetic,
    load_catalog,
    load_dataset,
    load_donors,
    load_empirical_table,
    load_params,
    load_robot,
    split,
)
from bayesid.domain import (
    BayesIdError,
    ConfigurationError,
    DataValidationError,
    DiagnosticsGateError,
    LinkInertialParams,
    MeasurementDataset,
    PriorType,
    RankDeficientError,
    RobotDescription,
    params_to_array,
)
from bayesid.dynamics import condition_number, extract_base_params
from bayesid.evaluation import (
    EvalReport,
    RunMetadata,
    approach_from_draws,
    approach_from_ols,
    bp_log_frame,
    build_report,
    inertia_frame,
    interval_frame,
    ols_fit,
    pdf_frame,
    report_frame,
    tvd_frame,
)
from bayesid.inference import PriorCheck, infer, measurement_rows, prior_predictive_check, pushforward, summarize, zero_shot_predict
from bayesid.priors import PriorCatalog, build_prior, empirical_prior_from_cad
from bayesid.sampler import AdaptConfig, chain_frame
from bayesid.storage import FAILED_ESS_MARKER, ArtifactStore, UpdateResult
from bayesid.utils import log_timing, thread_count

console = Console()

app = Typer(no_args_is_help=True)


class PriorChoice(str, Enum):
    diffuse = "diffuse"
    informed = "informed"
    empirical = "empirical"
    cad = "cad"


PRIOR_TYPES = {
    PriorChoice.diffuse: PriorType.DIFFUSE,
    PriorChoice.informed: PriorType.INFORMED_DIFFUSE,
    PriorChoice.empirical: PriorType.EMPIRICAL,
    PriorChoice.cad: PriorType.CAD,
}


class RunConfig(BaseModel):
    robot: Path | None = None
    prior: PriorType
    catalog: Path | None = None
    data: Path | None = None
    synthetic: SyntheticConfig | None = None
    truth: Path | None = None
    sampler: AdaptConfig
    n_iter: int
    n_samples: int
    n_train: int
    out: Path
    seed: int
    allow_empty: bool = False

    @model_validator(mode="after")
    def one_data_source(self) -> "RunConfig":
        if self.data is not None and self.truth is not None:
            raise ValueError("give either --data or --truth for a synthetic dataset, not both")
        if self.data is None and (self.truth is None or self.synthetic is None):
            raise ValueError("give --data, or --truth for a synthetic dataset")
        if self.n_iter < 1:
            raise ValueError("--iters must be at least 1")
        return self


class ZeroShotSummary(BaseModel):
    prior_type: PriorType
    seed: int
    n_samples: int
    n_poses: int
    rejection_rate: float
    check: PriorCheck | None = None


def startup(verbose: bool = False) -> int:
    """
    Loads a `.env` file from the working directory and routes library logging
    through rich. Returns the thread budget from $BAYESID_THREADS.
    """
    load_dotenv()
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(message)s",
        handlers=[RichHandler(console=console, show_time=False, show_path=False)],
        force=True,
    )
    return thread_count()


def guarded(command: Callable) -> Callable:
    """
    Turns bayesid errors into a red message and the exit code of the error class.
    """
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except BayesIdError as e:
            console.print(f"[red]{type(e).__name__}: {e}[/red]")
            raise Exit(code=e.exit_code)
        except ValidationError as e:
            console.print(f"[red]Invalid input: {e}[/red]")
            raise Exit(code=2)
    return wrapper


@app.callback()
def main(verbose: bool = Option(False, "--verbose", "-v", help="Show progress and diagnostics")):
    """
    Bayesian identification of mechanical, base and pose-dependent inertia parameters.
    """
    try:
        startup(verbose)
    except BayesIdError as e:
        console.print(f"[red]{type(e).__name__}: {e}[/red]")
        raise Exit(code=e.exit_code)


def resolve_robot(robot: Path | None) -> RobotDescription:
    return load_robot(robot) if robot is not None else bundled_robot()


def resolve_nominal(nominal: Path | None) -> list[LinkInertialParams]:
    return load_params(nominal) if nominal is not None else bundled_cad_params()


def resolve_catalog(
    prior: PriorType,
    robot: RobotDescription,
    catalog: Path | None,
    cad: Path | None,
    empirical: Path | None,
    donors: Path | None = None,
) -> PriorCatalog:
    if catalog is not None:
        return load_catalog(catalog)
    if donors is not None and empirical is not None:
        raise ConfigurationError("give either --empirical or --donors, not both")
    if donors is not None and prior != PriorType.EMPIRICAL:
        raise ConfigurationError(f"--donors only applies to the empirical prior, not {prior.value}")
    table = None
    cad_params = None
    if prior == PriorType.EMPIRICAL:
        if donors is not None:
            table = empirical_prior_from_cad(load_donors(donors), robot.metadata.total_mass)
        else:
            table = load_empirical_table(empirical) if empirical is not None else bundled_empirical_table()
    if prior == PriorType.CAD:
        cad_params = resolve_nominal(cad)
    return build_prior(prior, robot, empirical_table=table, cad_params=cad_params)


def print_artifact_table(store: ArtifactStore):
    table = Table("artifact", "state")
    for name, result in store.written.items():
        style = None
        label = name
        if result == UpdateResult.NEW:
            style = "green"
            label = f"+ {name}"
        elif result == UpdateResult.MODIFIED:
            style = "yellow"
            label = f"~ {name}"
        table.add_row(label, result.name, style=style)
    console.print(table)


def _fmt(value: float | None) -> str:
    if value is None:
        return "-"
    return f"{value:.3f}"


def print_report(report: EvalReport):
    table = Table("approach", "stage", "MP MAE%", "MP CS", "BP MAE%", "BP CS", "RMSE% train", "RMSE% test")
    for row in report.rows:
        table.add_row(
            row.approach, row.stage,
            "indeterminable" if row.mp_mae is None and row.approach == "ols" else _fmt(row.mp_mae),
            _fmt(row.mp_cs), _fmt(row.bp_mae), _fmt(row.bp_cs), _fmt(row.rmse_train), _fmt(row.rmse_test),
        )
    console.print(table)


@app.command("gen")
@guarded
def cmd_gen(
    truth: Path = Option(..., help="Parameter set (JSON) used as ground truth"),
    robot: Optional[Path] = Option(None, help="Robot description (JSON); the bundled robot if omitted"),
    n: int = Option(147, help="Number of random poses"),
    noise_c: float = Option(0.02, help="Relative measurement noise"),
    seed: int = 0,
    out: Path = Path("."),
    name: str = "dataset.csv",
):
    """
    Generates a synthetic inertia dataset, one row per pose and axis.
    """
    robot_description = resolve_robot(robot)
    params = load_params(truth)
    dataset = generate_synthetic(robot_description, params, SyntheticConfig(n_poses=n, noise_c=noise_c, seed=seed))
    store = ArtifactStore(out)
    store.write_frame(name, dataset_frame(dataset, robot_description.n_joints))
    console.print(f"Generated {len(dataset)} measurements at {n} poses :robot:")
    print_artifact_table(store)


@app.command("zero-shot")
@guarded
def cmd_zero_shot(
    robot: Optional[Path] = None,
    prior: PriorChoice = PriorChoice.diffuse,
    catalog: Optional[Path] = Option(None, help="Prior catalog (JSON), overrides --prior"),
    cad: Optional[Path] = Option(None, help="CAD parameter set for the CAD prior"),
    empirical: Optional[Path] = Option(None, help="Empirical table for the empirical prior"),
    donors: Optional[Path] = Option(None, help="Donor robot table (CSV), empirical statistics are computed from it"),
    nominal: Optional[Path] = Option(None, help="Nominal parameters for the prior predictive check"),
    data: Optional[Path] = Option(None, help="Predict at the poses of this dataset"),
    poses: int = Option(20, help="Number of random poses when no dataset is given"),
    n_samples: int = 4000,
    seed: int = 0,
    out: Path = Path("zero_shot"),
):
    """
    Prior (zero-shot) prediction of parameters, base parameters and inertias without measurements.
    """
    robot_description = resolve_robot(robot)
    prior_catalog = resolve_catalog(PRIOR_TYPES[prior], robot_description, catalog, cad, empirical, donors)
    if data is not None:
        q = np.array(list(load_dataset(data).pose_groups().keys()), dtype=float).reshape(-1, robot_description.n_joints)
    else:
        q = np.random.default_rng([seed, 3]).uniform(-math.pi, math.pi, (poses, robot_description.n_joints))

    console.rule("Zero-shot prediction")
    base_map = extract_base_params(robot_description)
    result = zero_shot_predict(prior_catalog, robot_description, q, n_samples, np.random.default_rng(seed), base_map=base_map)
    nominal_params = resolve_nominal(nominal)
    check = prior_predictive_check(result.summary, nominal_params, base_map)

    store = ArtifactStore(out)
    store.write_frame("zero_shot_mp.csv", interval_frame(result.summary.mp, nominal=params_to_array(nominal_params).ravel()))
    store.write_frame("zero_shot_bp.csv", interval_frame(result.summary.bp, nominal=base_map.values(nominal_params)))
    store.write_frame("zero_shot_x.csv", interval_frame(result.summary.x))
    store.write_frame("plot_bp_log.csv", bp_log_frame(result.summary.bp, None, base_map.values(nominal_params)))
    store.write_document("zero_shot.json", ZeroShotSummary(
        prior_type=prior_catalog.prior_type, seed=seed, n_samples=result.n_samples,
        n_poses=q.shape[0], rejection_rate=result.rejection_rate, check=check,
    ))
    console.print(Panel(
        f"{result.n_samples} feasible draws, rejection rate {100.0 * result.rejection_rate:.2f}%\n"
        f"nominal inside 95% prior interval: MP {check.mp_inside}/{check.mp_total}, BP {check.bp_inside}/{check.bp_total}",
        title=prior_catalog.prior_type.value,
    ))
    print_artifact_table(store)


def _dataset(config: RunConfig, robot: RobotDescription) -> MeasurementDataset:
    if config.data is not None:
        return load_dataset(config.data)
    return generate_synthetic(robot, load_params(config.truth), config.synthetic)


@app.command("infer")
@guarded
def cmd_infer(
    robot: Optional[Path] = None,
    prior: PriorChoice = PriorChoice.empirical,
    catalog: Optional[Path] = Option(None, help="Prior catalog (JSON), overrides --prior"),
    cad: Optional[Path] = Option(None, help="CAD parameter set for the CAD prior"),
    empirical: Optional[Path] = Option(None, help="Empirical table for the empirical prior"),
    donors: Optional[Path] = Option(None, help="Donor robot table (CSV), empirical statistics are computed from it"),
    nominal: Optional[Path] = Option(None, help="Nominal parameters the report compares against"),
    data: Optional[Path] = Option(None, help="Measured dataset (CSV)"),
    truth: Optional[Path] = Option(None, help="Ground truth for an on-the-fly synthetic dataset"),
    n: int = Option(147, help="Synthetic poses"),
    noise_c: float = Option(0.02, help="Synthetic relative noise"),
    n_train: int = Option(75, help="Training poses, the rest is for testing"),
    iters: int = 200_000,
    burn_in: Optional[int] = None,
    n_samples: int = Option(10_000, help="Prior draws for the prior rows"),
    seed: int = 0,
    out: Path = Path("run"),
    allow_empty: bool = Option(False, help="Accept a dataset without entries and sample the prior"),
    chain_thin: int = Option(10, help="Keep every n-th iteration in chain.csv"),
    run_id: Optional[str] = None,
):
    """
    Posterior inference from inertia measurements, with report and plot data.
    """
    config = RunConfig(
        robot=robot, prior=PRIOR_TYPES[prior], catalog=catalog, data=data, truth=truth,
        synthetic=SyntheticConfig(n_poses=n, noise_c=noise_c, seed=seed) if data is None else None,
        sampler=AdaptConfig(burn_in=burn_in), n_iter=iters, n_samples=n_samples, n_train=n_train,
        out=out, seed=seed, allow_empty=allow_empty,
    )
    robot_description = resolve_robot(config.robot)
    dataset = _dataset(config, robot_description)
    dataset.check_robot(robot_description)
    if len(dataset) == 0:
        if not config.allow_empty:
            raise DataValidationError("the dataset has no entries, pass --allow-empty to sample the prior")
        train, test = dataset, dataset
    else:
        train, test = split(dataset, config.n_train, config.seed)
    nominal_params = dataset.ground_truth or resolve_nominal(nominal)
    prior_catalog = resolve_catalog(config.prior, robot_description, catalog, cad, empirical, donors)
    base_map = extract_base_params(robot_description)
    rng = np.random.default_rng(config.seed)
    conditioning = condition_number(list(train.pose_groups()), base_map) if len(train) else None
    if conditioning is not None and not math.isfinite(conditioning):
        logging.warning("the training poses do not excite every base parameter")
        conditioning = None

    console.rule(f"Prior ({prior_catalog.prior_type.value})")
    started = time.perf_counter()
    prior_result = zero_shot_predict(prior_catalog, robot_description, np.zeros((0, robot_description.n_joints)), config.n_samples, rng, base_map=base_map)
    log_timing("prior sampling", time.perf_counter() - started)

    console.rule(f"Posterior from {len(train)} measurements")
    started = time.perf_counter()
    posterior = infer(
        train, prior_catalog, robot_description, config.sampler, rng,
        n_iter=config.n_iter, predict_on=test, base_map=base_map, seed=config.seed,
    )
    log_timing(f"{config.n_iter} iterations", time.perf_counter() - started)
    ols = None
    try:
        ols = approach_from_ols(ols_fit(train, base_map), base_map, train, test)
    except RankDeficientError as e:
        logging.warning("least squares baseline skipped: %s", e)

    approach = prior_catalog.prior_type.value
    report = build_report(
        approach_from_draws(approach, "prior", prior_result.draws.mech, base_map, train, test),
        approach_from_draws(approach, "posterior", posterior.draws.mech, base_map, train, test),
        ols,
        nominal_params,
        (train, test),
        base_map,
        run_id=run_id or f"{approach}-{config.seed}",
        metadata=RunMetadata(
            seed=config.seed, n_iter=config.n_iter, n_samples=config.n_samples,
            n_train=len(train), n_test=len(test),
            acceptance_rate=posterior.chain.acceptance_rate, mean_ess=posterior.ess.mean_ess,
            min_ess=min(posterior.ess.per_parameter.values()) if posterior.ess.per_parameter else None,
            ess_failed=posterior.ess.failed, rejection_rate=prior_result.rejection_rate,
            noise_c=posterior.summary.noise.median if posterior.summary.noise else None,
            condition_number=conditioning,
        ),
    )

    nominal_mp = params_to_array(nominal_params).ravel()
    nominal_bp = base_map.values(nominal_params)
    prior_test = pushforward(base_map, prior_result.draws.mech, measurement_rows(robot_description, test), test.axes())
    store = ArtifactStore(config.out)
    store.write_frame("chain.csv", chain_frame(posterior.chain, chain_thin))
    store.write_frame("posterior_mp.csv", interval_frame(prior_result.summary.mp, posterior.summary.mp, nominal_mp))
    store.write_frame("posterior_bp.csv", interval_frame(prior_result.summary.bp, posterior.summary.bp, nominal_bp))
    if posterior.summary.noise is not None:
        store.write_frame("posterior_noise.csv", interval_frame([posterior.summary.noise]))
    store.write_frame("plot_mp_pdf.csv", pdf_frame(posterior.draws.mp_names, prior_result.draws.mp_flat(), posterior.draws.mp_flat()))
    store.write_frame("tvd_mp.csv", tvd_frame(posterior.draws.mp_names, prior_result.draws.mp_flat(), posterior.draws.mp_flat()))
    store.write_frame("plot_bp_log.csv", bp_log_frame(prior_result.summary.bp, posterior.summary.bp, nominal_bp))
    if len(test):
        store.write_frame("plot_inertia.csv", inertia_frame(
            test.inertias(), summarize(prior_test.x_names, prior_test.x), posterior.summary.x,
        ))
        store.write_frame("test.csv", dataset_frame(test, robot_description.n_joints))
        store.write_frame("train.csv", dataset_frame(train, robot_description.n_joints))
    store.write_document("report.json", report)
    store.write_frame("report.csv", report_frame([report]))
    print_report(report)
    console.print(
        f"acceptance rate {posterior.chain.acceptance_rate:.3f}, mean ESS {posterior.ess.mean_ess:.0f}"
    )

    if posterior.flagged:
        store.mark_failed_ess(posterior.ess.failed)
        print_artifact_table(store)
        raise DiagnosticsGateError(
            f"{len(posterior.ess.failed)} parameters below {config.sampler.target_min_ess:g} effective samples, see {FAILED_ESS_MARKER}"
        )
    store.clear_marker()
    print_artifact_table(store)


@app.command("evaluate")
@guarded
def cmd_evaluate(
    reports: list[Path] = Argument(..., help="Report files written by 'infer'"),
    out: Path = Path("."),
    name: str = "table.csv",
):
    """
    Merges reports into one comparison table.
    """
    loaded = []
    for path in reports:
        try:
            loaded.append(EvalReport.model_validate_json(path.read_text()))
        except FileNotFoundError:
            raise DataValidationError(f"{path}: no such file") from None
    frame = report_frame(loaded)
    store = ArtifactStore(out)
    store.write_frame(name, frame)
    for report in loaded:
        console.rule(report.run_id)
        print_report(report)
    print_artifact_table(store)
