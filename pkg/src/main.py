"""
Alpha-Scaling Runner

Simulates cohorts, computes truth curves, estimates and calibrates alpha-scaling
intervention parameters. Every run writes its outputs and a manifest.json into
the output directory; a failed run writes error.json and exits nonzero.
"""

import json
import logging
from pathlib import Path
from typing import Annotated, Any, Dict, List, Optional

import pandas as pd
import typer
from pydantic import ValidationError

from .config.settings import DEFAULT_THREADS, EXIT_CODES, LOG_LEVEL
from .estimation import (CalibrationConfig, CohortIntervals, EstimationConfig, ForwardEquationEvaluator,
                         MisspecOption, MonteCarloEvaluator, NuisanceSpec, TmleEvaluator, composite_estimate,
                         composite_oracle, estimate_alpha_fixed, estimate_contrast, feasibility_report,
                         fit_nuisances, weight_diagnostics)
from .models import (CalibrationTarget, InterventionSpec, Mark, RunConfig, build_scenario, load_scenario_file,
                     preset_scenario)
from .simulation import CONTRAST_KINDS, export_cohort, forward_psi, import_cohort, mc_contrasts, mc_curve, sample_cohort
from .utils import AlphaScalingError, ConfigError, read_json, versions, write_frame, write_json

# Configure logging
logging.basicConfig(
    level=getattr(logging, LOG_LEVEL.upper(), logging.INFO),
    format='%(asctime)s [%(levelname)s] [%(name)s] %(message)s',
    handlers=[logging.StreamHandler()]
)
logger = logging.getLogger(__name__)

# Short target names accepted on the command line
KIND_ALIASES = {
    "fixed": "fixed_theta",
    "theta": "fixed_theta",
    "absolute": "absolute_delta",
    "delta": "absolute_delta",
    "relative": "relative_rho",
    "rho": "relative_rho",
    "match": "match_other_arm",
}

app = typer.Typer(help="Alpha-scaling interventions on event histories.")


class RunWorkflow:
    """One CLI run: resolve inputs, execute the subcommand step, record outputs."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.out = Path(config.out)
        self.threads = config.threads or DEFAULT_THREADS
        self.outputs: List[str] = []

    def run(self) -> List[str]:
        """Execute the configured subcommand and write the manifest."""
        steps = {
            "simulate": self.simulate,
            "truth-curve": self.truth_curve,
            "estimate": self.estimate,
            "calibrate": self.calibrate,
            "decompose": self.decompose,
            "feasibility": self.feasibility,
        }
        try:
            logger.info(f"Running '{self.config.subcommand}' into {self.out}")
            steps[self.config.subcommand]()
            self.write_manifest()
            return self.outputs
        except Exception as e:
            logger.error(f"Error in '{self.config.subcommand}' run: {str(e)}")
            raise

    def write_manifest(self) -> None:
        manifest = {
            "config": self.config.dict(),
            "versions": versions(),
            "seed": self.config.seed,
            "outputs": sorted(self.outputs),
        }
        write_json(manifest, self.out / "manifest.json")

    def _record(self, path: Path) -> None:
        self.outputs.append(path.name)

    def scenario(self):
        config = self.config
        overrides = {} if config.tau is None else {"tau": config.tau}
        if config.scenario_file:
            return load_scenario_file(config.scenario_file, **overrides)
        if config.scenario is not None:
            return build_scenario(config.scenario.copy(update=overrides))
        if config.preset:
            return preset_scenario(config.preset, **overrides)
        raise ConfigError("no scenario: pass --preset or --scenario-file", module="cli")

    def cohort(self):
        """The cohort to estimate from: an imported CSV or a fresh observational sample."""
        config = self.config
        if config.cohort:
            return import_cohort(config.cohort, tau=config.tau)
        return sample_cohort(self.scenario(), None, config.n, config.seed, threads=self.threads)

    def target(self) -> CalibrationTarget:
        config = self.config
        if config.kind is None:
            raise ConfigError("a target kind is required (--kind)", module="cli")
        kind = KIND_ALIASES.get(config.kind, config.kind)
        try:
            return CalibrationTarget(kind=kind, value=config.value, arm=config.arm)
        except ValidationError as e:
            raise ConfigError(f"invalid calibration target: {e}", module="cli") from e

    def estimation_config(self) -> EstimationConfig:
        config = self.config
        try:
            intensities = {Mark.parse(mark): MisspecOption(**option) for mark, option in config.misspec.items()}
        except (ValueError, TypeError) as e:
            raise ConfigError(f"invalid misspecification switches: {e}", module="cli") from e
        fields: Dict[str, Any] = {
            "truncate": config.truncate,
            "threads": self.threads,
            "nuisance": NuisanceSpec(intensities=intensities, propensity_kind=config.propensity_kind,
                                     threads=self.threads),
        }
        if config.grid_size:
            fields["grid_size"] = config.grid_size
        return EstimationConfig(**fields)

    def oracle_evaluator(self):
        scenario = self.scenario()
        if self.config.oracle == "exact":
            return ForwardEquationEvaluator(scenario)
        return MonteCarloEvaluator(scenario, self.config.reps, self.config.seed, self.threads)

    def tmle_evaluator(self) -> TmleEvaluator:
        config = self.estimation_config()
        cohort = self.cohort()
        nuisances = fit_nuisances(cohort, config.nuisance)
        return TmleEvaluator(CohortIntervals.from_cohort(cohort), nuisances, config)

    def simulate(self) -> None:
        """Sample a cohort (observational unless --intervene) and export it."""
        config = self.config
        scenario = self.scenario()
        intervention = InterventionSpec(arm=config.arm, alpha=config.alpha) if config.intervene else None
        cohort = sample_cohort(scenario, intervention, config.n, config.seed, threads=self.threads)
        for path in export_cohort(cohort, self.out / "cohort.csv"):
            self._record(path)

    def truth_curve(self) -> None:
        """Psi_1 and Psi_z over the alpha grid from the chosen oracle."""
        config = self.config
        scenario = self.scenario()
        if config.oracle == "exact":
            rows = []
            for alpha in config.alphas:
                values = forward_psi(scenario, InterventionSpec(arm=config.arm, alpha=alpha))
                rows.append((alpha, values[Mark.outcome(1)], 0.0, values[Mark.Z], 0.0))
        else:
            points = mc_curve(scenario, config.arm, config.alphas, config.reps, config.seed, self.threads)
            rows = [(p.alpha, p.psi1, p.mc_se_1, p.psi_z, p.mc_se_z) for p in points]
        frame = pd.DataFrame(rows, columns=["alpha", "psi1", "psi1_se", "psiz", "psiz_se"])
        self._record(write_frame(frame, self.out / "truth_curve.csv"))

    def estimate(self) -> None:
        """TMLE of Psi_x^{arm,alpha} with its influence curve and weight diagnostics."""
        config = self.config
        settings = self.estimation_config()
        cohort = self.cohort()
        nuisances = fit_nuisances(cohort, settings.nuisance)
        intervention = InterventionSpec(arm=config.arm, alpha=config.alpha)
        report = estimate_alpha_fixed(cohort, intervention, config.x, settings, nuisances)
        report.flags.extend(f"misspecified {name}: {flag}" for name, flag in nuisances.misspec_flags.items())
        self._record(write_json(report.summary(), self.out / "estimate.json"))
        eic = pd.DataFrame({"id": [path.id for path in cohort.paths], "eic": report.eic})
        self._record(write_frame(eic, self.out / "eic.csv"))
        weights = weight_diagnostics(CohortIntervals.from_cohort(cohort), nuisances.propensity, nuisances.models,
                                     config.arm, config.alphas)
        self._record(write_frame(weights, self.out / "weights.csv"))

    def calibrate(self) -> None:
        """Calibrated alpha and Psi_1 at it, with the search trace."""
        config = self.config
        calibration = self.target()
        settings = CalibrationConfig(estimation=self.estimation_config(), h=config.h)
        if config.mode == "oracle":
            report = composite_oracle(self.oracle_evaluator(), calibration, settings)
        else:
            cohort = self.cohort()
            nuisances = fit_nuisances(cohort, settings.estimation.nuisance)
            report = composite_estimate(cohort, calibration, settings, nuisances)
        self._record(write_json(report.dict(), self.out / "composite.json"))
        trace = pd.DataFrame([(s.alpha, s.psi_z, s.se) for s in report.trace], columns=["alpha", "psi_z", "se"])
        self._record(write_frame(trace, self.out / "search_trace.csv"))

    def decompose(self) -> None:
        """Outcome contrasts at a fixed alpha, or the indirect/direct split of a match_other_arm calibration."""
        config = self.config
        kind = config.kind or "total_joint"
        if KIND_ALIASES.get(kind, kind) == "match_other_arm":
            self.calibrate()
            return
        if kind not in CONTRAST_KINDS:
            raise ConfigError(f"unknown decomposition '{kind}'; choose from {CONTRAST_KINDS + ('match',)}",
                              module="cli")
        if config.mode == "oracle" and config.oracle == "mc":
            result = mc_contrasts(self.scenario(), kind, config.alpha, config.reps, config.seed, config.arm,
                                  self.threads)
        elif config.mode == "oracle":
            result = estimate_contrast(self.oracle_evaluator(), kind, config.alpha, config.arm)
        else:
            result = estimate_contrast(self.tmle_evaluator(), kind, config.alpha, config.arm)
        self._record(write_json(result.dict(), self.out / "contrast.json"))

    def feasibility(self) -> None:
        """L^a proxy, target margin and the auxiliary curve; no calibration is attempted."""
        calibration = self.target()
        evaluator = self.oracle_evaluator() if self.config.mode == "oracle" else self.tmle_evaluator()
        report = feasibility_report(evaluator, calibration)
        self._record(write_json(report.dict(), self.out / "feasibility.json"))
        curve = pd.DataFrame([(s.alpha, s.psi_z, s.se) for s in report.curve], columns=["alpha", "psi_z", "se"])
        self._record(write_frame(curve, self.out / "feasibility_curve.csv"))


def _write_error(out: Path, payload: Dict[str, Any]) -> None:
    try:
        write_json(payload, out / "error.json")
    except OSError as e:
        logger.error(f"Could not write error.json: {str(e)}")


def run(config: RunConfig) -> int:
    """Execute one run; returns the process exit status."""
    out = Path(config.out)
    if config.subcommand == "replay":
        if not config.manifest:
            _write_error(out, ConfigError("replay needs --manifest", module="cli").to_dict())
            return EXIT_CODES["config"]
        try:
            echoed = read_json(config.manifest)["config"]
            echoed["out"] = config.out
            config = RunConfig(**echoed)
        except (OSError, KeyError, ValueError) as e:
            _write_error(out, ConfigError(f"cannot replay {config.manifest}: {e}", module="cli").to_dict())
            return EXIT_CODES["config"]
        logger.info(f"Replaying '{config.subcommand}' from {out}")
    try:
        RunWorkflow(config).run()
    except AlphaScalingError as e:
        _write_error(out, e.to_dict())
        return EXIT_CODES[e.exit_key]
    except ValidationError as e:
        _write_error(out, ConfigError(str(e), module="cli").to_dict())
        return EXIT_CODES["config"]
    except Exception as e:
        _write_error(out, {"error": type(e).__name__, "module": "cli", "message": str(e)})
        return EXIT_CODES["internal"]
    return EXIT_CODES["ok"]


def _parse_arm(text: Optional[str]) -> Optional[int]:
    if text is None or text.strip().lower() in ("", "none"):
        return None
    if text.strip() not in ("0", "1"):
        raise typer.BadParameter(f"arm must be 0, 1 or none, got '{text}'")
    return int(text)


def _parse_alphas(text: Optional[str]) -> List[float]:
    if not text:
        return [1.0]
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise typer.BadParameter(f"alphas must be a comma-separated list of numbers, got '{text}'")


def _execute(out: str, **fields: Any) -> None:
    try:
        config = RunConfig(out=out, **fields)
    except ValidationError as e:
        _write_error(Path(out), ConfigError(str(e), module="cli").to_dict())
        raise typer.Exit(EXIT_CODES["config"])
    raise typer.Exit(run(config))


Preset = Annotated[Optional[str], typer.Option("--preset", help="example1, example2 or example3")]
ScenarioFile = Annotated[Optional[str], typer.Option("--scenario-file", help="JSON or TOML scenario")]
Arm = Annotated[Optional[str], typer.Option("--arm", help="0, 1 or none")]
Alpha = Annotated[float, typer.Option("--alpha", min=0.0)]
Seed = Annotated[int, typer.Option("--seed")]
Reps = Annotated[int, typer.Option("--reps", min=1, help="Monte Carlo replicates")]
N = Annotated[int, typer.Option("--n", min=2, help="Cohort size when no --cohort is given")]
CohortFile = Annotated[Optional[str], typer.Option("--cohort", help="Cohort CSV (manifest read from .json next to it)")]
Tau = Annotated[Optional[float], typer.Option("--tau")]
GridSize = Annotated[Optional[int], typer.Option("--grid-size", min=2)]
Truncate = Annotated[Optional[float], typer.Option("--truncate", help="Cap on clever weights")]
Threads = Annotated[Optional[int], typer.Option("--threads", min=1, help="Worker cap (default ALPHA_SCALING_THREADS)")]
Mode = Annotated[str, typer.Option("--mode", help="estimation or oracle")]
Oracle = Annotated[str, typer.Option("--oracle", help="mc or exact")]
Kind = Annotated[Optional[str], typer.Option("--kind")]
Value = Annotated[Optional[float], typer.Option("--value", help="theta, delta or rho")]
Out = Annotated[str, typer.Option("--out", help="Output directory")]


@app.command("simulate")
def simulate_command(preset: Preset = None, scenario_file: ScenarioFile = None, arm: Arm = None,
                     alpha: Alpha = 1.0,
                     intervene: Annotated[bool, typer.Option("--intervene/--observational")] = False,
                     n: N = 500, seed: Seed = 1, tau: Tau = None, threads: Threads = None, out: Out = "out"):
    """Sample a cohort and write cohort.csv with its manifest."""
    _execute(out, subcommand="simulate", preset=preset, scenario_file=scenario_file, arm=_parse_arm(arm),
             alpha=alpha, intervene=intervene, n=n, seed=seed, tau=tau, threads=threads)


@app.command("truth-curve")
def truth_curve_command(preset: Preset = None, scenario_file: ScenarioFile = None, arm: Arm = None,
                        alphas: Annotated[Optional[str], typer.Option("--alphas", help="e.g. 0.25,0.5,1,2")] = None,
                        reps: Reps = 100_000, seed: Seed = 1, oracle: Oracle = "mc", tau: Tau = None,
                        threads: Threads = None, out: Out = "out"):
    """Psi_1 and Psi_z over an alpha grid (truth_curve.csv)."""
    _execute(out, subcommand="truth-curve", preset=preset, scenario_file=scenario_file, arm=_parse_arm(arm),
             alphas=_parse_alphas(alphas), reps=reps, seed=seed, oracle=oracle, tau=tau, threads=threads)


@app.command("estimate")
def estimate_command(cohort: CohortFile = None, preset: Preset = None, scenario_file: ScenarioFile = None,
                     arm: Arm = None, alpha: Alpha = 1.0,
                     x: Annotated[str, typer.Option("--x", help="outcome1 or z")] = "outcome_1",
                     n: N = 500, seed: Seed = 1, tau: Tau = None, grid_size: GridSize = None,
                     truncate: Truncate = None,
                     propensity: Annotated[str, typer.Option("--propensity", help="logistic or constant")] = "logistic",
                     misspec: Annotated[Optional[str], typer.Option("--misspec", help="JSON: {mark: {drop, fix_nu, scale}}")] = None,
                     weight_alphas: Annotated[Optional[str], typer.Option("--weight-alphas")] = None,
                     threads: Threads = None, out: Out = "out"):
    """TMLE of Psi_x at a fixed alpha (estimate.json, eic.csv, weights.csv)."""
    try:
        switches = json.loads(misspec) if misspec else {}
    except ValueError:
        raise typer.BadParameter(f"--misspec is not valid JSON: {misspec}")
    alphas = _parse_alphas(weight_alphas) if weight_alphas else [alpha]
    _execute(out, subcommand="estimate", cohort=cohort, preset=preset, scenario_file=scenario_file,
             arm=_parse_arm(arm), alpha=alpha, alphas=alphas, x=x, n=n, seed=seed, tau=tau,
             grid_size=grid_size, truncate=truncate, propensity_kind=propensity, misspec=switches, threads=threads)


@app.command("calibrate")
def calibrate_command(kind: Kind = None, value: Value = None,
                      theta: Annotated[Optional[float], typer.Option("--theta")] = None,
                      delta: Annotated[Optional[float], typer.Option("--delta")] = None,
                      rho: Annotated[Optional[float], typer.Option("--rho")] = None,
                      arm: Arm = None, mode: Mode = "estimation", oracle: Oracle = "mc",
                      cohort: CohortFile = None, preset: Preset = None, scenario_file: ScenarioFile = None,
                      n: N = 500, reps: Reps = 100_000, seed: Seed = 1, tau: Tau = None, grid_size: GridSize = None,
                      h: Annotated[Optional[float], typer.Option("--h", help="Derivative step")] = None,
                      threads: Threads = None, out: Out = "out"):
    """Calibrated alpha and Psi_1 at it (composite.json, search_trace.csv)."""
    value = next((v for v in (value, theta, delta, rho) if v is not None), None)
    _execute(out, subcommand="calibrate", kind=kind, value=value, arm=_parse_arm(arm), mode=mode, oracle=oracle,
             cohort=cohort, preset=preset, scenario_file=scenario_file, n=n, reps=reps, seed=seed, tau=tau,
             grid_size=grid_size, h=h, threads=threads)


@app.command("decompose")
def decompose_command(kind: Kind = "total_joint", alpha: Alpha = 1.0, arm: Arm = None, mode: Mode = "estimation",
                      oracle: Oracle = "mc", cohort: CohortFile = None, preset: Preset = None,
                      scenario_file: ScenarioFile = None, n: N = 500, reps: Reps = 100_000, seed: Seed = 1,
                      tau: Tau = None, grid_size: GridSize = None, threads: Threads = None, out: Out = "out"):
    """Outcome contrasts (overall, fixed_arm, between_arm, total_joint) or the match-arm split."""
    _execute(out, subcommand="decompose", kind=kind, alpha=alpha, arm=_parse_arm(arm), mode=mode, oracle=oracle,
             cohort=cohort, preset=preset, scenario_file=scenario_file, n=n, reps=reps, seed=seed, tau=tau,
             grid_size=grid_size, threads=threads)


@app.command("feasibility")
def feasibility_command(kind: Kind = None, value: Value = None, arm: Arm = None, mode: Mode = "estimation",
                        oracle: Oracle = "mc", cohort: CohortFile = None, preset: Preset = None,
                        scenario_file: ScenarioFile = None, n: N = 500, reps: Reps = 100_000, seed: Seed = 1,
                        tau: Tau = None, threads: Threads = None, out: Out = "out"):
    """L^a proxy, target margin and weight extremes (feasibility.json)."""
    _execute(out, subcommand="feasibility", kind=kind, value=value, arm=_parse_arm(arm), mode=mode, oracle=oracle,
             cohort=cohort, preset=preset, scenario_file=scenario_file, n=n, reps=reps, seed=seed, tau=tau,
             threads=threads)


@app.command("replay")
def replay_command(manifest: Annotated[str, typer.Option("--manifest", help="manifest.json of an earlier run")],
                   out: Out = "replay"):
    """Re-run the configuration echoed in a manifest."""
    _execute(out, subcommand="replay", manifest=manifest)


def main() -> None:
    app()


if __name__ == "__main__":
    main()
