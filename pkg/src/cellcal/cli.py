"""Command-line interface: simulate | generate | estimate | experiment.

Each subcommand takes one YAML config file; a handful of flags override the
config for scripting convenience (seed, output path, trial count).  All
numeric output uses full round-trip precision so that a rerun with the same
config and seeds is byte-identical.

Exit codes: 0 success, 1 usage/config error, 2 runtime/estimation failure.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click
import yaml

from .errors import CellcalError, ConfigError, EstimationFailureError
from .estimation import EstimationProblem, EstimationResult, estimate_group
from .gp import KernelHyperparameters, save_hyperparameters
from .parameters import TARGET_PARAMS, CellParameters, default_cell, load_cell_config
from .pso import SwarmConfig
from .scenario import (
    DEFAULT_GROUP_PROFILES,
    ProfileSpec,
    TrialSpec,
    TruthSpec,
    build_profile,
    read_dataset_csv,
    run_experiment,
    truth_generate,
)
from .spme import CurrentProfile, simulate, write_trajectory_csv


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

def _load_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        with open(p) as fh:
            doc = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {p} is not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {p} must contain a key/value mapping")
    return doc


def _require(doc: dict, key: str) -> object:
    if key not in doc:
        raise ConfigError(f"config missing required key {key!r}")
    return doc[key]


def _reject_stray(doc: dict, known) -> None:
    stray = set(doc) - set(known)
    if stray:
        raise ConfigError(f"config has unknown key {sorted(stray)[0]!r}")


def _cell_from_config(doc: dict, config_path) -> CellParameters:
    """`cell:` is a path to a cell YAML, resolved against the config file."""
    if "cell" not in doc or doc["cell"] is None:
        return default_cell()
    cell_path = Path(config_path).parent / str(doc["cell"])
    if not cell_path.exists():
        raise ConfigError(f"cell file not found: {cell_path}")
    return load_cell_config(cell_path)


def _swarm_from_config(doc: dict) -> SwarmConfig:
    sub = doc.get("pso")
    if sub is None:
        return SwarmConfig()
    if not isinstance(sub, dict):
        raise ConfigError("'pso' must be a mapping")
    known = {
        "n_particles", "n_iterations", "inertia", "cognitive", "social",
        "velocity_clamp",
    }
    _reject_stray(sub, known)
    defaults = SwarmConfig()
    try:
        return SwarmConfig(
            n_particles=int(sub.get("n_particles", defaults.n_particles)),
            n_iterations=int(sub.get("n_iterations", defaults.n_iterations)),
            inertia=float(sub.get("inertia", defaults.inertia)),
            cognitive=float(sub.get("cognitive", defaults.cognitive)),
            social=float(sub.get("social", defaults.social)),
            velocity_clamp=float(sub.get("velocity_clamp", defaults.velocity_clamp)),
        )
    except ValueError as exc:
        raise ConfigError(f"bad 'pso' settings: {exc}") from exc


def _truth_from_config(doc: dict) -> TruthSpec:
    sub = doc.get("truth")
    if sub is None:
        return TruthSpec()
    if not isinstance(sub, dict):
        raise ConfigError("'truth' must be a mapping")
    return TruthSpec.from_dict(sub)


def _profile_from_config(doc: dict) -> ProfileSpec:
    sub = _require(doc, "profile")
    if not isinstance(sub, dict):
        raise ConfigError("'profile' must be a mapping")
    return ProfileSpec.from_dict(sub)


def _initial_soc(doc: dict) -> float:
    try:
        soc = float(doc.get("initial_soc", 1.0))
    except (TypeError, ValueError) as exc:
        raise ConfigError("'initial_soc' must be a number") from exc
    if not 0.0 <= soc <= 1.0:
        raise ConfigError("'initial_soc' must lie in [0, 1]")
    return soc


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

@click.group()
def main():
    """Battery cell simulation and two-objective parameter calibration."""


@main.command("simulate")
@click.argument("config", type=click.Path())
@click.option("--output", "-o", default=None, help="Trajectory CSV path (overrides config).")
def cmd_simulate(config, output):
    """Simulate a cell over a current profile and write the trajectory CSV."""
    try:
        doc = _load_config(config)
        _reject_stray(doc, {"cell", "profile", "initial_soc", "output"})
        params = _cell_from_config(doc, config)
        spec = _profile_from_config(doc)
        soc = _initial_soc(doc)
        out = output or doc.get("output")
        if out is None:
            raise ConfigError("config missing required key 'output'")
    except (ConfigError, ValueError) as exc:
        _fail(1, str(exc))
    try:
        profile = build_profile(spec, params.capacity_ah)
        traj = simulate(params, profile, soc)
    except CellcalError as exc:
        _fail(2, str(exc))
    write_trajectory_csv(out, traj)
    if traj.truncated:
        click.echo(
            f"note: trajectory truncated by the voltage window after "
            f"{len(traj)} of {len(profile)} samples", err=True,
        )
    click.echo(f"wrote {out} ({len(traj)} rows)")


@main.command("generate")
@click.argument("config", type=click.Path())
@click.option("--output", "-o", default=None, help="Dataset CSV path (overrides config).")
@click.option("--seed", type=int, default=None, help="Noise seed (overrides config).")
def cmd_generate(config, output, seed):
    """Generate a synthetic measurement dataset (CSV plus .meta.yaml sidecar)."""
    try:
        doc = _load_config(config)
        _reject_stray(doc, {"cell", "profile", "truth", "initial_soc", "seed", "output"})
        params = _cell_from_config(doc, config)
        spec = _profile_from_config(doc)
        truth = _truth_from_config(doc)
        soc = _initial_soc(doc)
        use_seed = seed if seed is not None else int(doc.get("seed", 0))
        out = output or doc.get("output")
        if out is None:
            raise ConfigError("config missing required key 'output'")
    except (ConfigError, ValueError) as exc:
        _fail(1, str(exc))
    try:
        profile = build_profile(spec, params.capacity_ah)
        ds = truth_generate(params, profile, truth, soc, use_seed)
    except CellcalError as exc:
        _fail(2, str(exc))
    ds.to_csv(out)
    click.echo(f"wrote {out} ({len(profile)} rows, seed {use_seed})")


@main.command("estimate")
@click.argument("config", type=click.Path())
@click.option("--output", "-o", default=None, help="Report YAML path (overrides config).")
@click.option("--seed", type=int, default=None, help="Optimizer seed (overrides config).")
def cmd_estimate(config, output, seed):
    """Fit a parameter group to a dataset; write report YAML and trace CSV."""
    try:
        doc = _load_config(config)
        _reject_stray(doc, {
            "cell", "dataset", "targets", "objective", "initial_soc", "bounds",
            "m_downsample", "sigma2_n_tilde", "pso", "seed", "output",
        })
        params = _cell_from_config(doc, config)
        dataset_path = Path(config).parent / str(_require(doc, "dataset"))
        if not dataset_path.exists():
            raise ConfigError(f"dataset file not found: {dataset_path}")
        targets = _require(doc, "targets")
        if not isinstance(targets, (list, tuple)) or not targets:
            raise ConfigError("'targets' must be a nonempty list of parameter names")
        for t in targets:
            if t not in TARGET_PARAMS:
                raise ConfigError(f"'targets' contains unknown parameter {t!r}")
        objective = str(doc.get("objective", "kog"))
        if objective not in ("kog", "ls"):
            raise ConfigError("'objective' must be 'kog' or 'ls'")
        bounds = doc.get("bounds") or {}
        if not isinstance(bounds, dict):
            raise ConfigError("'bounds' must be a mapping of name -> [lo, hi]")
        try:
            bounds = {str(k): (float(v[0]), float(v[1])) for k, v in bounds.items()}
        except (TypeError, ValueError, IndexError) as exc:
            raise ConfigError(f"bad 'bounds' entry: {exc}") from exc
        data = read_dataset_csv(dataset_path)
        profile = CurrentProfile.from_arrays(data["time_s"], data["current_A"])
        problem = EstimationProblem(
            targets=tuple(targets),
            profile=profile,
            y_meas=data["voltage_meas_V"],
            base_params=params,
            initial_soc=_initial_soc(doc),
            objective=objective,
            bounds=bounds,
            m_downsample=int(doc.get("m_downsample", 300)),
            sigma2_n_tilde=float(doc.get("sigma2_n_tilde", 0.1)),
            swarm=_swarm_from_config(doc),
            seed=seed if seed is not None else int(doc.get("seed", 0)),
        )
        out = Path(output or doc.get("output") or "")
        if str(out) == "":
            raise ConfigError("config missing required key 'output'")
    except (ConfigError, ValueError) as exc:
        _fail(1, str(exc))

    trace_path = out.with_name(out.stem + "_trace.csv")
    try:
        result = estimate_group(problem)
    except EstimationFailureError as exc:
        if exc.trace is not None:
            partial = EstimationResult(
                objective=problem.objective, targets=problem.targets, theta={},
                updated_params=problem.base_params, J=float("nan"),
                trace=exc.trace, mean_trace=exc.mean_trace, seed=problem.seed,
                n_evaluations=0, n_penalized=0, penalty_value=float("nan"),
                max_feasible_J=float("nan"), wall_time_s=0.0,
            )
            partial.save_trace(trace_path)
            click.echo(f"wrote partial trace to {trace_path}", err=True)
        _fail(2, str(exc))
    except CellcalError as exc:
        _fail(2, str(exc))

    result.save_report(out)
    result.save_trace(trace_path)
    written = [str(out), str(trace_path)]
    if result.objective == "kog" and result.sigma2_f > 0.0:
        hp_path = out.with_name(out.stem + "_hyperparameters.yaml")
        hp = KernelHyperparameters(
            sigma2_f=result.sigma2_f,
            length_scales=result.length_scales,
            sigma2_n_tilde=problem.sigma2_n_tilde,
        )
        save_hyperparameters(hp_path, hp, result.scaler)
        written.append(str(hp_path))
    click.echo("wrote " + ", ".join(written))
    click.echo(
        "fitted " + ", ".join(f"{k}={v:.6g}" for k, v in result.theta.items())
        + f"  (J={result.J:.6g}, {result.n_evaluations} evaluations)"
    )


@main.command("experiment")
@click.argument("config", type=click.Path())
@click.option("--output", "-o", "outdir", default=None, help="Output directory (overrides config).")
@click.option("--seed", type=int, default=None, help="Base seed (overrides config).")
@click.option("--trials", type=int, default=None, help="Trial count (overrides config).")
def cmd_experiment(config, outdir, seed, trials):
    """Run the repeated-trial calibration study; write report CSV and tables."""
    try:
        doc = _load_config(config)
        _reject_stray(doc, {
            "cell", "truth", "n_trials", "base_seed", "iterations", "error_range",
            "m_downsample", "sigma2_n_tilde", "initial_soc", "objectives",
            "profiles", "pso", "outdir",
        })
        params = _cell_from_config(doc, config)
        truth = _truth_from_config(doc)
        n_trials = trials if trials is not None else int(doc.get("n_trials", 8))
        base_seed = seed if seed is not None else int(doc.get("base_seed", 0))
        err_range = doc.get("error_range", [0.5, 1.0])
        if not isinstance(err_range, (list, tuple)) or len(err_range) != 2:
            raise ConfigError("'error_range' must be a [low, high] pair")
        objectives = doc.get("objectives", ["kog", "ls"])
        if not isinstance(objectives, (list, tuple)) or not objectives:
            raise ConfigError("'objectives' must be a nonempty list")
        profiles_doc = doc.get("profiles")
        if profiles_doc is None:
            profiles = DEFAULT_GROUP_PROFILES
        else:
            if not isinstance(profiles_doc, (list, tuple)):
                raise ConfigError("'profiles' must be a list of profile mappings")
            profiles = tuple(ProfileSpec.from_dict(d) for d in profiles_doc)
        try:
            trial = TrialSpec(
                error_low=float(err_range[0]),
                error_high=float(err_range[1]),
                iterations=int(doc.get("iterations", 3)),
                m_downsample=int(doc.get("m_downsample", 300)),
                sigma2_n_tilde=float(doc.get("sigma2_n_tilde", 0.1)),
                initial_soc=_initial_soc(doc),
                swarm=_swarm_from_config(doc),
                profiles=profiles,
                objectives=tuple(objectives),
            )
        except ValueError as exc:
            raise ConfigError(f"bad trial settings: {exc}") from exc
        out = Path(outdir or doc.get("outdir") or "")
        if str(out) == "":
            raise ConfigError("config missing required key 'outdir'")
    except (ConfigError, ValueError) as exc:
        _fail(1, str(exc))

    out.mkdir(parents=True, exist_ok=True)
    try:
        report = run_experiment(
            params, n_trials, base_seed, trial, truth,
            progress=lambda msg: click.echo(msg, err=True),
        )
    except CellcalError as exc:
        _fail(2, str(exc))

    report.to_csv(out / "report.csv")
    tables = report.render_tables()
    with open(out / "tables.txt", "w") as fh:
        fh.write(tables)
    meta = {
        "base_seed": int(base_seed),
        "n_trials": int(n_trials),
        "objectives": [str(o) for o in trial.objectives],
        "iterations": int(trial.iterations),
        "error_range": [float(trial.error_low), float(trial.error_high)],
        "truth": truth.to_dict(),
        "profiles": [ps.to_dict() for ps in trial.profiles],
        "truth_values": {k: float(v) for k, v in report.truth_values.items()},
    }
    with open(out / "meta.yaml", "w") as fh:
        yaml.safe_dump(meta, fh, sort_keys=False)
    click.echo(tables)
    click.echo(f"wrote {out / 'report.csv'}, {out / 'tables.txt'}, {out / 'meta.yaml'}")


if __name__ == "__main__":
    main()
