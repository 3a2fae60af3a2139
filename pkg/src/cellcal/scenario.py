"""Synthetic calibration study: truth generation, error injection, trials.

The study mirrors a sequential three-group identification campaign: volume
fractions on a 0.5C discharge, solid diffusivities on a 5C discharge, then
electrolyte parameters on a 1C square-wave pulse.  "Truth" voltage comes from
a surrogate plant - either the nominal model plus a smooth injected
discrepancy, or a refined-discretization run of the same model - and
measurements add biased Gaussian noise.  Every random draw flows from one
base seed through named SeedSequence keys, so a whole experiment replays
byte-identically.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import CellcalError, ConfigError, SimulationError
from .estimation import EstimationProblem, sequential_estimate
from .parameters import TARGET_PARAMS, VOLUME_FRACTION_TARGETS, CellParameters
from .pso import SwarmConfig
from .spme import (
    N_ELEC_DEFAULT,
    N_RADIAL_DEFAULT,
    CurrentProfile,
    simulate,
)

GROUP_TARGETS = (("eps_s_n", "eps_s_p"), ("D_s_n", "D_s_p"), ("D_e", "eps_e"))

MODE_SPME_PLUS_DISCREPANCY = "spme_plus_discrepancy"
MODE_FINE_SPME = "fine_spme"


# ---------------------------------------------------------------------------
# current profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProfileSpec:
    """Recipe for a current profile (C-rates resolve against the cell capacity)."""

    kind: str  # "cc_discharge" | "pulse" | "rest"
    rate_c: float = 0.0
    duration_s: float = 3600.0
    dt_s: float = 1.0
    freq_hz: float | None = None

    def __post_init__(self):
        if self.kind not in ("cc_discharge", "pulse", "rest"):
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if self.duration_s <= 0.0 or self.dt_s <= 0.0:
            raise ValueError("profile duration and dt must be positive")
        if self.kind == "pulse" and (self.freq_hz is None or self.freq_hz <= 0.0):
            raise ValueError("pulse profiles need a positive freq_hz")

    def describe(self) -> str:
        if self.kind == "rest":
            return "rest"
        if self.kind == "cc_discharge":
            return f"{self.rate_c:g}C discharge"
        return f"{self.rate_c:g}C pulse ({self.freq_hz:g} Hz)"

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "rate_c": self.rate_c,
            "duration_s": self.duration_s,
            "dt_s": self.dt_s,
        }
        if self.freq_hz is not None:
            d["freq_hz"] = self.freq_hz
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProfileSpec":
        if "kind" not in d:
            raise ConfigError("profile spec missing key 'kind'")
        known = {"kind", "rate_c", "duration_s", "dt_s", "freq_hz"}
        stray = set(d) - known
        if stray:
            raise ConfigError(f"profile spec has unknown key {sorted(stray)[0]!r}")
        try:
            return cls(
                kind=str(d["kind"]),
                rate_c=float(d.get("rate_c", 0.0)),
                duration_s=float(d.get("duration_s", 3600.0)),
                dt_s=float(d.get("dt_s", 1.0)),
                freq_hz=None if d.get("freq_hz") is None else float(d["freq_hz"]),
            )
        except ValueError as exc:
            raise ConfigError(f"bad profile spec: {exc}") from exc


# default group profiles: sized to sweep the SOC window at each rate
DEFAULT_GROUP_PROFILES = (
    ProfileSpec("cc_discharge", rate_c=0.5, duration_s=7000.0),
    ProfileSpec("cc_discharge", rate_c=5.0, duration_s=650.0),
    ProfileSpec("pulse", rate_c=1.0, duration_s=3600.0, freq_hz=1.0 / 60.0),
)

# discharge fraction of each pulse period (the rest is charge at the same rate)
PULSE_DISCHARGE_DUTY = 0.6


def build_profile(spec: ProfileSpec, capacity_ah: float) -> CurrentProfile:
    """Materialize a ProfileSpec into a sampled current sequence."""
    n = int(round(spec.duration_s / spec.dt_s))
    if n < 1:
        raise ValueError("profile resolves to zero samples")
    amplitude = spec.rate_c * capacity_ah
    if spec.kind == "rest":
        currents = np.zeros(n)
    elif spec.kind == "cc_discharge":
        currents = np.full(n, amplitude)
    else:
        # Square wave alternating discharge/charge at the stated rate,
        # discharge-weighted (60/40 duty) so the state of charge drifts
        # down ~0.2C-equivalent instead of pinning at the voltage ceiling.
        # Charge-and-discharge excitation keeps the electrolyte dynamics
        # (their time scale is shorter than a half-period) responding to
        # every edge while the net solid-concentration drift stays small,
        # which is what makes this the electrolyte-group profile.
        period = 1.0 / spec.freq_hz
        phase = (np.arange(n) * spec.dt_s) % period
        currents = np.where(phase < PULSE_DISCHARGE_DUTY * period, amplitude, -amplitude)
    return CurrentProfile(currents, spec.dt_s)


# ---------------------------------------------------------------------------
# surrogate truth
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TruthSpec:
    """How the surrogate plant and its measurements are produced."""

    mode: str = MODE_SPME_PLUS_DISCREPANCY
    discrepancy_amplitude_v: float = 0.020
    noise_mean_v: float = 0.010
    noise_std_v: float = 0.010
    fine_refine: int = 3       # node-count multiplier in fine_spme mode
    fine_dt_divide: int = 5    # time-step divisor in fine_spme mode

    def __post_init__(self):
        if self.mode not in (MODE_SPME_PLUS_DISCREPANCY, MODE_FINE_SPME):
            raise ValueError(f"unknown truth mode {self.mode!r}")
        if self.noise_std_v < 0.0:
            raise ValueError("noise_std_v must be nonnegative")
        if self.fine_refine < 1 or self.fine_dt_divide < 1:
            raise ValueError("refinement factors must be >= 1")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "discrepancy_amplitude_v": self.discrepancy_amplitude_v,
            "noise_mean_v": self.noise_mean_v,
            "noise_std_v": self.noise_std_v,
            "fine_refine": self.fine_refine,
            "fine_dt_divide": self.fine_dt_divide,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TruthSpec":
        known = {
            "mode", "discrepancy_amplitude_v", "noise_mean_v", "noise_std_v",
            "fine_refine", "fine_dt_divide",
        }
        stray = set(d) - known
        if stray:
            raise ConfigError(f"truth spec has unknown key {sorted(stray)[0]!r}")
        try:
            return cls(
                mode=str(d.get("mode", MODE_SPME_PLUS_DISCREPANCY)),
                discrepancy_amplitude_v=float(d.get("discrepancy_amplitude_v", 0.020)),
                noise_mean_v=float(d.get("noise_mean_v", 0.010)),
                noise_std_v=float(d.get("noise_std_v", 0.010)),
                fine_refine=int(d.get("fine_refine", 3)),
                fine_dt_divide=int(d.get("fine_dt_divide", 5)),
            )
        except ValueError as exc:
            raise ConfigError(f"bad truth spec: {exc}") from exc


def discrepancy_voltage(soc_surf, currents, i_1c, amplitude) -> np.ndarray:
    """Smooth injected plant/model mismatch over (surface SOC, current).

    A sigmoid ramp in surface SOC scaled by a smooth bell in normalized
    current magnitude, sign(r)*|r|*exp(1 - |r|) with r = I/I_1C: zero at
    rest, peaking at the full amplitude around 1C, decaying again toward
    high rate (a mid-rate mismatch), and flipping sign with the current
    like an overpotential error would.  Both factors are smooth in the
    feature arguments the discrepancy model sees, so the per-step change
    along a profile is bounded by the argument sweep: under 0.2 mV per
    second on constant-current stretches (SOC drift only) and by the swing
    between the two phase values across an instantaneous current switch.
    """
    soc = np.asarray(soc_surf, dtype=float)
    r = np.asarray(currents, dtype=float) / i_1c
    return amplitude * expit((soc - 0.45) / 0.2) * r * np.exp(1.0 - np.abs(r))


@dataclass
class Dataset:
    """One synthetic measurement record and its pre-noise truth."""

    profile: CurrentProfile
    v_true: np.ndarray
    v_meas: np.ndarray
    initial_soc: float
    truth: TruthSpec
    seed: int

    def to_csv(self, path) -> None:
        write_dataset_csv(path, self)


def truth_generate(
    params: CellParameters,
    profile: CurrentProfile,
    truth: TruthSpec = TruthSpec(),
    initial_soc: float = 1.0,
    seed: int = 0,
) -> Dataset:
    """Simulate the surrogate plant and draw one noisy measurement record."""
    if truth.mode == MODE_FINE_SPME:
        fine_profile = CurrentProfile(
            np.repeat(profile.currents, truth.fine_dt_divide),
            profile.dt / truth.fine_dt_divide,
        )
        traj = simulate(
            params,
            fine_profile,
            initial_soc,
            n_radial=N_RADIAL_DEFAULT * truth.fine_refine,
            n_elec=N_ELEC_DEFAULT * truth.fine_refine,
        )
        if traj.truncated:
            raise SimulationError(
                "truth simulation truncated by the voltage window", step=len(traj)
            )
        v_true = traj.voltages[:: truth.fine_dt_divide].copy()
    else:
        traj = simulate(params, profile, initial_soc)
        if traj.truncated:
            raise SimulationError(
                "truth simulation truncated by the voltage window", step=len(traj)
            )
        i_1c = params.capacity_ah
        v_true = traj.voltages + discrepancy_voltage(
            traj.soc_surf, traj.currents, i_1c, truth.discrepancy_amplitude_v
        )
    rng = np.random.default_rng(seed)
    noise = truth.noise_mean_v + truth.noise_std_v * rng.standard_normal(v_true.size)
    return Dataset(
        profile=profile,
        v_true=v_true,
        v_meas=v_true + noise,
        initial_soc=initial_soc,
        truth=truth,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# dataset CSV + sidecar
# ---------------------------------------------------------------------------

DATASET_COLUMNS = ("time_s", "current_A", "voltage_true_V", "voltage_meas_V")


def _sidecar_path(path):
    from pathlib import Path

    return Path(path).with_suffix(".meta.yaml")


def write_dataset_csv(path, ds: Dataset) -> None:
    import yaml

    times = ds.profile.times
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DATASET_COLUMNS)
        for k in range(len(ds.profile)):
            writer.writerow([
                repr(float(times[k])),
                repr(float(ds.profile.currents[k])),
                repr(float(ds.v_true[k])),
                repr(float(ds.v_meas[k])),
            ])
    meta = {
        "truth": ds.truth.to_dict(),
        "noise_seed": int(ds.seed),
        "initial_soc": float(ds.initial_soc),
    }
    with open(_sidecar_path(path), "w") as fh:
        yaml.safe_dump(meta, fh, sort_keys=False)


def read_dataset_csv(path) -> dict:
    """Dataset CSV back as a dict of float arrays (meta sidecar not required)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != DATASET_COLUMNS:
            raise ValueError(f"unexpected dataset CSV header: {header}")
        rows = [[float(x) for x in row] for row in reader]
    data = np.array(rows, dtype=float).reshape(len(rows), len(DATASET_COLUMNS))
    return {name: data[:, i] for i, name in enumerate(DATASET_COLUMNS)}


# ---------------------------------------------------------------------------
# error injection and metrics
# ---------------------------------------------------------------------------

def sample_initial_errors(
    params: CellParameters,
    rng: np.random.Generator,
    targets=TARGET_PARAMS,
    low: float = 0.5,
    high: float = 1.0,
):
    """Perturb each target by a random-signed relative error in [low, high].

    Volume fractions whose positive perturbation would reach 1.0 flip to the
    negative sign (physical validity).  Returns the perturbed parameter set
    and the applied relative error per target.
    """
    if not 0.0 <= low <= high:
        raise ValueError("need 0 <= low <= high")
    updates, applied = {}, {}
    for name in targets:
        magnitude = rng.uniform(low, high)
        sign = -1.0 if rng.random() < 0.5 else 1.0
        err = sign * magnitude
        value = getattr(params, name)
        if name in VOLUME_FRACTION_TARGETS and value * (1.0 + err) >= 1.0:
            err = -magnitude
        updates[name] = value * (1.0 + err)
        applied[name] = err
    return params.with_updates(**updates), applied


def rmse(a, b) -> float:
    """Root-mean-square difference of two equal-length records."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size < 1:
        raise ValueError("rmse needs two equal-length nonempty vectors")
    return float(np.sqrt(np.mean((a - b) ** 2)))


# ---------------------------------------------------------------------------
# the repeated-trial experiment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrialSpec:
    """Knobs of one estimation trial (shared by every trial of an experiment)."""

    error_low: float = 0.5
    error_high: float = 1.0
    iterations: int = 3
    m_downsample: int = 300
    sigma2_n_tilde: float = 0.1
    initial_soc: float = 1.0
    swarm: SwarmConfig = SwarmConfig()
    profiles: tuple = DEFAULT_GROUP_PROFILES
    objectives: tuple = ("kog", "ls")

    def __post_init__(self):
        if len(self.profiles) != len(GROUP_TARGETS):
            raise ValueError("need one profile per parameter group")
        for obj in self.objectives:
            if obj not in ("kog", "ls"):
                raise ValueError(f"unknown objective {obj!r}")


@dataclass
class ObjectiveOutcome:
    objective: str
    failed: bool = False
    failure_reason: str = ""
    final_errors_pct: dict = field(default_factory=dict)
    iteration_errors_pct: list = field(default_factory=list)
    rmse_true_mv: dict = field(default_factory=dict)
    rmse_meas_mv: dict = field(default_factory=dict)


@dataclass
class TrialResult:
    index: int
    initial_errors_pct: dict
    outcomes: dict


def derive_seed(*keys) -> int:
    """Deterministic child seed from integer keys (SeedSequence hashing)."""
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


def _error_pct(value: float, truth: float) -> float:
    return 100.0 * (value - truth) / truth


def run_trial(
    truth_params: CellParameters,
    trial: TrialSpec,
    truth: TruthSpec,
    base_seed: int,
    index: int,
) -> TrialResult:
    """One perturb -> (per-objective) sequential-estimate -> score pass."""
    err_rng = np.random.default_rng(
        np.random.SeedSequence([int(base_seed), int(index), 0])
    )
    perturbed, applied = sample_initial_errors(
        truth_params, err_rng, TARGET_PARAMS, trial.error_low, trial.error_high
    )
    initial_pct = {name: 100.0 * applied[name] for name in TARGET_PARAMS}

    profiles = [build_profile(ps, truth_params.capacity_ah) for ps in trial.profiles]
    datasets = []
    for gi, prof in enumerate(profiles):
        noise_seed = derive_seed(base_seed, index, 1, gi)
        datasets.append(truth_generate(truth_params, prof, truth, trial.initial_soc, noise_seed))

    outcomes = {}
    for oi, objective in enumerate(trial.objectives):
        outcome = ObjectiveOutcome(objective=objective)
        problems = [
            EstimationProblem(
                targets=GROUP_TARGETS[gi],
                profile=profiles[gi],
                y_meas=datasets[gi].v_meas,
                base_params=perturbed,
                initial_soc=trial.initial_soc,
                objective=objective,
                m_downsample=min(trial.m_downsample, len(profiles[gi])),
                sigma2_n_tilde=trial.sigma2_n_tilde,
                swarm=trial.swarm,
                seed=derive_seed(base_seed, index, 2, oi, gi),
            )
            for gi in range(len(GROUP_TARGETS))
        ]
        try:
            results = sequential_estimate(problems, trial.iterations)
            final = results[-1].updated_params
            for name in TARGET_PARAMS:
                outcome.final_errors_pct[name] = _error_pct(
                    getattr(final, name), getattr(truth_params, name)
                )
            for res in results:
                outcome.iteration_errors_pct.append({
                    "group": res.group_index,
                    "iteration": res.iteration,
                    "errors": {
                        t: _error_pct(res.theta[t], getattr(truth_params, t))
                        for t in res.targets
                    },
                })
            for gi, prof in enumerate(profiles):
                label = trial.profiles[gi].describe()
                fit_traj = simulate(final, prof, trial.initial_soc)
                if fit_traj.truncated:
                    outcome.rmse_true_mv[label] = float("nan")
                    outcome.rmse_meas_mv[label] = float("nan")
                    continue
                outcome.rmse_true_mv[label] = 1e3 * rmse(
                    fit_traj.voltages, datasets[gi].v_true
                )
                outcome.rmse_meas_mv[label] = 1e3 * rmse(
                    fit_traj.voltages, datasets[gi].v_meas
                )
        except CellcalError as exc:
            outcome.failed = True
            outcome.failure_reason = str(exc)
        outcomes[objective] = outcome
    return TrialResult(index=index, initial_errors_pct=initial_pct, outcomes=outcomes)


@dataclass
class ExperimentReport:
    truth_values: dict
    base_seed: int
    n_trials: int
    objectives: tuple
    profile_labels: tuple
    group_targets: tuple
    trials: list

    def failure_count(self, objective: str) -> int:
        return sum(1 for tr in self.trials if tr.outcomes[objective].failed)

    def aggregate_abs_error(self, objective: str) -> dict:
        """Per-target (mean, std) of |final error %| over successful trials."""
        out = {}
        good = [tr for tr in self.trials if not tr.outcomes[objective].failed]
        for name in TARGET_PARAMS:
            vals = np.array(
                [abs(tr.outcomes[objective].final_errors_pct[name]) for tr in good]
            )
            out[name] = (
                (float(vals.mean()), float(vals.std())) if vals.size else (float("nan"),) * 2
            )
        return out

    def aggregate_rmse_true(self, objective: str) -> dict:
        out = {}
        good = [tr for tr in self.trials if not tr.outcomes[objective].failed]
        for label in self.profile_labels:
            vals = np.array(
                [tr.outcomes[objective].rmse_true_mv[label] for tr in good]
            )
            vals = vals[np.isfinite(vals)]
            out[label] = float(vals.mean()) if vals.size else float("nan")
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([
                "trial", "objective", "group", "profile", "parameter",
                "initial_error_pct", "final_error_pct",
                "rmse_true_mv", "rmse_meas_mv", "failed",
            ])
            for tr in self.trials:
                for objective in self.objectives:
                    oc = tr.outcomes[objective]
                    for gi, targets in enumerate(self.group_targets):
                        label = self.profile_labels[gi]
                        for name in targets:
                            writer.writerow([
                                tr.index,
                                objective,
                                gi + 1,
                                label,
                                name,
                                repr(float(tr.initial_errors_pct[name])),
                                "" if oc.failed else repr(float(oc.final_errors_pct[name])),
                                "" if oc.failed else repr(float(oc.rmse_true_mv[label])),
                                "" if oc.failed else repr(float(oc.rmse_meas_mv[label])),
                                int(oc.failed),
                            ])

    def render_tables(self) -> str:
        lines = []
        lines.append(
            f"Experiment: {self.n_trials} trials, base seed {self.base_seed}, "
            f"objectives {', '.join(o.upper() for o in self.objectives)}"
        )
        for objective in self.objectives:
            fails = self.failure_count(objective)
            if fails:
                lines.append(
                    f"warning: {fails} {objective.upper()} trial(s) failed and are "
                    f"excluded from aggregates"
                )
        rep = next((tr for tr in self.trials if not any(
            tr.outcomes[o].failed for o in self.objectives)), None)
        if rep is not None:
            for objective in self.objectives:
                oc = rep.outcomes[objective]
                n_iter = 1 + max(e["iteration"] for e in oc.iteration_errors_pct)
                lines.append("")
                lines.append(
                    f"Sequential estimation errors [%], trial {rep.index}, "
                    f"objective {objective.upper()}"
                )
                header = (
                    f"{'group':>5} {'profile':<22} {'parameter':<9} {'initial':>9} "
                    + " ".join(f"{'iter ' + str(i + 1):>9}" for i in range(n_iter))
                )
                lines.append(header)
                for gi, targets in enumerate(self.group_targets):
                    for name in targets:
                        cells = []
                        for it in range(n_iter):
                            entry = next(
                                e for e in oc.iteration_errors_pct
                                if e["group"] == gi and e["iteration"] == it
                            )
                            cells.append(f"{entry['errors'][name]:>9.2f}")
                        lines.append(
                            f"{gi + 1:>5} {self.profile_labels[gi]:<22} {name:<9} "
                            f"{rep.initial_errors_pct[name]:>9.1f} " + " ".join(cells)
                        )
        lines.append("")
        lines.append(
            f"Absolute final error [%] over successful trials (mean +/- std)"
        )
        lines.append(
            f"{'parameter':<9} " + " ".join(f"{o.upper():>18}" for o in self.objectives)
        )
        aggs = {o: self.aggregate_abs_error(o) for o in self.objectives}
        for name in TARGET_PARAMS:
            row = f"{name:<9} "
            for o in self.objectives:
                m, s = aggs[o][name]
                row += f"{m:>10.2f} +/- {s:<5.2f}"
            lines.append(row.rstrip())
        lines.append("")
        lines.append("Final-fit voltage RMSE vs truth [mV], mean over successful trials")
        lines.append(
            f"{'profile':<22} " + " ".join(f"{o.upper():>8}" for o in self.objectives)
        )
        rmses = {o: self.aggregate_rmse_true(o) for o in self.objectives}
        for label in self.profile_labels:
            lines.append(
                f"{label:<22} "
                + " ".join(f"{rmses[o][label]:>8.2f}" for o in self.objectives)
            )
        return "\n".join(lines) + "\n"


def run_experiment(
    truth_params: CellParameters,
    n_trials: int = 8,
    base_seed: int = 0,
    trial: TrialSpec = TrialSpec(),
    truth: TruthSpec = TruthSpec(),
    progress=None,
) -> ExperimentReport:
    """Repeated randomized trials; failures are recorded, not raised."""
    if n_trials < 1:
        raise ValueError("need at least one trial")
    trials = []
    for t in range(n_trials):
        if progress is not None:
            progress(f"trial {t + 1}/{n_trials}")
        trials.append(run_trial(truth_params, trial, truth, base_seed, t))
    return ExperimentReport(
        truth_values={name: getattr(truth_params, name) for name in TARGET_PARAMS},
        base_seed=base_seed,
        n_trials=n_trials,
        objectives=tuple(trial.objectives),
        profile_labels=tuple(ps.describe() for ps in trial.profiles),
        group_targets=GROUP_TARGETS,
        trials=trials,
    )
