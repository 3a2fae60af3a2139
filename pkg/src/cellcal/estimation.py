"""Parameter estimation objectives and drivers.

Two objectives over the same downsampled residual vector eps = y_meas -
y_model:

* ``ls``  - plain least squares, J = eps' eps.
* ``kog`` - the profiled marginal-likelihood objective of Kennedy-O'Hagan
  style discrepancy calibration, J = |Phi_n|^(1/N) * eps' Phi_n^-1 eps, with
  Phi_n = Phi + sigma2_n_tilde * I the unit-signal-variance covariance of a
  squared-exponential discrepancy model over the features [I, SOC_surf,
  SOC_bulk, c_e,n].  The signal variance is profiled out analytically
  (sigma2_f_hat = eps' Phi_n^-1 eps / N), so the search space is only the
  physical targets plus one length scale per feature.

Minimizing J is equivalent to maximizing the profiled log-likelihood:
logL = -(N/2) * (1 + log(2 pi J / N)).
"""

from __future__ import annotations

import csv
import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import EstimationFailureError, IllConditionedError, SimulationError
from .gp import FeatureScaler, build_phi_n, chol_unit
from .parameters import (
    DEFAULT_SEARCH_BOUNDS,
    LOG_SCALE_TARGETS,
    TARGET_PARAMS,
    CellParameters,
)
from .pso import PsoResult, SwarmConfig, pso_minimize
from .spme import CurrentProfile, feature_matrix, simulate
from scipy.linalg import solve_triangular

N_FEATURES = 4
PENALTY_FALLBACK = 1e12
PENALTY_MEDIAN_FACTOR = 1e6


# ---------------------------------------------------------------------------
# residual plumbing
# ---------------------------------------------------------------------------

def model_error(y_meas, y_model) -> np.ndarray:
    """Pointwise model error eps_k = y_meas_k - y_model_k."""
    a = np.asarray(y_meas, dtype=float)
    b = np.asarray(y_model, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(
            f"measurement/model length mismatch: {a.shape} vs {b.shape}"
        )
    return a - b


def downsample_indices(n_full: int, m: int) -> np.ndarray:
    """Evenly spread sample indices: round(i*(n_full-1)/(m-1)), i = 0..m-1.

    Always includes the first and last index; consecutive gaps differ by at
    most one.  The m = 1 edge returns [0].
    """
    if not 1 <= m <= n_full:
        raise ValueError(f"need 1 <= m <= n_full, got m={m}, n_full={n_full}")
    if m == 1:
        return np.zeros(1, dtype=int)
    idx = np.rint(np.arange(m) * (n_full - 1) / (m - 1)).astype(int)
    return idx


# ---------------------------------------------------------------------------
# likelihood pieces (Cholesky only; determinant in the log domain)
# ---------------------------------------------------------------------------

def _quad_and_logdet(err: np.ndarray, phi_n: np.ndarray):
    L, _ = chol_unit(phi_n)
    w = solve_triangular(L, err, lower=True)
    quad = float(w @ w)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return quad, logdet


def profiled_sigma2_f(err, phi_n) -> float:
    """Closed-form ML signal variance: eps' Phi_n^-1 eps / N (zero iff eps=0)."""
    err = np.asarray(err, dtype=float)
    quad, _ = _quad_and_logdet(err, np.asarray(phi_n, dtype=float))
    return quad / err.size


def log_likelihood(err, phi_n, sigma2_f) -> float:
    """Marginal log-likelihood of the residuals under K_n = sigma2_f*Phi_n."""
    if not sigma2_f > 0.0:
        raise ValueError("sigma2_f must be positive")
    err = np.asarray(err, dtype=float)
    n = err.size
    quad, logdet = _quad_and_logdet(err, np.asarray(phi_n, dtype=float))
    return (
        -0.5 * n * np.log(2.0 * np.pi * sigma2_f)
        - 0.5 * logdet
        - 0.5 * quad / sigma2_f
    )


def profiled_log_likelihood(err, phi_n) -> float:
    """Log-likelihood with sigma2_f at its closed-form maximizer."""
    err = np.asarray(err, dtype=float)
    n = err.size
    quad, logdet = _quad_and_logdet(err, np.asarray(phi_n, dtype=float))
    return -0.5 * n * np.log(2.0 * np.pi / n * quad) - 0.5 * logdet - 0.5 * n


def kog_cost(err, phi_n) -> float:
    """Scale-free minimization form J = |Phi_n|^(1/N) * eps' Phi_n^-1 eps."""
    err = np.asarray(err, dtype=float)
    quad, logdet = _quad_and_logdet(err, np.asarray(phi_n, dtype=float))
    return float(np.exp(logdet / err.size) * quad)


def ls_cost(err) -> float:
    err = np.asarray(err, dtype=float)
    return float(err @ err)


# ---------------------------------------------------------------------------
# estimation problem
# ---------------------------------------------------------------------------

LENGTH_SCALE_LOG10_BOUNDS = (-2.0, 2.0)


@dataclass(frozen=True)
class EstimationProblem:
    """One group-estimation task: targets, data, objective, optimizer config.

    ``base_params`` is the snapshot supplying every non-target parameter and
    is updated between groups by ``sequential_estimate``.  ``bounds`` are in
    natural units; diffusivities are searched in log10 space internally.
    """

    targets: tuple
    profile: CurrentProfile
    y_meas: np.ndarray
    base_params: CellParameters
    initial_soc: float = 1.0
    objective: str = "kog"
    bounds: dict = field(default_factory=dict)
    m_downsample: int = 300
    sigma2_n_tilde: float = 0.1
    swarm: SwarmConfig = SwarmConfig()
    seed: int = 0
    force_identity_phi: bool = False  # test hook: Phi_n -> (1 + sigma2_n_tilde) I

    def __post_init__(self):
        targets = tuple(self.targets)
        object.__setattr__(self, "targets", targets)
        if not targets:
            raise ValueError("need at least one target parameter")
        for t in targets:
            if t not in TARGET_PARAMS:
                raise ValueError(f"unknown target parameter {t!r}")
        y = np.asarray(self.y_meas, dtype=float)
        if y.ndim != 1 or y.size != len(self.profile):
            raise ValueError("y_meas must align with the profile sample count")
        object.__setattr__(self, "y_meas", y)
        if self.objective not in ("kog", "ls"):
            raise ValueError("objective must be 'kog' or 'ls'")
        if not 1 <= self.m_downsample <= y.size:
            raise ValueError(
                f"downsample budget must satisfy 1 <= M <= {y.size}, got {self.m_downsample}"
            )
        if self.sigma2_n_tilde < 0.0:
            raise ValueError("sigma2_n_tilde must be nonnegative")
        merged = dict(DEFAULT_SEARCH_BOUNDS)
        merged.update(self.bounds)
        for t in targets:
            lo, hi = merged[t]
            if not 0.0 < lo < hi:
                raise ValueError(f"bounds for {t!r} must satisfy 0 < lo < hi")
        object.__setattr__(self, "bounds", merged)

    def search_box(self) -> np.ndarray:
        """PSO box: targets (log10 for diffusivities) then KOG length scales."""
        rows = []
        for t in self.targets:
            lo, hi = self.bounds[t]
            if t in LOG_SCALE_TARGETS:
                rows.append((np.log10(lo), np.log10(hi)))
            else:
                rows.append((lo, hi))
        if self.objective == "kog":
            rows.extend([LENGTH_SCALE_LOG10_BOUNDS] * N_FEATURES)
        return np.asarray(rows, dtype=float)

    def decode(self, x):
        """Split a search vector into (CellParameters, length_scales | None)."""
        updates = {}
        for i, t in enumerate(self.targets):
            updates[t] = 10.0 ** x[i] if t in LOG_SCALE_TARGETS else float(x[i])
        params = self.base_params.with_updates(**updates)
        scales = None
        if self.objective == "kog":
            scales = tuple(10.0 ** v for v in x[len(self.targets):])
        return params, scales


# ---------------------------------------------------------------------------
# objective evaluation
# ---------------------------------------------------------------------------

def _simulated_error(params: CellParameters, problem: EstimationProblem):
    """Full-length residual and trajectory; SimulationError on any failure.

    A trajectory truncated by the voltage window cannot cover the
    measurement record and counts as a simulation failure.
    """
    traj = simulate(params, problem.profile, problem.initial_soc)
    if traj.truncated or len(traj) != problem.y_meas.size:
        raise SimulationError(
            "candidate trajectory truncated by the voltage window", step=len(traj)
        )
    return model_error(problem.y_meas, traj.voltages), traj


def _kog_pieces(err_full, traj, problem: EstimationProblem, length_scales):
    idx = downsample_indices(err_full.size, problem.m_downsample)
    eps = err_full[idx]
    if problem.force_identity_phi:
        phi_n = (1.0 + problem.sigma2_n_tilde) * np.eye(eps.size)
        scaler = FeatureScaler(mean=np.zeros(N_FEATURES), scale=np.ones(N_FEATURES))
        return eps, phi_n, scaler
    X = feature_matrix(traj)[idx]
    scaler = FeatureScaler.fit(X)
    phi_n = build_phi_n(scaler.transform(X), length_scales, problem.sigma2_n_tilde)
    return eps, phi_n, scaler


def objective_kog(params: CellParameters, length_scales, problem: EstimationProblem) -> float:
    """KOG objective J for one candidate; raises SimulationError if infeasible."""
    err_full, traj = _simulated_error(params, problem)
    eps, phi_n, _ = _kog_pieces(err_full, traj, problem, length_scales)
    return kog_cost(eps, phi_n)


def objective_ls(params: CellParameters, problem: EstimationProblem) -> float:
    """Least-squares objective on the same downsampled index set."""
    err_full, _ = _simulated_error(params, problem)
    idx = downsample_indices(err_full.size, problem.m_downsample)
    return ls_cost(err_full[idx])


class _PenalizedObjective:
    """Search-vector objective with the infeasibility penalty policy.

    Infeasible candidates (simulation failure, truncation, factorization
    failure) receive PENALTY_FALLBACK until the first swarm sweep (one
    evaluation per particle) completes; the penalty then locks to
    PENALTY_MEDIAN_FACTOR times the median feasible J of that sweep, or stays
    at the fallback when the sweep produced no feasible candidate.
    """

    def __init__(self, problem: EstimationProblem):
        self.problem = problem
        self.first_sweep = problem.swarm.n_particles
        self.n_evals = 0
        self.n_penalized = 0
        self.max_feasible = -np.inf
        self.penalty = PENALTY_FALLBACK
        self._locked = False
        self._sweep_feasible = []

    def _raw(self, x) -> float:
        params, scales = self.problem.decode(x)
        err_full, traj = _simulated_error(params, self.problem)
        if self.problem.objective == "kog":
            eps, phi_n, _ = _kog_pieces(err_full, traj, self.problem, scales)
            return kog_cost(eps, phi_n)
        idx = downsample_indices(err_full.size, self.problem.m_downsample)
        return ls_cost(err_full[idx])

    def __call__(self, x) -> float:
        self.n_evals += 1
        try:
            value = self._raw(x)
            feasible = True
        except (SimulationError, IllConditionedError):
            value = self.penalty
            feasible = False
            self.n_penalized += 1
        if feasible:
            if self.n_evals <= self.first_sweep:
                self._sweep_feasible.append(value)
            self.max_feasible = max(self.max_feasible, value)
        if not self._locked and self.n_evals >= self.first_sweep:
            if self._sweep_feasible:
                self.penalty = PENALTY_MEDIAN_FACTOR * float(
                    np.median(self._sweep_feasible)
                )
            self._locked = True
        return value


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass
class EstimationResult:
    objective: str
    targets: tuple
    theta: dict
    updated_params: CellParameters
    J: float
    trace: np.ndarray
    mean_trace: np.ndarray
    seed: int
    n_evaluations: int
    n_penalized: int
    penalty_value: float
    max_feasible_J: float
    wall_time_s: float
    sigma2_f: float | None = None
    length_scales: tuple | None = None
    scaler: FeatureScaler | None = None
    group_index: int | None = None
    iteration: int | None = None

    def report_dict(self) -> dict:
        doc = {
            "objective": self.objective,
            "targets": {k: float(v) for k, v in self.theta.items()},
            "J": float(self.J),
            "seed": int(self.seed),
            "n_evaluations": int(self.n_evaluations),
            "n_penalized": int(self.n_penalized),
            "penalty_value": float(self.penalty_value),
            "max_feasible_J": float(self.max_feasible_J),
            "wall_time_s": float(self.wall_time_s),
        }
        if self.objective == "kog":
            doc["sigma2_f"] = float(self.sigma2_f)
            doc["length_scales"] = [float(l) for l in self.length_scales]
            doc["feature_scaler"] = self.scaler.to_dict()
        if self.group_index is not None:
            doc["group_index"] = int(self.group_index)
        if self.iteration is not None:
            doc["iteration"] = int(self.iteration)
        return doc

    def save_report(self, path) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.report_dict(), fh, sort_keys=False)

    def save_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "best_J", "mean_J"])
            for i, (b, m) in enumerate(zip(self.trace, self.mean_trace)):
                writer.writerow([i, repr(float(b)), repr(float(m))])


def read_trace_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["iteration", "best_J", "mean_J"]:
            raise ValueError(f"unexpected trace CSV header: {header}")
        rows = [(int(r[0]), float(r[1]), float(r[2])) for r in reader]
    return rows


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------

def estimate_group(problem: EstimationProblem) -> EstimationResult:
    """PSO search of one parameter group under the problem's objective."""
    t0 = time.perf_counter()
    fn = _PenalizedObjective(problem)
    res: PsoResult = pso_minimize(fn, problem.search_box(), problem.swarm, problem.seed)
    if fn.max_feasible == -np.inf:
        raise EstimationFailureError(
            "no feasible candidate: every simulation in the swarm failed",
            trace=res.trace,
            mean_trace=res.mean_trace,
        )
    params, scales = problem.decode(res.x)
    try:
        err_full, traj = _simulated_error(params, problem)
    except SimulationError as exc:
        raise EstimationFailureError(
            f"best candidate is infeasible ({exc})",
            trace=res.trace,
            mean_trace=res.mean_trace,
        ) from exc
    theta = {t: getattr(params, t) for t in problem.targets}
    result = EstimationResult(
        objective=problem.objective,
        targets=problem.targets,
        theta=theta,
        updated_params=params,
        J=float(res.value),
        trace=res.trace,
        mean_trace=res.mean_trace,
        seed=problem.seed,
        n_evaluations=fn.n_evals,
        n_penalized=fn.n_penalized,
        penalty_value=fn.penalty,
        max_feasible_J=fn.max_feasible,
        wall_time_s=time.perf_counter() - t0,
    )
    if problem.objective == "kog":
        eps, phi_n, scaler = _kog_pieces(err_full, traj, problem, scales)
        result.sigma2_f = profiled_sigma2_f(eps, phi_n)
        result.length_scales = scales
        result.scaler = scaler
    return result


ANCHOR_FACTOR_LO = 0.25
ANCHOR_FACTOR_HI = 4.0


def anchored_bounds(
    params: CellParameters,
    targets,
    outer: dict,
    lo_factor: float = ANCHOR_FACTOR_LO,
    hi_factor: float = ANCHOR_FACTOR_HI,
) -> dict:
    """Trust-region window [lo*v0, hi*v0] per target, clipped to ``outer``.

    ``v0`` is the target's current value in ``params``.  When the anchored
    window falls entirely outside the outer window (a wildly wrong anchor),
    the outer window is used unchanged for that target.
    """
    out = {}
    for t in targets:
        outer_lo, outer_hi = outer[t]
        v0 = float(getattr(params, t))
        lo = max(lo_factor * v0, outer_lo)
        hi = min(hi_factor * v0, outer_hi)
        if not lo < hi:
            lo, hi = outer_lo, outer_hi
        out[t] = (lo, hi)
    return out


def sequential_estimate(
    problems, n_iterations: int = 3, seed_stride: int = 1009
) -> list[EstimationResult]:
    """Run group estimations in order, n_iterations full passes.

    After each group's run its fitted targets are written into the shared
    parameter snapshot consumed by every subsequent run; the per-run PSO seed
    is ``problem.seed + seed_stride * iteration``.

    Each run searches a trust-region window re-anchored to [0.25x, 4x] of
    the value its targets currently hold (clipped to the problem's windows).
    Anchoring is what makes the alternating scheme contract: a fit
    conditioned on still-wrong other groups cannot run off to a
    compensating extreme, and the window chases the estimate across
    iterations, so even a -96% starting error comes within reach of the
    truth after three passes (4^3 = 64x).  If the anchored window turns out
    to contain no feasible simulation at all (the anchor itself is deep in
    infeasible territory), the fit is retried once on the problem's full
    window before the failure is allowed to propagate.  Returns all results
    in execution order with ``group_index`` / ``iteration`` tags.
    """
    problems = list(problems)
    if not problems:
        raise ValueError("need at least one estimation problem")
    if n_iterations < 1:
        raise ValueError("need at least one iteration")
    current = problems[0].base_params
    results = []
    for iteration in range(n_iterations):
        for gi, problem in enumerate(problems):
            seed = problem.seed + seed_stride * iteration
            run = dataclasses.replace(
                problem,
                base_params=current,
                bounds=anchored_bounds(current, problem.targets, problem.bounds),
                seed=seed,
            )
            try:
                result = estimate_group(run)
            except EstimationFailureError:
                if all(run.bounds[t] == problem.bounds[t] for t in problem.targets):
                    raise  # already searched the full window
                run = dataclasses.replace(problem, base_params=current, seed=seed)
                result = estimate_group(run)
            result.group_index = gi
            result.iteration = iteration
            results.append(result)
            current = result.updated_params
    return results
