"""Single particle model with electrolyte dynamics (SPMe).

Reduced-order cell model: one representative spherical particle per electrode
(radial Fickian diffusion, finite-volume discretization) plus a through-cell
electrolyte diffusion field over anode / separator / cathode with a uniform
reaction source in each electrode.  Terminal voltage combines the electrode
OCVs at surface stoichiometry, inverse-sinh Butler-Volmer overpotentials, the
electrolyte concentration + Ohmic potential difference, and a lumped Ohmic
drop I * R_l.  Positive current discharges the cell.

Both concentration fields are linear time-invariant systems under a
zero-order-hold current, so a whole profile can be propagated exactly (for
the discrete implicit-Euler scheme) by diagonalizing the update operator and
running one first-order recursion per mode; ``simulate`` uses that path and
``step`` shares the same eigenbasis, so the two agree to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import lfilter

from .errors import SimulationError
from .parameters import FARADAY, GAS_CONSTANT, CellParameters

N_RADIAL_DEFAULT = 10     # radial shells per particle
N_ELEC_DEFAULT = 10       # electrolyte nodes per region (anode/separator/cathode)

_FOUR_PI = 4.0 * np.pi


# ---------------------------------------------------------------------------
# profile and state containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CurrentProfile:
    """Uniformly sampled applied-current sequence (zero-order hold).

    ``currents[k]`` acts over [k*dt, (k+1)*dt); positive current = discharge.
    """

    currents: np.ndarray
    dt: float

    def __post_init__(self):
        cur = np.asarray(self.currents, dtype=float)
        if cur.ndim != 1 or cur.size < 1:
            raise ValueError("profile needs a 1-D current sequence of length >= 1")
        if not np.all(np.isfinite(cur)):
            raise ValueError("profile currents must be finite")
        if not self.dt > 0.0:
            raise ValueError("profile dt must be positive")
        cur = cur.copy()
        cur.flags.writeable = False
        object.__setattr__(self, "currents", cur)
        object.__setattr__(self, "dt", float(self.dt))

    def __len__(self):
        return self.currents.size

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.currents.size) * self.dt

    @property
    def duration(self) -> float:
        return self.currents.size * self.dt

    @classmethod
    def from_arrays(cls, times, currents) -> "CurrentProfile":
        t = np.asarray(times, dtype=float)
        if t.size < 2:
            raise ValueError("need at least two samples to infer dt")
        steps = np.diff(t)
        dt = steps[0]
        if dt <= 0.0 or not np.allclose(steps, dt, rtol=1e-9, atol=1e-12):
            raise ValueError("time grid must be uniform and increasing")
        if abs(t[0]) > 1e-12:
            raise ValueError("time grid must start at zero")
        return cls(np.asarray(currents, dtype=float), float(dt))


@dataclass(frozen=True)
class CellState:
    """Concentration fields at one instant.

    ``c_s_n``/``c_s_p``: radial solid concentration profiles (innermost shell
    first; the outermost node doubles as the surface concentration).  ``c_e``:
    through-cell electrolyte concentration, anode collector end first (the
    first/last nodes double as the electrode-boundary values c_e,n / c_e,p).
    """

    c_s_n: np.ndarray
    c_s_p: np.ndarray
    c_e: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        for name in ("c_s_n", "c_s_p", "c_e"):
            arr = np.asarray(getattr(self, name), dtype=float).copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def c_se_n(self) -> float:
        return float(self.c_s_n[-1])

    @property
    def c_se_p(self) -> float:
        return float(self.c_s_p[-1])

    @property
    def c_e_n(self) -> float:
        return float(self.c_e[0])

    @property
    def c_e_p(self) -> float:
        return float(self.c_e[-1])


# ---------------------------------------------------------------------------
# discretization
# ---------------------------------------------------------------------------

def _laplacian(conductances: np.ndarray) -> np.ndarray:
    """Symmetric flux operator for a 1-D chain: (G c)_i = sum_j g_ij (c_j - c_i)."""
    g = np.asarray(conductances, dtype=float)
    n = g.size + 1
    G = np.zeros((n, n))
    idx = np.arange(n - 1)
    G[idx, idx + 1] = g
    G[idx + 1, idx] = g
    diag = np.zeros(n)
    diag[:-1] += g
    diag[1:] += g
    G[np.arange(n), np.arange(n)] = -diag
    return G


class _ModalDiffusion:
    """Implicit-Euler propagator for  diag(v) dc/dt = G c + s u(t).

    G is symmetric with zero row sums (conservative two-point fluxes), v holds
    the species-bearing volume of each node.  Symmetrizing with d = sqrt(v)
    yields an orthogonal eigenbasis in which the implicit-Euler update is
    diagonal, so a zero-order-hold input sequence maps to one first-order IIR
    filter per mode.
    """

    def __init__(self, volumes, G, source, dt):
        v = np.asarray(volumes, dtype=float)
        d = np.sqrt(v)
        S = G / np.outer(d, d)
        lam, Q = np.linalg.eigh(S)
        self.d = d
        self.Q = Q
        self.mu = 1.0 / (1.0 - dt * lam)
        self.beta = Q.T @ (np.asarray(source, dtype=float) / d)
        self.dt = dt

    def to_modal(self, c):
        return self.Q.T @ (self.d * np.asarray(c, dtype=float))

    def from_modal(self, z):
        return (self.Q @ z) / self.d

    def step(self, c, u):
        z = self.to_modal(c)
        z = self.mu * (z + self.dt * self.beta * u)
        return self.from_modal(z)

    def propagate(self, c0, currents):
        """Modal states at samples 0..N-1 under ZOH inputs (last one unused).

        Returns Z with Z[k] the modal state at t = k*dt; Z[0] is the initial
        condition and Z[k+1] = mu * (Z[k] + dt * beta * I_k).
        """
        z0 = self.to_modal(c0)
        n = len(currents)
        Z = np.empty((n, z0.size))
        Z[0] = z0
        if n > 1:
            u = np.asarray(currents[:-1], dtype=float)
            gain = self.mu * self.dt * self.beta
            for i in range(z0.size):
                zi = np.array([self.mu[i] * z0[i]])
                Z[1:, i], _ = lfilter([gain[i]], [1.0, -self.mu[i]], u, zi=zi)
        return Z

    def series(self, Z, weights):
        """Time series of the linear functional weights . c over modal states."""
        return Z @ (self.Q.T @ (np.asarray(weights, dtype=float) / self.d))

    def node_series(self, Z, index):
        return Z @ (self.Q.T[:, index] / self.d[index])

    def states(self, Z):
        return (Z @ self.Q.T) / self.d


def solid_shell_volumes(params: CellParameters, electrode: str, n_radial: int) -> np.ndarray:
    """Volumes of the radial finite-volume shells of one particle [m^3]."""
    radius = params.R_s_n if electrode == "anode" else params.R_s_p
    faces = np.linspace(0.0, radius, n_radial + 1)
    return _FOUR_PI / 3.0 * (faces[1:] ** 3 - faces[:-1] ** 3)


def electrolyte_node_volumes(params: CellParameters, n_elec: int) -> np.ndarray:
    """Electrolyte-bearing volume of each through-cell node [m^3]."""
    dx = np.repeat(
        [params.L_n / n_elec, params.L_sep / n_elec, params.L_p / n_elec], n_elec
    )
    eps = np.repeat([params.eps_e, params.eps_e_sep, params.eps_e], n_elec)
    return eps * dx * params.area


def _solid_system(params: CellParameters, electrode: str, n_radial: int, dt: float):
    if electrode == "anode":
        radius, diff, length = params.R_s_n, params.D_s_n, params.L_n
        sign = -1.0  # lithium leaves the anode particle on discharge
    else:
        radius, diff, length = params.R_s_p, params.D_s_p, params.L_p
        sign = 1.0
    dr = radius / n_radial
    faces = np.arange(1, n_radial) * dr
    cond = diff * _FOUR_PI * faces ** 2 / dr
    vol = solid_shell_volumes(params, electrode, n_radial)
    source = np.zeros(n_radial)
    a_s = params.a_s(electrode)
    source[-1] = sign * _FOUR_PI * radius ** 2 / (
        FARADAY * a_s * length * params.area
    )
    return _ModalDiffusion(vol, _laplacian(cond), source, dt)


def _electrolyte_system(params: CellParameters, n_elec: int, dt: float):
    dx = np.repeat(
        [params.L_n / n_elec, params.L_sep / n_elec, params.L_p / n_elec], n_elec
    )
    eps = np.repeat([params.eps_e, params.eps_e_sep, params.eps_e], n_elec)
    d_eff = params.D_e * eps ** params.brug
    vol = eps * dx * params.area
    # two-point fluxes; harmonic averaging handles the region interfaces
    half = dx / (2.0 * d_eff)
    cond = params.area / (half[:-1] + half[1:])
    source = np.zeros(3 * n_elec)
    coeff = (1.0 - params.t_plus) / FARADAY
    source[:n_elec] = coeff * dx[:n_elec] / params.L_n
    source[2 * n_elec:] = -coeff * dx[2 * n_elec:] / params.L_p
    return _ModalDiffusion(vol, _laplacian(cond), source, dt)


class _CellOperators:
    def __init__(self, params: CellParameters, dt: float, n_radial: int, n_elec: int):
        self.solid_n = _solid_system(params, "anode", n_radial, dt)
        self.solid_p = _solid_system(params, "cathode", n_radial, dt)
        self.elec = _electrolyte_system(params, n_elec, dt)
        self.vol_n = solid_shell_volumes(params, "anode", n_radial)
        self.vol_p = solid_shell_volumes(params, "cathode", n_radial)


@lru_cache(maxsize=16)
def _operators(params: CellParameters, dt: float, n_radial: int, n_elec: int):
    return _CellOperators(params, dt, n_radial, n_elec)


# ---------------------------------------------------------------------------
# terminal voltage
# ---------------------------------------------------------------------------

def _voltage_arrays(params, th_n, th_p, ce_n, ce_p, currents):
    """Vectorized terminal voltage with validity screening.

    Returns (v, bad_index, reason, electrode); entries of ``v`` at and beyond
    ``bad_index`` are undefined.  ``bad_index`` is ``n`` when every sample is
    valid.
    """
    n = th_n.size
    checks = (
        (~np.isfinite(th_n) | ~np.isfinite(ce_n) | ~np.isfinite(th_p)
         | ~np.isfinite(ce_p), "non-finite state in propagation", None),
        ((th_n < 0.0) | (th_n > 1.0),
         "anode surface stoichiometry outside the OCV fit domain [0, 1]", "anode"),
        ((th_p < 0.0) | (th_p > 1.0),
         "cathode surface stoichiometry outside the OCV fit domain [0, 1]", "cathode"),
        (ce_n <= 0.0,
         "nonpositive electrolyte concentration in a logarithm", "anode"),
        (ce_p <= 0.0,
         "nonpositive electrolyte concentration in a logarithm", "cathode"),
        ((th_n <= 0.0) | (th_n >= 1.0),
         "vanishing exchange current density", "anode"),
        ((th_p <= 0.0) | (th_p >= 1.0),
         "vanishing exchange current density", "cathode"),
    )
    bad_index, reason, electrode = n, None, None
    for mask, why, side in checks:
        if mask.any():
            k = int(np.argmax(mask))
            if k < bad_index:
                bad_index, reason, electrode = k, why, side
    kt2f = 2.0 * GAS_CONSTANT * params.T / FARADAY
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        u_n = params.ocv_n(th_n)
        u_p = params.ocv_p(th_p)
        c_se_n = th_n * params.c_s_max_n
        c_se_p = th_p * params.c_s_max_p
        i0_n = FARADAY * params.k_n * np.sqrt(
            ce_n * c_se_n * (params.c_s_max_n - c_se_n)
        )
        i0_p = FARADAY * params.k_p * np.sqrt(
            ce_p * c_se_p * (params.c_s_max_p - c_se_p)
        )
        j_n = currents / (FARADAY * params.a_s("anode") * params.L_n * params.area)
        j_p = -currents / (FARADAY * params.a_s("cathode") * params.L_p * params.area)
        eta_n = kt2f * np.arcsinh(FARADAY * j_n / (2.0 * i0_n))
        eta_p = kt2f * np.arcsinh(FARADAY * j_p / (2.0 * i0_p))
        phi_e = (
            params.activity * kt2f * (1.0 - params.t_plus) * np.log(ce_p / ce_n)
            - currents * params.electrolyte_ohmic_resistance()
        )
        v = u_p - u_n + phi_e + eta_p - eta_n - currents * params.R_l
    return v, bad_index, reason, electrode


def terminal_voltage(state: CellState, current: float, params: CellParameters) -> float:
    """Terminal voltage of a state under an applied current [V]."""
    th_n = np.array([state.c_se_n / params.c_s_max_n])
    th_p = np.array([state.c_se_p / params.c_s_max_p])
    ce_n = np.array([state.c_e_n])
    ce_p = np.array([state.c_e_p])
    cur = np.array([float(current)])
    v, bad, reason, electrode = _voltage_arrays(params, th_n, th_p, ce_n, ce_p, cur)
    if bad == 0:
        raise SimulationError(reason, step=None, electrode=electrode)
    return float(v[0])


# ---------------------------------------------------------------------------
# state construction and stepping
# ---------------------------------------------------------------------------

def make_initial_state(
    params: CellParameters,
    initial_soc: float = 1.0,
    n_radial: int = N_RADIAL_DEFAULT,
    n_elec: int = N_ELEC_DEFAULT,
) -> CellState:
    """Equilibrated state at a given SOC: uniform concentration fields."""
    if not 0.0 <= initial_soc <= 1.0:
        raise ValueError("initial SOC must lie in [0, 1]")
    th_n = params.theta_n_at_soc(initial_soc)
    th_p = params.theta_p_at_soc(initial_soc)
    return CellState(
        c_s_n=np.full(n_radial, th_n * params.c_s_max_n),
        c_s_p=np.full(n_radial, th_p * params.c_s_max_p),
        c_e=np.full(3 * n_elec, params.c_e_init),
        t=0.0,
    )


def step(state: CellState, current: float, dt: float, params: CellParameters) -> CellState:
    """Advance the concentration fields one implicit-Euler step."""
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    n_radial = state.c_s_n.size
    n_elec = state.c_e.size // 3
    if state.c_e.size != 3 * n_elec or state.c_s_p.size != n_radial:
        raise ValueError("state vectors have inconsistent sizes")
    ops = _operators(params, float(dt), n_radial, n_elec)
    return CellState(
        c_s_n=ops.solid_n.step(state.c_s_n, current),
        c_s_p=ops.solid_p.step(state.c_s_p, current),
        c_e=ops.elec.step(state.c_e, current),
        t=state.t + dt,
    )


# ---------------------------------------------------------------------------
# trajectory simulation
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    """Per-sample summaries of a simulated run (arrays share one length)."""

    times: np.ndarray
    currents: np.ndarray
    voltages: np.ndarray
    c_se_n: np.ndarray
    c_se_p: np.ndarray
    c_bar_n: np.ndarray
    c_bar_p: np.ndarray
    ce_n: np.ndarray
    ce_p: np.ndarray
    soc_surf: np.ndarray
    soc_bulk: np.ndarray
    truncated: bool
    states_c_s_n: np.ndarray | None = None
    states_c_s_p: np.ndarray | None = None
    states_c_e: np.ndarray | None = None

    def __len__(self):
        return self.times.size

    def to_csv(self, path) -> None:
        write_trajectory_csv(path, self)


def simulate(
    params: CellParameters,
    profile: CurrentProfile,
    initial_soc: float = 1.0,
    n_radial: int = N_RADIAL_DEFAULT,
    n_elec: int = N_ELEC_DEFAULT,
    keep_states: bool = False,
) -> Trajectory:
    """Galvanostatic simulation of a whole profile.

    Record k holds the state at t_k = k*dt (state 0 is the equilibrated
    initial condition) and the voltage under the current I_k applied over
    [t_k, t_k + dt).  If the voltage leaves [v_min, v_max] the trajectory is
    returned truncated (exclusive of the first offending sample) with
    ``truncated=True``; validity-domain violations raise SimulationError with
    the step index.
    """
    state0 = make_initial_state(params, initial_soc, n_radial, n_elec)
    ops = _operators(params, profile.dt, n_radial, n_elec)
    currents = profile.currents
    z_n = ops.solid_n.propagate(state0.c_s_n, currents)
    z_p = ops.solid_p.propagate(state0.c_s_p, currents)
    z_e = ops.elec.propagate(state0.c_e, currents)

    n_r = state0.c_s_n.size
    c_se_n = ops.solid_n.node_series(z_n, n_r - 1)
    c_se_p = ops.solid_p.node_series(z_p, n_r - 1)
    c_bar_n = ops.solid_n.series(z_n, ops.vol_n) / ops.vol_n.sum()
    c_bar_p = ops.solid_p.series(z_p, ops.vol_p) / ops.vol_p.sum()
    ce_n = ops.elec.node_series(z_e, 0)
    ce_p = ops.elec.node_series(z_e, state0.c_e.size - 1)

    th_n = c_se_n / params.c_s_max_n
    th_p = c_se_p / params.c_s_max_p
    v, bad, reason, electrode = _voltage_arrays(params, th_n, th_p, ce_n, ce_p, currents)

    n = currents.size
    cut = n
    window = v[:bad]
    outside = (window < params.v_min) | (window > params.v_max)
    if outside.any():
        cut = int(np.argmax(outside))
    if bad < n and cut > bad:
        raise SimulationError(reason, step=bad, electrode=electrode)
    truncated = cut < n

    k = cut
    soc_den = params.x_n_max - params.x_n_min
    traj = Trajectory(
        times=profile.times[:k],
        currents=currents[:k].copy(),
        voltages=v[:k],
        c_se_n=c_se_n[:k],
        c_se_p=c_se_p[:k],
        c_bar_n=c_bar_n[:k],
        c_bar_p=c_bar_p[:k],
        ce_n=ce_n[:k],
        ce_p=ce_p[:k],
        soc_surf=(th_n[:k] - params.x_n_min) / soc_den,
        soc_bulk=(c_bar_n[:k] / params.c_s_max_n - params.x_n_min) / soc_den,
        truncated=truncated,
    )
    if keep_states:
        traj.states_c_s_n = ops.solid_n.states(z_n)[:k]
        traj.states_c_s_p = ops.solid_p.states(z_p)[:k]
        traj.states_c_e = ops.elec.states(z_e)[:k]
    return traj


# ---------------------------------------------------------------------------
# GP feature extraction
# ---------------------------------------------------------------------------

FEATURE_NAMES = ("current_A", "soc_surf", "soc_bulk", "ce_n_mol_m3")


def feature_matrix(traj: Trajectory) -> np.ndarray:
    """Discrepancy-model inputs per sample: [I, SOC_surf, SOC_bulk, c_e,n]."""
    return np.column_stack([traj.currents, traj.soc_surf, traj.soc_bulk, traj.ce_n])


def features(traj: Trajectory, k: int) -> np.ndarray:
    """Feature vector of record k."""
    return feature_matrix(traj)[k]


# ---------------------------------------------------------------------------
# trajectory CSV
# ---------------------------------------------------------------------------

TRAJECTORY_COLUMNS = (
    "time_s", "current_A", "voltage_V", "soc_surf", "soc_bulk",
    "ce_n_mol_m3", "ce_p_mol_m3",
)


def write_trajectory_csv(path, traj: Trajectory) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_COLUMNS)
        for k in range(len(traj)):
            writer.writerow([
                repr(float(traj.times[k])),
                repr(float(traj.currents[k])),
                repr(float(traj.voltages[k])),
                repr(float(traj.soc_surf[k])),
                repr(float(traj.soc_bulk[k])),
                repr(float(traj.ce_n[k])),
                repr(float(traj.ce_p[k])),
            ])


def read_trajectory_csv(path) -> dict:
    """Read a trajectory CSV back into a dict of float arrays."""
    import csv

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TRAJECTORY_COLUMNS:
            raise ValueError(f"unexpected trajectory CSV header: {header}")
        rows = [[float(x) for x in row] for row in reader]
    data = np.array(rows, dtype=float).reshape(len(rows), len(TRAJECTORY_COLUMNS))
    return {name: data[:, i] for i, name in enumerate(TRAJECTORY_COLUMNS)}
