"""Cell parameter set: estimation targets, fixed constants, config I/O."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from importlib import resources

import numpy as np
import yaml

from .errors import ConfigError
from .ocv import OcvCurve

FARADAY = 96485.33212        # C/mol
GAS_CONSTANT = 8.314462618   # J/(mol K)

# The six estimation targets, in canonical (sensitivity-group) order.
TARGET_PARAMS = ("eps_s_n", "eps_s_p", "D_s_n", "D_s_p", "D_e", "eps_e")
# Targets searched in log10 space.
LOG_SCALE_TARGETS = frozenset({"D_s_n", "D_s_p", "D_e"})
# Targets that are volume fractions (perturbations must stay below 1).
VOLUME_FRACTION_TARGETS = frozenset({"eps_s_n", "eps_s_p", "eps_e"})

# Default search ranges: fixed physically-plausible windows per parameter
# class (diffusivities are searched in log10 space but bounded here in
# natural units).  Each window contains the default plant value with at
# least a 2x margin on both sides, so the truth stays searchable under any
# +/-(50-100%) initial error.  The diffusivity windows are deliberately no
# wider than the plausible literature range for these chemistries: a
# several-decade window lets a least-squares fit escape to "infinitely
# fast transport", which has no voltage signature and wrecks the later
# groups of a sequential calibration.
DEFAULT_SEARCH_BOUNDS = {
    "eps_s_n": (0.05, 0.95),
    "eps_s_p": (0.05, 0.95),
    "eps_e": (0.05, 0.60),
    "D_s_n": (1e-15, 5e-13),
    "D_s_p": (1e-15, 5e-13),
    "D_e": (1e-10, 5e-9),
}

_SCALAR_FIELDS = (
    "eps_s_n", "eps_s_p", "D_s_n", "D_s_p", "D_e", "eps_e",
    "R_s_n", "R_s_p", "L_n", "L_sep", "L_p", "area",
    "c_s_max_n", "c_s_max_p", "c_e_init", "t_plus", "k_n", "k_p",
    "x_n_min", "x_n_max", "x_p_min", "x_p_max",
    "eps_e_sep", "brug", "kappa_e", "activity", "R_l", "T",
    "capacity_ah", "v_min", "v_max",
)

_POSITIVE_FIELDS = (
    "eps_s_n", "eps_s_p", "D_s_n", "D_s_p", "D_e", "eps_e",
    "R_s_n", "R_s_p", "L_n", "L_sep", "L_p", "area",
    "c_s_max_n", "c_s_max_p", "c_e_init", "k_n", "k_p",
    "eps_e_sep", "kappa_e", "activity", "T", "capacity_ah",
)


@dataclass(frozen=True)
class CellParameters:
    """Immutable cell description: six estimation targets + fixed constants.

    Sign convention: positive current discharges the cell.  State of charge is
    defined on the anode stoichiometry window (x_n_min at 0%, x_n_max at
    100%); the cathode runs its window in the opposite direction (x_p_max at
    0% SOC).
    """

    # estimation targets
    eps_s_n: float
    eps_s_p: float
    D_s_n: float
    D_s_p: float
    D_e: float
    eps_e: float
    # geometry
    R_s_n: float
    R_s_p: float
    L_n: float
    L_sep: float
    L_p: float
    area: float
    # thermodynamics / kinetics
    c_s_max_n: float
    c_s_max_p: float
    c_e_init: float
    t_plus: float
    k_n: float
    k_p: float
    x_n_min: float
    x_n_max: float
    x_p_min: float
    x_p_max: float
    # fixed transport / lumped terms
    eps_e_sep: float
    brug: float
    kappa_e: float
    activity: float
    R_l: float
    T: float
    capacity_ah: float
    v_min: float
    v_max: float
    # open-circuit potential fits
    ocv_n: OcvCurve
    ocv_p: OcvCurve

    def __post_init__(self):
        for name in _POSITIVE_FIELDS:
            if not getattr(self, name) > 0.0:
                raise ConfigError(f"cell parameter {name!r} must be positive")
        for frac in ("eps_s_n", "eps_s_p", "eps_e", "eps_e_sep"):
            if not getattr(self, frac) < 1.0:
                raise ConfigError(f"cell parameter {frac!r} must be below 1")
        if not 0.0 < self.t_plus < 1.0:
            raise ConfigError("cell parameter 't_plus' must lie in (0, 1)")
        for lo, hi in (("x_n_min", "x_n_max"), ("x_p_min", "x_p_max")):
            a, b = getattr(self, lo), getattr(self, hi)
            if not (0.0 <= a < b <= 1.0):
                raise ConfigError(
                    f"stoichiometry window ({lo}, {hi}) must satisfy 0 <= min < max <= 1"
                )
        if not self.v_min < self.v_max:
            raise ConfigError("voltage window requires v_min < v_max")
        if self.R_l < 0.0:
            raise ConfigError("cell parameter 'R_l' must be nonnegative")

    # --- derived quantities -------------------------------------------------

    def a_s(self, electrode: str) -> float:
        """Specific interfacial area 3*eps_s/R_s [1/m]."""
        if electrode == "anode":
            return 3.0 * self.eps_s_n / self.R_s_n
        if electrode == "cathode":
            return 3.0 * self.eps_s_p / self.R_s_p
        raise ValueError(f"unknown electrode {electrode!r}")

    def anode_window_capacity_ah(self) -> float:
        """Charge to sweep the anode stoichiometry window, in A h."""
        return (
            FARADAY * self.eps_s_n * self.L_n * self.area * self.c_s_max_n
            * (self.x_n_max - self.x_n_min) / 3600.0
        )

    def theta_n_at_soc(self, soc: float) -> float:
        return self.x_n_min + soc * (self.x_n_max - self.x_n_min)

    def theta_p_at_soc(self, soc: float) -> float:
        return self.x_p_max - soc * (self.x_p_max - self.x_p_min)

    def soc_from_theta_n(self, theta_n):
        return (np.asarray(theta_n) - self.x_n_min) / (self.x_n_max - self.x_n_min)

    def electrolyte_ohmic_resistance(self) -> float:
        """Average electrolyte Ohmic resistance with Bruggeman correction [ohm]."""
        k_n = self.kappa_e * self.eps_e ** self.brug
        k_sep = self.kappa_e * self.eps_e_sep ** self.brug
        return (self.L_n / k_n + 2.0 * self.L_sep / k_sep + self.L_p / k_n) / (
            2.0 * self.area
        )

    def with_updates(self, **changes) -> "CellParameters":
        return dataclasses.replace(self, **changes)

    # --- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        cell = {name: getattr(self, name) for name in _SCALAR_FIELDS}
        return {
            "cell": cell,
            "ocv": {"anode": self.ocv_n.to_dict(), "cathode": self.ocv_p.to_dict()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CellParameters":
        if "cell" not in d or "ocv" not in d:
            raise ConfigError("cell config must contain 'cell' and 'ocv' sections")
        cell = dict(d["cell"])
        kwargs = {}
        for name in _SCALAR_FIELDS:
            if name not in cell:
                raise ConfigError(f"cell config missing key 'cell.{name}'")
            try:
                kwargs[name] = float(cell.pop(name))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"cell config key 'cell.{name}' is not numeric") from exc
        if cell:
            stray = sorted(cell)[0]
            raise ConfigError(f"cell config has unknown key 'cell.{stray}'")
        ocv = d["ocv"]
        for side in ("anode", "cathode"):
            if side not in ocv:
                raise ConfigError(f"cell config missing section 'ocv.{side}'")
        try:
            kwargs["ocv_n"] = OcvCurve.from_dict(ocv["anode"])
            kwargs["ocv_p"] = OcvCurve.from_dict(ocv["cathode"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad OCV coefficient set: {exc}") from exc
        return cls(**kwargs)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)


def load_cell_config(path) -> CellParameters:
    """Load a cell config YAML; raises ConfigError with the offending key."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"cell config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cell config is not valid YAML ({path}): {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"cell config must be a mapping: {path}")
    return CellParameters.from_dict(raw)


def default_cell() -> CellParameters:
    """The shipped graphite / layered-oxide plant."""
    text = resources.files("cellcal").joinpath("data/default_cell.yaml").read_text()
    return CellParameters.from_dict(yaml.safe_load(text))
