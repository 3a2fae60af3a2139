"""Open-circuit potential curves as explicit, swappable functional fits.

Both shipped electrode curves (graphite anode, layered-oxide cathode) are
expressed in one closed form,

    U(theta) = const + exp_amp * exp(exp_rate * theta)
             + sum_j amp_j * tanh((theta - center_j) / width_j)

with theta the surface stoichiometry c_se / c_s_max.  The coefficient sets
live in the cell config file (``data/default_cell.yaml``), so a different
chemistry is a data change, not a code change.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class OcvCurve:
    """Single-electrode open-circuit potential fit U(theta), volts vs Li/Li+."""

    const: float
    exp_amp: float = 0.0
    exp_rate: float = 0.0
    tanh_terms: tuple[tuple[float, float, float], ...] = ()  # (amp, center, width)

    def __call__(self, theta):
        th = np.asarray(theta, dtype=float)
        u = np.full_like(th, self.const)
        if self.exp_amp != 0.0:
            u = u + self.exp_amp * np.exp(self.exp_rate * th)
        for amp, center, width in self.tanh_terms:
            u = u + amp * np.tanh((th - center) / width)
        if np.ndim(theta) == 0:
            return float(u)
        return u

    def to_dict(self) -> dict:
        out: dict = {"const": self.const}
        if self.exp_amp != 0.0:
            out["exp"] = {"amp": self.exp_amp, "rate": self.exp_rate}
        if self.tanh_terms:
            out["tanh"] = [
                {"amp": a, "center": c, "width": w} for a, c, w in self.tanh_terms
            ]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "OcvCurve":
        exp = d.get("exp", {})
        terms = tuple(
            (float(t["amp"]), float(t["center"]), float(t["width"]))
            for t in d.get("tanh", [])
        )
        for _, _, width in terms:
            if width == 0.0:
                raise ValueError("tanh term width must be nonzero")
        return cls(
            const=float(d["const"]),
            exp_amp=float(exp.get("amp", 0.0)),
            exp_rate=float(exp.get("rate", 0.0)),
            tanh_terms=terms,
        )
