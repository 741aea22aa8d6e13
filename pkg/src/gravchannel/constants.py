"""Physical constants (CODATA 2018)."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Constants:
    G: float = 6.67430e-11  # m^3 kg^-1 s^-2
    hbar: float = 1.054571817e-34  # J s
    kB: float = 1.380649e-23  # J/K


CODATA2018 = Constants()
