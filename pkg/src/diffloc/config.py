"""Physical constants and numerical tolerances shared across modules."""

import math
from dataclasses import dataclass

SPEED_OF_LIGHT = 299_792_458.0  # m/s, exact
DEFAULT_FREQUENCY_HZ = 28e9


@dataclass(frozen=True)
class Tolerances:
    law_residual: float = 1e-9  # |s'.e - s.e| accepted on a diffraction solution
    unit_norm: float = 1e-12
    lambda_clamp: float = 1e-9  # slack on lambda in [0, 1]
    discriminant: float = 1e-12  # relative to b^2 + |4ac|
    linear_fallback: float = 1e-12  # |a| < this * max(|b|, |c|) -> linear root
    grazing: float = 1e-12  # |e x s| below this is grazing incidence
    shadow: float = 1e-6  # |cos((psi -+ psi')/2)| below this is a shadow boundary
    rank: float = 1e-9  # sigma_3 < rank * sigma_1 -> rank deficient
    ill_conditioned: float = 1e12


DEFAULT_TOLERANCES = Tolerances()


def wavenumber(frequency_hz: float = DEFAULT_FREQUENCY_HZ) -> float:
    """Free-space wavenumber 2*pi*f/c in 1/m."""
    return 2.0 * math.pi * frequency_hz / SPEED_OF_LIGHT
