"""Diffraction-aided NLOS wireless positioning.

Window-edge diffraction geometry and GTD fields, Fisher information and
position error bounds for TOF ranging through the dominating diffraction
path, position estimators, and a seeded scenario simulator.
"""

__version__ = "0.1.0"

from .config import DEFAULT_TOLERANCES, SPEED_OF_LIGHT, Tolerances, wavenumber
from .errors import (
    CornerDiffraction,
    DegenerateEdge,
    DegenerateGeometry,
    DiffLocError,
    Divergent,
    GrazingRay,
    InvalidGeometry,
    InvalidVector,
    NonDifferentiable,
    NoSolution,
    NotConverged,
    NotIdentifiable,
    ShadowBoundary,
)
from .estimators import (
    PositionEstimate,
    RangeMeasurementSet,
    estimate_diffraction_nls,
    estimate_lls_baseline,
    synthesize_ranges,
)
from .fields import (
    approx_coefficients,
    diffracted_field,
    exact_power_ratio,
    keller_coefficients,
    power_ratio,
    psi_angles,
    ray_frames,
)
from .fisher import FisherReport, RangingModel, build_fim, delay_crlb, identifiability, path_gradient
from .geometry import (
    DiffractingEdge,
    DiffractionSolution,
    Point3,
    Vec3,
    build_edge_frame,
    building_path_length,
    keller_cone_angle,
    solve_diffraction_point,
)
from .scenario import Scenario, run_estimator_mc, run_peb_map, run_power_ratio_sweep
