"""Quick self-checks of the closed forms against independent oracles.

Backs the ``check`` CLI subcommand; each check returns ``(name, passed, detail)``.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import CornerDiffraction, NonDifferentiable
from .fields import power_ratio
from .fisher import RangingModel, delay_crlb, identifiability, path_gradient
from .geometry import build_edge_frame, solve_diffraction_point
from .oracles import fermat_oracle, finite_difference_gradient

REFERENCE_ANCHORS = ((-10.0, -20.0, -10.0), (0.0, -7.0, -20.0), (10.0, -20.0, -10.0))


def random_scene(rng):
    anchor = (rng.uniform(-15, 15), rng.uniform(-30, -1), rng.uniform(-25, 30))
    node = (rng.uniform(-12, 12), rng.uniform(0.5, 20), rng.uniform(0, 40))
    z_e = node[2] + rng.uniform(-2, 2)
    return anchor, node, z_e


def check_diffraction_oracle(n=300, seed=1):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        anchor, node, z_e = random_scene(rng)
        edge = build_edge_frame("upper", -10.0, 10.0, z_e)
        _, p_ref, interior = fermat_oracle(anchor, node, z_e, -10.0, 10.0)
        try:
            p = solve_diffraction_point(anchor, node, edge).path_length
        except CornerDiffraction:
            if interior:
                return "diffraction point vs golden section", False, f"spurious corner at {anchor}, {node}"
            continue
        if not interior:
            return "diffraction point vs golden section", False, f"missed corner at {anchor}, {node}"
        worst = max(worst, abs(p - p_ref))
    return "diffraction point vs golden section", worst <= 1e-9, f"max |dp| = {worst:.3g} m"


def check_jacobian(n=300, seed=2):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        anchor, node, _ = random_scene(rng)
        try:
            g = path_gradient(anchor, node, 2.0)
        except (CornerDiffraction, NonDifferentiable):
            continue
        fd = finite_difference_gradient(anchor, node, 2.0, -10.0, 10.0)
        worst = max(worst, float(np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-12)))
    return "closed-form Jacobian vs finite differences", worst <= 1e-5, f"max rel err = {worst:.3g}"


def check_power_ratio():
    r60, r90 = power_ratio(math.radians(60)), power_ratio(math.radians(90))
    ok = abs(r60 - 3.0) < 1e-12 and r90 == 1.0
    return "power ratio anchors", ok, f"theta=60: {r60:.12g}, theta=90: {r90:.12g}"


def check_delay_crlb():
    sigma = 299_792_458.0 * math.sqrt(delay_crlb(RangingModel(100e6, 10.0)))
    return "delay CRLB anchor", abs(sigma - 0.1067) <= 1e-4, f"range std = {sigma:.6f} m"


def check_identifiability():
    generic = identifiability(REFERENCE_ANCHORS, (3.0, 10.0, 22.0), 2.0)
    degenerate = identifiability(((0.0, -20.0, -10.0), (0.0, -7.0, -20.0), (0.0, -30.0, 5.0)), (0.0, 10.0, 22.0), 2.0)
    pair = identifiability(REFERENCE_ANCHORS[:2], (3.0, 10.0, 22.0), 2.0)
    ok = generic == ("identifiable", 3) and degenerate == ("rank_deficient", 2) and pair[1] <= 2
    return "identifiability", ok, f"generic={generic}, x=0 plane={degenerate}, two anchors={pair}"


ALL_CHECKS = (check_diffraction_oracle, check_jacobian, check_power_ratio, check_delay_crlb, check_identifiability)


def run_checks():
    return [check() for check in ALL_CHECKS]
