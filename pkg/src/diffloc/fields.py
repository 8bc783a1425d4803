"""GTD diffracted fields, Keller coefficients and the upper/lower MPC power ratio.

Fields are complex numpy vectors with the ``exp(-j k r)`` phase convention.
Keller coefficients are used as-is; they diverge at the shadow boundaries,
where ``ShadowBoundary`` is raised instead of switching to UTD.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import DEFAULT_TOLERANCES, Tolerances, wavenumber
from .errors import Divergent, GrazingRay, InvalidGeometry, ShadowBoundary
from .geometry import (
    LOWER,
    UPPER,
    DiffractingEdge,
    DiffractionSolution,
    build_edge_frame,
    building_path_length,
    check_unit,
    edge_height,
)


@dataclass(frozen=True)
class RayFrame:
    """Edge-fixed unit vectors for the incident (primed) and diffracted rays."""

    phi_p: np.ndarray
    beta0_p: np.ndarray
    phi: np.ndarray
    beta0: np.ndarray
    s_p: np.ndarray
    s: np.ndarray
    e: np.ndarray


@dataclass(frozen=True)
class DiffractionCoefficients:
    d_s: complex
    d_h: complex
    psi: float
    psi_p: float
    gamma0: float


@dataclass(frozen=True)
class DiffractedField:
    e: np.ndarray  # complex (3,), V/m
    e_beta0: complex
    e_phi: complex

    @property
    def power(self) -> float:
        return float(np.sum(np.abs(self.e) ** 2))


def ray_frames(s_p, s, e, tol: Tolerances = DEFAULT_TOLERANCES) -> RayFrame:
    """Build the ray-fixed (phi, beta0) pairs for the incident and diffracted rays.

    Raises:
        GrazingRay: either ray is parallel to the edge.
    """
    s_p = check_unit(s_p, tol)
    s = check_unit(s, tol)
    e = check_unit(e, tol)
    cross_p = np.cross(e, s_p)
    cross = np.cross(e, s)
    n_p, n = np.linalg.norm(cross_p), np.linalg.norm(cross)
    if n_p <= tol.grazing or n <= tol.grazing:
        raise GrazingRay("ray is parallel to the edge")
    phi_p = -cross_p / n_p
    phi = cross / n
    return RayFrame(
        phi_p=phi_p,
        beta0_p=np.cross(phi_p, s_p),
        phi=phi,
        beta0=np.cross(phi, s),
        s_p=s_p,
        s=s,
        e=e,
    )


def _perpendicular_part(v: np.ndarray, e: np.ndarray, tol: Tolerances) -> np.ndarray:
    t = v - (v @ e) * e
    n = np.linalg.norm(t)
    if n <= tol.grazing:
        raise GrazingRay("ray is parallel to the edge")
    return t / n


def psi_angles(frame: RayFrame, edge: DiffractingEdge, tol: Tolerances = DEFAULT_TOLERANCES):
    """Angles (psi', psi) of the incident and diffracted rays measured in the plane normal to the edge.

    The incident angle is taken from the reversed incident direction so both
    angles are measured from the half-plane face ``t0``.
    """
    e, n0, t0 = edge.frame()
    st_p = _perpendicular_part(frame.s_p, e, tol)
    st = _perpendicular_part(frame.s, e, tol)
    psi_p = math.pi - (math.pi - math.acos(np.clip(-st_p @ t0, -1.0, 1.0))) * np.sign(-st_p @ n0)
    psi = math.pi - (math.pi - math.acos(np.clip(st @ t0, -1.0, 1.0))) * np.sign(st @ n0)
    return float(psi_p), float(psi)


def keller_prefactor(gamma0: float, k: float, tol: Tolerances = DEFAULT_TOLERANCES) -> complex:
    """Common factor ``-exp(-j pi/4) / (2 sqrt(2 pi k) sin(gamma0))`` of both coefficients."""
    sg = math.sin(gamma0)
    if sg < 1e-9:
        raise GrazingRay(f"sin(gamma0)={sg:.3g}: grazing incidence along the edge")
    return -np.exp(-1j * math.pi / 4) / (2.0 * math.sqrt(2.0 * math.pi * k) * sg)


def keller_coefficients(
    psi_p: float, psi: float, gamma0: float, k: float, tol: Tolerances = DEFAULT_TOLERANCES
) -> DiffractionCoefficients:
    """Soft and hard Keller coefficients of a thin conducting half plane.

    Raises:
        ShadowBoundary: within ``tol.shadow`` of the incident or reflection shadow boundary.
        GrazingRay: ``sin(gamma0)`` vanishes.
    """
    c_minus = math.cos(0.5 * (psi - psi_p))
    c_plus = math.cos(0.5 * (psi + psi_p))
    if abs(c_minus) < tol.shadow or abs(c_plus) < tol.shadow:
        raise ShadowBoundary(f"psi={psi:.6g}, psi'={psi_p:.6g} is on a shadow boundary")
    amp = keller_prefactor(gamma0, k, tol)
    return DiffractionCoefficients(
        d_s=complex(amp * (1.0 / c_minus - 1.0 / c_plus)),
        d_h=complex(amp * (1.0 / c_minus + 1.0 / c_plus)),
        psi=psi,
        psi_p=psi_p,
        gamma0=gamma0,
    )


def approx_coefficients(theta: float, prefactor_A: complex = 1.0):
    """Far-node approximation of the soft/hard coefficients for both window edges.

    Valid when the window is small compared with the node's distance to it,
    so that psi ~ 3*pi/2, and psi' is ``theta`` (lower) or ``pi - theta`` (upper).

    Returns:
        ``(ds_lower, ds_upper, dh_lower, dh_upper)``.
    """
    if not 0.0 < theta < math.pi / 2:
        raise ValueError(f"theta must lie in (0, pi/2), got {theta}")
    ct = math.cos(theta)
    if ct < 1e-6:
        raise ShadowBoundary("theta too close to pi/2: approximate coefficients diverge")
    minus = -2.0 * math.sqrt(1.0 - ct) / ct
    plus = 2.0 * math.sqrt(1.0 + ct) / ct
    return prefactor_A * minus, prefactor_A * plus, prefactor_A * plus, prefactor_A * minus


def diffracted_field(
    e0, frame: RayFrame, coeffs: DiffractionCoefficients, s_p_len: float, s_len: float, k: float
) -> DiffractedField:
    """Field at the observation point from a linearly polarised source field ``e0``.

    The incident field at the diffraction point carries ``exp(-j k |s'|)/|s'|``
    spreading; the diffracted field adds ``exp(-j k |s|)/sqrt(|s|)``.
    """
    if not (s_p_len > 0.0 and s_len > 0.0):
        raise InvalidGeometry("path segments must have positive length")
    e0 = np.asarray(e0, dtype=complex).reshape(3)
    incident = np.exp(-1j * k * s_p_len) / s_p_len
    ei_beta = (e0 @ frame.beta0_p) * incident
    ei_phi = (e0 @ frame.phi_p) * incident
    spread = np.exp(-1j * k * s_len) / math.sqrt(s_len)
    ed_beta = -coeffs.d_s * ei_beta * spread
    ed_phi = -coeffs.d_h * ei_phi * spread
    return DiffractedField(e=ed_beta * frame.beta0 + ed_phi * frame.phi, e_beta0=ed_beta, e_phi=ed_phi)


def power_ratio(theta: float) -> float:
    """Approximate upper/lower diffraction MPC power ratio ``(1+cos t)/(1-cos t)``.

    Raises:
        Divergent: at ``theta == 0``.
    """
    if theta == 0.0:
        raise Divergent("power ratio diverges at theta = 0")
    if not 0.0 < theta <= math.pi / 2:
        raise ValueError(f"theta must lie in (0, pi/2], got {theta}")
    ct = math.cos(theta)
    if theta == math.pi / 2:
        ct = 0.0
    return (1.0 + ct) / (1.0 - ct)


def edge_field(
    anchor,
    node,
    window_w: float,
    edge_kind: str,
    e0=(1.0, 0.0, 0.0),
    x1: float = -10.0,
    x2: float = 10.0,
    k: float | None = None,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> tuple[DiffractedField, DiffractionSolution, DiffractionCoefficients]:
    """Full GTD field of one window-edge MPC in the simplified building model."""
    k = wavenumber() if k is None else k
    sol = building_path_length(anchor, node, window_w, edge_kind, x1, x2, tol)
    edge = build_edge_frame(edge_kind, x1, x2, edge_height(node[2], window_w, edge_kind))
    frame = ray_frames(sol.incident, sol.diffracted, edge.e, tol)
    psi_p, psi = psi_angles(frame, edge, tol)
    coeffs = keller_coefficients(psi_p, psi, sol.gamma0, k, tol)
    field = diffracted_field(e0, frame, coeffs, sol.opl, sol.ipl, k)
    return field, sol, coeffs


def exact_power_ratio(anchor, node, window_w: float, x1=-10.0, x2=10.0, k=None, e0=(1.0, 0.0, 0.0)) -> float:
    """``|E_upper|^2 / |E_lower|^2`` from the full field of each window edge."""
    upper, _, _ = edge_field(anchor, node, window_w, UPPER, e0, x1, x2, k)
    lower, _, _ = edge_field(anchor, node, window_w, LOWER, e0, x1, x2, k)
    return upper.power / lower.power


def elevation_angle(anchor, node, window_w: float) -> float:
    """Anchor elevation ``theta`` seen from the lower window edge (0 below, pi/2 level)."""
    ya, za = anchor[1], anchor[2]
    dz = edge_height(node[2], window_w, LOWER) - za
    return math.acos(dz / math.hypot(ya, dz))


def anchor_at_elevation(node, window_w: float, theta: float, distance: float, dx: float = 0.0):
    """Anchor placed ``distance`` from the lower edge at elevation ``theta`` (radians)."""
    z_low = edge_height(node[2], window_w, LOWER)
    return (node[0] + dx, -distance * math.sin(theta), z_low - distance * math.cos(theta))


__all__ = [
    "RayFrame",
    "DiffractionCoefficients",
    "DiffractedField",
    "ray_frames",
    "psi_angles",
    "keller_prefactor",
    "keller_coefficients",
    "approx_coefficients",
    "diffracted_field",
    "power_ratio",
    "edge_field",
    "exact_power_ratio",
    "elevation_angle",
    "anchor_at_elevation",
    "UPPER",
    "LOWER",
]
