"""Edge-diffraction geometry for a half plane and the simplified building model.

The wall is the plane Y=0 with anchors outside (y < 0) and nodes inside
(y > 0); Z is up.  Window edges are horizontal, parallel to the X axis.
The diffraction point on an edge is found from the quadratic in the convex
weight ``lambda`` that follows from the law of diffraction, then polished
with a few Newton steps on the Fermat stationarity condition.

Two layers are exposed: vectorised helpers (``diffraction_paths``) that work
on broadcast numpy arrays and report failures through a status array, and
scalar operations (``solve_diffraction_point``, ``building_path_length``)
that validate their inputs and raise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .config import DEFAULT_TOLERANCES, Tolerances
from .errors import CornerDiffraction, DegenerateEdge, InvalidGeometry, InvalidVector, NoSolution

UPPER = "upper"
LOWER = "lower"

# status codes of the vectorised solver
OK = 0
CORNER = 1
NO_SOLUTION = 2

_NEWTON_POLISH_STEPS = 3
_SCREEN_RESIDUAL = 1e-6


class Point3(NamedTuple):
    x: float
    y: float
    z: float


class Vec3(NamedTuple):
    x: float
    y: float
    z: float


def as_point(p) -> Point3:
    arr = np.asarray(p, dtype=float).reshape(3)
    if not np.all(np.isfinite(arr)):
        raise InvalidGeometry(f"non-finite coordinates: {arr}")
    return Point3(*map(float, arr))


def check_unit(v, tol: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
    arr = np.asarray(v, dtype=float).reshape(3)
    if abs(np.linalg.norm(arr) - 1.0) > tol.unit_norm:
        raise InvalidVector(f"expected a unit vector, got norm {np.linalg.norm(arr)!r}")
    return arr


@dataclass(frozen=True)
class DiffractingEdge:
    """Horizontal edge in the plane Y=0 running from x1 to x2 at height z_e.

    ``e``, ``n0`` and ``t0`` are the edge tangent, the half-plane normal
    pointing towards the source side and the in-plane normal pointing away
    from the edge, with ``t0 = n0 x e``.
    """

    x1: float
    x2: float
    z_e: float
    kind: str
    e: Vec3
    n0: Vec3
    t0: Vec3

    @property
    def X1(self) -> Point3:
        return Point3(self.x1, 0.0, self.z_e)

    @property
    def X2(self) -> Point3:
        return Point3(self.x2, 0.0, self.z_e)

    def frame(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.array(self.e), np.array(self.n0), np.array(self.t0)


_EDGE_FRAMES = {
    # kind: (e, n0)
    LOWER: ((-1.0, 0.0, 0.0), (0.0, -1.0, 0.0)),
    UPPER: ((1.0, 0.0, 0.0), (0.0, -1.0, 0.0)),
}


def build_edge_frame(kind: str, x1: float, x2: float, z_e: float) -> DiffractingEdge:
    """Construct a window edge with its (e, n0, t0) frame.

    Args:
        kind: ``"upper"`` or ``"lower"`` window edge.
        x1, x2: x coordinates of the edge endpoints, meters.
        z_e: edge height, meters.

    Raises:
        DegenerateEdge: if ``x1 == x2``.
    """
    if kind not in _EDGE_FRAMES:
        raise ValueError(f"edge kind must be 'upper' or 'lower', got {kind!r}")
    if not np.isfinite([x1, x2, z_e]).all():
        raise InvalidGeometry("edge coordinates must be finite")
    if x1 == x2:
        raise DegenerateEdge(f"zero-length edge at x={x1}")
    e, n0 = _EDGE_FRAMES[kind]
    t0 = np.cross(n0, e)
    return DiffractingEdge(
        float(x1), float(x2), float(z_e), kind, Vec3(*e), Vec3(*n0), Vec3(*(t0 + 0.0))
    )


@dataclass(frozen=True)
class DiffractionSolution:
    q: Point3
    lam: float
    opl: float
    ipl: float
    path_length: float
    gamma0: float
    incident: Vec3  # unit vector anchor -> Q_e
    diffracted: Vec3  # unit vector Q_e -> node
    law_residual: float


@dataclass
class PathBatch:
    """Vectorised diffraction solutions, one entry per broadcast input."""

    lam: np.ndarray
    qx: np.ndarray
    opl: np.ndarray
    ipl: np.ndarray
    path_length: np.ndarray
    status: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    @property
    def ok(self) -> np.ndarray:
        return self.status == OK


def quadratic_coefficients(xa, ya, za, xn, yn, zn, z_e, x1, x2):
    """Coefficients (a, b, c) of ``a*lam**2 + b*lam + c = 0`` for the diffraction point.

    ``a`` is written as ``(x1-x2)^2 (Dn - Da)`` with ``Dn = (z_e-zn)^2 + yn^2`` and
    ``Da = (z_e-za)^2 + ya^2``; this is the same polynomial as the expanded
    form ``(yn^2-ya^2) + (zn^2-za^2) + 2 z_e (za-zn)`` but avoids cancellation.
    """
    dn = (z_e - zn) ** 2 + yn**2
    da = (z_e - za) ** 2 + ya**2
    d12 = x1 - x2
    a = d12**2 * (dn - da)
    b = 2.0 * d12 * ((x2 - xa) * dn - (x2 - xn) * da)
    c = (x2 - xa) ** 2 * dn - (x2 - xn) ** 2 * da
    return a, b, c


def _law_residual(qx, xa, ya, za, xn, yn, zn, z_e):
    opl = np.sqrt((qx - xa) ** 2 + ya**2 + (z_e - za) ** 2)
    ipl = np.sqrt((xn - qx) ** 2 + yn**2 + (zn - z_e) ** 2)
    return (qx - xa) / opl - (xn - qx) / ipl, opl, ipl


def _polish(qx, xa, ya, za, xn, yn, zn, z_e, steps=_NEWTON_POLISH_STEPS):
    # Newton on dp/dq_x = 0; p(q_x) is strictly convex so the stationary point is unique
    for _ in range(steps):
        g, opl, ipl = _law_residual(qx, xa, ya, za, xn, yn, zn, z_e)
        dg = (ya**2 + (z_e - za) ** 2) / opl**3 + (yn**2 + (zn - z_e) ** 2) / ipl**3
        qx = qx - g / dg
    return qx


def diffraction_paths(anchor, node, z_e, x1, x2, tol: Tolerances = DEFAULT_TOLERANCES) -> PathBatch:
    """Solve the diffraction point for broadcast arrays of anchors, nodes and edge heights.

    Args:
        anchor: array (..., 3) of anchor coordinates.
        node: array (..., 3) of node coordinates.
        z_e: edge height(s), broadcastable against the leading shape.
        x1, x2: edge endpoint x coordinates (scalars).

    Returns:
        A ``PathBatch``; entries whose status is not ``OK`` hold NaN lengths.
    """
    anchor = np.asarray(anchor, dtype=float)
    node = np.asarray(node, dtype=float)
    xa, ya, za = anchor[..., 0], anchor[..., 1], anchor[..., 2]
    xn, yn, zn = node[..., 0], node[..., 1], node[..., 2]
    z_e = np.asarray(z_e, dtype=float)
    xa, ya, za, xn, yn, zn, z_e = np.broadcast_arrays(xa, ya, za, xn, yn, zn, z_e)
    d12 = x1 - x2
    a, b, c = quadratic_coefficients(xa, ya, za, xn, yn, zn, z_e, x1, x2)

    with np.errstate(divide="ignore", invalid="ignore"):
        disc = b * b - 4.0 * a * c
        scale = b * b + np.abs(4.0 * a * c)
        no_solution = disc < -tol.discriminant * scale
        sq = np.sqrt(np.maximum(disc, 0.0))

        linear = np.abs(a) < tol.linear_fallback * np.maximum(np.abs(b), np.abs(c))
        # numerically stable pair of roots
        qq = -0.5 * (b + np.copysign(sq, b))
        r1 = np.where(linear, -c / b, qq / a)
        r2 = np.where(linear, np.nan, c / qq)
        # a ~ 0 and b ~ 0 only when xa == xn: the symmetric point q_x = xn
        flat = linear & (np.abs(b) <= tol.linear_fallback * np.maximum(np.abs(c), 1.0))
        r1 = np.where(flat, (xn - x2) / d12, r1)

        # unfolded-wall point; covers a = b = c = 0 where the quadratic is void
        sdn = np.sqrt((z_e - zn) ** 2 + yn * yn)
        sda = np.sqrt((z_e - za) ** 2 + ya * ya)
        r3 = ((xa * sdn + xn * sda) / (sdn + sda) - x2) / d12

        best_q = np.full(xa.shape, np.nan)
        best_p = np.full(xa.shape, np.inf)
        for r in (r1, r2, r3):
            q0 = r * d12 + x2
            g0, _, _ = _law_residual(q0, xa, ya, za, xn, yn, zn, z_e)
            screened = np.isfinite(q0) & (np.abs(g0) <= _SCREEN_RESIDUAL)
            q = np.where(screened, _polish(np.where(screened, q0, xn), xa, ya, za, xn, yn, zn, z_e), np.nan)
            g, opl, ipl = _law_residual(q, xa, ya, za, xn, yn, zn, z_e)
            p = opl + ipl
            take = screened & (np.abs(g) <= tol.law_residual) & (p < best_p)
            best_q = np.where(take, q, best_q)
            best_p = np.where(take, p, best_p)

        lam = (best_q - x2) / d12
        in_range = (lam >= -tol.lambda_clamp) & (lam <= 1.0 + tol.lambda_clamp)
        status = np.where(no_solution, NO_SOLUTION, np.where(np.isfinite(lam) & in_range, OK, CORNER))
        lam_c = np.clip(lam, 0.0, 1.0)
        qx = np.where(status == OK, lam_c * d12 + x2, np.nan)
        _, opl, ipl = _law_residual(qx, xa, ya, za, xn, yn, zn, z_e)
    return PathBatch(
        lam=np.where(status == CORNER, lam, np.where(status == OK, lam_c, np.nan)),
        qx=qx,
        opl=opl,
        ipl=ipl,
        path_length=opl + ipl,
        status=status,
        a=a,
        b=b,
        c=c,
    )


def keller_cone_angle(incident, edge, tol: Tolerances = DEFAULT_TOLERANCES) -> float:
    """Half-angle of the Keller cone, ``arccos(|s' . e|)`` in [0, pi/2].

    Raises:
        InvalidVector: if either input is not unit norm.
    """
    s = check_unit(incident, tol)
    e = check_unit(edge, tol)
    return float(np.arccos(np.clip(abs(float(s @ e)), 0.0, 1.0)))


def _check_sides(anchor: Point3, node: Point3) -> None:
    if not anchor.y < 0.0:
        raise InvalidGeometry(f"anchor must lie outside the wall (y < 0), got y={anchor.y}")
    if not node.y > 0.0:
        raise InvalidGeometry(f"node must lie inside the wall (y > 0), got y={node.y}")


def solve_diffraction_point(
    anchor, node, edge: DiffractingEdge, tol: Tolerances = DEFAULT_TOLERANCES
) -> DiffractionSolution:
    """Diffraction point, path lengths and cone angle for one anchor/node pair.

    Raises:
        InvalidGeometry: anchor and node not on opposite sides of Y=0.
        CornerDiffraction: the Fermat point lies beyond the edge endpoints.
        NoSolution: the quadratic has no real root.
    """
    anchor, node = as_point(anchor), as_point(node)
    _check_sides(anchor, node)
    batch = diffraction_paths(np.array(anchor), np.array(node), edge.z_e, edge.x1, edge.x2, tol)
    status = int(batch.status)
    if status == NO_SOLUTION:
        raise NoSolution("negative discriminant in the diffraction-point quadratic")
    if status == CORNER:
        lam = float(batch.lam)
        raise CornerDiffraction(f"diffraction point outside the edge (lambda={lam:.6g})", lam=lam)
    qx = float(batch.qx)
    q = Point3(qx, 0.0, edge.z_e)
    opl, ipl = float(batch.opl), float(batch.ipl)
    incident = (np.array(q) - np.array(anchor)) / opl
    diffracted = (np.array(node) - np.array(q)) / ipl
    e = np.array(edge.e)
    residual = abs(float(incident @ e) - float(diffracted @ e))
    gamma0 = float(np.arccos(np.clip(abs(float(incident @ e)), 0.0, 1.0)))
    return DiffractionSolution(
        q=q,
        lam=float(batch.lam),
        opl=opl,
        ipl=ipl,
        path_length=opl + ipl,
        gamma0=gamma0,
        incident=Vec3(*incident),
        diffracted=Vec3(*diffracted),
        law_residual=residual,
    )


def edge_height(node_z: float, window_w: float, edge_kind: str) -> float:
    """Edge height for a node at mid-window: ``zn + w/2`` (upper) or ``zn - w/2`` (lower)."""
    if edge_kind == UPPER:
        return node_z + 0.5 * window_w
    if edge_kind == LOWER:
        return node_z - 0.5 * window_w
    raise ValueError(f"edge kind must be 'upper' or 'lower', got {edge_kind!r}")


def building_path_length(
    anchor,
    node,
    window_w: float,
    edge_kind: str = UPPER,
    x1: float = -10.0,
    x2: float = 10.0,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> DiffractionSolution:
    """Diffraction path through the window on the node's floor.

    The window edge sits half a window height above (upper) or below (lower)
    the node, so the inside path length is
    ``sqrt((xn - qx)^2 + yn^2 + (w/2)^2)``.
    """
    if not window_w > 0.0:
        raise InvalidGeometry(f"window height must be positive, got {window_w}")
    node = as_point(node)
    edge = build_edge_frame(edge_kind, x1, x2, edge_height(node.z, window_w, edge_kind))
    return solve_diffraction_point(anchor, node, edge, tol)
