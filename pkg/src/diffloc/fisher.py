"""Ranging CRLB, closed-form path-length Jacobian, FIM and position error bounds."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULT_TOLERANCES, SPEED_OF_LIGHT, Tolerances
from .errors import CornerDiffraction, InvalidGeometry, NonDifferentiable, NotIdentifiable, NoSolution
from .geometry import CORNER, LOWER, NO_SOLUTION, UPPER, as_point, diffraction_paths

_DOUBLE_ROOT = 1e-6


@dataclass(frozen=True)
class RangingModel:
    """TOF ranging parameters: signal bandwidth (Hz) and linear SNR per anchor.

    ``snr_linear`` may be a scalar (shared by all anchors) or a sequence.
    """

    bandwidth_beta: float
    snr_linear: float | tuple = 10.0
    c: float = SPEED_OF_LIGHT

    def __post_init__(self):
        if not self.bandwidth_beta > 0:
            raise ValueError("bandwidth must be positive")
        snr = np.atleast_1d(np.asarray(self.snr_linear, dtype=float))
        if not np.all(snr > 0):
            raise ValueError("SNR must be positive")
        if snr.size > 1:
            object.__setattr__(self, "snr_linear", tuple(float(s) for s in snr))

    @classmethod
    def from_db(cls, bandwidth_beta: float, snr_db, c: float = SPEED_OF_LIGHT) -> "RangingModel":
        snr = 10.0 ** (np.asarray(snr_db, dtype=float) / 10.0)
        return cls(bandwidth_beta, float(snr) if snr.ndim == 0 else tuple(snr), c)

    def snr(self, n_anchors: int) -> np.ndarray:
        snr = np.atleast_1d(np.asarray(self.snr_linear, dtype=float))
        if snr.size == 1:
            return np.full(n_anchors, snr[0])
        if snr.size != n_anchors:
            raise ValueError(f"{snr.size} SNR values for {n_anchors} anchors")
        return snr

    def delay_crlbs(self, n_anchors: int) -> np.ndarray:
        return 1.0 / (8.0 * math.pi**2 * self.bandwidth_beta**2 * self.snr(n_anchors))

    def range_sigmas(self, n_anchors: int) -> np.ndarray:
        """Per-anchor range standard deviation ``c * sqrt(CRLB)`` in meters."""
        return self.c * np.sqrt(self.delay_crlbs(n_anchors))


def delay_crlb(model: RangingModel, anchor_index: int = 0) -> float:
    """CRLB on the first-path delay, ``1 / (8 pi^2 beta^2 SNR_j)`` in s^2."""
    snr = np.atleast_1d(np.asarray(model.snr_linear, dtype=float))
    s = snr[0] if snr.size == 1 else snr[anchor_index]
    return 1.0 / (8.0 * math.pi**2 * model.bandwidth_beta**2 * s)


def _edge_offset(window_w: float, edge_kind: str) -> float:
    if edge_kind == UPPER:
        return 0.5 * window_w
    if edge_kind == LOWER:
        return -0.5 * window_w
    raise ValueError(f"edge kind must be 'upper' or 'lower', got {edge_kind!r}")


def path_gradients(anchors, nodes, window_w, x1, x2, edge_kind=UPPER, tol: Tolerances = DEFAULT_TOLERANCES):
    """Vectorised path lengths and gradients with respect to the node position.

    Args:
        anchors: array (..., 3), broadcast against ``nodes``.
        nodes: array (..., 3).

    Returns:
        ``(p, grad, batch)`` with ``p`` of the broadcast shape, ``grad`` of
        shape (..., 3) and ``batch`` the underlying ``PathBatch``.  Entries
        without a valid diffraction point are NaN.

    The derivative of the diffraction point follows from differentiating the
    root ``lam = (-b +- sqrt(b^2 - 4ac)) / 2a`` of the quadratic; the branch
    sign is recovered from the selected root.  When ``a`` vanishes the
    linear root ``-c/b`` is differentiated instead.
    """
    anchors = np.asarray(anchors, dtype=float)
    nodes = np.asarray(nodes, dtype=float)
    h = _edge_offset(window_w, edge_kind)
    xa, ya, za = anchors[..., 0], anchors[..., 1], anchors[..., 2]
    xn, yn, zn = nodes[..., 0], nodes[..., 1], nodes[..., 2]
    xa, ya, za, xn, yn, zn = np.broadcast_arrays(xa, ya, za, xn, yn, zn)
    z_e = zn + h
    batch = diffraction_paths(np.stack([xa, ya, za], -1), np.stack([xn, yn, zn], -1), z_e, x1, x2, tol)
    a, b, c = batch.a, batch.b, batch.c
    qx, opl, ipl = batch.qx, batch.opl, batch.ipl
    lam = batch.lam

    d12 = x1 - x2
    dz_a = z_e - za  # edge height above the anchor
    da = dz_a**2 + ya**2
    zeros = np.zeros_like(a)

    # partials of the quadratic coefficients w.r.t. (xn, yn, zn); the edge rides with the node
    a_d = (zeros, 2.0 * yn * d12**2, -2.0 * d12**2 * dz_a)
    b_d = (
        2.0 * d12 * da,
        4.0 * yn * d12 * (x2 - xa),
        -4.0 * d12 * (x2 - xn) * dz_a,
    )
    c_d = (
        2.0 * (x2 - xn) * da,
        2.0 * yn * (x2 - xa) ** 2,
        -2.0 * (x2 - xn) ** 2 * dz_a,
    )

    with np.errstate(divide="ignore", invalid="ignore"):
        disc = np.maximum(b * b - 4.0 * a * c, 0.0)
        sq = np.sqrt(disc)
        branch = np.sign(2.0 * a * lam + b)
        linear = np.abs(a) < tol.linear_fallback * np.maximum(np.abs(b), np.abs(c))
        dq = []
        for ad, bd, cd in zip(a_d, b_d, c_d):
            root_term = (b * bd - 2.0 * c * ad - 2.0 * a * cd) / sq
            dlam_quad = (ad * (b - branch * sq) / a - bd + branch * root_term) / (2.0 * a)
            dlam_lin = -(bd * lam + cd) / b
            dq.append(d12 * np.where(linear, dlam_lin, dlam_quad))
        dqx, dqy, dqz = dq

        # near a double root (xa ~ xn) the root formula is singular; differentiate
        # the stationarity condition dp/dqx = 0 implicitly instead
        double = ~linear & (sq < _DOUBLE_ROOT * np.sqrt(b * b + np.abs(4.0 * a * c)))
        if np.any(double):
            dn = yn**2 + h**2
            g_u = da / opl**3 + dn / ipl**3
            dqx = np.where(double, (dn / ipl**3) / g_u, dqx)
            dqy = np.where(double, -((xn - qx) * yn / ipl**3) / g_u, dqy)
            dqz = np.where(double, ((qx - xa) * dz_a / opl**3) / g_u, dqz)

        ua = (qx - xa) / opl
        un = (xn - qx) / ipl
        grad = np.stack(
            [
                ua * dqx + un * (1.0 - dqx),
                ua * dqy + (-un * dqy) + yn / ipl,
                ua * dqz - un * dqz + dz_a / opl,
            ],
            axis=-1,
        )
    return batch.path_length, grad, batch


def path_gradient(anchor, node, window_w, x1=-10.0, x2=10.0, edge_kind=UPPER, tol: Tolerances = DEFAULT_TOLERANCES):
    """Gradient (dp/dxn, dp/dyn, dp/dzn) of one anchor's window-edge path length.

    Raises:
        CornerDiffraction: no valid diffraction point on the edge.
        NonDifferentiable: the diffraction point sits on an edge endpoint.
    """
    anchor, node = as_point(anchor), as_point(node)
    if not (anchor.y < 0.0 < node.y):
        raise InvalidGeometry("anchor must have y < 0 and node y > 0")
    _, grad, batch = path_gradients(np.array(anchor), np.array(node), window_w, x1, x2, edge_kind, tol)
    status = int(batch.status)
    if status == CORNER:
        raise CornerDiffraction("diffraction point outside the edge", lam=float(batch.lam))
    if status == NO_SOLUTION:
        raise NoSolution("no real diffraction point")
    lam = float(batch.lam)
    if lam <= tol.lambda_clamp or lam >= 1.0 - tol.lambda_clamp:
        raise NonDifferentiable(f"diffraction point at an edge endpoint (lambda={lam:.3g})")
    return np.asarray(grad, dtype=float)


def jacobian(anchors, node, window_w, x1=-10.0, x2=10.0, edge_kind=UPPER, tol: Tolerances = DEFAULT_TOLERANCES):
    """3 x M Jacobian whose column j is the gradient of anchor j's path length."""
    return np.column_stack([path_gradient(a, node, window_w, x1, x2, edge_kind, tol) for a in anchors])


def numerical_rank(matrix, tol: Tolerances = DEFAULT_TOLERANCES) -> int:
    s = np.linalg.svd(np.asarray(matrix, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s >= tol.rank * s[0]))


@dataclass
class FisherReport:
    jacobian: np.ndarray
    fim: np.ndarray
    rank: int
    peb_3d: float | None = None
    peb_z: float | None = None
    condition: float = math.inf
    ill_conditioned: bool = False
    warnings: list = field(default_factory=list)

    @property
    def identifiable(self) -> bool:
        return self.rank == 3


def fim_from_jacobian(jac: np.ndarray, sigmas: np.ndarray) -> np.ndarray:
    """Position FIM ``J diag(1/sigma_j^2) J^T`` for independent range errors."""
    weighted = jac / np.asarray(sigmas, dtype=float)
    fim = weighted @ weighted.T
    return 0.5 * (fim + fim.T)


def _invert_spd(fim: np.ndarray) -> np.ndarray:
    try:
        chol = np.linalg.cholesky(fim)
    except np.linalg.LinAlgError:
        return np.linalg.solve(fim, np.eye(3))
    inv_l = np.linalg.solve(chol, np.eye(3))
    return inv_l.T @ inv_l


def build_fim(anchors, node, window_w, x1, x2, model: RangingModel, edge_kind=UPPER,
              tol: Tolerances = DEFAULT_TOLERANCES, strict: bool = True) -> FisherReport:
    """Fisher information for the node position from per-anchor TOF ranges.

    Range noise on anchor j has standard deviation ``c * sqrt(CRLB_j)``, so
    the FIM is ``J diag(1 / (c^2 CRLB_j)) J^T`` (units 1/m^2).  PEBs are
    ``sqrt(trace(FIM^-1))`` and ``sqrt(FIM^-1[2, 2])``.

    Raises:
        NotIdentifiable: rank < 3 and ``strict`` is set; otherwise the report
        is returned without PEBs.
    """
    anchors = [as_point(a) for a in anchors]
    if len(anchors) < 1:
        raise ValueError("need at least one anchor")
    jac = jacobian(anchors, node, window_w, x1, x2, edge_kind, tol)
    fim = fim_from_jacobian(jac, model.range_sigmas(len(anchors)))
    rank = numerical_rank(jac, tol)
    report = FisherReport(jacobian=jac, fim=fim, rank=rank)
    if rank < 3:
        if strict:
            raise NotIdentifiable(f"Jacobian rank {rank} < 3: position not identifiable", rank)
        return report
    report.condition = float(np.linalg.cond(fim))
    inv = _invert_spd(fim)
    if report.condition > tol.ill_conditioned:
        report.ill_conditioned = True
        report.warnings.append("IllConditioned")
        warnings.warn(f"FIM condition number {report.condition:.3g} exceeds threshold", RuntimeWarning)
    report.peb_3d = float(math.sqrt(np.trace(inv)))
    report.peb_z = float(math.sqrt(inv[2, 2]))
    return report


def identifiability(anchors, node, window_w, x1=-10.0, x2=10.0, edge_kind=UPPER,
                    tol: Tolerances = DEFAULT_TOLERANCES):
    """``("identifiable", 3)`` or ``("rank_deficient", r)`` from the unit-weight Jacobian rank."""
    jac = jacobian([as_point(a) for a in anchors], node, window_w, x1, x2, edge_kind, tol)
    rank = numerical_rank(jac, tol)
    return ("identifiable", 3) if rank == 3 else ("rank_deficient", rank)


def batch_peb(anchors, nodes, window_w, x1, x2, sigmas, edge_kind=UPPER, tol: Tolerances = DEFAULT_TOLERANCES):
    """PEBs for many nodes at once.

    Args:
        anchors: (M, 3) anchor positions.
        nodes: (N, 3) node positions.
        sigmas: (M,) range standard deviations in meters.

    Returns:
        ``(peb_3d, peb_z, rank)`` arrays of length N; PEBs are NaN where
        rank < 3 or the geometry is invalid (rank reported as -1).
    """
    anchors = np.asarray(anchors, dtype=float)
    nodes = np.asarray(nodes, dtype=float)
    _, grad, batch = path_gradients(anchors[None, :, :], nodes[:, None, :], window_w, x1, x2, edge_kind, tol)
    sides = (anchors[None, :, 1] < 0.0) & (nodes[:, None, 1] > 0.0)
    valid = np.all(batch.ok & sides, axis=1)
    jac = np.swapaxes(grad, 1, 2)  # (N, 3, M)
    jac = np.where(valid[:, None, None], jac, 0.0)
    s = np.linalg.svd(jac, compute_uv=False)
    with np.errstate(divide="ignore", invalid="ignore"):
        rank = np.sum(s >= tol.rank * s[:, :1], axis=1)
    rank = np.where(s[:, 0] > 0, rank, 0)
    rank = np.where(valid, rank, -1)
    weighted = jac / np.asarray(sigmas, dtype=float)[None, None, :]
    fim = weighted @ np.swapaxes(weighted, 1, 2)
    full = rank == 3
    inv = np.full(fim.shape, np.nan)
    if np.any(full):
        inv[full] = np.linalg.inv(fim[full])
    peb_3d = np.sqrt(np.trace(inv, axis1=1, axis2=2))
    peb_z = np.sqrt(inv[:, 2, 2])
    return peb_3d, peb_z, rank
