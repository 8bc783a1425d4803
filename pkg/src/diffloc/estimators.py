"""TOF range synthesis and node position estimators.

Two estimators are provided: a damped Gauss-Newton (Levenberg-Marquardt)
fit of the window-edge diffraction path model, and the textbook linear
least-squares trilateration that assumes straight-line ranges.  Both have a
batched form operating on many independent trials at once, which is what
the Monte Carlo driver uses.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import DEFAULT_TOLERANCES, Tolerances
from .errors import DegenerateGeometry, NotConverged
from .fisher import RangingModel, path_gradients
from .geometry import UPPER, Point3, as_point, build_edge_frame, edge_height, solve_diffraction_point

log = logging.getLogger(__name__)

STEP_TOL = 1e-8  # m
GRAD_TOL = 1e-10
MAX_ITER = 200
DAMPING_INIT = 1e-3
DAMPING_FACTOR = 10.0
N_RESTARTS = 5
_MIN_DEPTH = 1e-3  # smallest y an iterate may take, m


@dataclass(frozen=True)
class RangeMeasurementSet:
    ranges: np.ndarray
    sigma: np.ndarray
    anchors: tuple
    seed: int | None = None


@dataclass(frozen=True)
class PositionEstimate:
    alpha_hat: Point3
    iterations: int
    converged: bool
    residual_norm: float


def synthesize_ranges(truth, anchors, window_w, x1, x2, model: RangingModel, seed=None,
                      euclidean: bool = False, edge_kind=UPPER) -> RangeMeasurementSet:
    """Noisy first-path ranges ``p_j(truth) + N(0, sigma_j^2)``.

    ``sigma_j = c * sqrt(CRLB_j)`` from the ranging model; an infinite SNR gives
    noiseless ranges.  With ``euclidean`` the straight-line distance replaces
    the diffraction path (a model-matched case for the LLS baseline).
    """
    truth = np.array(as_point(truth))
    anchor_arr = np.array([as_point(a) for a in anchors])
    if euclidean:
        p = np.linalg.norm(anchor_arr - truth, axis=1)
    else:
        p, _, batch = path_gradients(anchor_arr, truth[None, :], window_w, x1, x2, edge_kind)
        if not np.all(batch.ok):
            # re-run the failing pair through the scalar path to raise the specific error
            bad = int(np.flatnonzero(~batch.ok)[0])
            edge = build_edge_frame(edge_kind, x1, x2, edge_height(truth[2], window_w, edge_kind))
            solve_diffraction_point(anchor_arr[bad], truth, edge)
    sigma = model.range_sigmas(len(anchor_arr))
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(len(anchor_arr)) * sigma
    return RangeMeasurementSet(
        ranges=np.asarray(p, dtype=float) + noise,
        sigma=sigma,
        anchors=tuple(Point3(*a) for a in anchor_arr),
        seed=seed,
    )


def _weights(sigma: np.ndarray) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0.0) or not np.all(np.isfinite(1.0 / sigma)):
        return np.ones_like(sigma)
    return 1.0 / sigma


def _project(alpha, bounds):
    lo, hi = bounds
    out = np.clip(alpha, lo, hi)
    out[..., 1] = np.maximum(out[..., 1], _MIN_DEPTH)
    return out


def _default_bounds(x1, x2):
    lo = np.array([min(x1, x2), _MIN_DEPTH, -np.inf])
    hi = np.array([max(x1, x2), np.inf, np.inf])
    return lo, hi


def _residuals(alpha, anchors, ranges, weights, window_w, x1, x2, edge_kind, tol):
    p, grad, batch = path_gradients(anchors[None, :, :], alpha[:, None, :], window_w, x1, x2, edge_kind, tol)
    r = (ranges - p) * weights
    jac = grad * weights[..., None]  # (N, M, 3), derivative of p (not of r)
    valid = np.all(batch.ok & np.isfinite(p), axis=1) & np.all(np.isfinite(jac), axis=(1, 2))
    cost = np.where(valid, np.sum(np.where(np.isfinite(r), r, 0.0) ** 2, axis=1), np.inf)
    return r, jac, cost, valid


def nls_batch(ranges, sigma, anchors, window_w, x1, x2, init, bounds=None, edge_kind=UPPER,
              max_iter: int = MAX_ITER, tol: Tolerances = DEFAULT_TOLERANCES):
    """Levenberg-Marquardt fit of the diffraction path model for N independent trials.

    Args:
        ranges: (N, M) measured ranges.
        sigma: (M,) or (N, M) range standard deviations.
        anchors: (M, 3) anchor positions.
        init: (N, 3) starting points.
        bounds: ``(lo, hi)`` box; defaults to the edge span in x and y > 0.

    Returns:
        dict of arrays: ``alpha`` (N, 3), ``iterations``, ``converged``,
        ``residual_norm`` (unweighted, meters) and ``cost``.
    """
    anchors = np.asarray(anchors, dtype=float)
    ranges = np.atleast_2d(np.asarray(ranges, dtype=float))
    n = ranges.shape[0]
    weights = np.broadcast_to(_weights(sigma), ranges.shape)
    bounds = _default_bounds(x1, x2) if bounds is None else tuple(np.asarray(b, dtype=float) for b in bounds)
    alpha = _project(np.array(init, dtype=float).reshape(n, 3), bounds)

    r, jac, cost, valid = _residuals(alpha, anchors, ranges, weights, window_w, x1, x2, edge_kind, tol)
    mu = np.full(n, DAMPING_INIT)
    iterations = np.zeros(n, dtype=int)
    converged = np.zeros(n, dtype=bool)
    active = valid.copy()
    eye = np.eye(3)

    for _ in range(max_iter):
        if not np.any(active):
            break
        idx = np.flatnonzero(active)
        j = jac[idx]
        jt_r = np.einsum("nmk,nm->nk", j, r[idx])
        grad_norm = np.linalg.norm(jt_r, axis=1)
        done = grad_norm < GRAD_TOL
        converged[idx[done]] = True
        active[idx[done]] = False
        idx, j, jt_r = idx[~done], j[~done], jt_r[~done]
        if idx.size == 0:
            break
        h = np.einsum("nmk,nml->nkl", j, j)
        damp = mu[idx, None, None] * (np.einsum("nkk->nk", h)[:, :, None] * eye + 1e-12 * eye)
        step = np.linalg.solve(h + damp, jt_r[..., None])[..., 0]
        trial = _project(alpha[idx] + step, bounds)
        r_t, jac_t, cost_t, valid_t = _residuals(
            trial, anchors, ranges[idx], weights[idx], window_w, x1, x2, edge_kind, tol
        )
        iterations[idx] += 1
        better = valid_t & (cost_t <= cost[idx])
        acc = idx[better]
        moved = np.linalg.norm(trial[better] - alpha[acc], axis=1)
        alpha[acc] = trial[better]
        r[acc], jac[acc], cost[acc] = r_t[better], jac_t[better], cost_t[better]
        mu[acc] = np.maximum(mu[acc] / DAMPING_FACTOR, 1e-12)
        rej = idx[~better]
        mu[rej] *= DAMPING_FACTOR
        small = moved < STEP_TOL
        converged[acc[small]] = True
        active[acc[small]] = False
        # runaway damping means no descent direction is left
        stuck = rej[mu[rej] > 1e12]
        active[stuck] = False

    residual = np.where(valid[:, None] | np.isfinite(r), r / weights, np.nan)
    return {
        "alpha": alpha,
        "iterations": iterations,
        "converged": converged,
        "residual_norm": np.linalg.norm(residual, axis=1),
        "cost": cost,
    }


def estimate_diffraction_nls(meas: RangeMeasurementSet, window_w, x1, x2, init=None, bounds=None,
                             edge_kind=UPPER, restarts: int = N_RESTARTS, seed=0,
                             tol: Tolerances = DEFAULT_TOLERANCES) -> PositionEstimate:
    """Node position from diffraction-path ranges by damped Gauss-Newton.

    Starts from ``init`` (default: centre of the search box, or of the edge
    span when the box is unbounded) and retries from jittered starts if the
    first run does not converge.

    Raises:
        NotConverged: no start converged; ``err.best`` holds the lowest-cost iterate.
    """
    if len(meas.anchors) < 3:
        raise ValueError("at least three anchors are needed for a 3D fix")
    bounds = _default_bounds(x1, x2) if bounds is None else tuple(np.asarray(b, dtype=float) for b in bounds)
    if init is None:
        lo, hi = bounds
        finite = np.isfinite(lo) & np.isfinite(hi)
        init = np.where(finite, 0.5 * (np.where(finite, lo, 0.0) + np.where(finite, hi, 0.0)), 0.0)
        if not np.isfinite(hi[1]):
            init[1] = 10.0
    anchors = np.array(meas.anchors, dtype=float)
    ranges = np.asarray(meas.ranges, dtype=float)[None, :]
    starts = [np.asarray(init, dtype=float)]
    rng = np.random.default_rng(seed)
    best = None
    for attempt in range(restarts + 1):
        out = nls_batch(ranges, meas.sigma, anchors, window_w, x1, x2, starts[-1][None, :], bounds, edge_kind, tol=tol)
        est = PositionEstimate(
            alpha_hat=Point3(*map(float, out["alpha"][0])),
            iterations=int(out["iterations"][0]),
            converged=bool(out["converged"][0]),
            residual_norm=float(out["residual_norm"][0]),
        )
        if est.converged:
            return est
        if best is None or out["cost"][0] < best[0]:
            best = (out["cost"][0], est)
        log.debug("NLS start %d did not converge (cost=%g)", attempt, out["cost"][0])
        starts.append(starts[0] + rng.normal(scale=2.0, size=3))
    raise NotConverged("diffraction NLS did not converge from any start", best=best[1])


def _lls_system(anchors: np.ndarray):
    ref = anchors[0]
    a = 2.0 * (anchors[1:] - ref)
    return a, ref


def lls_batch(ranges, anchors, prefer_y_positive: bool = True):
    """Reference-anchor linear least squares for N trials.

    Subtracting the first anchor's squared-range equation from the others
    gives ``2 (X_j - X_0) . alpha = r_0^2 - r_j^2 + |X_j|^2 - |X_0|^2``.  With a
    rank-3 system it is solved in the least-squares sense.  With rank 2
    (three anchors) the solution set is a line; the point on it that meets
    the reference sphere on the building side (y > 0) is returned, or the
    point closest to the sphere when the line misses it.

    Raises:
        DegenerateGeometry: the differenced system has rank < 2.
    """
    anchors = np.asarray(anchors, dtype=float)
    ranges = np.atleast_2d(np.asarray(ranges, dtype=float))
    a, ref = _lls_system(anchors)
    sq_norm = np.sum(anchors**2, axis=1)
    rhs = ranges[:, :1] ** 2 - ranges[:, 1:] ** 2 + sq_norm[1:] - sq_norm[0]
    u, s, vt = np.linalg.svd(a, full_matrices=True)
    rank = int(np.sum(s > 1e-10 * s[0])) if s.size else 0
    if rank < 2:
        raise DegenerateGeometry(f"differenced LLS system has rank {rank}")
    pinv = np.linalg.pinv(a, rcond=1e-10)
    alpha0 = rhs @ pinv.T  # (N, 3), minimum-norm solution
    if rank == 3:
        return alpha0
    v = vt[2]
    d = alpha0 - ref
    half_b = d @ v
    c = np.sum(d * d, axis=1) - ranges[:, 0] ** 2
    disc = half_b**2 - c
    root = np.sqrt(np.maximum(disc, 0.0))
    t1, t2 = -half_b + root, -half_b - root
    p1 = alpha0 + t1[:, None] * v
    p2 = alpha0 + t2[:, None] * v
    if prefer_y_positive:
        pick1 = p1[:, 1] >= p2[:, 1]
    else:
        pick1 = p1[:, 1] <= p2[:, 1]
    return np.where(pick1[:, None], p1, p2)


def estimate_lls_baseline(meas: RangeMeasurementSet) -> PositionEstimate:
    """Straight-line trilateration (model-mismatched for diffraction ranges)."""
    anchors = np.array(meas.anchors, dtype=float)
    if len(anchors) < 3:
        raise ValueError("at least three anchors are needed for a 3D fix")
    alpha = lls_batch(np.asarray(meas.ranges)[None, :], anchors)[0]
    resid = np.linalg.norm(anchors - alpha, axis=1) - np.asarray(meas.ranges)
    return PositionEstimate(
        alpha_hat=Point3(*map(float, alpha)),
        iterations=1,
        converged=True,
        residual_norm=float(np.linalg.norm(resid)),
    )
