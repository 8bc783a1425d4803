"""Brute-force reference computations used to cross-check the closed forms."""

from __future__ import annotations

import math

import numpy as np

from .geometry import building_path_length

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section_min(f, lo: float, hi: float, tol: float = 1e-12, max_iter: int = 500):
    """Minimise a unimodal function on [lo, hi]; returns ``(x, f(x))``."""
    a, b = float(lo), float(hi)
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    candidates = [(f(lo), lo), (f(hi), hi), (f(x), x)]
    fx, x = min(candidates)
    return x, fx


def half_plane_path(qx: float, anchor, node, z_e: float) -> float:
    """Length of anchor -> (qx, 0, z_e) -> node."""
    xa, ya, za = anchor
    xn, yn, zn = node
    return math.sqrt((xa - qx) ** 2 + ya**2 + (za - z_e) ** 2) + math.sqrt((xn - qx) ** 2 + yn**2 + (z_e - zn) ** 2)


def fermat_oracle(anchor, node, z_e: float, x1: float, x2: float, tol: float = 1e-12):
    """Minimise the two-segment path length over the edge by golden-section search.

    Returns:
        ``(qx, p, interior)`` where ``interior`` is False when the minimiser
        sits on an endpoint (the unconstrained Fermat point is off the edge).
    """
    lo, hi = min(x1, x2), max(x1, x2)
    qx, p = golden_section_min(lambda q: half_plane_path(q, anchor, node, z_e), lo, hi, tol)
    # probe just outside each endpoint: if the path keeps shrinking, the true
    # stationary point is off the edge
    eps = 1e-7
    interior = True
    if qx - lo < 1e-9 and half_plane_path(lo - eps, anchor, node, z_e) < p:
        interior = False
    if hi - qx < 1e-9 and half_plane_path(hi + eps, anchor, node, z_e) < p:
        interior = False
    return qx, p, interior


def finite_difference_gradient(anchor, node, window_w, x1, x2, step: float = 1e-5, edge_kind="upper"):
    """Central differences of the building path length with respect to the node."""
    node = np.asarray(node, dtype=float)
    grad = np.empty(3)
    for k in range(3):
        d = np.zeros(3)
        d[k] = step
        plus = building_path_length(anchor, node + d, window_w, edge_kind, x1, x2).path_length
        minus = building_path_length(anchor, node - d, window_w, edge_kind, x1, x2).path_length
        grad[k] = (plus - minus) / (2.0 * step)
    return grad
