"""Scenario configuration and the PEB-map, estimator Monte Carlo and power-ratio drivers.

Every node sample owns an RNG stream derived from the master seed and its
sample index, so results do not depend on how samples are chunked across
worker processes.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import DEFAULT_FREQUENCY_HZ, SPEED_OF_LIGHT, wavenumber
from .errors import ConfigError, GeometryError
from .estimators import N_RESTARTS, lls_batch, nls_batch
from .fields import anchor_at_elevation, exact_power_ratio, power_ratio
from .fisher import batch_peb, path_gradients

SCHEMA_VERSION = 1
MODES = ("peb_map", "estimator_mc", "power_ratio_sweep")
PERCENTILES = np.arange(0, 101, 1)
DESK_SAMPLES = 10_000
FULL_SCALE_SAMPLES = 100_000
_CHUNK = 2_000

# stream ids for SeedSequence spawn keys
_NODE_STREAM = 0
_NOISE_STREAM = 1
_RATIO_STREAM = 2


@dataclass
class Scenario:
    building_box: tuple = ((-10.0, 0.0, 5.0), (10.0, 20.0, 40.0))
    window_w: float = 2.0
    edge_span: tuple = (-10.0, 10.0)
    anchors: tuple = ((-10.0, -20.0, -10.0), (0.0, -7.0, -20.0), (10.0, -20.0, -10.0))
    bandwidth: float = 100e6
    snr_db_list: tuple = (3.0, 6.0, 9.0, 12.0, 15.0)
    n_samples: int = DESK_SAMPLES
    seed: int = 0
    mode: str = "peb_map"
    frequency_hz: float = DEFAULT_FREQUENCY_HZ
    theta_grid_deg: tuple = tuple(float(t) for t in range(5, 86, 5))
    ratio_anchor_distance: float = 30.0
    euclidean_ranges: bool = False
    workers: int = 1
    schema_version: int = SCHEMA_VERSION
    nodes: tuple | None = field(default=None)  # explicit node list overrides sampling

    def __post_init__(self):
        self.building_box = tuple(tuple(float(v) for v in corner) for corner in self.building_box)
        self.edge_span = tuple(float(v) for v in self.edge_span)
        self.anchors = tuple(tuple(float(v) for v in a) for a in self.anchors)
        self.snr_db_list = tuple(float(s) for s in self.snr_db_list)
        self.theta_grid_deg = tuple(float(t) for t in self.theta_grid_deg)
        if self.nodes is not None:
            self.nodes = tuple(tuple(float(v) for v in n) for n in self.nodes)
        self.validate()

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if len(self.building_box) != 2 or any(len(c) != 3 for c in self.building_box):
            raise ConfigError("building_box must be two 3D corners")
        lo, hi = map(np.array, self.building_box)
        if not np.all(lo <= hi):
            raise ConfigError("building_box corners must be ordered elementwise")
        if lo[1] < 0.0:
            raise ConfigError("building box must lie inside the wall (y >= 0)")
        if not self.window_w > 0:
            raise ConfigError("window_w must be positive")
        if len(self.edge_span) != 2 or self.edge_span[0] == self.edge_span[1]:
            raise ConfigError("edge_span must be two distinct x coordinates")
        if not self.anchors or any(len(a) != 3 for a in self.anchors):
            raise ConfigError("anchors must be a non-empty list of 3D points")
        if any(a[1] >= 0.0 for a in self.anchors):
            raise ConfigError("anchors must lie outside the building (y < 0)")
        if not self.bandwidth > 0:
            raise ConfigError("bandwidth must be positive")
        if not self.snr_db_list:
            raise ConfigError("snr_db_list must not be empty")
        if int(self.n_samples) < 1:
            raise ConfigError("n_samples must be >= 1")
        self.n_samples = int(self.n_samples)
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        self.seed = int(self.seed)
        if any(not 0.0 < t <= 90.0 for t in self.theta_grid_deg):
            raise ConfigError("theta grid must lie in (0, 90] degrees")
        if int(self.workers) < 1:
            raise ConfigError("workers must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as err:
            raise ConfigError(str(err)) from err

    @classmethod
    def from_json(cls, path) -> "Scenario":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON: {err}") from err
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def sigmas(self, snr_db: float) -> np.ndarray:
        snr = 10.0 ** (snr_db / 10.0)
        crlb = 1.0 / (8.0 * math.pi**2 * self.bandwidth**2 * snr)
        return np.full(len(self.anchors), SPEED_OF_LIGHT * math.sqrt(crlb))


@dataclass
class ResultTable:
    name: str
    columns: tuple
    rows: list

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\r\n")
            writer.writerow(self.columns)
            for row in self.rows:
                writer.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _seed_seq(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=key)


def sample_nodes(scenario: Scenario) -> np.ndarray:
    """Node positions, uniform in the building box (or the explicit node list)."""
    if scenario.nodes is not None:
        return np.array(scenario.nodes, dtype=float)
    lo, hi = map(np.array, scenario.building_box)
    rng = np.random.default_rng(_seed_seq(scenario.seed, _NODE_STREAM))
    nodes = rng.uniform(lo, hi, size=(scenario.n_samples, 3))
    # the wall itself is excluded: nodes must be strictly inside
    nodes[:, 1] = np.maximum(nodes[:, 1], 1e-6)
    return nodes


def _chunks(n: int, size: int = _CHUNK):
    return [(s, min(s + size, n)) for s in range(0, n, size)]


def _map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def empirical_cdf(values: np.ndarray) -> np.ndarray:
    """Values at the 0..100 percentile grid (linear interpolation)."""
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if values.size == 0:
        return np.full(PERCENTILES.shape, np.nan)
    return np.percentile(values, PERCENTILES)


# --------------------------------------------------------------------------- PEB map


def _peb_chunk(job):
    scenario, nodes = job
    x1, x2 = scenario.edge_span
    base = np.ones(len(scenario.anchors))
    peb_3d, peb_z, rank = batch_peb(scenario.anchors, nodes, scenario.window_w, x1, x2, base)
    return peb_3d, peb_z, rank


def peb_arrays(scenario: Scenario):
    """Nodes, rank and per-SNR PEB arrays (n_snr, N) for a scenario."""
    nodes = sample_nodes(scenario)
    jobs = [(scenario, nodes[a:b]) for a, b in _chunks(len(nodes))]
    parts = _map(_peb_chunk, jobs, scenario.workers)
    unit_3d = np.concatenate([p[0] for p in parts])
    unit_z = np.concatenate([p[1] for p in parts])
    rank = np.concatenate([p[2] for p in parts])
    # the FIM is linear in 1/sigma^2 with a shared sigma, so PEBs scale with sigma
    sig = np.array([scenario.sigmas(s)[0] for s in scenario.snr_db_list])
    return nodes, rank, sig[:, None] * unit_3d[None, :], sig[:, None] * unit_z[None, :]


def run_peb_map(scenario: Scenario) -> dict:
    """Per-node PEBs at every SNR plus percentile (CDF) and summary tables."""
    nodes, rank, peb3, pebz = peb_arrays(scenario)
    verdict = np.where(rank == 3, "identifiable", np.where(rank < 0, "invalid_geometry", "rank_deficient"))
    rows_3d, rows_z = [], []
    for k, snr in enumerate(scenario.snr_db_list):
        for i, node in enumerate(nodes):
            rows_3d.append((i, *node, snr, peb3[k, i], verdict[i], int(rank[i])))
            rows_z.append((i, *node, snr, pebz[k, i], verdict[i], int(rank[i])))
    cols = ("sample", "x", "y", "z", "snr_db", "value", "verdict", "rank")
    ok = rank == 3
    cdf_rows = []
    for k, snr in enumerate(scenario.snr_db_list):
        c3 = empirical_cdf(peb3[k, ok])
        cz = empirical_cdf(pebz[k, ok])
        for j, pct in enumerate(PERCENTILES):
            cdf_rows.append((int(pct), pct / 100.0, snr, c3[j], cz[j]))
    summary = [
        ("n_samples", len(nodes)),
        ("n_identifiable", int(np.sum(ok))),
        ("n_rank_deficient", int(np.sum((rank >= 0) & (rank < 3)))),
        ("n_invalid_geometry", int(np.sum(rank < 0))),
    ]
    return {
        "peb_3d": ResultTable("peb_3d", cols, rows_3d),
        "peb_z": ResultTable("peb_z", cols, rows_z),
        "cdf": ResultTable("cdf", ("percentile", "probability", "snr_db", "peb_3d", "peb_z"), cdf_rows),
        "summary": ResultTable("summary", ("metric", "value"), summary),
    }


# --------------------------------------------------------------------------- estimator MC


def _mc_chunk(job):
    scenario, start, nodes = job
    anchors = np.array(scenario.anchors)
    x1, x2 = scenario.edge_span
    lo, hi = map(np.array, scenario.building_box)
    bounds = (np.array([max(lo[0], min(x1, x2)), max(lo[1], 1e-3), lo[2]]),
              np.array([min(hi[0], max(x1, x2)), hi[1], hi[2]]))
    centre = 0.5 * (lo + hi)
    n_snr, n, m = len(scenario.snr_db_list), len(nodes), len(anchors)

    if scenario.euclidean_ranges:
        truth_p = np.linalg.norm(nodes[:, None, :] - anchors[None, :, :], axis=2)
        ok = np.ones(n, dtype=bool)
    else:
        truth_p, _, batch = path_gradients(anchors[None, :, :], nodes[:, None, :], scenario.window_w, x1, x2)
        ok = np.all(batch.ok, axis=1)

    noise = np.empty((n, n_snr, m))
    jitter = np.empty((n, N_RESTARTS, 3))
    for i in range(n):
        rng = np.random.default_rng(_seed_seq(scenario.seed, _NOISE_STREAM, start + i))
        noise[i] = rng.standard_normal((n_snr, m))
        jitter[i] = rng.normal(scale=0.1 * (hi - lo), size=(N_RESTARTS, 3))

    out = []
    for k, snr in enumerate(scenario.snr_db_list):
        sig = scenario.sigmas(snr)
        ranges = truth_p + noise[:, k, :] * sig
        lls = np.full((n, 3), np.nan)
        try:
            lls[ok] = lls_batch(ranges[ok], anchors)
        except GeometryError:
            pass
        nls = np.full((n, 3), np.nan)
        conv = np.zeros(n, dtype=bool)
        if np.any(ok):
            idx = np.flatnonzero(ok)
            res = nls_batch(ranges[idx], sig, anchors, scenario.window_w, x1, x2,
                            np.tile(centre, (idx.size, 1)), bounds)
            alpha, cost, c_ok = res["alpha"], res["cost"], res["converged"]
            for r in range(N_RESTARTS):
                redo = ~c_ok
                if not np.any(redo):
                    break
                start_pts = np.clip(centre + jitter[idx[redo], r], bounds[0], bounds[1])
                res2 = nls_batch(ranges[idx[redo]], sig, anchors, scenario.window_w, x1, x2, start_pts, bounds)
                better = res2["converged"] | (res2["cost"] < cost[redo])
                sub = np.flatnonzero(redo)[better]
                alpha[sub] = res2["alpha"][better]
                cost[sub] = res2["cost"][better]
                c_ok[sub] = res2["converged"][better]
            nls[idx] = alpha
            conv[idx] = c_ok
        out.append((nls, conv, lls))
    return out, ok


def mc_arrays(scenario: Scenario):
    """Run both estimators on every sampled node and SNR.

    Returns:
        dict with ``nodes`` (N, 3), ``valid`` (N,), ``nls``/``lls`` estimates
        (n_snr, N, 3), ``converged`` (n_snr, N) and ``peb_3d``/``peb_z`` (n_snr, N).
    """
    nodes = sample_nodes(scenario)
    jobs = [(scenario, a, nodes[a:b]) for a, b in _chunks(len(nodes))]
    parts = _map(_mc_chunk, jobs, scenario.workers)
    n_snr = len(scenario.snr_db_list)
    nls = np.stack([np.concatenate([p[0][k][0] for p in parts]) for k in range(n_snr)])
    conv = np.stack([np.concatenate([p[0][k][1] for p in parts]) for k in range(n_snr)])
    lls = np.stack([np.concatenate([p[0][k][2] for p in parts]) for k in range(n_snr)])
    valid = np.concatenate([p[1] for p in parts])
    _, rank, peb3, pebz = peb_arrays(scenario)
    return {
        "nodes": nodes,
        "valid": valid,
        "rank": rank,
        "nls": nls,
        "lls": lls,
        "converged": conv,
        "peb_3d": peb3,
        "peb_z": pebz,
    }


def run_estimator_mc(scenario: Scenario) -> dict:
    """Per-trial 3D and Z errors of both estimators, with RMSE summary and CDFs."""
    res = mc_arrays(scenario)
    nodes = res["nodes"]
    rows_3d, rows_z, summary, cdf_rows = [], [], [], []
    cols = ("sample", "x", "y", "z", "snr_db", "estimator", "value", "converged")
    for k, snr in enumerate(scenario.snr_db_list):
        errs = {}
        for name in ("nls", "lls"):
            est = res[name][k]
            e3 = np.linalg.norm(est - nodes, axis=1)
            ez = np.abs(est[:, 2] - nodes[:, 2])
            errs[name] = (e3, ez)
            conv = res["converged"][k] if name == "nls" else np.isfinite(e3)
            for i, node in enumerate(nodes):
                rows_3d.append((i, *node, snr, name, e3[i], bool(conv[i])))
                rows_z.append((i, *node, snr, name, ez[i], bool(conv[i])))
            finite = np.isfinite(e3)
            summary.append((snr, name, "rmse_3d", float(np.sqrt(np.mean(e3[finite] ** 2)))))
            summary.append((snr, name, "rmse_z", float(np.sqrt(np.mean(ez[finite] ** 2)))))
            summary.append((snr, name, "n_failed", int(np.sum(~finite))))
        ok = res["rank"] == 3
        summary.append((snr, "bound", "mean_peb_3d", float(np.mean(res["peb_3d"][k][ok]))))
        summary.append((snr, "bound", "mean_peb_z", float(np.mean(res["peb_z"][k][ok]))))
        summary.append((snr, "nls", "n_not_converged", int(np.sum(~res["converged"][k]))))
        cdfs = {(name, m): empirical_cdf(errs[name][j]) for name in errs for j, m in enumerate(("3d", "z"))}
        for j, pct in enumerate(PERCENTILES):
            cdf_rows.append((int(pct), pct / 100.0, snr, cdfs["nls", "3d"][j], cdfs["lls", "3d"][j],
                             cdfs["nls", "z"][j], cdfs["lls", "z"][j]))
    return {
        "error_3d": ResultTable("error_3d", cols, rows_3d),
        "error_z": ResultTable("error_z", cols, rows_z),
        "summary": ResultTable("summary", ("snr_db", "estimator", "metric", "value"), summary),
        "cdf": ResultTable(
            "cdf",
            ("percentile", "probability", "snr_db", "nls_3d", "lls_3d", "nls_z", "lls_z"),
            cdf_rows,
        ),
    }


# --------------------------------------------------------------------------- power ratio


def ratio_nodes(scenario: Scenario) -> np.ndarray:
    """Node samples for the power-ratio sweep.

    x and z are drawn from the building box; the depth y is drawn from
    ``[10 w, 20 w]`` so the window stays small compared with the node's
    distance to it.
    """
    if scenario.nodes is not None:
        return np.array(scenario.nodes, dtype=float)
    lo, hi = map(np.array, scenario.building_box)
    rng = np.random.default_rng(_seed_seq(scenario.seed, _RATIO_STREAM))
    n = scenario.n_samples
    x = rng.uniform(lo[0], hi[0], n)
    y = rng.uniform(10.0 * scenario.window_w, 20.0 * scenario.window_w, n)
    z = rng.uniform(lo[2], hi[2], n)
    return np.column_stack([x, y, z])


def run_power_ratio_sweep(scenario: Scenario, theta_grid_deg=None, nodes=None) -> dict:
    """Approximate and full-field upper/lower power ratios (dB) over an elevation grid.

    For each node the anchor is placed ``ratio_anchor_distance`` from the
    lower window edge at elevation theta, directly in front of the node.
    """
    theta_grid = scenario.theta_grid_deg if theta_grid_deg is None else tuple(theta_grid_deg)
    if any(not 0.0 < t <= 90.0 for t in theta_grid):
        raise ConfigError("theta grid must lie in (0, 90] degrees")
    nodes = ratio_nodes(scenario) if nodes is None else np.asarray(nodes, dtype=float)
    k = wavenumber(scenario.frequency_hz)
    x1, x2 = scenario.edge_span
    rows = []
    for t_deg in theta_grid:
        t = math.radians(t_deg)
        approx_db = 10.0 * math.log10(power_ratio(t))
        for i, node in enumerate(nodes):
            anchor = anchor_at_elevation(node, scenario.window_w, t, scenario.ratio_anchor_distance)
            try:
                exact_db = 10.0 * math.log10(exact_power_ratio(anchor, node, scenario.window_w, x1, x2, k))
                status = "ok"
            except GeometryError as err:
                exact_db, status = math.nan, type(err).__name__
            rows.append((t_deg, i, *node, approx_db, exact_db, exact_db - approx_db, status))
    cols = ("theta_deg", "sample", "x", "y", "z", "approx_db", "exact_db", "diff_db", "status")
    return {"ratio_db": ResultTable("ratio_db", cols, rows)}
