"""Degree-of-freedom based two-stage WLS fusion of multi-pair measurements.

The 4IJ pairwise measurements of one target are first compressed onto the
independent per-station quantities (distance and range rate to every
station, direction cosines at every RX station). The state is then found in
two stages: a linear WLS built from differences against a reference station,
and a linearized correction around the stage-1 solution.

In HD mode the per-station distances are only identifiable up to a common
offset (TX distances move up, RX distances down), so the reference station's
distance and range rate are carried as two nuisance unknowns in stage 1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .association import MeasurementSet
from .scenario import FD, HD, Scenario

S_SEED = 20240417  # sampling matrix seed for the HD second stage


class FusionError(np.linalg.LinAlgError):
    pass


class RankError(FusionError):
    pass


class SingularGeometryError(FusionError):
    pass


class Stage2SkippedWarning(RuntimeWarning):
    pass


def _scaled_inv(m: np.ndarray, what: str, err=FusionError, cond_limit: float = 1e13) -> np.ndarray:
    """Inverse of a symmetric positive matrix with Jacobi prescaling."""
    d = np.sqrt(np.abs(np.diag(m)))
    if np.any(d == 0):
        raise err(f"{what}: zero diagonal")
    s = m / np.outer(d, d)
    cond = np.linalg.cond(s)
    if not np.isfinite(cond) or cond > cond_limit:
        raise err(f"{what}: matrix is singular (condition {cond:.2e})")
    inv = np.linalg.inv(s) / np.outer(d, d)
    return 0.5 * (inv + inv.T)


def _wls(a: np.ndarray, w: np.ndarray, b: np.ndarray, what: str, err=FusionError):
    """Weighted LS solution and its covariance ``(A^T W A)^-1``."""
    cov = _scaled_inv(a.T @ w @ a, what, err)
    return cov @ (a.T @ w @ b), cov


# Compression


@dataclass(eq=False)
class CompressedMeasurements:
    """Independent per-station quantities of one target.

    ``mu_hat`` is ``[d (N_BS), ddot (N_BS), cos_alpha (J), cos_beta (J)]``.
    In HD mode the reference station's distance and range rate are removed
    and the remaining estimates satisfy ``mu' = mu_hat + g_d*d0 + g_ddot*ddot0``.
    """

    mu_hat: np.ndarray
    covariance: np.ndarray
    duplex: str
    num_rx: int
    ref: int = 0
    g_d: np.ndarray | None = None
    g_ddot: np.ndarray | None = None

    def full(self, d0: float = 0.0, ddot0: float = 0.0) -> np.ndarray:
        """The complete ``mu`` vector, inserting the nuisance values in HD mode."""
        if self.duplex == FD:
            return self.mu_hat.copy()
        n = (self.mu_hat.size + 2) // 2 - self.num_rx
        mu = self.mu_hat + self.g_d * d0 + self.g_ddot * ddot0
        return np.insert(np.insert(mu, self.ref, d0), n + self.ref, ddot0)


def t1_matrix(scenario: Scenario) -> np.ndarray:
    """Map from ``mu`` to the stacked pair measurements."""
    n, nrx, js = scenario.n_bs, scenario.num_rx, scenario.j_start
    pairs = scenario.pairs()
    ta = np.zeros((len(pairs), n))
    tb = np.zeros((len(pairs), nrx))
    for l, (i, j) in enumerate(pairs):
        ta[l, i] += 1.0
        ta[l, j] += 1.0
        tb[l, j - js] = 1.0
    zero_a = np.zeros_like(ta)
    zero_b = np.zeros_like(tb)
    return np.block([
        [ta, zero_a, zero_b, zero_b],
        [zero_a, ta, zero_b, zero_b],
        [np.zeros((len(pairs), n)), zero_a, tb, zero_b],
        [np.zeros((len(pairs), n)), zero_a, zero_b, tb],
    ])


def _fit(t1: np.ndarray, ms: MeasurementSet, what: str):
    rows = ms.rows
    t = t1[rows]
    w = ms.W[np.ix_(rows, rows)]
    info = t.T @ w @ t
    try:
        cov = _scaled_inv(info, what, RankError)
    except RankError:
        raise RankError(f"{what}: T1^T W T1 is rank deficient ({np.linalg.matrix_rank(t)} < {t.shape[1]})") from None
    return cov, cov @ t.T @ w, t


def compress_fd(ms: MeasurementSet, scenario: Scenario) -> CompressedMeasurements:
    if scenario.duplex != FD:
        raise ValueError("compress_fd needs an FD scenario")
    t1 = t1_matrix(scenario)
    cov, proj, _ = _fit(t1, ms, "FD compression")
    return CompressedMeasurements(proj @ ms.m_hat[ms.rows], cov, FD, scenario.num_rx)


def compress_hd(ms: MeasurementSet, scenario: Scenario, ref: int = 0) -> CompressedMeasurements:
    if scenario.duplex != HD:
        raise ValueError("compress_hd needs an HD scenario")
    n = scenario.n_bs
    t1 = t1_matrix(scenario)
    drop = [ref, n + ref]
    t1p = np.delete(t1, drop, axis=1)
    cov, proj, _ = _fit(t1p, ms, "HD compression")
    rows = ms.rows
    g_d = -proj @ t1[rows, ref]
    g_ddot = -proj @ t1[rows, n + ref]
    return CompressedMeasurements(proj @ ms.m_hat[rows], cov, HD, scenario.num_rx, ref, g_d, g_ddot)


def compress(ms: MeasurementSet, scenario: Scenario, ref: int = 0) -> CompressedMeasurements:
    if scenario.duplex == FD:
        if ref:
            raise ValueError("FD compression keeps every station; ref applies to fusion only")
        return compress_fd(ms, scenario)
    return compress_hd(ms, scenario, ref)


# Two-stage solvers


@dataclass(eq=False)
class StateEstimate:
    position: np.ndarray
    velocity: np.ndarray
    covariance: np.ndarray
    stage2_skipped: bool = False
    diagnostics: dict = field(default_factory=dict)

    @property
    def state(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity])


def _panel_axes(scenario: Scenario):
    rx = [scenario.stations[j] for j in scenario.rx_ids]
    return np.array([s.panel_x for s in rx]), np.array([s.panel_y for s in rx])


def _stage2(scenario: Scenario, mu: np.ndarray, theta1: np.ndarray):
    """Linearized equations around ``theta1`` for every station: (A2, b2, T3)."""
    n, nrx, js = scenario.n_bs, scenario.num_rx, scenario.j_start
    b = np.array([s.position for s in scenario.stations])
    xs, ys = _panel_axes(scenario)
    t, v = theta1[:3], theta1[3:]
    d, dd = mu[:n], mu[n:2 * n]
    ca, cb = mu[2 * n:2 * n + nrx], mu[2 * n + nrx:]
    size = 2 * n + 2 * nrx
    a2 = np.zeros((size, 6))
    b2 = np.zeros(size)
    t3 = np.zeros((size, size))
    for s in range(n):
        diff = b[s] - t
        a2[s, :3] = 2 * diff
        b2[s] = diff @ diff - d[s] ** 2
        t3[s, s] = -2 * d[s]
        r = n + s
        a2[r, :3] = -2 * v
        a2[r, 3:] = 2 * diff
        b2[r] = -2 * d[s] * dd[s] - 2 * diff @ v
        t3[r, s] = -2 * dd[s]
        t3[r, n + s] = -2 * d[s]
    for jj in range(nrx):
        s = js + jj
        for blk, (axes, c) in enumerate(((xs, ca), (ys, cb))):
            r = 2 * n + blk * nrx + jj
            a2[r, :3] = axes[jj]
            b2[r] = axes[jj] @ b[s] - axes[jj] @ t + d[s] * c[jj]
            t3[r, s] = -c[jj]
            t3[r, 2 * n + blk * nrx + jj] = -d[s]
    return a2, b2, t3


def _finish(scenario, mu, theta1, noise_cov, sample=None, diagnostics=None):
    """Stage 2 and the combined estimate; falls back to stage 1 if ill-conditioned."""
    a2, b2, t3 = _stage2(scenario, mu, theta1)
    if sample is not None:
        a2, b2, t3 = sample @ a2, sample @ b2, sample @ t3
    diagnostics = diagnostics or {}
    try:
        w2 = _scaled_inv(t3 @ noise_cov @ t3.T, "stage-2 weight")
        theta2, cov2 = _wls(a2, w2, b2, "stage-2 WLS")
    except FusionError as exc:
        warnings.warn(f"stage 2 skipped: {exc}", Stage2SkippedWarning, stacklevel=3)
        return None, diagnostics
    diagnostics["theta2"] = theta2
    est = theta1 + theta2
    return StateEstimate(est[:3], est[3:], cov2, False, diagnostics), diagnostics


def fuse_fd(comp: CompressedMeasurements, scenario: Scenario, ref: int = 0) -> StateEstimate:
    """Position and velocity from FD compressed measurements (N_BS >= 4)."""
    n, nrx, js = scenario.n_bs, scenario.num_rx, scenario.j_start
    if n < 4:
        raise SingularGeometryError(f"FD fusion needs at least 4 stations, got {n}")
    mu, q = comp.mu_hat, comp.covariance
    b = np.array([s.position for s in scenario.stations])
    xs, ys = _panel_axes(scenario)
    d, dd = mu[:n], mu[n:2 * n]
    ca, cb = mu[2 * n:2 * n + nrx], mu[2 * n + nrx:]
    others = [s for s in range(n) if s != ref]
    m = len(others)
    rows = 2 * m + 2 * nrx
    a1 = np.zeros((rows, 6))
    b1 = np.zeros(rows)
    t2 = np.zeros((rows, mu.size))
    for r, s in enumerate(others):
        db = b[s] - b[ref]
        a1[r, :3] = 2 * db
        b1[r] = b[s] @ b[s] - b[ref] @ b[ref] - d[s] ** 2 + d[ref] ** 2
        t2[r, s] = -2 * d[s]
        t2[r, ref] = 2 * d[ref]
        a1[m + r, 3:] = 2 * db
        b1[m + r] = -2 * d[s] * dd[s] + 2 * d[ref] * dd[ref]
        t2[m + r, s] = -2 * dd[s]
        t2[m + r, n + s] = -2 * d[s]
        t2[m + r, ref] = 2 * dd[ref]
        t2[m + r, n + ref] = 2 * d[ref]
    for jj in range(nrx):
        s = js + jj
        for blk, (axes, c) in enumerate(((xs, ca), (ys, cb))):
            r = 2 * m + blk * nrx + jj
            a1[r, :3] = axes[jj]
            b1[r] = axes[jj] @ b[s] + d[s] * c[jj]
            t2[r, s] = c[jj]
            t2[r, 2 * n + blk * nrx + jj] = d[s]
    w1 = _scaled_inv(t2 @ q @ t2.T, "stage-1 weight", SingularGeometryError)
    theta1, cov1 = _wls(a1, w1, b1, "stage-1 WLS", SingularGeometryError)
    diag = {"theta1": theta1, "stage1_covariance": cov1}
    est, diag = _finish(scenario, mu, theta1, q, None, diag)
    if est is None:
        return StateEstimate(theta1[:3], theta1[3:], cov1, True, diag)
    return est


def _hd_stage1(comp, scenario, ref, d0, dd0):
    """Stage-1 system in [t, tdot, d0, ddot0] with T'2 evaluated at (d0, ddot0)."""
    n, nrx, js = scenario.n_bs, scenario.num_rx, scenario.j_start
    mu = comp.mu_hat
    size = mu.size
    b = np.array([s.position for s in scenario.stations])
    xs, ys = _panel_axes(scenario)
    # station s -> index into mu'' (None for the reference station)
    idx = {s: (s if s < ref else s - 1) for s in range(n) if s != ref}
    g = {s: comp.g_d[idx[s]] for s in idx}
    dpp = {s: mu[idx[s]] for s in idx}
    ddpp = {s: mu[n - 1 + idx[s]] for s in idx}
    ca, cb = mu[2 * n - 2:2 * n - 2 + nrx], mu[2 * n - 2 + nrx:]
    others = list(idx)
    m = len(others)
    rows = 2 * m + 2 * nrx
    a = np.zeros((rows, 8))
    rhs = np.zeros(rows)
    t2 = np.zeros((rows, size))
    for r, s in enumerate(others):
        db = b[s] - b[ref]
        gs = g[s]
        a[r, :3] = 2 * db
        a[r, 6] = 2 * gs * dpp[s]
        rhs[r] = b[s] @ b[s] - b[ref] @ b[ref] - dpp[s] ** 2
        t2[r, idx[s]] = -2 * (dpp[s] + gs * d0)
        a[m + r, 3:6] = 2 * db
        a[m + r, 6] = 2 * gs * ddpp[s]
        a[m + r, 7] = 2 * gs * dpp[s]
        rhs[m + r] = -2 * dpp[s] * ddpp[s]
        t2[m + r, idx[s]] = -2 * (ddpp[s] + gs * dd0)
        t2[m + r, n - 1 + idx[s]] = -2 * (dpp[s] + gs * d0)
    for jj in range(nrx):
        s = js + jj
        for blk, (axes, c) in enumerate(((xs, ca), (ys, cb))):
            r = 2 * m + blk * nrx + jj
            col = 2 * n - 2 + blk * nrx + jj
            a[r, :3] = axes[jj]
            if s == ref:
                a[r, 6] = -c[jj]
                rhs[r] = axes[jj] @ b[s]
                t2[r, col] = d0
            else:
                a[r, 6] = -g[s] * c[jj]
                rhs[r] = axes[jj] @ b[s] + dpp[s] * c[jj]
                t2[r, idx[s]] = c[jj]
                t2[r, col] = dpp[s] + g[s] * d0
    return a, rhs, t2


def _noise_range(cov: np.ndarray, rank: int) -> np.ndarray:
    """Rows spanning the orthogonal complement of the null space of ``cov``."""
    d = np.sqrt(np.diag(cov))
    _, v = np.linalg.eigh(cov / np.outer(d, d))
    return v[:, -rank:].T / d


def fuse_hd(comp: CompressedMeasurements, scenario: Scenario, ref: int | None = None,
            seed: int = S_SEED, retries: int = 3, sampling: str = "range") -> StateEstimate:
    """Position and velocity from HD compressed measurements.

    Stage 1 solves for the state plus the reference station's distance and
    range rate. Its weights depend on those nuisance values, so they are
    seeded by a row-normalized ordinary LS solve and the weighted solve is
    run twice.
    The stage-2 noise covariance has rank two short of full, so the
    linearized system is reduced by a fixed-seed Gaussian sampling matrix.
    With ``sampling="range"`` (default) the sampling acts only on the range
    of that covariance, which keeps the estimate independent of the draw;
    ``"iid"`` samples all equations directly, at some cost in efficiency.
    """
    ref = comp.ref if ref is None else ref
    if ref != comp.ref:
        raise ValueError("ref must match the one used for compression")
    n = scenario.n_bs
    q = comp.covariance
    a, rhs, _ = _hd_stage1(comp, scenario, ref, 0.0, 0.0)
    norm = np.linalg.norm(a, axis=1)[:, None]
    start = np.linalg.lstsq(a / norm, rhs / norm[:, 0], rcond=None)[0]
    d0, dd0 = float(start[6]), float(start[7])
    for _ in range(2):
        a, rhs, t2 = _hd_stage1(comp, scenario, ref, d0, dd0)
        w1 = _scaled_inv(t2 @ q @ t2.T, "stage-1 weight", SingularGeometryError)
        big, cov1 = _wls(a, w1, rhs, "stage-1 WLS", SingularGeometryError)
        d0, dd0 = float(big[6]), float(big[7])
    gain = cov1 @ a.T @ w1 @ t2
    theta1 = big[:6]
    diag = {"theta1": big, "stage1_covariance": cov1, "d0": d0, "ddot0": dd0}

    mu = comp.full(d0, dd0)
    size = mu.size
    # T'3: error of the full mu in terms of the error of mu''
    t3p = np.zeros((size, size - 2))
    keep = [c for c in range(size) if c not in (ref, n + ref)]
    t3p[keep, np.arange(size - 2)] = 1.0
    t3p[keep] += np.outer(comp.g_d, gain[6]) + np.outer(comp.g_ddot, gain[7])
    t3p[ref] = gain[6]
    t3p[n + ref] = gain[7]
    noise = t3p @ q @ t3p.T

    rng = np.random.default_rng(seed)
    if sampling == "range":
        _, _, t3 = _stage2(scenario, mu, theta1)
        basis = _noise_range(t3 @ noise @ t3.T, size - 2)
    elif sampling != "iid":
        raise ValueError(f"unknown sampling {sampling!r}")
    for attempt in range(retries + 1):
        sample = rng.standard_normal((size - 2, size - 2 if sampling == "range" else size))
        if sampling == "range":
            sample = sample @ basis
        est, diag = _finish(scenario, mu, theta1, noise, sample, diag)
        if est is not None:
            diag["sampling_attempts"] = attempt + 1
            return est
    return StateEstimate(theta1[:3], theta1[3:], cov1[:6, :6], True, diag)


def fuse(comp: CompressedMeasurements, scenario: Scenario, ref: int = 0) -> StateEstimate:
    if comp.duplex == FD:
        return fuse_fd(comp, scenario, ref)
    return fuse_hd(comp, scenario, ref)


def localize(ms: MeasurementSet, scenario: Scenario, ref: int = 0) -> StateEstimate:
    """Compress and fuse one target's measurements."""
    if scenario.duplex == FD:
        return fuse_fd(compress_fd(ms, scenario), scenario, ref)
    return fuse_hd(compress_hd(ms, scenario, ref), scenario, ref)


def fusion_report_rows(trial: int, target: int, truth, estimate: StateEstimate, root_crlb) -> list[list]:
    """Rows (trial, target, axis, true, estimate, error, root_crlb) for the six state axes."""
    est = estimate.state
    names = ["pos_x", "pos_y", "pos_z", "vel_x", "vel_y", "vel_z"]
    return [[trial, target, names[a], float(truth[a]), float(est[a]), float(est[a] - truth[a]), float(root_crlb[a])]
            for a in range(6)]
