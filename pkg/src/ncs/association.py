"""From per-pair frequency detections to per-target measurement sets.

Every detected component is turned into physical measurements and a coarse
single-pair position fix; components from different pairs whose fixes lie
close together are grouped into one target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .adnomp import DetectionList
from .crlb import crlb_mm, pair_crlbs, unit_scales
from .scenario import C0, RadioConfig, Scenario, true_measurements


def freq_to_meas(f, radio: RadioConfig) -> np.ndarray:
    """(r, rdot, cos_alpha, cos_beta) from normalized frequencies (f0, f1, f2, f3)."""
    f = np.asarray(f, dtype=float)
    return np.array([
        (1.0 - f[0]) * C0 / radio.subcarrier_spacing,
        f[1] / radio.doppler_scale,
        2.0 * f[2],
        2.0 * f[3],
    ])


@dataclass(eq=False)
class MeasurementSet:
    """Stacked measurements of one target over all pairs.

    ``m_hat`` holds four blocks (ranges, range rates, cos alpha, cos beta),
    each ordered by pair index. ``present`` marks the pairs in which the
    target was found; weights of absent pairs are ignored.
    """

    target: int
    m_hat: np.ndarray
    W: np.ndarray
    present: np.ndarray | None = None
    ambiguous: bool = False

    def __post_init__(self):
        self.m_hat = np.asarray(self.m_hat, dtype=float)
        self.W = np.asarray(self.W, dtype=float)
        n = self.m_hat.size
        if n % 4 or self.W.shape != (n, n):
            raise ValueError("m_hat must have 4*L entries and W must be (4L, 4L)")
        if self.present is None:
            self.present = np.ones(n // 4, dtype=bool)
        self.present = np.asarray(self.present, dtype=bool)
        if np.any(np.diag(self.W)[self.rows] <= 0):
            raise ValueError("weights must be positive")

    @property
    def num_pairs(self) -> int:
        return self.m_hat.size // 4

    @property
    def rows(self) -> np.ndarray:
        """Row indices of ``m_hat`` that carry a measurement."""
        return np.flatnonzero(np.tile(self.present, 4))

    @property
    def Q(self) -> np.ndarray:
        q = np.zeros_like(self.W)
        r = self.rows
        q[np.ix_(r, r)] = np.linalg.inv(self.W[np.ix_(r, r)])
        return q


def _stack(per_pair: np.ndarray) -> np.ndarray:
    """(L, 4) per-pair rows to the block-stacked 4L vector."""
    return np.asarray(per_pair, dtype=float).T.reshape(-1)


def measurement_variances(amps: Sequence[float], sigma2: float, radio: RadioConfig) -> np.ndarray:
    """(L, 4) CRLB variances in physical units for per-pair amplitudes."""
    scale = unit_scales(radio)
    return np.array([crlb_mm(a, sigma2, radio.dims) * scale for a in amps])


def true_measurement_set(scenario: Scenario, k: int) -> np.ndarray:
    return _stack([true_measurements(scenario, i, j, k) for i, j in scenario.pairs()])


def ideal_measurements(scenario: Scenario, k: int, rng: np.random.Generator | None = None) -> MeasurementSet:
    """Truth plus Gaussian errors at the per-pair CRLB, weighted by the same CRLB.

    With ``rng=None`` the measurements are noiseless.
    """
    var = _stack(pair_crlbs(scenario, k) * unit_scales(scenario.radio))
    m = true_measurement_set(scenario, k)
    if rng is not None:
        m = m + np.sqrt(var) * rng.standard_normal(m.size)
    return MeasurementSet(k, m, np.diag(1.0 / var))


def _ray_distance(r: float, u: np.ndarray, v: np.ndarray) -> float:
    """Distance from the RX along ``u`` to the bistatic ellipse of range ``r``; 0 if none exists."""
    denom = 2.0 * (r + u @ v)
    if denom <= 0:
        return 0.0
    return float(np.clip((r * r - v @ v) / denom, 0.0, max(r, 0.0)))


def _rx_direction(rx, ca: float, cb: float, behind: bool) -> np.ndarray:
    normal = math.sqrt(max(0.0, 1.0 - ca * ca - cb * cb))
    return ca * rx.panel_x + cb * rx.panel_y + (-normal if behind else normal) * rx.boresight


def coarse_position(scenario: Scenario, i: int, j: int, meas, behind: bool = False) -> np.ndarray:
    """Single-pair position fix from bistatic range and RX direction cosines.

    A planar array cannot tell whether the target is in front of or behind
    the panel; ``behind`` selects the mirrored direction.
    """
    r, _, ca, cb = meas
    rx = scenario.stations[j]
    u = _rx_direction(rx, ca, cb, behind)
    return rx.position + _ray_distance(r, u, rx.position - scenario.stations[i].position) * u


def coarse_segment(scenario: Scenario, i: int, j: int, meas, range_tol: float, behind: bool = False):
    """Positions along the RX ray consistent with the range to within ``range_tol``.

    Returned as the segment end points. Near the TX-RX baseline (forward
    scatter) the range barely constrains the position and the segment is long.
    """
    r, _, ca, cb = meas
    rx = scenario.stations[j]
    u = _rx_direction(rx, ca, cb, behind)
    v = rx.position - scenario.stations[i].position
    lo, hi = (_ray_distance(r + s * range_tol, u, v) for s in (-1.0, 1.0))
    return rx.position + lo * u, rx.position + hi * u


def _closest_on_segment(p: np.ndarray, seg) -> np.ndarray:
    a, b = seg
    ab = b - a
    n2 = ab @ ab
    s = 0.0 if n2 == 0 else float(np.clip((p - a) @ ab / n2, 0.0, 1.0))
    return a + s * ab


def _segment_gap(s1, s2) -> float:
    """Smallest distance between two segments."""
    a, b = s1
    c, d = s2
    u, v, w = b - a, d - c, a - c
    aa, bb, cc, dd, ee = u @ u, u @ v, v @ v, u @ w, v @ w
    den = aa * cc - bb * bb
    cands = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
    if den > 1e-12 * max(aa * cc, 1e-300):
        cands.append((float(np.clip((bb * ee - cc * dd) / den, 0, 1)), float(np.clip((aa * ee - bb * dd) / den, 0, 1))))
    best = min(np.linalg.norm(_closest_on_segment(c + t * v, s1) - (c + t * v)) for _, t in cands)
    best = min(best, min(np.linalg.norm(_closest_on_segment(a + s * u, s2) - (a + s * u)) for s, _ in cands))
    return float(best)


def _resolve_hemisphere(pairs: list[int], fixes: list[tuple], radius: float):
    """Pick front or back fix per component, whichever more other pairs agree with."""
    out = []
    for n, (front, back) in enumerate(fixes):
        score = []
        for cand in (front, back):
            hits = {pairs[m] for m, other in enumerate(fixes) if pairs[m] != pairs[n]
                    and min(_segment_gap(cand, other[0]), _segment_gap(cand, other[1])) <= radius}
            score.append(len(hits))
        out.append(back if score[1] > score[0] else front)
    return out


@dataclass(eq=False)
class AssociationResult:
    targets: list[MeasurementSet]
    centroids: list[np.ndarray]
    orphans: list[tuple[int, int]] = field(default_factory=list)  # (pair, component)


def associate(
    detections: Mapping[int, DetectionList] | Sequence[DetectionList],
    scenario: Scenario,
    radius: float = 20.0,
    sigma2: float | None = None,
) -> AssociationResult:
    """Group detections across pairs by proximity of their coarse position fixes.

    Matching is greedy nearest-centroid within ``radius``. Groups whose
    centroids end up closer than ``radius`` are merged and flagged ambiguous.
    Groups seen in fewer than half the pairs are returned as orphans. Weights
    are plug-in CRLBs using the detected gain magnitude and the radio's
    thermal noise variance (or ``sigma2``).
    """
    radio = scenario.radio
    n_pairs = scenario.num_pairs
    dets = detections if isinstance(detections, Mapping) else dict(enumerate(detections))
    if set(dets) != set(range(n_pairs)):
        raise ValueError("need one DetectionList per pair")
    s2 = radio.noise_variance() if sigma2 is None else sigma2

    raw = []  # (pair, component index, meas, |g|)
    fixes = []
    for l in range(n_pairs):
        i, j = scenario.pair(l)
        for c, comp in enumerate(dets[l].components):
            meas = freq_to_meas(comp.freqs, radio)
            amp = abs(comp.gain)
            tol = 3.0 * math.sqrt(measurement_variances([amp], s2, radio)[0, 0]) if amp > 0 else radius
            tol = min(tol, radius)
            raw.append((l, c, meas, amp))
            fixes.append(tuple(coarse_segment(scenario, i, j, meas, tol, b) for b in (False, True)))
    chosen = _resolve_hemisphere([r[0] for r in raw], fixes, radius)
    items = [(*r, seg) for r, seg in zip(raw, chosen)]  # (pair, component, meas, |g|, segment)
    # long segments (forward scatter) say little about position; attach them last
    long = {n for n, it in enumerate(items) if np.linalg.norm(it[4][1] - it[4][0]) > radius}

    groups: list[dict] = []  # pair -> item list, plus running centroid

    def centroid(g):
        members = [m for ms in g["members"].values() for m in ms]
        short = [m for m in members if m not in long] or members
        c = np.mean([0.5 * (items[m][4][0] + items[m][4][1]) for m in short], axis=0)
        return np.mean([_closest_on_segment(c, items[m][4]) for m in short], axis=0)

    def dist(n, g):
        return float(np.linalg.norm(_closest_on_segment(g["c"], items[n][4]) - g["c"]))

    def attach(l, idx, new_groups):
        cands = sorted((dist(n, g), n, gi) for n in idx for gi, g in enumerate(groups)
                       if l not in g["members"] and dist(n, g) <= radius)
        used_items, used_groups = set(), set()
        for _, n, gi in cands:
            if n in used_items or gi in used_groups:
                continue
            groups[gi]["members"][l] = [n]
            used_items.add(n)
            used_groups.add(gi)
        for n in idx:
            if n not in used_items and new_groups:
                groups.append({"members": {l: [n]}, "ambiguous": False})
        for g in groups:
            g["c"] = centroid(g)
        return [n for n in idx if n not in used_items]

    order = sorted(range(n_pairs), key=lambda l: (-len(dets[l]), l))
    for l in order:
        attach(l, [n for n, it in enumerate(items) if it[0] == l and n not in long], True)
    for l in order:
        attach(l, [n for n, it in enumerate(items) if it[0] == l and n in long], True)

    merged = True
    while merged:
        merged = False
        for a in range(len(groups)):
            for b in range(a + 1, len(groups)):
                if np.linalg.norm(groups[a]["c"] - groups[b]["c"]) < radius:
                    for l, ms in groups[b]["members"].items():
                        groups[a]["members"].setdefault(l, []).extend(ms)
                    groups[a]["ambiguous"] = True
                    groups[a]["c"] = centroid(groups[a])
                    del groups[b]
                    merged = True
                    break
            if merged:
                break

    targets, cents, orphans = [], [], []
    for g in groups:
        if 2 * len(g["members"]) < n_pairs:
            orphans.extend((items[n][0], items[n][1]) for ms in g["members"].values() for n in ms)
            continue
        meas = np.zeros((n_pairs, 4))
        amps = np.ones(n_pairs)
        present = np.zeros(n_pairs, dtype=bool)
        for l, ms in g["members"].items():
            best = min(ms, key=lambda n: dist(n, g))
            meas[l], amps[l], present[l] = items[best][2], items[best][3], True
        var = measurement_variances(amps, s2, radio)
        targets.append(MeasurementSet(len(targets), _stack(meas), np.diag(1.0 / _stack(var)), present,
                                      g["ambiguous"]))
        cents.append(g["c"])
    return AssociationResult(targets, cents, orphans)
