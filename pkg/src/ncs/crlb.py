"""Cramer-Rao bounds for multi-domain measurements and fused target state.

Frequencies are ordered DM0..DM3 = (range, Doppler, horizontal cosine,
vertical cosine). The per-pair Fisher information of the six channel
parameters (amplitude, phase, f0..f3) is available in closed form, and its
frequency block inverts to a diagonal; the state bound follows from the chain
rule through the geometry Jacobian.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .scenario import C0, RadioConfig, Scenario, amplitude_and_noise, geometry


class UnestimableDimensionError(ValueError):
    pass


class SingularGeometryError(np.linalg.LinAlgError):
    """The state FIM is singular; ``direction`` spans (part of) its null space."""

    def __init__(self, msg: str, direction: np.ndarray | None = None):
        super().__init__(msg)
        self.direction = direction


class ConditioningWarning(RuntimeWarning):
    pass


def _sums(na: int) -> tuple[float, float]:
    """Closed forms of sum(n) and sum(n^2) over n = 0..na-1."""
    return na * (na - 1) / 2.0, na * (na - 1) * (2 * na - 1) / 6.0


def fim_psi(amp: float, sigma2: float, dims: Sequence[int]) -> np.ndarray:
    """6x6 FIM of (A, phi, f0, f1, f2, f3) for one rank-one component in white noise."""
    dims = [int(n) for n in dims]
    total = float(np.prod(dims))
    c = 2.0 / sigma2
    a2 = amp * amp
    fim = np.zeros((6, 6))
    fim[0, 0] = c * total
    fim[1, 1] = c * a2 * total
    lin = []
    for a, na in enumerate(dims):
        s1, s2 = _sums(na)
        lin.append(2 * math.pi * s1 / na)
        fim[a + 2, 1] = fim[1, a + 2] = c * a2 * total * lin[a]
        fim[a + 2, a + 2] = c * a2 * total * 4 * math.pi**2 * s2 / na
    for a in range(4):
        for b in range(4):
            if a != b:
                fim[a + 2, b + 2] = c * a2 * total * lin[a] * lin[b]
    return fim


def crlb_mm(amp: float, sigma2: float, dims: Sequence[int]) -> np.ndarray:
    """Per-dimension CRLB of the normalized frequencies (unitless^2)."""
    dims = np.asarray(dims, dtype=float)
    if np.any(dims < 2):
        raise UnestimableDimensionError(f"every dimension needs >= 2 samples, got {dims.astype(int).tolist()}")
    total = float(np.prod(dims))
    return 3.0 * sigma2 / (2.0 * math.pi**2 * amp**2 * total * (dims**2 - 1.0))


@dataclass(frozen=True)
class Prop1Check:
    rel_deviation: float
    max_offdiag: float
    condition: float


def verify_prop1(amp: float, sigma2: float, dims: Sequence[int], prescale: bool = True) -> Prop1Check:
    """Invert the full 6x6 FIM and compare its frequency block to ``crlb_mm``.

    ``max_offdiag`` is relative to the largest diagonal entry of the block.
    With ``prescale`` the FIM is Jacobi-scaled before inversion.
    """
    expected = crlb_mm(amp, sigma2, dims)
    fim = fim_psi(amp, sigma2, dims)
    if prescale:
        d = 1.0 / np.sqrt(np.diag(fim))
        scaled = fim * np.outer(d, d)
        cond = np.linalg.cond(scaled)
        inv = np.linalg.inv(scaled) * np.outer(d, d)
    else:
        cond = np.linalg.cond(fim)
        inv = np.linalg.inv(fim)
    if cond > 1e12:
        warnings.warn(f"FIM condition number {cond:.3g} exceeds 1e12; rescale units", ConditioningWarning,
                      stacklevel=2)
    block = inv[2:, 2:]
    rel = float(np.max(np.abs(np.diag(block) - expected) / expected))
    off = block - np.diag(np.diag(block))
    return Prop1Check(rel, float(np.max(np.abs(off)) / np.max(np.diag(block))), float(cond))


def unit_scales(radio: RadioConfig) -> np.ndarray:
    """Variance conversion from normalized frequency to (m^2, (m/s)^2, 1, 1)."""
    return np.array([
        (C0 / radio.subcarrier_spacing) ** 2,
        (C0 / (radio.carrier_freq * radio.pulse_interval)) ** 2,
        4.0,
        4.0,
    ])


def mm_unit_scaling(crlb_f, radio: RadioConfig) -> np.ndarray:
    return np.asarray(crlb_f, dtype=float) * unit_scales(radio)


def _xi(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    diff = a - b
    d = np.linalg.norm(diff)
    rho = diff / d
    return (c - rho * (rho @ c)) / d


def jacobian(scenario: Scenario, target_id: int) -> np.ndarray:
    """d(frequencies)/d(position, velocity), shape (4*I*J, 6), blocks DM0..DM3 over pairs."""
    radio = scenario.radio
    tgt = scenario.targets[target_id]
    n_pairs = scenario.num_pairs
    jac = np.zeros((4 * n_pairs, 6))
    kr = radio.subcarrier_spacing / C0
    kd = radio.doppler_scale
    for l, (i, j) in enumerate(scenario.pairs()):
        bi = scenario.stations[i].position
        rx = scenario.stations[j]
        rho_sum = geometry(scenario, i, target_id).direction + geometry(scenario, j, target_id).direction
        jac[l, :3] = -kr * rho_sum
        jac[n_pairs + l, :3] = kd * (_xi(tgt.position, bi, tgt.velocity) + _xi(tgt.position, rx.position, tgt.velocity))
        jac[n_pairs + l, 3:] = kd * rho_sum
        jac[2 * n_pairs + l, :3] = 0.5 * _xi(tgt.position, rx.position, rx.panel_x)
        jac[3 * n_pairs + l, :3] = 0.5 * _xi(tgt.position, rx.position, rx.panel_y)
    return jac


def pair_crlbs(scenario: Scenario, target_id: int) -> np.ndarray:
    """Frequency CRLBs, shape (num_pairs, 4), using each pair's true amplitude."""
    dims = scenario.radio.dims
    out = np.empty((scenario.num_pairs, 4))
    for l, (i, j) in enumerate(scenario.pairs()):
        amp, sigma2 = amplitude_and_noise(scenario, i, j, target_id)
        out[l] = crlb_mm(amp, sigma2, dims)
    return out


def frequency_information(scenario: Scenario, target_id: int) -> np.ndarray:
    """Diagonal of J(Omega) stacked block-wise (DM0 over pairs, then DM1, ...)."""
    return (1.0 / pair_crlbs(scenario, target_id)).T.reshape(-1)


def invert_information(fim: np.ndarray, what: str = "state", tol: float = 1e-11) -> np.ndarray:
    """Invert an SPD information matrix with Jacobi prescaling; raise if singular."""
    diag = np.diag(fim).copy()
    if np.any(diag <= 0):
        idx = int(np.argmin(diag))
        direction = np.zeros(len(diag))
        direction[idx] = 1.0
        raise SingularGeometryError(f"{what} FIM has no information along axis {idx}", direction)
    d = 1.0 / np.sqrt(diag)
    scaled = fim * np.outer(d, d)
    w, v = np.linalg.eigh(scaled)
    if w[0] <= tol * w[-1]:
        direction = v[:, 0] * d
        direction /= np.linalg.norm(direction)
        raise SingularGeometryError(
            f"{what} FIM is singular (eigenvalue ratio {w[0] / w[-1]:.2e}); null direction {np.round(direction, 4)}",
            direction,
        )
    inv = (v / w) @ v.T
    inv = inv * np.outer(d, d)
    return 0.5 * (inv + inv.T)


@dataclass(frozen=True, eq=False)
class StateCrlb:
    covariance: np.ndarray
    mode: str = "full"

    @property
    def position(self) -> np.ndarray:
        return self.covariance[:3, :3]

    @property
    def velocity(self) -> np.ndarray:
        if self.mode != "full":
            raise ValueError("position-only bound has no velocity block")
        return self.covariance[3:, 3:]

    def root(self, quantity: str) -> float:
        """Root bound for ``pos2d``, ``pos3d``, ``vel2d``, ``vel3d`` or ``pos_x`` style axes."""
        kind, which = quantity[:3], quantity[3:].lstrip("_")
        block = self.position if kind == "pos" else self.velocity
        diag = np.diag(block)
        if which == "2d":
            return float(math.sqrt(diag[0] + diag[1]))
        if which == "3d":
            return float(math.sqrt(diag.sum()))
        return float(math.sqrt(diag["xyz".index(which)]))


def state_fim(scenario: Scenario, target_id: int, mode: str = "full") -> np.ndarray:
    jac = jacobian(scenario, target_id)
    info = frequency_information(scenario, target_id)
    if mode == "position_only":
        n = scenario.num_pairs
        keep = np.r_[0:n, 2 * n:4 * n]
        jac = jac[keep, :3]
        info = info[keep]
    elif mode != "full":
        raise ValueError(f"unknown mode {mode!r}")
    return jac.T @ (info[:, None] * jac)


def crlb_state(scenario: Scenario, target_id: int, mode: str = "full") -> StateCrlb:
    fim = state_fim(scenario, target_id, mode)
    return StateCrlb(invert_information(fim, what=f"target {target_id} {mode}"), mode)


AXES = ("x", "y", "z")


def crlb_report_rows(scenario: Scenario, target_ids: Sequence[int] | None = None) -> list[dict]:
    """Rows (target, axis, quantity, bound) with ``bound`` the root-CRLB; inf if unobservable."""
    rows = []
    ids = range(len(scenario.targets)) if target_ids is None else target_ids
    for k in ids:
        try:
            cov = crlb_state(scenario, k).covariance
        except SingularGeometryError:
            cov = np.full((6, 6), np.inf)
            try:
                cov[:3, :3] = crlb_state(scenario, k, "position_only").covariance
            except SingularGeometryError:
                pass
        for q, off in (("pos", 0), ("vel", 3)):
            for a, axis in enumerate(AXES):
                rows.append({"target": k, "axis": axis, "quantity": q, "bound": math.sqrt(cov[off + a, off + a])})
    return rows


def crlb_report_csv(scenario: Scenario) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["target", "axis", "quantity", "bound"])
    for row in crlb_report_rows(scenario):
        writer.writerow([row["target"], row["axis"], row["quantity"], repr(row["bound"])])
    return buf.getvalue()


def joint_crlb_mm(gains, freqs, sigma2: float, dims: Sequence[int]) -> np.ndarray:
    """Frequency CRLBs, shape (K, 4), for K superimposed components estimated jointly.

    Unlike :func:`crlb_mm` this accounts for the coupling between components
    that are not resolved by the array, so it is never smaller.
    """
    from .channel import atom

    dims = tuple(int(n) for n in dims)
    grids = np.meshgrid(*[np.arange(n) for n in dims], indexing="ij")
    cols = []
    for g, f in zip(gains, freqs):
        a = atom(f, dims).reshape(-1)
        cols += [a, 1j * a]
        cols += [2j * np.pi * g * grids[d].reshape(-1) * a for d in range(4)]
    deriv = np.stack(cols, axis=1)
    fim = 2.0 / sigma2 * np.real(deriv.conj().T @ deriv)
    cov = invert_information(fim, "joint component")
    k = len(gains)
    return np.array([[cov[6 * c + 2 + d, 6 * c + 2 + d] for d in range(4)] for c in range(k)])
