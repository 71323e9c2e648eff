"""Arbitrary-dimension Newtonized orthogonal matching pursuit (AD-NOMP).

Estimates a sum of 4-D complex exponentials ``sum_k g_k a(f_k)`` in white
noise without a frequency grid. Each new component is located by a
dimension-wise coarse search (coherent over the dimensions already fixed,
non-coherent over the rest), refined with Newton steps on
``|a(f)^H y|^2``, then all components are re-refined cyclically against their
leave-one-out residuals and the gains are re-fit jointly by least squares.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channel import ChannelTensor, atom


class IllConditionedWarning(RuntimeWarning):
    pass


@dataclass(frozen=True, eq=False)
class DetectedComponent:
    gain: complex
    freqs: np.ndarray
    residual_power_at_detection: float


@dataclass(eq=False)
class DetectionList:
    components: list[DetectedComponent]
    final_residual_power: float
    iterations: int
    residual_history: list[float] = field(default_factory=list)
    dropped: int = 0

    def __len__(self):
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    @property
    def freqs(self) -> np.ndarray:
        return np.array([c.freqs for c in self.components]).reshape(-1, 4)

    @property
    def gains(self) -> np.ndarray:
        return np.array([c.gain for c in self.components], dtype=complex)


def wrap_freqs(f) -> np.ndarray:
    """f0 onto [0, 1), f1..f3 onto [-0.5, 0.5)."""
    f = np.asarray(f, dtype=float).copy()
    f[0] = f[0] - math.floor(f[0])
    f[1:] = f[1:] - np.floor(f[1:] + 0.5)
    return f


def _moments(y: np.ndarray, f, order: int) -> np.ndarray:
    """``S[p0..p3] = sum_n y[n] prod_a n_a^p_a exp(-j 2 pi f_a n_a)`` for p_a <= order."""
    t = y
    for fa, na in zip(f, y.shape):
        n = np.arange(na)
        e = np.exp(-2j * np.pi * fa * n)
        w = np.stack([e * n**p for p in range(order + 1)])
        t = np.tensordot(t, w, axes=([0], [1]))
    return t


def _data(y) -> np.ndarray:
    return y.data if isinstance(y, ChannelTensor) else np.asarray(y)


def objective(f, y) -> float:
    """``|a(f)^H y|^2``."""
    s = _moments(_data(y), f, 0).reshape(())
    return float(abs(s) ** 2)


def gradient_hessian(f, y) -> tuple[float, np.ndarray, np.ndarray]:
    """Objective value, gradient and Hessian with respect to the four frequencies."""
    m = _moments(_data(y), f, 2)
    s = m[0, 0, 0, 0]
    unit = np.eye(4, dtype=int)
    ds = np.array([m[tuple(unit[a])] for a in range(4)]) * (-2j * np.pi)
    d2s = np.empty((4, 4), dtype=complex)
    for a in range(4):
        for b in range(4):
            d2s[a, b] = m[tuple(unit[a] + unit[b])]
    d2s *= (-2j * np.pi) ** 2
    grad = 2.0 * np.real(np.conj(s) * ds)
    hess = 2.0 * np.real(np.conj(ds)[:, None] * ds[None, :] + np.conj(s) * d2s)
    return float(abs(s) ** 2), grad, hess


def coarse_search(residual, fixed_prefix: Sequence[float], dim: int, oversample: int = 4) -> float:
    """Grid maximizer of the dimension-wise search objective for ``dim``.

    Dimensions ``0..dim-1`` are combined coherently at ``fixed_prefix``;
    dimensions after ``dim`` are summed in power.
    """
    z = _data(residual)
    if len(fixed_prefix) != dim:
        raise ValueError("fixed_prefix must hold one frequency per already-searched dimension")
    for fb in fixed_prefix:
        e = np.exp(-2j * np.pi * fb * np.arange(z.shape[0]))
        z = np.tensordot(e, z, axes=([0], [0]))
    na = z.shape[0]
    grid = oversample * na
    spec = np.fft.fft(z, n=grid, axis=0)
    power = np.sum(np.abs(spec.reshape(grid, -1)) ** 2, axis=1)
    f = int(np.argmax(power)) / grid
    return f if dim == 0 else f - math.floor(f + 0.5)


def coarse_estimate(residual, oversample: int = 4) -> np.ndarray:
    f: list[float] = []
    for a in range(4):
        f.append(coarse_search(residual, f, a, oversample))
    return np.array(f)


def newton_refine(f, y, max_iter: int = 20, tol: float = 1e-13, max_halvings: int = 6) -> np.ndarray:
    """Newton ascent on ``|a(f)^H y|^2``; never returns a worse point than ``f``.

    A full Newton step is used while the Hessian is negative definite,
    otherwise only its diagonal (dimensions with non-negative curvature are
    held). Steps are capped at half a DFT bin per dimension and halved until
    the objective does not decrease.
    """
    y = _data(y)
    f = np.asarray(f, dtype=float).copy()
    cap = 0.5 / np.asarray(y.shape, dtype=float)
    for _ in range(max_iter):
        val, grad, hess = gradient_hessian(f, y)
        if not np.all(np.isfinite(grad)) or val == 0.0:
            break
        step = None
        if np.all(np.linalg.eigvalsh(hess) < 0):
            step = -np.linalg.solve(hess, grad)
        else:
            d = np.diag(hess)
            step = np.where(d < 0, -grad / np.where(d < 0, d, 1.0), 0.0)
        step = np.clip(step, -cap, cap)
        if np.max(np.abs(step)) < tol:
            break
        for _ in range(max_halvings + 1):
            cand = f + step
            if objective(cand, y) >= val:
                f = cand
                break
            step = step / 2
        else:
            break
    return f


def default_threshold(sigma2: float, total: int) -> float:
    """Noise-floor test: expected noise energy plus three standard deviations."""
    return sigma2 * total * (1.0 + 3.0 / math.sqrt(total))


def _single_gain(a: np.ndarray, y: np.ndarray) -> complex:
    return complex(np.vdot(a, y) / a.size)


def detect(
    y,
    known_k: int | None = None,
    threshold: float | None = None,
    *,
    sigma2: float | None = None,
    oversample: int = 4,
    cyclic_rounds: int = 3,
    newton_iters: int = 20,
    polish_rounds: int = 50,
    polish_tol: float = 1e-12,
    max_components: int = 32,
    gram_cond_limit: float = 1e10,
) -> DetectionList:
    """Run AD-NOMP on a channel tensor.

    Exactly one stopping rule applies: ``known_k`` detections, or the residual
    power falling to ``threshold`` (defaulting to :func:`default_threshold`
    from the tensor's noise variance). After the main loop, cyclic refinement
    continues until no frequency moves by more than ``polish_tol`` (at most
    ``polish_rounds`` rounds).
    """
    data = _data(y).astype(complex, copy=False)
    dims = data.shape
    total = data.size
    if known_k is None:
        if threshold is None:
            s2 = sigma2 if sigma2 is not None else getattr(y, "sigma2", None)
            if s2 is None:
                raise ValueError("threshold mode needs a threshold or a noise variance")
            threshold = default_threshold(s2, total)
        limit = max_components
    else:
        limit = known_k

    freqs: list[np.ndarray] = []
    atoms: list[np.ndarray] = []
    gains: list[complex] = []
    det_power: list[float] = []
    residual = data.copy()
    res_power = float(np.vdot(residual, residual).real)
    history = [res_power]
    dropped = 0
    iterations = 0

    def refine_all(rounds: int, tol: float | None) -> None:
        nonlocal residual
        for _ in range(rounds):
            moved = 0.0
            for idx in range(len(freqs)):
                loo = residual + gains[idx] * atoms[idx]
                new_f = wrap_freqs(newton_refine(freqs[idx], loo, max_iter=newton_iters))
                moved = max(moved, float(np.max(np.abs(_wrapped_diff(new_f, freqs[idx])))))
                freqs[idx] = new_f
                atoms[idx] = atom(new_f, dims)
                gains[idx] = _single_gain(atoms[idx], loo)
                residual = loo - gains[idx] * atoms[idx]
            if tol is not None and moved <= tol:
                break

    def joint_ls() -> None:
        nonlocal residual, dropped
        while atoms:
            mat = np.stack([a.reshape(-1) for a in atoms], axis=1)
            gram = mat.conj().T @ mat
            if len(atoms) > 1 and np.linalg.cond(gram) > gram_cond_limit:
                warnings.warn("near-identical components in joint LS; dropping the weaker one",
                              IllConditionedWarning, stacklevel=3)
                weakest = int(np.argmin(np.abs(np.linalg.lstsq(mat, data.reshape(-1), rcond=None)[0])))
                for lst in (freqs, atoms, gains, det_power):
                    lst.pop(weakest)
                dropped += 1
                continue
            g = np.linalg.solve(gram, mat.conj().T @ data.reshape(-1))
            gains[:] = list(g)
            residual = data - (mat @ g).reshape(dims)
            return
        residual = data.copy()

    while len(freqs) < limit:
        if res_power == 0.0 or (known_k is None and res_power <= threshold):
            break
        iterations += 1
        f = coarse_estimate(residual, oversample)
        f = wrap_freqs(newton_refine(f, residual, max_iter=newton_iters))
        a = atom(f, dims)
        g = _single_gain(a, residual)
        freqs.append(f)
        atoms.append(a)
        gains.append(g)
        det_power.append(res_power)
        residual = residual - g * a
        refine_all(cyclic_rounds, None)
        joint_ls()
        res_power = float(np.vdot(residual, residual).real)
        history.append(res_power)

    if freqs and polish_rounds:
        refine_all(polish_rounds, polish_tol)
        joint_ls()
        res_power = float(np.vdot(residual, residual).real)
        history.append(res_power)

    comps = [DetectedComponent(complex(g), f, p) for g, f, p in zip(gains, freqs, det_power)]
    comps.sort(key=lambda c: -abs(c.gain))
    return DetectionList(comps, res_power, iterations, history, dropped)


def _wrapped_diff(a, b) -> np.ndarray:
    d = np.asarray(a) - np.asarray(b)
    return d - np.round(d)


def detection_rows(pair: int, detections: DetectionList) -> list[list]:
    return [
        [pair, n, c.gain.real, c.gain.imag, *c.freqs.tolist(), c.residual_power_at_detection]
        for n, c in enumerate(detections.components)
    ]


def detections_csv(per_pair: dict[int, DetectionList]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["pair", "component", "re_g", "im_g", "f0", "f1", "f2", "f3", "residual_power"])
    for pair in sorted(per_pair):
        for row in detection_rows(pair, per_pair[pair]):
            writer.writerow([row[0], row[1], *(repr(float(v)) for v in row[2:])])
    return buf.getvalue()
