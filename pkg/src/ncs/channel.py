"""Noisy multi-target 4-D channel tensors per TX-RX pair.

Each tensor has shape (N, M, Lx, Ly): subcarrier, symbol, horizontal and
vertical antenna. Every target contributes a rank-one term built from four
complex-exponential steering vectors; noise is circularly-symmetric complex
Gaussian injected directly on the channel estimate.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .scenario import Scenario, amplitude_and_noise, initial_phase, true_frequencies

TENSOR_MAGIC = b"NCST"
_HEADER = struct.Struct("<4s4IdI")  # magic, shape, sigma2, pair -> 32 bytes


@dataclass(frozen=True, eq=False)
class ChannelTensor:
    pair: int
    data: np.ndarray
    sigma2: float

    def __post_init__(self):
        if self.data.ndim != 4:
            raise ValueError(f"channel tensor must be 4-D, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("channel tensor has non-finite entries")
        self.data.setflags(write=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape


def steering(f: float, na: int) -> np.ndarray:
    return np.exp(2j * np.pi * f * np.arange(na))


def atom(f: Sequence[float], dims: Sequence[int]) -> np.ndarray:
    """Rank-one 4-D tensor ``a0(f0) o a1(f1) o a2(f2) o a3(f3)``."""
    a0, a1, a2, a3 = (steering(fa, na) for fa, na in zip(f, dims))
    return np.einsum("i,j,k,l->ijkl", a0, a1, a2, a3)


def complex_noise(rng: np.random.Generator, shape, sigma2: float) -> np.ndarray:
    scale = np.sqrt(sigma2 / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def pair_components(scenario: Scenario, i: int, j: int, targets: Sequence[int] | None = None,
                    doppler: str = "strict"):
    """Ground-truth (complex gain, frequency) per target for pair (i, j)."""
    ks = range(len(scenario.targets)) if targets is None else targets
    out = []
    for k in ks:
        amp, _ = amplitude_and_noise(scenario, i, j, k)
        gain = amp * np.exp(1j * initial_phase(scenario, i, j, k))
        out.append((gain, true_frequencies(scenario, i, j, k, doppler=doppler)))
    return out


def synthesize_pair(scenario: Scenario, i: int, j: int, seed=None, *, targets: Sequence[int] | None = None,
                    noise_scale: float = 1.0, doppler: str = "strict") -> ChannelTensor:
    """Channel tensor for pair (i, j).

    ``seed`` is anything :func:`numpy.random.default_rng` accepts. The noise
    variance is the radio's thermal noise times ``noise_scale``; pass 0 for a
    noiseless tensor.
    """
    l = scenario.pair_index(i, j)
    dims = scenario.radio.dims
    data = np.zeros(dims, dtype=complex)
    for gain, f in pair_components(scenario, i, j, targets, doppler=doppler):
        data += gain * atom(f, dims)
    sigma2 = scenario.radio.noise_variance() * noise_scale
    if sigma2 > 0:
        data += complex_noise(np.random.default_rng(seed), dims, sigma2)
    return ChannelTensor(l, data, sigma2)


def synthesize_all(scenario: Scenario, seed=None, **kwargs) -> list[ChannelTensor]:
    """One tensor per pair, each with an independent child seed."""
    seeds = np.random.SeedSequence(seed).spawn(scenario.num_pairs)
    return [synthesize_pair(scenario, i, j, seeds[l], **kwargs) for l, (i, j) in enumerate(scenario.pairs())]


def write_tensor(tensor: ChannelTensor, path: str | Path) -> None:
    """Dump as a 32-byte header followed by little-endian complex64, DM0 fastest."""
    n, m, lx, ly = tensor.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(TENSOR_MAGIC, n, m, lx, ly, float(tensor.sigma2), tensor.pair))
        fh.write(np.asarray(tensor.data, dtype="<c8").tobytes(order="F"))


def read_tensor(path: str | Path) -> ChannelTensor:
    raw = Path(path).read_bytes()
    magic, n, m, lx, ly, sigma2, pair = _HEADER.unpack_from(raw)
    if magic != TENSOR_MAGIC:
        raise ValueError(f"{path}: not a channel tensor file")
    body = np.frombuffer(raw, dtype="<c8", offset=_HEADER.size)
    if body.size != n * m * lx * ly:
        raise ValueError(f"{path}: truncated tensor body")
    data = body.reshape((n, m, lx, ly), order="F").astype(complex)
    return ChannelTensor(pair, data, sigma2)
