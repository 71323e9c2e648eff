"""Scenario geometry, radio configuration and geometric ground truth.

Coordinates are (east, north, up) in metres. A scenario owns every quantity the
simulator treats as truth: station positions and panel orientations, target
kinematics, and the radio parameters that turn geometry into normalized
frequencies, amplitudes and noise levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

C0 = 299_792_458.0

FD = "FD"
HD = "HD"


class ScenarioError(ValueError):
    """Base class for invalid scenario input."""


class DegenerateBoresightError(ScenarioError):
    pass


class CoincidentPointError(ScenarioError):
    pass


class AmbiguityError(ScenarioError):
    """Raised when a range or Doppler frequency leaves its unambiguous interval."""


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


@dataclass(frozen=True)
class RadioConfig:
    carrier_freq: float = 4.9e9
    subcarrier_spacing: float = 30e3
    num_subcarriers: int = 3276
    num_symbols: int = 64
    pulse_interval: float = 1e-3
    panel_dims: tuple[int, int] = (8, 8)
    tx_power_dbm: float | tuple[float, ...] = 35.0
    tx_gain_dbi: float = 0.0
    rx_gain_dbi: float = 0.0
    noise_density_dbm_hz: float = -174.0
    noise_figure_db: float = 6.0
    rcs: float = 1.0

    def __post_init__(self):
        if self.carrier_freq <= 0 or self.subcarrier_spacing <= 0:
            raise ScenarioError("carrier frequency and subcarrier spacing must be positive")
        for name, n in zip(("num_subcarriers", "num_symbols", "Lx", "Ly"), self.dims):
            if int(n) != n or n < 2:
                raise ScenarioError(f"{name} must be an integer >= 2, got {n}")
        # tolerate float round-off in 1/df
        if self.pulse_interval * self.subcarrier_spacing < 1.0 - 1e-12:
            raise ScenarioError("pulse interval must be at least one OFDM symbol (T >= 1/df)")
        if self.rcs <= 0:
            raise ScenarioError("rcs must be positive")
        object.__setattr__(self, "panel_dims", tuple(int(v) for v in self.panel_dims))
        if not np.isscalar(self.tx_power_dbm):
            object.__setattr__(self, "tx_power_dbm", tuple(float(p) for p in self.tx_power_dbm))

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """Tensor shape (N, M, Lx, Ly) in dimension order DM0..DM3."""
        return (self.num_subcarriers, self.num_symbols, *self.panel_dims)

    @property
    def wavelength(self) -> float:
        return C0 / self.carrier_freq

    @property
    def max_range(self) -> float:
        """Largest unambiguous bistatic range, c0/df."""
        return C0 / self.subcarrier_spacing

    @property
    def doppler_scale(self) -> float:
        """Normalized Doppler per m/s of range rate, fc*T/c0."""
        return self.carrier_freq * self.pulse_interval / C0

    def tx_power(self, i: int) -> float:
        """Transmit power of TX station ``i`` in dBm."""
        if np.isscalar(self.tx_power_dbm):
            return float(self.tx_power_dbm)
        return self.tx_power_dbm[i]

    def noise_variance(self) -> float:
        """Per-resource-element noise variance in watts."""
        dbm = self.noise_density_dbm_hz + 10.0 * math.log10(self.subcarrier_spacing) + self.noise_figure_db
        return dbm_to_watts(dbm)

    def desk_scale(self, dims: Sequence[int] = (256, 16, 4, 4)) -> "RadioConfig":
        n, m, lx, ly = dims
        return replace(self, num_subcarriers=n, num_symbols=m, panel_dims=(lx, ly))


def derive_panel_basis(z, tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Panel axes ``(x, y)`` for boresight ``z`` with ``x`` kept horizontal.

    ``z`` is normalized first; orientations written to four decimals are only
    unit length to a few 1e-4.
    """
    z = np.asarray(z, dtype=float)
    nz = np.linalg.norm(z)
    if nz == 0:
        raise DegenerateBoresightError("zero boresight vector")
    z = z / nz
    horiz = math.hypot(z[0], z[1])
    if horiz < tol:
        raise DegenerateBoresightError(f"boresight {z} is vertical; horizontal panel axis undefined")
    x = np.array([-z[1], z[0], 0.0])
    y = np.array([-z[0] * z[2], -z[1] * z[2], z[0] ** 2 + z[1] ** 2])
    return x / np.linalg.norm(x), y / np.linalg.norm(y)


@dataclass(frozen=True, eq=False)
class BaseStation:
    id: int
    position: np.ndarray
    boresight: np.ndarray
    role: str = "TXRX"
    panel_x: np.ndarray = field(init=False, repr=False)
    panel_y: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(3)
        z = np.asarray(self.boresight, dtype=float).reshape(3)
        x, y = derive_panel_basis(z)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "boresight", z / np.linalg.norm(z))
        object.__setattr__(self, "panel_x", x)
        object.__setattr__(self, "panel_y", y)


@dataclass(frozen=True, eq=False)
class Target:
    position: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float).reshape(3))


@dataclass(frozen=True)
class Geometry:
    distance: float
    range_rate: float
    direction: np.ndarray
    cos_alpha: float
    cos_beta: float


@dataclass(frozen=True, eq=False)
class Scenario:
    """Stations, targets and radio for one NCS deployment.

    TX stations are ``0..I-1``; RX stations are ``J_S..N_BS-1`` with
    ``J_S = I`` in HD mode and ``J_S = 0`` in FD mode.
    """

    duplex: str
    stations: tuple[BaseStation, ...]
    targets: tuple[Target, ...]
    radio: RadioConfig
    num_tx: int
    pair_rcs: dict | None = None

    def __post_init__(self):
        duplex = self.duplex.upper()
        if duplex not in (FD, HD):
            raise ScenarioError(f"duplex must be FD or HD, got {self.duplex!r}")
        object.__setattr__(self, "duplex", duplex)
        stations = tuple(self.stations)
        n_bs = len(stations)
        if not 1 <= self.num_tx <= n_bs:
            raise ScenarioError(f"num_tx must be in 1..{n_bs}")
        if duplex == HD and self.num_tx >= n_bs:
            raise ScenarioError("HD scenario needs at least one RX-only station")
        roles = []
        for idx in range(n_bs):
            is_tx = idx < self.num_tx
            is_rx = idx >= (self.num_tx if duplex == HD else 0)
            roles.append("TXRX" if is_tx and is_rx else ("TX" if is_tx else "RX"))
        stations = tuple(
            BaseStation(idx, st.position, st.boresight, role)
            for idx, (st, role) in enumerate(zip(stations, roles))
        )
        object.__setattr__(self, "stations", stations)
        object.__setattr__(self, "targets", tuple(self.targets))
        for k, tgt in enumerate(self.targets):
            for st in stations:
                if np.linalg.norm(tgt.position - st.position) == 0:
                    raise CoincidentPointError(f"target {k} coincides with station {st.id}")

    # counts and index maps

    @property
    def n_bs(self) -> int:
        return len(self.stations)

    @property
    def j_start(self) -> int:
        return self.num_tx if self.duplex == HD else 0

    @property
    def num_rx(self) -> int:
        return self.n_bs - self.j_start

    @property
    def tx_ids(self) -> list[int]:
        return list(range(self.num_tx))

    @property
    def rx_ids(self) -> list[int]:
        return list(range(self.j_start, self.n_bs))

    @property
    def num_pairs(self) -> int:
        return self.num_tx * self.num_rx

    def pair_index(self, i: int, j: int) -> int:
        if not (0 <= i < self.num_tx and self.j_start <= j < self.n_bs):
            raise IndexError(f"({i}, {j}) is not a TX-RX pair of this scenario")
        return i * self.num_rx + (j - self.j_start)

    def pair(self, l: int) -> tuple[int, int]:
        if not 0 <= l < self.num_pairs:
            raise IndexError(f"pair index {l} out of range")
        i, jj = divmod(l, self.num_rx)
        return i, jj + self.j_start

    def pairs(self) -> list[tuple[int, int]]:
        return [self.pair(l) for l in range(self.num_pairs)]

    # modifiers

    def with_targets(self, targets: Sequence[Target]) -> "Scenario":
        return replace(self, targets=tuple(targets))

    def with_radio(self, radio: RadioConfig) -> "Scenario":
        return replace(self, radio=radio)

    def with_tx_power(self, dbm: float) -> "Scenario":
        return replace(self, radio=replace(self.radio, tx_power_dbm=float(dbm)))

    def with_num_tx(self, num_tx: int) -> "Scenario":
        return replace(self, num_tx=num_tx)

    def with_stations(self, stations: Sequence[BaseStation], num_tx: int | None = None) -> "Scenario":
        return replace(self, stations=tuple(stations), num_tx=self.num_tx if num_tx is None else num_tx)

    def translated(self, offset) -> "Scenario":
        offset = np.asarray(offset, dtype=float)
        stations = [BaseStation(s.id, s.position + offset, s.boresight) for s in self.stations]
        targets = [Target(t.position + offset, t.velocity) for t in self.targets]
        return replace(self, stations=tuple(stations), targets=tuple(targets))

    def rcs_for(self, i: int, j: int, k: int) -> float:
        if self.pair_rcs and (i, j, k) in self.pair_rcs:
            return float(self.pair_rcs[(i, j, k)])
        return self.radio.rcs


def geometry(scenario: Scenario, bs_id: int, target_id: int) -> Geometry:
    st = scenario.stations[bs_id]
    tgt = scenario.targets[target_id]
    diff = tgt.position - st.position
    d = float(np.linalg.norm(diff))
    if d == 0:
        raise CoincidentPointError(f"target {target_id} coincides with station {bs_id}")
    rho = diff / d
    return Geometry(
        distance=d,
        range_rate=float(rho @ tgt.velocity),
        direction=rho,
        cos_alpha=float(scenario.stations[bs_id].panel_x @ rho),
        cos_beta=float(scenario.stations[bs_id].panel_y @ rho),
    )


def wrap_half(f: float) -> float:
    """Map a frequency onto [-0.5, 0.5)."""
    return f - math.floor(f + 0.5)


def true_frequencies(scenario: Scenario, i: int, j: int, k: int, doppler: str = "strict") -> np.ndarray:
    """Normalized frequencies (f0, f1, f2, f3) of target ``k`` seen by pair (i, j).

    ``doppler`` selects how an out-of-range f1 is treated: ``"strict"`` raises
    :class:`AmbiguityError`, ``"wrap"`` folds it onto [-0.5, 0.5) and ``"raw"``
    returns the unfolded value (useful for derivatives and round trips).
    """
    scenario.pair_index(i, j)
    radio = scenario.radio
    gi = geometry(scenario, i, k)
    gj = geometry(scenario, j, k)
    r = gi.distance + gj.distance
    if r >= radio.max_range:
        raise AmbiguityError(f"bistatic range {r:.1f} m exceeds unambiguous range {radio.max_range:.1f} m")
    f0 = 1.0 - r * radio.subcarrier_spacing / C0
    f1 = (gi.range_rate + gj.range_rate) * radio.doppler_scale
    if doppler == "strict":
        if not -0.5 <= f1 < 0.5:
            raise AmbiguityError(f"Doppler frequency {f1:.4f} outside [-0.5, 0.5)")
    elif doppler == "wrap":
        f1 = wrap_half(f1)
    elif doppler != "raw":
        raise ValueError(f"unknown doppler mode {doppler!r}")
    return np.array([f0, f1, gj.cos_alpha / 2.0, gj.cos_beta / 2.0])


def doppler_wrapped(scenario: Scenario, i: int, j: int, k: int) -> bool:
    f1 = true_frequencies(scenario, i, j, k, doppler="raw")[1]
    return not -0.5 <= f1 < 0.5


def true_measurements(scenario: Scenario, i: int, j: int, k: int) -> np.ndarray:
    """Physical measurements (r, rdot, cos_alpha, cos_beta) for pair (i, j)."""
    gi = geometry(scenario, i, k)
    gj = geometry(scenario, j, k)
    return np.array([gi.distance + gj.distance, gi.range_rate + gj.range_rate, gj.cos_alpha, gj.cos_beta])


def amplitude_and_noise(scenario: Scenario, i: int, j: int, k: int) -> tuple[float, float]:
    """Echo amplitude of target ``k`` on pair (i, j) and per-element noise variance.

    The TX power is split evenly over the N subcarriers.
    """
    radio = scenario.radio
    d_i = geometry(scenario, i, k).distance
    d_j = geometry(scenario, j, k).distance
    p_sub = dbm_to_watts(radio.tx_power(i)) / radio.num_subcarriers
    num = p_sub * db_to_linear(radio.tx_gain_dbi) * db_to_linear(radio.rx_gain_dbi)
    num *= radio.wavelength**2 * scenario.rcs_for(i, j, k)
    amp = math.sqrt(num / ((4 * math.pi) ** 3 * d_i**2 * d_j**2))
    return amp, radio.noise_variance()


def initial_phase(scenario: Scenario, i: int, j: int, k: int) -> float:
    """Channel phase in radians for the carrier offset of the lowest subcarrier."""
    radio = scenario.radio
    r = geometry(scenario, i, k).distance + geometry(scenario, j, k).distance
    cycles = (radio.carrier_freq - radio.num_subcarriers * radio.subcarrier_spacing / 2) * r / C0
    return -2 * math.pi * (cycles - math.floor(cycles))


# Reference deployment: station positions with boresights, target positions with velocities.

REFERENCE_STATIONS = (
    ((0.0, 0.0, 80.0), (0.7032, 0.7032, -0.1045)),
    ((500.0, 0.0, 20.0), (0.7032, -0.7032, -0.1045)),
    ((0.0, 500.0, 20.0), (-0.7032, 0.7032, -0.1045)),
    ((500.0, 500.0, 80.0), (-0.7032, -0.7032, -0.1045)),
    ((250.0, 500.0, 40.0), (0.0, -0.9945, -0.1045)),
)

REFERENCE_TARGETS = (
    ((125.0, 250.0, 0.0), (10.0, 10.0, 0.0)),
    ((250.0, 250.0, 60.0), (10.0, -5.0, -5.0)),
    ((375.0, 250.0, 30.0), (-5.0, -5.0, -5.0)),
)


def reference_scenario(duplex: str = FD, tx_power_dbm: float | None = None,
                   radio: RadioConfig | None = None) -> Scenario:
    """The reference deployment: 4 BS / 2 TX in FD, 5 BS / 3 TX in HD.

    ``tx_power_dbm`` overrides the radio's power when given.
    """
    duplex = duplex.upper()
    n_bs, num_tx = (4, 2) if duplex == FD else (5, 3)
    radio = radio or RadioConfig()
    if tx_power_dbm is not None:
        radio = replace(radio, tx_power_dbm=tx_power_dbm)
    stations = [BaseStation(i, p, z) for i, (p, z) in enumerate(REFERENCE_STATIONS[:n_bs])]
    targets = [Target(p, v) for p, v in REFERENCE_TARGETS]
    return Scenario(duplex, tuple(stations), tuple(targets), radio, num_tx)


def ring_stations(n_bs: int, center=(250.0, 250.0), radius: float = 250.0 * math.sqrt(2),
                  heights=(80.0, 20.0), downtilt: float = 0.1045) -> list[BaseStation]:
    """``n_bs`` stations evenly spaced on a circle, each facing the centre.

    Heights alternate through ``heights``; the first station sits at the
    south-west corner so that four stations reproduce the square of the
    reference deployment.
    """
    cx, cy = center
    horiz = math.sqrt(1.0 - downtilt**2)
    out = []
    for n in range(n_bs):
        ang = math.radians(225.0) + 2 * math.pi * n / n_bs
        pos = np.array([cx + radius * math.cos(ang), cy + radius * math.sin(ang), heights[n % len(heights)]])
        z = np.array([-math.cos(ang) * horiz, -math.sin(ang) * horiz, -downtilt])
        out.append(BaseStation(n, pos, z))
    return out
