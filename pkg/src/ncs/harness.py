"""Monte Carlo driver: sweep a scenario parameter and compare RMSE with root-CRLB.

Pipelines:

``full``      synthesize tensors, AD-NOMP (known K), associate, fuse
``ideal_mm``  measurements drawn as truth plus Gaussian error at the CRLB, fuse
``crlb_only`` bounds only
``mm_only``   synthesize and detect on selected pairs, frequency errors only

Every random draw comes from ``SeedSequence([seed, sweep_index, trial, stream])``
where ``stream`` is the pair index (tensor noise) or the target index (ideal
measurements), so results do not depend on execution order.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import crlb as crlb_mod
from .adnomp import detect
from .association import associate, ideal_measurements
from .channel import pair_components, synthesize_pair
from .config import load_scenario
from .fusion import FusionError, localize
from .scenario import HD, Scenario, ScenarioError, amplitude_and_noise, ring_stations

PIPELINES = ("full", "ideal_mm", "crlb_only", "mm_only")
SWEEP_VARS = ("tx_power_dbm", "n_bs", "num_tx")
_SWEEP_ALIASES = {
    "txpower": "tx_power_dbm", "tx_power": "tx_power_dbm", "power": "tx_power_dbm", "tx_power_dbm": "tx_power_dbm",
    "nbs": "n_bs", "n_bs": "n_bs",
    "i": "num_tx", "ntx": "num_tx", "num_tx": "num_tx",
}
STATE_QUANTITIES = ("pos_x", "pos_y", "pos_z", "vel_x", "vel_y", "vel_z", "pos2d", "pos3d", "vel2d", "vel3d")
MAX_FAILURE_FRACTION = 0.2
CSV_COLUMNS = ("sweep", "target", "quantity", "rmse", "root_crlb", "ratio", "trials", "failures")


class ExperimentAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str | Path | Scenario
    pipeline: str = "full"
    sweep_var: str | None = None
    sweep_values: tuple = ()
    trials: int = 200
    seed: int = 7
    desk_scale: bool = False
    output: str | Path | None = None
    assoc_radius: float = 20.0
    mm_pairs: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.pipeline not in PIPELINES:
            raise ValueError(f"pipeline must be one of {PIPELINES}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.sweep_var is not None:
            if self.sweep_var not in SWEEP_VARS:
                raise ValueError(f"sweep variable must be one of {SWEEP_VARS}")
            if not self.sweep_values:
                raise ValueError("sweep grid is empty")

    def grid(self) -> list:
        return list(self.sweep_values) if self.sweep_var else [None]

    def base_scenario(self) -> Scenario:
        sc = self.scenario if isinstance(self.scenario, Scenario) else load_scenario(self.scenario)
        if self.desk_scale:
            sc = sc.with_radio(sc.radio.desk_scale())
        return sc


@dataclass(frozen=True)
class ResultRow:
    sweep: float | None
    target: int
    quantity: str
    rmse: float | None
    root_crlb: float
    trials: int
    failures: int = 0

    @property
    def ratio(self) -> float | None:
        if self.rmse is None:
            return None
        return self.rmse / self.root_crlb if self.root_crlb > 0 else math.inf


def parse_sweep(text: str) -> tuple[str, tuple]:
    """``name=start:step:stop`` (inclusive) or ``name=v1,v2,...``."""
    name, _, spec = text.partition("=")
    key = _SWEEP_ALIASES.get(name.strip().lower())
    if key is None or not spec:
        raise ValueError(f"bad sweep {text!r}; expected e.g. txpower=10:5:40")
    cast = float if key == "tx_power_dbm" else int
    if ":" in spec:
        parts = [float(p) for p in spec.split(":")]
        if len(parts) != 3 or parts[1] == 0:
            raise ValueError(f"bad range {spec!r}; expected start:step:stop")
        start, step, stop = parts
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        values = [start + n * step for n in range(max(count, 0))]
    else:
        values = [float(v) for v in spec.split(",") if v.strip()]
    if not values:
        raise ValueError(f"sweep {text!r} is empty")
    return key, tuple(cast(v) if cast is float else int(round(v)) for v in values)


def sweep_scenario(base: Scenario, var: str | None, value) -> Scenario:
    if var is None:
        return base
    if var == "tx_power_dbm":
        return base.with_tx_power(float(value))
    if var == "num_tx":
        return base.with_num_tx(int(value))
    if var == "n_bs":
        n = int(value)
        num_tx = min(base.num_tx, n - 1 if base.duplex == HD else n)
        return base.with_stations(ring_stations(n), num_tx=num_tx)
    raise ValueError(var)


def _substream(seed: int, sweep_idx: int, trial: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, sweep_idx, trial, stream]))


def _state_bounds(sc: Scenario, k: int) -> dict[str, float]:
    try:
        b = crlb_mod.crlb_state(sc, k)
        return {q: b.root(q) for q in STATE_QUANTITIES}
    except crlb_mod.SingularGeometryError:
        out = dict.fromkeys(STATE_QUANTITIES, math.inf)
        try:
            b = crlb_mod.crlb_state(sc, k, "position_only")
            out.update({q: b.root(q) for q in STATE_QUANTITIES if q.startswith("pos")})
        except crlb_mod.SingularGeometryError:
            pass
        return out


def _state_errors(err: np.ndarray) -> dict[str, float]:
    """Squared errors per state quantity for one estimate."""
    sq = err**2
    out = {f"{q}_{a}": sq[o + n] for q, o in (("pos", 0), ("vel", 3)) for n, a in enumerate("xyz")}
    out.update(pos2d=sq[0] + sq[1], pos3d=sq[:3].sum(), vel2d=sq[3] + sq[4], vel3d=sq[3:].sum())
    return out


def _match_frequencies(found: np.ndarray, truth: np.ndarray, dims) -> list[int | None]:
    """Truth index -> detected index, minimizing bin-scaled frequency distance."""
    if len(found) == 0:
        return [None] * len(truth)
    scale = np.asarray(dims, dtype=float)
    diff = found[None, :, :] - truth[:, None, :]
    diff -= np.round(diff)
    cost = np.sum((diff * scale) ** 2, axis=2)
    rows, cols = linear_sum_assignment(cost)
    out: list[int | None] = [None] * len(truth)
    for r, c in zip(rows, cols):
        out[r] = int(c)
    return out


@dataclass
class _Acc:
    sq: dict = field(default_factory=dict)
    count: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)

    def add(self, key, value):
        self.sq[key] = self.sq.get(key, 0.0) + float(value)
        self.count[key] = self.count.get(key, 0) + 1

    def fail(self, target):
        self.failures[target] = self.failures.get(target, 0) + 1

    def rmse(self, key):
        n = self.count.get(key, 0)
        return (math.sqrt(self.sq[key] / n), n) if n else (None, 0)


def _mm_trial(sc, acc, seed, s_idx, trial, pairs, truth, dims):
    for l in pairs:
        i, j = sc.pair(l)
        y = synthesize_pair(sc, i, j, _substream(seed, s_idx, trial, l))
        dl = detect(y, known_k=len(sc.targets))
        match = _match_frequencies(dl.freqs, truth[l], dims)
        for k, m in enumerate(match):
            if m is None:
                continue
            e = dl.freqs[m] - truth[l][k]
            e -= np.round(e)
            for d in range(4):
                acc.add((k, f"mm_f{d}_p{l}"), e[d] ** 2)
                acc.add((k, f"mm_f{d}"), e[d] ** 2)
        yield l, dl


def _fuse_trial(sc, acc, groups, radius, fusion_rows, trial):
    true_pos = np.array([t.position for t in sc.targets])
    K = len(sc.targets)
    assigned: dict[int, int] = {}
    if groups.targets:
        cents = np.array(groups.centroids)
        cost = np.linalg.norm(true_pos[:, None, :] - cents[None, :, :], axis=2)
        for r, c in zip(*linear_sum_assignment(cost)):
            if cost[r, c] <= 5 * radius:
                assigned[int(r)] = int(c)
    for k in range(K):
        if k not in assigned:
            acc.fail(k)
            continue
        try:
            est = localize(groups.targets[assigned[k]], sc)
        except (FusionError, np.linalg.LinAlgError):
            acc.fail(k)
            continue
        _record_state(acc, sc, k, est, fusion_rows, trial)


def _record_state(acc, sc, k, est, fusion_rows, trial):
    tgt = sc.targets[k]
    truth = np.concatenate([tgt.position, tgt.velocity])
    err = est.state - truth
    if not np.all(np.isfinite(err)):
        acc.fail(k)
        return
    for q, v in _state_errors(err).items():
        acc.add((k, q), v)
    if fusion_rows is not None:
        fusion_rows.append((trial, k, truth, est.state))


def run_experiment(config: ExperimentConfig, fusion_rows: list | None = None) -> list[ResultRow]:
    """Run every sweep point and return result rows in a fixed order.

    ``fusion_rows``, when given, collects ``(trial, target, truth, estimate)``
    for every fused estimate.
    """
    base = config.base_scenario()
    rows: list[ResultRow] = []
    for s_idx, value in enumerate(config.grid()):
        sc = sweep_scenario(base, config.sweep_var, value)
        sweep = None if value is None else float(value)
        K = len(sc.targets)
        if K == 0:
            raise ScenarioError("scenario has no targets")
        bounds = {k: _state_bounds(sc, k) for k in range(K)}
        if config.pipeline == "crlb_only":
            rows += [ResultRow(sweep, k, q, None, bounds[k][q], 0) for k in range(K) for q in STATE_QUANTITIES]
            continue

        acc = _Acc()
        dims = sc.radio.dims
        if config.pipeline in ("full", "mm_only"):
            pairs = range(sc.num_pairs) if config.pipeline == "full" or config.mm_pairs is None else config.mm_pairs
            truth = {l: np.array([f for _, f in pair_components(sc, *sc.pair(l))]) for l in pairs}
        for trial in range(config.trials):
            if config.pipeline == "ideal_mm":
                for k in range(K):
                    ms = ideal_measurements(sc, k, _substream(config.seed, s_idx, trial, k))
                    try:
                        est = localize(ms, sc)
                    except (FusionError, np.linalg.LinAlgError):
                        acc.fail(k)
                        continue
                    _record_state(acc, sc, k, est, fusion_rows, trial)
                continue
            dets = dict(_mm_trial(sc, acc, config.seed, s_idx, trial, pairs, truth, dims))
            if config.pipeline == "full":
                groups = associate(dets, sc, radius=config.assoc_radius)
                _fuse_trial(sc, acc, groups, config.assoc_radius, fusion_rows, trial)

        for k, n_fail in acc.failures.items():
            if n_fail > MAX_FAILURE_FRACTION * config.trials:
                raise ExperimentAborted(
                    f"sweep {value}: target {k} failed in {n_fail}/{config.trials} trials")
        for k in range(K):
            fails = acc.failures.get(k, 0)
            if config.pipeline in ("full", "mm_only"):
                s2 = sc.radio.noise_variance()
                pair_bounds = {l: crlb_mod.crlb_mm(amplitude_and_noise(sc, *sc.pair(l), k)[0], s2, dims)
                               for l in pairs}
                for d in range(4):
                    r, n = acc.rmse((k, f"mm_f{d}"))
                    pooled = math.sqrt(np.mean([pair_bounds[l][d] for l in pairs]))
                    rows.append(ResultRow(sweep, k, f"mm_f{d}", r, pooled, n, 0))
                for l in pairs:
                    for d in range(4):
                        r, n = acc.rmse((k, f"mm_f{d}_p{l}"))
                        rows.append(ResultRow(sweep, k, f"mm_f{d}_p{l}", r, math.sqrt(pair_bounds[l][d]), n, 0))
            if config.pipeline in ("full", "ideal_mm"):
                for q in STATE_QUANTITIES:
                    r, n = acc.rmse((k, q))
                    rows.append(ResultRow(sweep, k, q, r, bounds[k][q], n, fails))
    if config.output:
        Path(config.output).write_text(rows_to_csv(rows))
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def rows_to_csv(rows: Sequence[ResultRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow([_fmt(r.sweep), r.target, r.quantity, _fmt(r.rmse), _fmt(r.root_crlb), _fmt(r.ratio),
                         r.trials, r.failures])
    return buf.getvalue()


def rows_from_csv(text: str) -> list[ResultRow]:
    out = []
    for rec in csv.DictReader(io.StringIO(text)):
        def num(key):
            return float(rec[key]) if rec[key] != "" else None
        out.append(ResultRow(num("sweep"), int(rec["target"]), rec["quantity"], num("rmse"),
                             float(rec["root_crlb"]), int(rec["trials"]), int(rec["failures"])))
    return out


def summarize(rows: Sequence[ResultRow]) -> tuple[str, str]:
    """CSV text and an aligned plain-text table of the same rows."""
    if not rows:
        raise ValueError("no rows to summarize")
    header = ["sweep", "target", "quantity", "rmse", "root_crlb", "ratio", "trials", "failures"]
    body = []
    for r in rows:
        body.append([
            "-" if r.sweep is None else f"{r.sweep:g}", str(r.target), r.quantity,
            "-" if r.rmse is None else f"{r.rmse:.4g}", f"{r.root_crlb:.4g}",
            "-" if r.ratio is None else f"{r.ratio:.3f}", str(r.trials), str(r.failures),
        ])
    widths = [max(len(h), *(len(b[c]) for b in body)) for c, h in enumerate(header)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(b, widths)) for b in body]
    return rows_to_csv(rows), "\n".join(lines) + "\n"


def select(rows: Sequence[ResultRow], quantity: str | None = None, target: int | None = None,
           sweep: float | None = None) -> list[ResultRow]:
    return [r for r in rows if (quantity is None or r.quantity == quantity)
            and (target is None or r.target == target) and (sweep is None or r.sweep == sweep)]


def with_trials(config: ExperimentConfig, trials: int) -> ExperimentConfig:
    return replace(config, trials=trials)
