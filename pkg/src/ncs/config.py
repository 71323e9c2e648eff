"""Plain-text scenario files.

A scenario file is TOML with a top-level ``duplex``/``num_tx``, a ``[radio]``
table and repeated ``[[station]]`` / ``[[target]]`` tables::

    duplex = "FD"          # "FD" or "HD"
    num_tx = 2             # TX stations are the first num_tx entries

    [radio]
    carrier_freq = 4.9e9           # Hz
    subcarrier_spacing = 30000.0   # Hz
    num_subcarriers = 3276
    num_symbols = 64
    pulse_interval = 0.001         # s
    panel_dims = [8, 8]            # (Lx, Ly)
    tx_power_dbm = 35.0            # scalar, or one value per TX station
    tx_gain_dbi = 0.0
    rx_gain_dbi = 0.0
    noise_density_dbm_hz = -174.0
    noise_figure_db = 6.0
    rcs = 1.0                      # m^2

    [[station]]
    position = [0.0, 0.0, 80.0]             # m, (east, north, up)
    boresight = [0.7032, 0.7032, -0.1045]   # panel normal, need not be unit

    [[target]]
    position = [125.0, 250.0, 0.0]   # m
    velocity = [10.0, 10.0, 0.0]     # m/s

Unknown keys are rejected so that typos do not silently fall back to
defaults.
"""

from __future__ import annotations

import sys
from dataclasses import fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .scenario import BaseStation, RadioConfig, Scenario, ScenarioError, Target

_RADIO_KEYS = {f.name for f in fields(RadioConfig)}


def scenario_from_dict(data: dict) -> Scenario:
    unknown = set(data) - {"duplex", "num_tx", "radio", "station", "target"}
    if unknown:
        raise ScenarioError(f"unknown top-level keys: {sorted(unknown)}")
    radio_data = dict(data.get("radio", {}))
    bad = set(radio_data) - _RADIO_KEYS
    if bad:
        raise ScenarioError(f"unknown [radio] keys: {sorted(bad)}")
    if "panel_dims" in radio_data:
        radio_data["panel_dims"] = tuple(radio_data["panel_dims"])
    if isinstance(radio_data.get("tx_power_dbm"), list):
        radio_data["tx_power_dbm"] = tuple(radio_data["tx_power_dbm"])
    radio = RadioConfig(**radio_data)

    stations = []
    for n, st in enumerate(data.get("station", [])):
        if set(st) - {"position", "boresight"}:
            raise ScenarioError(f"station {n}: unknown keys {sorted(set(st) - {'position', 'boresight'})}")
        stations.append(BaseStation(n, st["position"], st["boresight"]))
    targets = []
    for n, tg in enumerate(data.get("target", [])):
        if set(tg) - {"position", "velocity"}:
            raise ScenarioError(f"target {n}: unknown keys {sorted(set(tg) - {'position', 'velocity'})}")
        targets.append(Target(tg["position"], tg.get("velocity", [0.0, 0.0, 0.0])))
    if not stations:
        raise ScenarioError("scenario has no stations")
    return Scenario(
        duplex=data.get("duplex", "FD"),
        stations=tuple(stations),
        targets=tuple(targets),
        radio=radio,
        num_tx=int(data.get("num_tx", 1)),
    )


def load_scenario(path: str | Path) -> Scenario:
    with open(path, "rb") as fh:
        return scenario_from_dict(tomllib.load(fh))


def loads_scenario(text: str) -> Scenario:
    return scenario_from_dict(tomllib.loads(text))


def _fmt(v) -> str:
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    return repr(float(v))


def dumps_scenario(scenario: Scenario) -> str:
    lines = [f'duplex = "{scenario.duplex}"', f"num_tx = {scenario.num_tx}", "", "[radio]"]
    for f in fields(RadioConfig):
        lines.append(f"{f.name} = {_fmt(getattr(scenario.radio, f.name))}")
    for st in scenario.stations:
        lines += ["", "[[station]]", f"position = {_fmt(st.position.tolist())}",
                  f"boresight = {_fmt(st.boresight.tolist())}"]
    for tg in scenario.targets:
        lines += ["", "[[target]]", f"position = {_fmt(tg.position.tolist())}",
                  f"velocity = {_fmt(tg.velocity.tolist())}"]
    return "\n".join(lines) + "\n"
