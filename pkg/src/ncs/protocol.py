"""Guard-period timing and cyclic-shift multiplexing bookkeeping.

Sensing runs inside the downlink/uplink guard period. The RX window of each
receiving station is pushed back by the shortest TX propagation delay; gaps
S1, S2 and S3 keep communication interference (from up to ``d_int`` away)
out of the sensing windows. TX stations share one base OFDM symbol, each
cyclically shifted by a multiple of ``T_sym / num_shifts``, and the receiver
tells them apart by the delay window a detection falls into.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass

from .scenario import C0


class Binding(enum.Enum):
    """Which relation fixes the gaps."""

    RX_DELAY = "rx_delay"  # d_int <= d_min: S2 absorbs the interference, no S3
    TX_GAP = "tx_gap"  # d_int > d_min: an S3 gap before the TX window is required


@dataclass(frozen=True)
class TimingPlan:
    t_gp: float
    s1: float
    s2: float
    s3: float
    s2_window: tuple[float, float]
    feasible: bool
    binding_constraint: Binding
    cell_radius: float
    d_int: float
    d_min: float


def plan_timing(cell_radius: float, d_int: float, d_min: float, available_gp: float | None = None) -> TimingPlan:
    """Minimal gaps for a cell radius, interference distance and shortest TX-RX delay path (all m).

    ``feasible`` compares the minimum guard period with ``available_gp`` (s)
    when that is given.
    """
    for name, v in (("cell_radius", cell_radius), ("d_int", d_int), ("d_min", d_min)):
        if not v >= 0:
            raise ValueError(f"{name} must be >= 0, got {v}")
    t_gp = 2.0 * cell_radius / C0
    t_int, t_min = d_int / C0, d_min / C0
    if d_int <= d_min:
        binding = Binding.RX_DELAY
        s2, s3 = t_int, 0.0
        window = (t_int, t_min)
    else:
        # S2 cannot reach d_int/c0 without exceeding the shortest delay;
        # it keeps the full timing adjustment and S3 covers the rest.
        binding = Binding.TX_GAP
        s2, s3 = t_min, t_int - t_min
        window = (t_min, t_min)
    s1 = t_int
    feasible = available_gp is None or available_gp >= t_gp
    return TimingPlan(t_gp, s1, s2, s3, window, feasible, binding, cell_radius, d_int, d_min)


def check_timing(plan: TimingPlan, rtol: float = 1e-12) -> dict[str, bool]:
    """Re-check the guard-period and gap relations for a plan.

    The RX-window relation ``d_int/c0 <= S2 <= d_min/c0`` only applies when
    ``d_int <= d_min``; it is reported as ``None`` otherwise.
    """
    tol = rtol * max(plan.t_gp, plan.d_int / C0, plan.d_min / C0, 1e-30)
    t_int, t_min = plan.d_int / C0, plan.d_min / C0
    gaps_ok = min(plan.s1, plan.s2, plan.s3) >= 0
    guard = plan.t_gp >= 2 * plan.cell_radius / C0 - tol
    rx = (t_int - tol <= plan.s2 <= t_min + tol) if plan.d_int <= plan.d_min else None
    s3_ok = plan.s3 >= t_int - t_min - tol
    tx = t_int - tol <= plan.s1 <= plan.s3 + t_min + tol
    return {"nonnegative": gaps_ok, "guard_period": guard, "rx_window": rx, "s3": s3_ok, "tx_window": tx}


def timing_report_text(plan: TimingPlan) -> str:
    us = 1e6
    lines = [
        f"cell radius {plan.cell_radius:g} m, d_int {plan.d_int:g} m, d_min {plan.d_min:g} m",
        f"T_GP >= {plan.t_gp * us:.4f} us",
        f"S1 = {plan.s1 * us:.4f} us",
        f"S2 = {plan.s2 * us:.4f} us (window {plan.s2_window[0] * us:.4f}..{plan.s2_window[1] * us:.4f} us)",
        f"S3 = {plan.s3 * us:.4f} us",
        f"binding: {plan.binding_constraint.value}",
        f"feasible: {'yes' if plan.feasible else 'no'}",
    ]
    return "\n".join(lines) + "\n"


def timing_report_csv(plan: TimingPlan) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["quantity", "value_s"])
    for name in ("t_gp", "s1", "s2", "s3"):
        writer.writerow([name, repr(getattr(plan, name))])
    writer.writerow(["s2_min", repr(plan.s2_window[0])])
    writer.writerow(["s2_max", repr(plan.s2_window[1])])
    writer.writerow(["binding", plan.binding_constraint.value])
    writer.writerow(["feasible", int(plan.feasible)])
    return buf.getvalue()


@dataclass(frozen=True)
class ShiftAssignment:
    """Cyclic shift per TX station and the delay window each shift occupies."""

    num_shifts: int
    t_sym: float
    tx_shift: tuple[int, ...]

    @property
    def width(self) -> float:
        return self.t_sym / self.num_shifts

    def window(self, shift: int) -> tuple[float, float]:
        """Half-open delay window ``[lo, hi)`` in seconds."""
        if not 0 <= shift < self.num_shifts:
            raise IndexError(f"shift {shift} out of range")
        return shift * self.width, (shift + 1) * self.width

    def tx_for_shift(self, shift: int) -> int | None:
        return self.tx_shift.index(shift) if shift in self.tx_shift else None


def assign_shifts(num_tx: int, t_sym: float, num_shifts: int = 4) -> ShiftAssignment:
    """TX station ``i`` uses shift ``i``."""
    if num_shifts < 1 or t_sym <= 0:
        raise ValueError("need num_shifts >= 1 and t_sym > 0")
    if num_tx > num_shifts:
        raise ValueError(f"{num_tx} TX stations but only {num_shifts} cyclic shifts")
    return ShiftAssignment(num_shifts, float(t_sym), tuple(range(num_tx)))


def decode_shift(measured_delay: float, assignment: ShiftAssignment) -> tuple[int, float]:
    """(shift index, delay relative to the start of that shift's window)."""
    if not 0 <= measured_delay < assignment.t_sym:
        raise ValueError(f"delay {measured_delay} outside [0, {assignment.t_sym})")
    shift = min(math.floor(measured_delay / assignment.width), assignment.num_shifts - 1)
    # keep decoding consistent with window() when the division rounds across a boundary
    lo, hi = assignment.window(shift)
    if measured_delay >= hi and shift + 1 < assignment.num_shifts:
        shift += 1
    elif measured_delay < lo:
        shift -= 1
    return shift, measured_delay - assignment.window(shift)[0]
