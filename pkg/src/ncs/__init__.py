"""Networked collaborative sensing with multi-domain measurements.

Simulates OFDM sensing by multiple base stations, estimates range, Doppler
and two direction cosines per TX-RX pair with AD-NOMP, and fuses them into
target position and velocity with a two-stage weighted least squares.
"""

from .adnomp import DetectedComponent, DetectionList, detect
from .association import MeasurementSet, associate, freq_to_meas, ideal_measurements
from .channel import ChannelTensor, synthesize_all, synthesize_pair
from .config import load_scenario
from .crlb import crlb_mm, crlb_state, fim_psi, jacobian
from .fusion import CompressedMeasurements, StateEstimate, compress_fd, compress_hd, fuse_fd, fuse_hd, localize
from .harness import ExperimentConfig, ResultRow, run_experiment, summarize
from .protocol import ShiftAssignment, TimingPlan, assign_shifts, decode_shift, plan_timing
from .scenario import FD, HD, BaseStation, RadioConfig, Scenario, Target, reference_scenario

__all__ = [
    "FD", "HD", "BaseStation", "ChannelTensor", "CompressedMeasurements", "DetectedComponent", "DetectionList",
    "ExperimentConfig", "MeasurementSet", "RadioConfig", "ResultRow", "Scenario", "ShiftAssignment",
    "StateEstimate", "Target", "TimingPlan", "assign_shifts", "associate", "compress_fd", "compress_hd",
    "crlb_mm", "crlb_state", "decode_shift", "detect", "fim_psi", "freq_to_meas", "fuse_fd", "fuse_hd",
    "ideal_measurements", "jacobian", "load_scenario", "localize", "reference_scenario", "plan_timing",
    "run_experiment", "summarize", "synthesize_all", "synthesize_pair",
]
