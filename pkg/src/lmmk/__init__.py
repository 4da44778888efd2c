"""Desk-scale latency profiling toolkit for on-device LLM inference.

Phase- and kernel-level recording on a monotonic timebase, timeline and
idle-gap analysis, profiling-fidelity and quantization metrics,
KL-matched benchmark subsetting, per-step decode latency prediction, and
a deterministic simulated inference engine that stands in for real
mobile GPU hardware while retaining exact ground truth.
"""

from . import errors, metrics, predictor, recorder, sampler, sim_engine, timeline, trace_io
from .recorder import (
    KernelRecord,
    PhaseKind,
    PhaseRecord,
    TimerCalibration,
    Trace,
    TraceSession,
    calibrate_timer,
    now,
)
from .sim_engine import (
    DuplicationPlan,
    GroundTruth,
    JitterModel,
    KernelSpec,
    PhaseScript,
    WorkloadSpec,
    preset_gemma_decode,
)

__version__ = "0.1.0"

__all__ = [
    "errors",
    "metrics",
    "predictor",
    "recorder",
    "sampler",
    "sim_engine",
    "timeline",
    "trace_io",
    "KernelRecord",
    "PhaseKind",
    "PhaseRecord",
    "TimerCalibration",
    "Trace",
    "TraceSession",
    "calibrate_timer",
    "now",
    "DuplicationPlan",
    "GroundTruth",
    "JitterModel",
    "KernelSpec",
    "PhaseScript",
    "WorkloadSpec",
    "preset_gemma_decode",
]
