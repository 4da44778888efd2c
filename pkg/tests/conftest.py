import csv
from pathlib import Path

import pytest

from lmmk import sim_engine
from lmmk.recorder import PhaseKind, Trace, TraceSession
from lmmk.sim_engine import JitterModel, KernelSpec, PhaseScript, VirtualClock, WorkloadSpec

DATA_DIR = Path(__file__).parent / "data"
GOLDEN_DIR = DATA_DIR / "golden"


@pytest.fixture(scope="session")
def phase_pairs():
    """Published per-phase latency pairs with their published metric values."""
    with open(DATA_DIR / "phase_latency_pairs.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 35
    return [
        {
            "model": r["model"],
            "phase": r["phase"],
            "lm_ms": float(r["lm_ms"]),
            "gt_ms": float(r["gt_ms"]),
            "alpha": float(r["alpha"]),
            "eps_star": float(r["eps_star"]),
        }
        for r in rows
    ]


@pytest.fixture(scope="session")
def preset_run_16():
    """Jitter-free 16-token preset run: (trace, ground truth)."""
    return sim_engine.run(sim_engine.preset_gemma_decode(), 8, 16)


@pytest.fixture(scope="session")
def preset_run_256():
    """Jitter-free 256-token preset run: (trace, ground truth)."""
    return sim_engine.run(sim_engine.preset_gemma_decode(), 8, 256)


@pytest.fixture(scope="session")
def preset_run_256_jittered():
    """256-token preset run with 2% multiplicative jitter, seed 7."""
    spec = sim_engine.preset_gemma_decode().with_jitter(seed=7, sigma_rel=0.02)
    return sim_engine.run(spec, 8, 256)


def single_kernel_workload(
    name="uniform_matmul",
    base_latency_ns=1_000_000,
    per_step_slope_ns=0,
    seed=0,
    sigma_rel=0.0,
):
    """Minimal valid workload: one decode kernel plus token-count filler
    kernels for the other mandatory phases."""
    filler = lambda n: (KernelSpec(n, 10_000),)
    scripts = {
        PhaseKind.EMBEDDING: PhaseScript(kind=PhaseKind.EMBEDDING, kernels=filler("embed")),
        PhaseKind.PREFILL: PhaseScript(kind=PhaseKind.PREFILL, kernels=filler("prefill_matmul")),
        PhaseKind.DECODE: PhaseScript(
            kind=PhaseKind.DECODE,
            kernels=(KernelSpec(name, base_latency_ns, per_step_slope_ns),),
        ),
        PhaseKind.SOFTMAX: PhaseScript(kind=PhaseKind.SOFTMAX, kernels=filler("softmax")),
        PhaseKind.COPY_PROBS_TO_CPU: PhaseScript(kind=PhaseKind.COPY_PROBS_TO_CPU),
        PhaseKind.SAMPLING: PhaseScript(kind=PhaseKind.SAMPLING, host_ns=5_000),
    }
    return WorkloadSpec(
        name="single-kernel",
        scripts=scripts,
        jitter=JitterModel(seed=seed, sigma_rel=sigma_rel),
    )


def build_trace(kernels=(), phases=(), clock_offset_ns=0, **meta) -> Trace:
    """Assemble an immutable trace directly from record tuples.

    kernels: iterables of (name, queue, enqueue, queued, submit, start, end)
    phases: iterables of (kind, turn, token, start, end)
    """
    from lmmk.recorder import KernelRecord, PhaseRecord

    ks = tuple(
        sorted((KernelRecord(*k) for k in kernels), key=lambda r: r.t_queued_ns)
    )
    ps = tuple(
        sorted((PhaseRecord(*p) for p in phases), key=lambda r: r.t_start_ns)
    )
    return Trace(
        device_label=meta.pop("device_label", "test"),
        clock_offset_ns=clock_offset_ns,
        phases=ps,
        kernels=ks,
        **meta,
    )


def manual_session(start_ns=0, **kwargs) -> tuple[TraceSession, VirtualClock]:
    """Session on a hand-driven virtual clock for precise phase timing."""
    clock = VirtualClock(start_ns)
    session = TraceSession(clock=clock, **kwargs)
    return session, clock


def golden_trace() -> Trace:
    """Small hand-built trace behind the checked-in golden files.

    Uses a negative clock offset, a second queue and timestamps that are
    not multiples of 1000, so serialization must carry signs and
    sub-microsecond precision.
    """
    return build_trace(
        phases=[
            (PhaseKind.EMBEDDING, 0, None, 100, 1_100),
            (PhaseKind.DECODE, 0, 0, 2_000, 10_000),
        ],
        kernels=[
            ("dequantize_embedding_lookup", 0, 110, 113, 150, 200, 1_050),
            ("batch_decode_paged_kv", 0, 2_100, 2_103, 2_150, 2_345, 3_571),
            ("dequantize_matmul_ffn_gate", 1, 2_200, 2_203, 2_250, 3_600, 9_000),
        ],
        clock_offset_ns=-3,
        device_label="golden-device",
        prompt_tokens=4,
        output_tokens=1,
    )


def metric_report_rows(pairs):
    """CSV report rows recomputing alpha/eps_star from published pairs."""
    from lmmk import metrics

    rows = []
    for row in pairs:
        pair = metrics.MetricPair(row["lm_ms"], row["gt_ms"])
        rows.append({
            "model": row["model"],
            "phase": row["phase"],
            "lm_ms": row["lm_ms"],
            "gt_ms": row["gt_ms"],
            "alpha": metrics.accuracy(pair),
            "eps_star": metrics.scaled_error(pair),
        })
    return rows
