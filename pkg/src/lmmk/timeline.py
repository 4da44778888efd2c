"""Timeline reconstruction over sealed traces.

Busy time is the measure of the union of kernel execution intervals
[t_start, t_end); queuing and dispatch stages do not count as busy, so
the gaps reported here are the periods where the device sat idle between
successive kernel executions. All functions are pure and safe to call
from any number of threads.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from typing import Optional, Union

from .errors import UnalignedClocks
from .recorder import KernelRecord, PhaseKind, Trace

#: Attribution bucket for kernels whose start falls inside no phase window.
UNATTRIBUTED = "unattributed"


@dataclass(frozen=True)
class Interval:
    start_ns: int
    end_ns: int

    def __post_init__(self) -> None:
        if self.end_ns < self.start_ns:
            raise ValueError("interval end precedes start")

    @property
    def length_ns(self) -> int:
        return self.end_ns - self.start_ns


@dataclass(frozen=True)
class LifecycleBreakdown:
    """The three stages of one command: host-to-device queuing, scheduling
    and dispatch inside the device runtime, and device-side execution."""

    queuing_ns: int
    dispatch_ns: int
    execution_ns: int

    @property
    def total_ns(self) -> int:
        return self.queuing_ns + self.dispatch_ns + self.execution_ns


@dataclass(frozen=True)
class KernelAggregate:
    name: str
    invocation_count: int
    total_execution_ns: int
    mean_execution_ns: float
    share_of_busy: float


@dataclass(frozen=True)
class IdleReport:
    window: Interval
    busy_ns: int
    idle_ns: int
    idle_fraction: float
    gaps: tuple[Interval, ...]


@dataclass(frozen=True)
class PhaseUsage:
    device_busy_ns: int
    phase_wall_ns: int
    kernel_count: int


def lifecycle(record: KernelRecord) -> LifecycleBreakdown:
    """Split one kernel record into its three lifecycle stage durations."""
    return LifecycleBreakdown(
        queuing_ns=record.t_submit_ns - record.t_queued_ns,
        dispatch_ns=record.t_start_ns - record.t_submit_ns,
        execution_ns=record.t_end_ns - record.t_start_ns,
    )


def kernel_span(trace: Trace) -> Optional[Interval]:
    """Tightest interval covering every kernel execution, or None."""
    if not trace.kernels:
        return None
    return Interval(
        min(k.t_start_ns for k in trace.kernels),
        max(k.t_end_ns for k in trace.kernels),
    )


def filter_queue(trace: Trace, queue_id: int) -> Trace:
    """Trace restricted to one device queue, for per-queue reports.

    idle_gaps on an unfiltered trace treats the device as busy while any
    queue executes; filter first to analyze a single queue.
    """
    from dataclasses import replace

    return replace(
        trace, kernels=tuple(k for k in trace.kernels if k.queue_id == queue_id)
    )


def idle_gaps(trace: Trace, window: Interval) -> IdleReport:
    """Sweep the window and report busy time, idle time and the idle gaps.

    The device counts as busy while any queue executes. Conservation holds
    exactly in integer nanoseconds: busy + idle equals the window length.
    A zero-length window reports idle_fraction 0; a nonempty window with no
    kernels is fully idle.
    """
    length = window.length_ns
    if length == 0:
        return IdleReport(window=window, busy_ns=0, idle_ns=0, idle_fraction=0.0, gaps=())
    clipped = []
    for k in trace.kernels:
        s = max(k.t_start_ns, window.start_ns)
        e = min(k.t_end_ns, window.end_ns)
        if e > s:
            clipped.append((s, e))
    clipped.sort()
    busy = 0
    gaps = []
    cursor = window.start_ns
    for s, e in clipped:
        if s > cursor:
            gaps.append(Interval(cursor, s))
            cursor = s
        if e > cursor:
            busy += e - cursor
            cursor = e
    if cursor < window.end_ns:
        gaps.append(Interval(cursor, window.end_ns))
    idle = length - busy
    return IdleReport(
        window=window,
        busy_ns=busy,
        idle_ns=idle,
        idle_fraction=idle / length,
        gaps=tuple(gaps),
    )


def aggregate_kernels(trace: Trace, window: Optional[Interval] = None) -> list[KernelAggregate]:
    """Group kernels by name with count, total and mean execution time.

    With a window, only kernels whose execution starts inside
    [window.start_ns, window.end_ns) are counted, at their full duration.
    Shares are normalized by the total busy time of the included kernels and
    sum to 1 whenever that total is positive. Results are ordered by total
    execution time, largest first.
    """
    totals: dict[str, list[int]] = {}
    for k in trace.kernels:
        if window is not None and not (window.start_ns <= k.t_start_ns < window.end_ns):
            continue
        entry = totals.setdefault(k.name, [0, 0])
        entry[0] += 1
        entry[1] += k.execution_ns
    busy_total = sum(total for _, total in totals.values())
    result = [
        KernelAggregate(
            name=name,
            invocation_count=count,
            total_execution_ns=total,
            mean_execution_ns=total / count,
            share_of_busy=(total / busy_total) if busy_total > 0 else 0.0,
        )
        for name, (count, total) in totals.items()
    ]
    result.sort(key=lambda a: (-a.total_execution_ns, a.name))
    return result


def phase_attribution(trace: Trace) -> dict[Union[PhaseKind, str], PhaseUsage]:
    """Attribute each kernel to the phase whose wall interval contains its
    execution start, and roll up wall/busy/count per phase kind.

    Kernel starts are mapped into the host domain via the trace clock
    offset; an unaligned trace raises :class:`UnalignedClocks`. A kernel
    starting exactly on the boundary of two phases goes to the earlier one;
    a kernel inside no phase lands in the ``UNATTRIBUTED`` bucket.
    """
    if trace.clock_offset_ns is None:
        raise UnalignedClocks(
            "clocks unaligned: phase attribution needs a clock offset to map "
            "device timestamps into the host domain"
        )
    offset = trace.clock_offset_ns
    phases = trace.phases  # already sorted by t_start_ns
    starts = [p.t_start_ns for p in phases]

    busy: dict[Union[PhaseKind, str], int] = {}
    count: dict[Union[PhaseKind, str], int] = {}
    wall: dict[Union[PhaseKind, str], int] = {}
    for p in phases:
        wall[p.kind] = wall.get(p.kind, 0) + p.duration_ns
        busy.setdefault(p.kind, 0)
        count.setdefault(p.kind, 0)

    for k in trace.kernels:
        t = k.t_start_ns + offset
        j = bisect_right(starts, t) - 1
        owner: Union[PhaseKind, str] = UNATTRIBUTED
        # Non-overlap means phases[j-1] can contain t only at an exact shared
        # boundary; checking it first sends ties to the earlier phase.
        if j >= 1 and phases[j - 1].t_end_ns >= t:
            owner = phases[j - 1].kind
        elif j >= 0 and phases[j].t_start_ns <= t <= phases[j].t_end_ns:
            owner = phases[j].kind
        busy[owner] = busy.get(owner, 0) + k.execution_ns
        count[owner] = count.get(owner, 0) + 1
        wall.setdefault(owner, 0)

    return {
        key: PhaseUsage(device_busy_ns=busy[key], phase_wall_ns=wall[key], kernel_count=count[key])
        for key in wall
    }
