"""Low-overhead event recording plus the per-step summary metrics.

Events go into worker-local buffers (no cross-thread contention on the hot
path) and are merged once the pool has quiesced. Timestamps come from the
monotonic clock in nanoseconds; only per-worker ordering is meaningful.
"""

import csv
import dataclasses
import threading
import time
from typing import NamedTuple

SPAWN = "spawn"
TASK_START = "task_start"
TASK_END = "task_end"
SECTION_START = "section_start"
SECTION_END = "section_end"
POLL_SPIN = "poll_spin"
SAMPLE = "sample"

EVENT_KINDS = (SPAWN, TASK_START, TASK_END, SECTION_START, SECTION_END, POLL_SPIN, SAMPLE)

# task_start/task_end aux values
TASK_KIND_TRAVERSAL = 1
TASK_KIND_ENCLAVE = 2

# sample channels (the id field of sample events)
CH_PENDING = 0
CH_READY = 1
CH_ACTIVE_BSP = 2
CH_STEP_PENDING_PEAK = 3
CH_STEP_READY_PEAK = 4

# section phases (section id = step * 10 + phase)
PHASE_PRIMARY = 1
PHASE_SECONDARY = 2
PHASE_EXCHANGE = 3
PHASE_FINALIZE = 4
PHASE_OTHER = 9

DRIVER_WORKER = -1
SAMPLER_WORKER = -2


class Event(NamedTuple):
    t_ns: int
    worker: int
    kind: str
    id: int
    aux: int


class _Buffer:
    __slots__ = ("worker", "items")

    def __init__(self, worker):
        self.worker = worker
        self.items = []

    def record(self, kind, ident, aux=0):
        self.items.append(Event(time.monotonic_ns(), self.worker, kind, ident, aux))


class _NullBuffer:
    __slots__ = ()

    def record(self, kind, ident, aux=0):
        pass


_NULL_BUFFER = _NullBuffer()


class TraceRecorder:
    """Owns the per-worker buffers; disabled recorders hand out no-op buffers."""

    def __init__(self, enabled=True):
        self.enabled = enabled
        self._buffers = []
        self._lock = threading.Lock()

    def buffer(self, worker):
        if not self.enabled:
            return _NULL_BUFFER
        buf = _Buffer(worker)
        with self._lock:
            self._buffers.append(buf)
        return buf

    def events(self):
        """Merge all buffers, ordered by (t_ns, worker)."""
        with self._lock:
            merged = [ev for buf in self._buffers for ev in buf.items]
        merged.sort(key=lambda ev: (ev.t_ns, ev.worker))
        return merged


class Sampler:
    """Background observer recording pending/ready/active-BSP counts."""

    def __init__(self, recorder, counters, period_us=100):
        self._buf = recorder.buffer(SAMPLER_WORKER)
        self._counters = counters
        self._period_s = period_us / 1e6
        self._stop = threading.Event()
        self._thread = None

    def start(self):
        self._thread = threading.Thread(target=self._run, name="taskbench-sampler",
                                        daemon=True)
        self._thread.start()

    def stop(self):
        self._stop.set()
        if self._thread is not None:
            self._thread.join()

    def _run(self):
        while not self._stop.is_set():
            pending, ready, active_bsp = self._counters()
            self._buf.record(SAMPLE, CH_PENDING, pending)
            self._buf.record(SAMPLE, CH_READY, ready)
            self._buf.record(SAMPLE, CH_ACTIVE_BSP, active_bsp)
            self._stop.wait(self._period_s)


@dataclasses.dataclass
class StepSummary:
    step: int
    primary_ns: int
    secondary_ns: int
    wall_ns: int
    peak_pending: int
    spin_fraction: float


@dataclasses.dataclass
class Summary:
    steps: list
    total_wall_ns: int
    time_per_step_per_patch_ns: float
    peak_pending: int
    per_worker_spin: dict

    def to_dict(self):
        return {
            "steps": [dataclasses.asdict(s) for s in self.steps],
            "total_wall_ns": self.total_wall_ns,
            "time_per_step_per_patch_ns": self.time_per_step_per_patch_ns,
            "peak_pending": self.peak_pending,
            "per_worker_spin": {str(k): v for k, v in self.per_worker_spin.items()},
        }


def summarize(events, patch_count, workers):
    """Fold a merged event list into per-step metrics.

    Steps are identified by section ids (id = step * 10 + phase); samples and
    spin events are assigned to the step whose window they fall into.
    """
    open_sections = {}
    sections = []  # (section_id, start, end)
    for ev in events:
        if ev.kind == SECTION_START:
            if ev.id in open_sections:
                raise ValueError(f"section {ev.id} started twice")
            open_sections[ev.id] = ev.t_ns
        elif ev.kind == SECTION_END:
            if ev.id not in open_sections:
                raise ValueError(f"section {ev.id} ended without a start")
            sections.append((ev.id, open_sections.pop(ev.id), ev.t_ns))
    if open_sections:
        raise ValueError(f"unbalanced sections: {sorted(open_sections)}")

    by_step = {}
    for sid, start, end in sections:
        by_step.setdefault(sid // 10, []).append((sid % 10, start, end))

    step_ids = sorted(by_step)
    windows = []
    for step in step_ids:
        starts = [s for _, s, _ in by_step[step]]
        ends = [e for _, _, e in by_step[step]]
        windows.append((step, min(starts), max(ends)))

    def assign(t_ns):
        chosen = None
        for step, start, _ in windows:
            if t_ns >= start:
                chosen = step
            else:
                break
        if chosen is None and windows:
            chosen = windows[0][0]
        return chosen

    peaks = {step: 0 for step in step_ids}
    spins = {step: 0 for step in step_ids}
    per_worker_spin_ns = {}
    for ev in events:
        if ev.kind == SAMPLE and ev.id in (CH_PENDING, CH_STEP_PENDING_PEAK):
            step = assign(ev.t_ns)
            if step is not None:
                peaks[step] = max(peaks[step], ev.aux)
        elif ev.kind == POLL_SPIN:
            step = assign(ev.t_ns)
            if step is not None:
                spins[step] += ev.aux
            per_worker_spin_ns[ev.worker] = per_worker_spin_ns.get(ev.worker, 0) + ev.aux

    steps = []
    for step, start, end in windows:
        wall = end - start
        primary = sum(e - s for ph, s, e in by_step[step] if ph == PHASE_PRIMARY)
        secondary = sum(e - s for ph, s, e in by_step[step] if ph == PHASE_SECONDARY)
        frac = spins[step] / (wall * workers) if wall > 0 and workers > 0 else 0.0
        steps.append(StepSummary(step, primary, secondary, wall, peaks[step],
                                 min(1.0, max(0.0, frac))))

    total_wall = sum(s.wall_ns for s in steps)
    per_patch = total_wall / (len(steps) * patch_count) if steps and patch_count else 0.0
    span = (events[-1].t_ns - events[0].t_ns) if events else 0
    per_worker = {}
    for worker, ns in sorted(per_worker_spin_ns.items()):
        per_worker[worker] = min(1.0, max(0.0, ns / span)) if span > 0 else 0.0
    peak = max((s.peak_pending for s in steps), default=0)
    return Summary(steps, total_wall, per_patch, peak, per_worker)


def write_events_csv(events, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_ns", "worker", "kind", "id", "aux"])
        for ev in events:
            writer.writerow([ev.t_ns, ev.worker, ev.kind, ev.id, ev.aux])


def read_events_csv(path):
    events = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["t_ns", "worker", "kind", "id", "aux"]:
            raise ValueError(f"unexpected event CSV header: {header}")
        for row in reader:
            events.append(Event(int(row[0]), int(row[1]), row[2], int(row[3]), int(row[4])))
    return events


def write_summary_csv(summary, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "primary_ns", "secondary_ns", "wall_ns",
                         "peak_pending", "spin_fraction"])
        for s in summary.steps:
            writer.writerow([s.step, s.primary_ns, s.secondary_ns, s.wall_ns,
                             s.peak_pending, s.spin_fraction])
