"""Worker pool with pluggable task-scheduling strategies.

The pool keeps two ready classes: traversal (BSP-type) tasks and enclave
tasks. Dispatch prefers traversal tasks, modelling runtimes that treat the
BSP subgraph as the critical path; enclave tasks drain FIFO whenever no
traversal work is ready. The four strategies differ in where spawned enclave
tasks go and in how blocked consumers make progress:

  native               spawn to the pool ready queue below the cap, inline
                       above it; consumers poll and yield.
  hold-back            spawn to a manual pending queue; consumers pop one
                       pending task per failed poll.
  backfill             as hold-back, but BSP sections run through the manual
                       backfilling loop so finished workers stay busy.
  merge-and-backfill   as backfill, with pending batches grouped by task
                       type and run as one fused loop per group (device
                       offload stays out of scope; the fusion is host-side).
"""

import dataclasses
import math
import threading
import time
from collections import deque

from . import tracing
from .tracing import (
    POLL_SPIN, SAMPLE, SPAWN, TASK_END, TASK_START,
    TASK_KIND_ENCLAVE, TASK_KIND_TRAVERSAL,
    CH_STEP_PENDING_PEAK, CH_STEP_READY_PEAK,
    PHASE_OTHER, SECTION_END, SECTION_START,
)

NATIVE = "native"
HOLD_BACK = "hold-back"
BACKFILL = "backfill"
MERGE_AND_BACKFILL = "merge-and-backfill"
STRATEGY_KINDS = (NATIVE, HOLD_BACK, BACKFILL, MERGE_AND_BACKFILL)

YIELD_FAIR = "fair"
YIELD_STRICT_GROUP = "strict-group"

DEFAULT_WATCHDOG_LIMIT = 1_000_000


class StarvationError(RuntimeError):
    """The watchdog saw only unproductive polls for too long."""


class DuplicateTaskError(RuntimeError):
    """A task id was spawned or its outcome inserted twice."""


class _Missing:
    __slots__ = ()

    def __repr__(self):
        return "<missing>"


MISSING = _Missing()


@dataclasses.dataclass(frozen=True)
class Strategy:
    """Immutable scheduling policy selected by its CLI name."""

    kind: str = NATIVE
    ready_cap: int = 1000
    yield_mode: str = YIELD_FAIR
    merge_fraction: float = 0.5
    max_merge_batches: int = 16

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"strategy must be one of {list(STRATEGY_KINDS)}, "
                             f"got {self.kind!r}")
        if self.ready_cap < 1:
            raise ValueError("ready_cap must be >= 1")
        if self.yield_mode not in (YIELD_FAIR, YIELD_STRICT_GROUP):
            raise ValueError(f"yield_mode must be 'fair' or 'strict-group', "
                             f"got {self.yield_mode!r}")
        if not 0.0 < self.merge_fraction <= 1.0:
            raise ValueError("merge_fraction must lie in (0, 1]")
        if self.max_merge_batches < 1:
            raise ValueError("max_merge_batches must be >= 1")

    @property
    def holds_back(self):
        return self.kind in (HOLD_BACK, BACKFILL, MERGE_AND_BACKFILL)

    @property
    def backfills(self):
        return self.kind in (BACKFILL, MERGE_AND_BACKFILL)


class EnclaveTask:
    """Deferred unit of work with a unique id; runs exactly once."""

    __slots__ = ("task_id", "task_type", "payload", "run_count")

    def __init__(self, task_id, payload, task_type=0):
        if task_id <= 0:
            raise ValueError("task ids are positive integers")
        self.task_id = task_id
        self.task_type = task_type
        self.payload = payload
        self.run_count = 0

    def run(self):
        self.run_count += 1
        if self.run_count > 1:
            raise RuntimeError(f"enclave task {self.task_id} executed twice")
        return self.payload()


class OutcomeTable:
    """Insert-once associative table of finished task results."""

    def __init__(self):
        self._lock = threading.Lock()
        self._results = {}

    def insert(self, task_id, result):
        with self._lock:
            if task_id in self._results:
                raise DuplicateTaskError(f"outcome for task {task_id} inserted twice")
            self._results[task_id] = result

    def try_take(self, task_id):
        with self._lock:
            return self._results.pop(task_id, MISSING)

    def take(self, task_id):
        result = self.try_take(task_id)
        if result is MISSING:
            raise KeyError(f"no outcome for task {task_id}")
        return result

    def __len__(self):
        with self._lock:
            return len(self._results)


class PendingQueue:
    """The manual hold-back container: a centralized FIFO under one lock."""

    def __init__(self):
        self._lock = threading.Lock()
        self._dq = deque()
        self._peak = 0

    def push(self, task):
        with self._lock:
            self._dq.append(task)
            if len(self._dq) > self._peak:
                self._peak = len(self._dq)

    def pop_batch(self, k):
        with self._lock:
            k = min(k, len(self._dq))
            return [self._dq.popleft() for _ in range(k)]

    def __len__(self):
        with self._lock:
            return len(self._dq)

    @property
    def peak(self):
        with self._lock:
            return self._peak

    def reset_peak(self):
        with self._lock:
            self._peak = len(self._dq)


class Watchdog:
    """Aborts the run after too many consecutive unproductive consumer polls."""

    def __init__(self, limit=DEFAULT_WATCHDOG_LIMIT):
        self.limit = limit
        self.triggered = False
        self.diagnostic = None
        self._lock = threading.Lock()
        self._count = 0

    def spin(self, context=""):
        with self._lock:
            self._count += 1
            if self._count >= self.limit and not self.triggered:
                self.triggered = True
                self.diagnostic = (
                    f"starvation watchdog: {self._count} consecutive unproductive "
                    f"polls across all consumers{context}")

    def productive(self):
        with self._lock:
            self._count = 0


class _Failure:
    __slots__ = ("exc",)

    def __init__(self, exc):
        self.exc = exc


class _Section:
    """Completion tracking for one BSP-type task section."""

    __slots__ = ("remaining", "failure", "event", "lock")

    def __init__(self, count):
        self.remaining = count
        self.failure = None
        self.event = threading.Event()
        self.lock = threading.Lock()
        if count == 0:
            self.event.set()

    def task_done(self, failure=None):
        with self.lock:
            if failure is not None and self.failure is None:
                self.failure = failure
                self.event.set()
            self.remaining -= 1
            if self.remaining == 0:
                self.event.set()


class _TraversalItem:
    __slots__ = ("closure", "section", "trace_id")

    def __init__(self, closure, section, trace_id):
        self.closure = closure
        self.section = section
        self.trace_id = trace_id


class WorkerPool:
    """T worker threads plus the strategy-specific scheduling machinery."""

    def __init__(self, threads, strategy=None, recorder=None,
                 watchdog_limit=DEFAULT_WATCHDOG_LIMIT):
        if threads < 1:
            raise ValueError(f"thread count must be >= 1, got {threads}")
        self.threads = threads
        self.strategy = strategy or Strategy()
        self.recorder = recorder or tracing.TraceRecorder(enabled=False)
        self.pending = PendingQueue()
        self.outcomes = OutcomeTable()
        self.watchdog = Watchdog(watchdog_limit)

        self._cv = threading.Condition()
        self._traversal_q = deque()
        self._enclave_q = deque()
        self._shutdown = False
        self._active_bsp = 0
        self._ready_peak = 0
        self._spawned_ids = set()
        self._task_seq = 0
        self._traversal_seq = 0
        self._section_seq = 0
        self._merge_lock = threading.Lock()
        self._merge_batches_used = 0
        self.backfill_decrements = 0

        self._tls = threading.local()
        self._driver_buf = self.recorder.buffer(tracing.DRIVER_WORKER)
        self._workers = []
        for wid in range(threads):
            t = threading.Thread(target=self._worker_loop, args=(wid,),
                                 name=f"taskbench-worker-{wid}", daemon=True)
            t.start()
            self._workers.append(t)

    # -- ids and counters ---------------------------------------------------

    def new_task_id(self):
        with self._cv:
            self._task_seq += 1
            return self._task_seq

    def _new_traversal_id(self):
        self._traversal_seq -= 1
        return self._traversal_seq

    def counters(self):
        """(pending, ready enclave, active BSP) for the sampler."""
        with self._cv:
            ready = len(self._enclave_q)
            active = self._active_bsp
        return len(self.pending), ready, active

    def reset_step_peaks(self):
        self.pending.reset_peak()
        with self._cv:
            self._ready_peak = len(self._enclave_q)

    def flush_step_peaks(self):
        """Record the exact per-step high-water marks as sample events."""
        with self._cv:
            ready_peak = self._ready_peak
        self._driver_buf.record(SAMPLE, CH_STEP_PENDING_PEAK, self.pending.peak)
        self._driver_buf.record(SAMPLE, CH_STEP_READY_PEAK, ready_peak)
        return self.pending.peak, ready_peak

    @property
    def ready_enclave_peak(self):
        with self._cv:
            return self._ready_peak

    def _buf(self):
        return getattr(self._tls, "buf", self._driver_buf)

    # -- spawning and outcomes ----------------------------------------------

    def spawn_enclave(self, task):
        """Route a freshly created enclave task according to the strategy."""
        with self._cv:
            if task.task_id in self._spawned_ids:
                raise DuplicateTaskError(f"task id {task.task_id} spawned twice")
            self._spawned_ids.add(task.task_id)
        self._buf().record(SPAWN, task.task_id)
        if self.strategy.holds_back:
            self.pending.push(task)
            return
        run_inline = False
        with self._cv:
            if len(self._enclave_q) < self.strategy.ready_cap:
                self._enclave_q.append(task)
                if len(self._enclave_q) > self._ready_peak:
                    self._ready_peak = len(self._enclave_q)
                self._cv.notify_all()
            else:
                run_inline = True
        if run_inline:
            self._run_enclave(task)

    def wait_for_outcome(self, task_id):
        """Poll for a task outcome, making strategy-specific progress meanwhile."""
        result = self.outcomes.try_take(task_id)
        if result is not MISSING:
            return self._unwrap(result)
        buf = self._buf()
        spun_ns = 0
        while True:
            if self.watchdog.triggered:
                raise StarvationError(self.watchdog.diagnostic)
            if self._shutdown:
                raise RuntimeError("pool shut down while waiting for an outcome")
            result = self.outcomes.try_take(task_id)
            if result is not MISSING:
                self.watchdog.productive()
                if spun_ns:
                    buf.record(POLL_SPIN, task_id, spun_ns)
                return self._unwrap(result)
            if self.strategy.holds_back:
                if self.strategy.kind == MERGE_AND_BACKFILL:
                    ran = self.process_pending_tasks() > 0
                else:
                    ran = self.process_pending_tasks(batch_hint=1) > 0
            else:
                ran = self.yield_once()
            if not ran:
                t0 = time.monotonic_ns()
                self.watchdog.spin(
                    f" (strategy={self.strategy.kind}, "
                    f"yield_mode={self.strategy.yield_mode})")
                time.sleep(0)
                spun_ns += time.monotonic_ns() - t0

    @staticmethod
    def _unwrap(result):
        if isinstance(result, _Failure):
            raise result.exc
        return result

    def yield_once(self):
        """Run one ready task if the yield mode allows it; True iff one ran."""
        item = None
        with self._cv:
            if self.strategy.yield_mode == YIELD_FAIR:
                if self._enclave_q:
                    item = self._enclave_q.popleft()
                elif self._traversal_q:
                    item = self._traversal_q.popleft()
            else:
                if self._traversal_q:
                    item = self._traversal_q.popleft()
        if item is None:
            return False
        self._execute(item)
        return True

    def process_pending_tasks(self, batch_hint=None):
        """Pop and run pending tasks; returns the number executed.

        The default batch is ceil(pending * merge_fraction). Under
        merge-and-backfill the popped batch is grouped by task type and each
        group runs as one fused loop until the per-sweep budget is spent.
        """
        n_pending = len(self.pending)
        if n_pending == 0:
            return 0
        if batch_hint is None:
            batch = math.ceil(n_pending * self.strategy.merge_fraction)
        else:
            batch = batch_hint
        tasks = self.pending.pop_batch(max(1, batch))
        if not tasks:
            return 0
        if self.strategy.kind == MERGE_AND_BACKFILL:
            groups = {}
            for task in tasks:
                groups.setdefault(task.task_type, []).append(task)
            for group in groups.values():
                with self._merge_lock:
                    fused = self._merge_batches_used < self.strategy.max_merge_batches
                    if fused:
                        self._merge_batches_used += 1
                # Host execution is one tight loop either way; on an
                # accelerator the fused branch would launch a single kernel.
                for task in group:
                    self._run_enclave(task)
        else:
            for task in tasks:
                self._run_enclave(task)
        return len(tasks)

    @property
    def merge_batches_used(self):
        with self._merge_lock:
            return self._merge_batches_used

    # -- BSP sections ---------------------------------------------------------

    def run_bsp_section(self, closures, section_id=None, step=0, phase=PHASE_OTHER):
        """Run one BSP-type section: one traversal task per closure.

        Returns when the last traversal task completed. Backfilling
        strategies route through run_bsp_backfill instead.
        """
        if self.strategy.backfills:
            return self.run_bsp_backfill(closures, section_id=section_id,
                                         step=step, phase=phase)
        section_id = self._next_section_id(section_id, phase)
        section = _Section(len(closures))
        self._driver_buf.record(SECTION_START, section_id, step)
        with self._cv:
            for closure in closures:
                self._traversal_q.append(
                    _TraversalItem(closure, section, self._new_traversal_id()))
            self._cv.notify_all()
        self._wait_section(section)
        self._driver_buf.record(SECTION_END, section_id, step)
        if section.failure is not None:
            raise section.failure

    def run_bsp_backfill(self, closures, section_id=None, step=0, phase=PHASE_OTHER):
        """Manual backfilling of a BSP-type section.

        busyThreads starts at max(T, #tasks); every slot decrements it once,
        then helps with pending tasks while 0 < busyThreads < T. The second
        clause lets surplus slots return immediately so a free worker can
        pick them up, which is what makes the construct deadlock-free.
        """
        section_id = self._next_section_id(section_id, phase)
        n_tasks = len(closures)
        n_slots = max(self.threads, n_tasks)
        busy = _AtomicCounter(n_slots)
        with self._merge_lock:
            self._merge_batches_used = 0
        section = _Section(n_slots)
        self._driver_buf.record(SECTION_START, section_id, step)

        def make_slot(i):
            def slot():
                if i < n_tasks:
                    closures[i]()
                busy.decrement()
                with self._cv:
                    self.backfill_decrements += 1
                spun_ns = 0
                while True:
                    b = busy.value
                    if not (0 < b < self.threads):
                        break
                    if self.process_pending_tasks() == 0:
                        t0 = time.monotonic_ns()
                        time.sleep(0)
                        spun_ns += time.monotonic_ns() - t0
                if spun_ns:
                    self._buf().record(POLL_SPIN, i, spun_ns)
            return slot

        with self._cv:
            for i in range(n_slots):
                self._traversal_q.append(
                    _TraversalItem(make_slot(i), section, self._new_traversal_id()))
            self._cv.notify_all()
        self._wait_section(section)
        self._driver_buf.record(SECTION_END, section_id, step)
        if section.failure is not None:
            raise section.failure

    def _next_section_id(self, section_id, phase):
        if section_id is not None:
            return section_id
        with self._cv:
            self._section_seq += 1
            return self._section_seq * 10 + phase

    def _wait_section(self, section):
        while not section.event.wait(timeout=0.05):
            if self.watchdog.triggered:
                raise StarvationError(self.watchdog.diagnostic)
            if self._shutdown:
                raise RuntimeError("pool shut down while a section was running")

    # -- execution ------------------------------------------------------------

    def _run_enclave(self, task):
        buf = self._buf()
        buf.record(TASK_START, task.task_id, TASK_KIND_ENCLAVE)
        try:
            result = task.run()
        except BaseException as exc:
            self.outcomes.insert(task.task_id, _Failure(exc))
        else:
            self.outcomes.insert(task.task_id, result)
        buf.record(TASK_END, task.task_id, TASK_KIND_ENCLAVE)
        self.watchdog.productive()

    def _run_traversal(self, item):
        buf = self._buf()
        with self._cv:
            self._active_bsp += 1
        buf.record(TASK_START, item.trace_id, TASK_KIND_TRAVERSAL)
        failure = None
        try:
            item.closure()
        except BaseException as exc:
            failure = exc
        buf.record(TASK_END, item.trace_id, TASK_KIND_TRAVERSAL)
        with self._cv:
            self._active_bsp -= 1
        item.section.task_done(failure)
        self.watchdog.productive()

    def _execute(self, item):
        if isinstance(item, _TraversalItem):
            self._run_traversal(item)
        else:
            self._run_enclave(item)

    def _worker_loop(self, wid):
        buf = self.recorder.buffer(wid)
        self._tls.buf = buf
        while True:
            waited = False
            t0 = 0
            with self._cv:
                while not self._shutdown and not self._traversal_q and not self._enclave_q:
                    if not waited:
                        waited = True
                        t0 = time.monotonic_ns()
                    self._cv.wait(timeout=0.05)
                if self._shutdown:
                    break
                if self._traversal_q:
                    item = self._traversal_q.popleft()
                else:
                    item = self._enclave_q.popleft()
            if waited:
                idle = time.monotonic_ns() - t0
                if idle > 0:
                    buf.record(POLL_SPIN, 0, idle)
            self._execute(item)

    def shutdown(self):
        with self._cv:
            self._shutdown = True
            self._cv.notify_all()
        for t in self._workers:
            t.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.shutdown()
        return False


class _AtomicCounter:
    __slots__ = ("_lock", "_value")

    def __init__(self, value):
        self._lock = threading.Lock()
        self._value = value

    def decrement(self):
        with self._lock:
            self._value -= 1
            return self._value

    @property
    def value(self):
        with self._lock:
            return self._value
