"""The two time-stepping drivers: plain BSP and two-traversal enclave tasking.

Both advance the same mesh and must produce bit-identical solutions for any
strategy, thread count and partition layout: patch updates are pure functions
of generation-k data, and the global eigenvalue reduction is a max, which is
order-independent.
"""

import dataclasses
import threading
import time

from . import fv, partition, runtime, tracing
from .config import RunConfig
from .fv import admissible_dt, update_patch
from .tracing import (
    PHASE_EXCHANGE, PHASE_FINALIZE, PHASE_PRIMARY, PHASE_SECONDARY,
    SECTION_END, SECTION_START,
)


class MaxReducer:
    """Order-independent max fold shared by all workers."""

    def __init__(self):
        self._lock = threading.Lock()
        self._value = 0.0

    def reset(self):
        with self._lock:
            self._value = 0.0

    def fold(self, value):
        with self._lock:
            if value > self._value:
                self._value = value

    @property
    def value(self):
        with self._lock:
            return self._value


class SolverState:
    """Mesh, partition layout and time-stepping bookkeeping for one run."""

    def __init__(self, config: RunConfig):
        self.config = config
        m = config.mesh_m
        self.mesh_config = fv.MeshConfig(m, config.patch_size,
                                         gamma=config.gamma, cfl=config.cfl)
        self.mesh = fv.build_initial_mesh(self.mesh_config,
                                          amplitude=config.ic_amplitude,
                                          width=config.ic_width)
        self.order = partition.sfc_order(m)
        self.partitions = partition.split_for_mode(self.order, config.balance,
                                                   config.partition_count())
        self.classes = partition.classify(self.order, self.partitions, m)
        owners = partition.owners_by_patch(self.order, self.partitions, m)
        for idx, patch in enumerate(self.mesh.patches):
            patch.owner = owners[idx]

        self.step_index = 0
        self.reducer = MaxReducer()
        lam0 = fv.global_max_eigenvalue(self.mesh)
        self.dt = admissible_dt(lam0, self.mesh_config.h, config.cfl)
        self.debug = False
        self.on_exchange = None   # serial hooks kept in the control flow
        self.on_finalize = None

    @property
    def enclave_count(self):
        return sum(1 for c in self.classes if c == partition.ENCLAVE)

    @property
    def skeleton_count(self):
        return sum(1 for c in self.classes if c == partition.SKELETON)

    def checksum(self):
        return self.mesh.checksum()


def _update_in_place(state, idx, dt):
    mesh = state.mesh
    patch = mesh.patches[idx]
    halo = mesh.assemble_halo(idx, state.step_index)
    new, lam = update_patch(patch.interior, halo, dt, state.mesh_config.h,
                            state.mesh_config.gamma)
    state.reducer.fold(lam)
    patch.interior = new
    mesh.project_to_faces(idx)


def bsp_time_step(state: SolverState, pool: runtime.WorkerPool, buf):
    """One taskloop-style traversal: every patch updated in place."""
    state.reducer.reset()
    step = state.step_index
    dt = state.dt
    mesh = state.mesh

    def make_traversal(part):
        def run():
            for k in part.indices():
                _update_in_place(state, mesh.flat_index(state.order[k]), dt)
        return run

    closures = [make_traversal(part) for part in state.partitions]
    pool.run_bsp_section(closures, section_id=step * 10 + PHASE_PRIMARY,
                         step=step, phase=PHASE_PRIMARY)
    _finish_step(state)


def enclave_time_step(state: SolverState, pool: runtime.WorkerPool, buf):
    """Two traversals: produce enclave tasks + exchange, then weave outcomes."""
    state.reducer.reset()
    step = state.step_index
    dt = state.dt
    mesh = state.mesh
    h = state.mesh_config.h
    gamma = state.mesh_config.gamma
    task_ids = {}

    def make_payload(interior, halo, dt):
        def run():
            new, lam = update_patch(interior, halo, dt, h, gamma)
            state.reducer.fold(lam)
            return new, lam
        return run

    def make_primary(part):
        def run():
            for k in part.indices():
                idx = mesh.flat_index(state.order[k])
                if state.classes[idx] == partition.SKELETON:
                    _update_in_place(state, idx, dt)
                else:
                    halo = dict(mesh.assemble_halo(idx, step))
                    task_id = pool.new_task_id()
                    task_ids[idx] = task_id
                    pool.spawn_enclave(runtime.EnclaveTask(
                        task_id, make_payload(mesh.patches[idx].interior, halo, dt)))
        return run

    def make_secondary(part):
        def run():
            for k in part.indices():
                idx = mesh.flat_index(state.order[k])
                if state.classes[idx] == partition.ENCLAVE:
                    new, _lam = pool.wait_for_outcome(task_ids[idx])
                    mesh.patches[idx].interior = new
                    mesh.project_to_faces(idx)
        return run

    pool.run_bsp_section([make_primary(p) for p in state.partitions],
                         section_id=step * 10 + PHASE_PRIMARY,
                         step=step, phase=PHASE_PRIMARY)
    _serial_hook(buf, step, PHASE_EXCHANGE, state.on_exchange)
    pool.run_bsp_section([make_secondary(p) for p in state.partitions],
                         section_id=step * 10 + PHASE_SECONDARY,
                         step=step, phase=PHASE_SECONDARY)
    _serial_hook(buf, step, PHASE_FINALIZE, state.on_finalize)
    _finish_step(state)


def _serial_hook(buf, step, phase, hook):
    buf.record(SECTION_START, step * 10 + phase, step)
    if hook is not None:
        hook()
    buf.record(SECTION_END, step * 10 + phase, step)


def _finish_step(state):
    lam = state.reducer.value
    if state.debug:
        serial = fv.global_max_eigenvalue(state.mesh)
        if serial != lam:
            raise AssertionError(
                f"step {state.step_index}: folded eigenvalue {lam!r} disagrees "
                f"with serial recomputation {serial!r}")
    state.dt = admissible_dt(lam, state.mesh_config.h, state.config.cfl)
    state.step_index += 1


STEP_FUNCTIONS = {"bsp": bsp_time_step, "enclave": enclave_time_step}


@dataclasses.dataclass
class RunResult:
    state: SolverState
    events: list
    summary: tracing.Summary
    checksum: str
    step_peaks: list            # (pending peak, ready-enclave peak) per step
    elapsed_ns: int

    @property
    def time_per_step_per_patch_ns(self):
        return self.summary.time_per_step_per_patch_ns


def build_strategy(config: RunConfig) -> runtime.Strategy:
    return runtime.Strategy(kind=config.strategy,
                            ready_cap=config.ready_cap,
                            yield_mode=config.yield_mode,
                            merge_fraction=config.merge_fraction,
                            max_merge_batches=config.max_merge_batches)


def run_simulation(state: SolverState, steps: int, recorder=None,
                   sampler_period_us=100,
                   watchdog_limit=runtime.DEFAULT_WATCHDOG_LIMIT) -> RunResult:
    """Drive the configured solver for a number of steps and collect traces."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    config = state.config
    step_fn = STEP_FUNCTIONS[config.solver]
    if recorder is None:
        recorder = tracing.TraceRecorder(enabled=True)
    buf = recorder.buffer(tracing.DRIVER_WORKER)
    pool = runtime.WorkerPool(config.threads, build_strategy(config),
                              recorder=recorder, watchdog_limit=watchdog_limit)
    sampler = None
    if recorder.enabled and sampler_period_us:
        sampler = tracing.Sampler(recorder, pool.counters, sampler_period_us)
        sampler.start()
    step_peaks = []
    t0 = time.monotonic_ns()
    try:
        for _ in range(steps):
            pool.reset_step_peaks()
            step_fn(state, pool, buf)
            step_peaks.append(pool.flush_step_peaks())
    finally:
        if sampler is not None:
            sampler.stop()
        pool.shutdown()
    elapsed = time.monotonic_ns() - t0
    events = recorder.events()
    if recorder.enabled:
        summary = tracing.summarize(events, state.mesh_config.patch_count,
                                    config.threads)
    else:
        summary = tracing.Summary([], 0, 0.0, 0, {})
    return RunResult(state, events, summary, state.checksum(), step_peaks, elapsed)


def run_config(config: RunConfig, recorder=None, **kwargs) -> RunResult:
    """Build a fresh state for the config and run it."""
    state = SolverState(config)
    return run_simulation(state, config.steps, recorder=recorder, **kwargs)
