"""Self-contained oracle and invariant checks behind the `verify` command.

Each check returns (name, passed, detail). The suite favors desk-scale
configurations so a full pass stays well under a minute.
"""

import threading
import time

import numpy as np

from . import fv, partition, reference, runtime, solvers
from .config import RunConfig
from .fv import StaleHaloError


def check_kernel_oracle():
    """One time step must match the scalar brute-force grid bit-for-bit."""
    config = RunConfig(solver="enclave", strategy="native", threads=2,
                       grid_exp=1, patch_size=9, steps=1)
    state = solvers.SolverState(config)
    initial = state.mesh.gather()
    expected_dt = state.config.cfl * state.mesh_config.h / \
        reference.reference_global_eigenvalue(initial, config.gamma)
    if expected_dt != state.dt:
        return ("kernel oracle", False,
                f"bootstrap dt mismatch: solver {state.dt!r} vs oracle {expected_dt!r}")
    expected, _ = reference.reference_step(initial, expected_dt,
                                           state.mesh_config.h, config.gamma)
    solvers.run_simulation(state, 1)
    got = state.mesh.gather()
    diff = reference.first_difference(got, expected)
    if diff is not None:
        return ("kernel oracle", False,
                f"first differing volume index {diff}: "
                f"solver {got[diff]!r} vs oracle {expected[diff]!r}")
    return ("kernel oracle", True, "M=3 n=9 step identical to brute force")


def relative_drift(before, after):
    """Per-component drift, normalized by max(1, |initial sum|)."""
    return [abs(after[c] - before[c]) / max(1.0, abs(before[c])) for c in range(4)]


def check_conservation(steps=30):
    config = RunConfig(solver="bsp", strategy="native", threads=2,
                       grid_exp=2, patch_size=15, steps=steps)
    state = solvers.SolverState(config)
    before = state.mesh.domain_sums()
    solvers.run_simulation(state, steps)
    drift = relative_drift(before, state.mesh.domain_sums())
    worst = max(drift)
    ok = worst <= 1e-10
    return ("conservation", ok,
            f"{steps} steps, worst relative drift {worst:.3e} (limit 1e-10)")


def check_classify_brute_force():
    m = 9
    order = partition.sfc_order(m)
    parts = partition.split_balanced(order, 2)
    classes = partition.classify(order, parts, m)
    owners = partition.owners_by_patch(order, parts, m)
    # independent derivation: scan all position pairs for torus adjacency
    skeletons = set()
    for a in range(m * m):
        ax, ay = a % m, a // m
        for b in range(m * m):
            bx, by = b % m, b // m
            dx = min((ax - bx) % m, (bx - ax) % m)
            dy = min((ay - by) % m, (by - ay) % m)
            if dx + dy == 1 and owners[a] != owners[b]:
                skeletons.add(a)
    derived = {i for i, c in enumerate(classes) if c == partition.SKELETON}
    ok = derived == skeletons
    return ("classify brute force", ok,
            f"skeletons {len(derived)} vs brute-force {len(skeletons)} on M=9 P=2")


def _backfill_case(threads, n_bsp, n_pending, timeout_s=10.0):
    strategy = runtime.Strategy(kind=runtime.BACKFILL)
    pool = runtime.WorkerPool(threads, strategy)
    try:
        done = []

        def make_task(i):
            def run():
                time.sleep(0.001)
                return i
            return run

        for i in range(n_pending):
            pool.pending.push(runtime.EnclaveTask(pool.new_task_id(), make_task(i)))

        def bsp_task():
            time.sleep(0.002)
            done.append(1)

        finished = threading.Event()

        def section():
            pool.run_bsp_backfill([bsp_task] * n_bsp)
            finished.set()

        t = threading.Thread(target=section, daemon=True)
        t.start()
        if not finished.wait(timeout_s):
            return False, f"T={threads} #bsp={n_bsp} pending={n_pending}: timed out"
        if len(done) != n_bsp:
            return False, f"T={threads} #bsp={n_bsp}: ran {len(done)} of {n_bsp}"
        return True, ""
    finally:
        pool.shutdown()


def check_backfill_deadlock(thread_counts=(1, 2, 4), pending_counts=(0, 40)):
    for t in thread_counts:
        for n_bsp in sorted({0, 1, max(0, t - 1), t, 3 * t}):
            for pending in pending_counts:
                ok, detail = _backfill_case(t, n_bsp, pending)
                if not ok:
                    return ("backfill deadlock freedom", False, detail)
    return ("backfill deadlock freedom", True,
            f"all (T, #bsp, pending) combinations for T in {thread_counts} completed")


def check_stale_halo():
    config = RunConfig(solver="bsp", strategy="native", threads=1,
                       grid_exp=1, patch_size=3, steps=1)
    state = solvers.SolverState(config)
    state.mesh._corrupt_strip_generation(0, fv.RIGHT, delta=1)
    try:
        solvers.run_simulation(state, 1)
    except StaleHaloError as exc:
        return ("stale halo detection", True, f"injected bug reported: {exc}")
    return ("stale halo detection", False,
            "injected generation corruption went unnoticed")


def check_determinism():
    config = dict(solver="enclave", strategy="backfill", threads=4,
                  grid_exp=2, patch_size=9, steps=3)
    first = solvers.run_config(RunConfig(**config))
    second = solvers.run_config(RunConfig(**config))
    ok = first.checksum == second.checksum
    return ("determinism", ok,
            f"checksums {'match' if ok else 'differ'}: {first.checksum[:16]}…")


ALL_CHECKS = (
    check_kernel_oracle,
    check_conservation,
    check_classify_brute_force,
    check_backfill_deadlock,
    check_stale_halo,
    check_determinism,
)


def run_all(checks=ALL_CHECKS):
    results = []
    for check in checks:
        try:
            results.append(check())
        except Exception as exc:   # a crashing check is a failing check
            results.append((check.__name__, False, f"raised {exc!r}"))
    return results
