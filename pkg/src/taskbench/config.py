"""Run configuration shared by the CLI, the solvers and the output writers."""

import dataclasses
import hashlib
import json
import os

SOLVERS = ("bsp", "enclave")
STRATEGIES = ("native", "hold-back", "backfill", "merge-and-backfill")
BALANCE_MODES = ("well", "ill")
YIELD_MODES = ("fair", "strict-group")

THREADS_ENV_VAR = "TASKBENCH_THREADS"


class ConfigError(ValueError):
    """Invalid run configuration."""


def default_threads() -> int:
    env = os.environ.get(THREADS_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV_VAR} must be an integer, got {env!r}") from exc
    return os.cpu_count() or 1


@dataclasses.dataclass
class RunConfig:
    """Everything needed to reproduce a run; serialized verbatim into outputs."""

    solver: str = "enclave"
    strategy: str = "native"
    threads: int = dataclasses.field(default_factory=default_threads)
    grid_exp: int = 2            # patches per axis M = 3**grid_exp
    patch_size: int = 15         # volumes per patch axis
    balance: str = "well"
    steps: int = 5
    cfl: float = 0.4
    gamma: float = 1.4
    ready_cap: int = 1000
    merge_fraction: float = 0.5
    max_merge_batches: int = 16
    yield_mode: str = "fair"
    partitions: int | None = None    # None: thread count (ill mode needs >= 2)
    ic_amplitude: float = 0.5
    ic_width: float = 0.01
    seed: int = 0                # reserved; embedded for provenance
    trace_path: str | None = None
    summary_path: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {list(SOLVERS)}, got {self.solver!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(
                f"threading model must be one of {list(STRATEGIES)}, got {self.strategy!r}")
        if self.balance not in BALANCE_MODES:
            raise ConfigError(f"balance must be one of {list(BALANCE_MODES)}, got {self.balance!r}")
        if self.yield_mode not in YIELD_MODES:
            raise ConfigError(
                f"yield mode must be one of {list(YIELD_MODES)}, got {self.yield_mode!r}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.grid_exp < 0:
            raise ConfigError("grid-exp must be >= 0")
        if self.patch_size < 1:
            raise ConfigError("patch-size must be >= 1")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if not 0.0 < self.cfl < 1.0:
            raise ConfigError("cfl must lie in (0, 1)")
        if self.gamma <= 1.0:
            raise ConfigError("gamma must be > 1")
        if self.ready_cap < 1:
            raise ConfigError("ready-cap must be >= 1")
        if not 0.0 < self.merge_fraction <= 1.0:
            raise ConfigError("merge-fraction must lie in (0, 1]")
        if self.max_merge_batches < 1:
            raise ConfigError("max-merge-batches must be >= 1")
        if self.partitions is not None and self.partitions < 1:
            raise ConfigError("partitions must be >= 1")

    @property
    def mesh_m(self) -> int:
        return 3 ** self.grid_exp

    def partition_count(self) -> int:
        """Requested partition count; the ill-balanced splitter needs at least 2."""
        if self.partitions is not None:
            return self.partitions
        if self.balance == "ill":
            return max(2, self.threads)
        return self.threads

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        """Stable hash over the physical/scheduling fields (paths excluded)."""
        d = self.to_dict()
        d.pop("trace_path")
        d.pop("summary_path")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def config_from_dict(d: dict) -> RunConfig:
    fields = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(d) - fields
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**d)
