"""CPU threads and PIM kernels sharing data through one coherence mechanism."""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Any, Dict, Generator, List, Optional, Tuple, Type

import simpy
from pydantic import BaseModel, ConfigDict, field_validator

from pim_simulation.coherence.cache import SetAssociativeCache
from pim_simulation.coherence.directory import Directory
from pim_simulation.coherence.hierarchy import L1_BYTES, L1_WAYS, L2_BYTES, L2_WAYS, HostCaches
from pim_simulation.memory.address import (
    AccessKind,
    AccessRequest,
    Address,
    Requester,
    RequesterKind,
    make_pa,
)
from pim_simulation.memory.memory_system import MemorySystem, TimingConfig, TrafficCategory
from pim_simulation.pim_utils import LINE_BYTES, WORDS_PER_LINE, InvariantChecker
from pim_simulation.workloads.coherence_workloads import PAGE_LINES, CoherenceWorkload, KernelSpec

if TYPE_CHECKING:
    from pim_simulation.coherence.mechanisms.abstract_mechanism import CoherenceMechanism

_LOG = logging.getLogger(__name__)

HOST_AGENT = 0
DATA_BASE = 2**30

LogEntry = Tuple[str, int, int]


class MechanismKind(Enum):
    """Coherence mechanism between the CPU caches and the PIM cores."""

    CPU_ONLY = "cpu-only"
    FG = "fg"
    CG = "cg"
    NC = "nc"
    LAZYPIM = "lazypim"
    IDEAL = "ideal"


class CoherenceConfig(BaseModel):
    """Coherence experiment settings."""

    model_config = ConfigDict(extra="forbid")

    mechanism: MechanismKind = MechanismKind.LAZYPIM
    exact_signatures: bool = False
    rollback_limit: int = 3
    signature_bits: int = 2048
    signature_hashes: int = 2
    signature_capacity: int = 607
    pim_l1_bytes: int = L1_BYTES
    pim_l1_ways: int = L1_WAYS
    cpu_l1_bytes: int = L1_BYTES
    cpu_l1_ways: int = L1_WAYS
    l2_bytes: int = L2_BYTES
    l2_ways: int = L2_WAYS
    commit_lock_cycles: float = 10.0
    blocked_warning_cycles: float = 1_000_000.0

    @field_validator("rollback_limit", "signature_hashes", "signature_capacity")
    @classmethod
    def _positive(cls, value: int) -> int:
        if value <= 0:
            raise ValueError("must be positive")
        return value

    @field_validator("signature_bits")
    @classmethod
    def _power_of_two_bits(cls, value: int) -> int:
        if value < 2 or value & (value - 1):
            raise ValueError("signature_bits must be a power of 2")
        return value


class PimDataMap:
    """Per-page flag bits marking PIM data, with a small TLB mirroring the flags."""

    def __init__(self, pim_lines: int, tlb_entries: int = 64):
        """Flag every page holding one of the lines [0, pim_lines)."""
        self.pages = set(range(-(-pim_lines // PAGE_LINES)))
        self.tlb_entries = tlb_entries
        self._tlb: "OrderedDict[int, bool]" = OrderedDict()
        self.tlb_misses = 0

    def __contains__(self, line: int) -> bool:
        """Whether a line lies on a PIM data page."""
        page = line // PAGE_LINES
        flag = self._tlb.get(page)
        if flag is None:
            self.tlb_misses += 1
            flag = page in self.pages
            if len(self._tlb) >= self.tlb_entries:
                self._tlb.popitem(last=False)
            self._tlb[page] = flag
        else:
            self._tlb.move_to_end(page)
        return flag


@dataclass
class CoherenceReport:  # pylint: disable=too-many-instance-attributes
    """Outcome of one coherence run."""

    mechanism: str
    makespan: float
    off_chip_bytes: int
    bytes_by_category: Dict[str, int]
    messages_by_category: Dict[str, int]
    cpu_ops: int
    pim_ops: int
    host_l1_hits: int
    host_l2_hits: int
    host_misses: int
    pim_hits: int
    pim_misses: int
    final_memory: Dict[int, List[int]]
    log: List[LogEntry]
    metrics: Dict[str, float] = field(default_factory=dict)
    kernel_log: List[Dict[str, Any]] = field(default_factory=list)


class CoherenceSystem:  # pylint: disable=too-many-instance-attributes
    """Owns the event loop, the memory contents and every cache of one coherence run."""

    def __init__(  # pylint: disable=too-many-arguments
        self,
        workload: CoherenceWorkload,
        config: CoherenceConfig,
        mechanism_type: Type["CoherenceMechanism"],
        timing: Optional[TimingConfig] = None,
        profile: str = "debug",
        seed: int = 0,
    ):
        """Build caches and processes for a workload; call run() to simulate."""
        self.workload = workload
        self.config = config
        self.seed = seed
        self.env = simpy.Environment()
        self.memory = MemorySystem(timing)
        self.timing = self.memory.timing
        self.checker = InvariantChecker(profile)
        self.pim_map = PimDataMap(workload.pim_lines)
        self.dram: Dict[int, List[int]] = {
            line: list(words) for line, words in workload.initial.items()
        }
        host_cores = workload.cpu_threads
        if mechanism_type.offloads_to_host:
            host_cores += workload.pim_cores
        self.host = HostCaches(
            max(host_cores, 1),
            self.timing,
            config.cpu_l1_bytes,
            config.cpu_l1_ways,
            config.l2_bytes,
            config.l2_ways,
        )
        self.pim_l1s = [
            SetAssociativeCache(f"pim{core}-l1", config.pim_l1_bytes, config.pim_l1_ways)
            for core in range(workload.pim_cores)
        ]
        self.pim_cores = [simpy.Resource(self.env, capacity=1) for _ in self.pim_l1s]
        self.directory = Directory("memory", 1 + workload.pim_cores)
        self.cpu_acc = [0] * workload.cpu_threads
        self.log: List[LogEntry] = []
        self.cpu_ops = 0
        self.pim_ops = 0
        self.finish_times: List[float] = []
        self.mechanism = mechanism_type(self)
        self.checker.register("swmr", self.directory.check_swmr)
        self.checker.register("host-inclusion", self.host.check_inclusion)

    def is_pim(self, line: int) -> bool:
        """Whether a line is PIM data."""
        return line in self.pim_map

    def dram_line(self, line: int) -> List[int]:
        """DRAM contents of a line (zero if never written)."""
        words = self.dram.get(line)
        if words is None:
            words = [0] * WORDS_PER_LINE
            self.dram[line] = words
        return words

    def cpu_requester(self, core: int) -> Requester:
        """Requester for a CPU core."""
        return Requester(RequesterKind.CPU_CORE, core)

    def pim_requester(self, core: int) -> Requester:
        """Requester for a PIM core in the stack."""
        return Requester(RequesterKind.PIM_CORE, core, 0)

    def request(  # pylint: disable=too-many-arguments
        self,
        requester: Requester,
        line: int,
        write: bool = False,
        size: int = LINE_BYTES,
        category: TrafficCategory = TrafficCategory.DEMAND,
    ) -> float:
        """Time a line transfer and return its latency from now."""
        kind = AccessKind.WRITE if write else AccessKind.READ
        address = Address(make_pa(0, DATA_BASE + line * LINE_BYTES))
        completion = self.memory.submit(
            AccessRequest(requester, address, kind, size, self.env.now), category
        )
        return completion.complete_time - self.env.now

    def run(self) -> CoherenceReport:
        """Run every agent to completion."""
        for thread in range(self.workload.cpu_threads):
            self.env.process(self._cpu_thread(thread))
        for kernel in self.workload.kernels:
            self.env.process(self._kernel(kernel))
        self.env.run()
        self.mechanism.finish()
        self.checker.run_all(self.env.now)
        return self._report()

    def final_memory(self) -> Dict[int, List[int]]:
        """Memory contents after writing back every dirty cached copy."""
        memory = {line: list(words) for line, words in self.dram.items()}
        for line, meta in self.host.l2.items():
            if meta.dirty:
                memory[line] = list(meta.data)
        for l1 in self.pim_l1s:
            for line, meta in l1.items():
                assert not meta.speculative, f"Speculative line {line} survived the run"
                if meta.dirty:
                    memory[line] = list(meta.data)
        for line in range(self.workload.total_lines):
            memory.setdefault(line, [0] * WORDS_PER_LINE)
        return memory

    def _cpu_thread(self, thread: int) -> Generator[simpy.Event, Any, None]:
        for index, op in enumerate(self.workload.cpu_streams[thread]):
            if op.think > 0:
                yield self.env.timeout(op.think)
            latency = yield from self.mechanism.cpu_access(thread, op, index)
            self.cpu_ops += 1
            self.checker.event(self.env.now)
            if latency > 0:
                yield self.env.timeout(latency)
        self.finish_times.append(self.env.now)

    def _kernel(self, kernel: KernelSpec) -> Generator[simpy.Event, Any, None]:
        if kernel.launch_time > 0:
            yield self.env.timeout(kernel.launch_time)
        if self.mechanism.offloads_to_host:
            yield from self.mechanism.run_kernel(kernel)
        else:
            with self.pim_cores[kernel.pim_core].request() as core:
                yield core
                yield from self.mechanism.run_kernel(kernel)
        self.finish_times.append(self.env.now)

    def _report(self) -> CoherenceReport:
        ledger = self.memory.ledger
        makespan = max(self.finish_times, default=0.0)
        _LOG.info(
            "%s finished at cycle %s with %s off-chip bytes",
            self.mechanism.kind.value,
            makespan,
            ledger.total_bytes,
        )
        return CoherenceReport(
            mechanism=self.mechanism.kind.value,
            makespan=makespan,
            off_chip_bytes=ledger.total_bytes,
            bytes_by_category={c.value: n for c, n in ledger.bytes_by_category.items()},
            messages_by_category={c.value: n for c, n in ledger.messages_by_category.items()},
            cpu_ops=self.cpu_ops,
            pim_ops=self.pim_ops,
            host_l1_hits=self.host.l1_hits,
            host_l2_hits=self.host.l2_hits,
            host_misses=self.host.misses,
            pim_hits=sum(l1.hits for l1 in self.pim_l1s),
            pim_misses=sum(l1.misses for l1 in self.pim_l1s),
            final_memory=self.final_memory(),
            log=list(self.log),
            metrics=self.mechanism.metrics(),
            kernel_log=self.mechanism.kernel_log(),
        )
