"""IMPICA core: address engine, access engine, their queues and the IMPICA cache."""

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Deque, Dict, Generator, List, Optional, Sequence, Tuple

import simpy
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from pim_simulation.impica.cache import ImpicaCache
from pim_simulation.impica.program import (
    Compute,
    Emit,
    Load,
    ProgramBody,
    Step,
    TraversalContext,
    TraversalProgram,
    WordMemory,
    Words,
)
from pim_simulation.memory.address import (
    AccessKind,
    AccessRequest,
    Address,
    Requester,
    RequesterKind,
)
from pim_simulation.memory.memory_system import MemorySystem, TrafficCategory
from pim_simulation.pim_utils import InvariantChecker, InvariantViolation, lines_spanned
from pim_simulation.translation.page_tables import (
    ENTRY_BYTES,
    SMALL_PAGE,
    TranslationException,
)
from pim_simulation.translation.translator import PageTableKind, PimTranslator
from pim_simulation.units import DataSize

_LOG = logging.getLogger(__name__)

# Function id plus two parameter words.
PACKET_PAYLOAD_BYTES = 24


class ImpicaConfig(BaseModel):
    """IMPICA core configuration."""

    model_config = ConfigDict(extra="forbid")

    queue_entries: int = 16
    cache_bytes: int = DataSize(32, "KB").bytes()
    cache_ways: int = 2
    tlb_entries: int = 32
    data_ram_bytes: int = DataSize(16, "KB").bytes()
    context_bytes: int = 64
    root_window: int = 2
    compute_cycles: float = 11.0
    context_switch_cycles: float = 0.0
    access_issue_cycles: float = 1.0
    decoupled: bool = True
    page_table: PageTableKind = PageTableKind.RPT
    leaf_size: int = SMALL_PAGE

    @field_validator("queue_entries", "cache_ways", "tlb_entries", "context_bytes")
    @classmethod
    def _positive(cls, value: int) -> int:
        if value <= 0:
            raise ValueError("must be positive")
        return value

    @model_validator(mode="after")
    def _check_geometry(self) -> "ImpicaConfig":
        if self.cache_bytes <= 0 or self.cache_bytes % (self.cache_ways * 64):
            raise ValueError("cache_bytes must be a positive multiple of cache_ways * 64")
        if self.data_ram_bytes < self.context_bytes:
            raise ValueError("data RAM cannot hold a single context")
        if self.leaf_size not in (SMALL_PAGE, 2**21):
            raise ValueError("leaf_size must be 4096 or 2097152")
        return self

    @property
    def max_concurrency(self) -> int:
        """Traversals that may be in flight at once."""
        if not self.decoupled:
            return 1
        return min(self.queue_entries, self.data_ram_bytes // self.context_bytes)


class AddressAction(Enum):
    """What one address engine step did."""

    EXECUTED_COMPUTE = "executed-compute"
    ISSUED_LOAD = "issued-load"
    CONTEXT_SWITCHED = "context-switched"
    EMITTED_RESULT = "emitted-result"
    IDLE = "idle"


class AccessAction(Enum):
    """What one access engine step did."""

    TRANSLATED_AND_ISSUED = "translated-and-issued"
    STALLED_CACHE_FULL = "stalled-cache-full"
    IDLE = "idle"


@dataclass
class Traversal:
    """One pointer-chasing operation as seen by the engine."""

    request_id: int
    program: TraversalProgram
    enqueue_time: float
    coroutine: Optional[ProgramBody] = None
    context: Optional[TraversalContext] = None
    held_step: Optional[Step] = None
    resume_value: Optional[Words] = None
    accesses: int = 0
    results: List[Any] = field(default_factory=list)
    start_time: Optional[float] = None
    finish_time: Optional[float] = None
    fault: Optional[str] = None
    done: bool = False


@dataclass
class AccessEntry:
    """Access-queue entry: address plus the data RAM stack pointer of its context."""

    traversal: Traversal
    va: int
    size: int
    stack_pointer: int
    index: int


@dataclass
class ResponseEntry:
    """Response-queue entry waiting for the address engine."""

    traversal: Traversal
    words: Words
    lines: List[int]
    index: int


@dataclass
class TraversalReport:
    """Outcome of running a batch of traversals."""

    completion_times: Dict[int, float]
    results: Dict[int, List[Any]]
    faults: Dict[int, str]
    makespan: float
    address_busy_cycles: float
    stall_cycles: float
    stall_events: int
    producer_stalls: int
    dropped_responses: int
    queue_high_water: Dict[str, int]
    cache_hits: int
    cache_misses: int
    memory_requests: int
    walk_accesses: int
    tlb_misses: int
    steps: int
    trace: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def utilization(self) -> float:
        """Fraction of the makespan the address engine spent computing."""
        return self.address_busy_cycles / self.makespan if self.makespan > 0 else 0.0

    @property
    def tlb_mpki(self) -> float:
        """TLB misses per thousand traversal steps."""
        return 1000.0 * self.tlb_misses / self.steps if self.steps else 0.0


class ImpicaEngine:  # pylint: disable=too-many-instance-attributes
    """Decoupled address and access engines sharing the IMPICA cache."""

    def __init__(  # pylint: disable=too-many-arguments
        self,
        env: simpy.Environment,
        config: ImpicaConfig,
        memory: MemorySystem,
        translator: PimTranslator,
        image: WordMemory,
        stack: int = 0,
        checker: Optional[InvariantChecker] = None,
    ):
        """Create an idle engine; call start() to launch its processes."""
        self.env = env
        self.config = config
        self.memory = memory
        self.translator = translator
        self.image = image
        self.checker = checker if checker is not None else InvariantChecker("release")
        self.requester = Requester(RequesterKind.PIM_CORE, 0, stack)
        self.walker = Requester(RequesterKind.PAGE_WALKER, 0, stack)
        self.request_queue = simpy.Store(env, capacity=config.queue_entries)
        self.access_queue: Deque[AccessEntry] = deque()
        self.response_queue: Deque[ResponseEntry] = deque()
        self._pending_inserts: Deque[ResponseEntry] = deque()
        self.cache = ImpicaCache(config.cache_bytes, config.cache_ways)
        self.traversals: List[Traversal] = []
        self.active: Dict[int, Traversal] = {}
        self._free_slots = list(range(config.data_ram_bytes // config.context_bytes))
        self._current: Optional[Traversal] = None
        self._next_request_id = 0
        self._address_wake = env.event()
        self._access_wake = env.event()
        self._stalled_since: Optional[float] = None
        self.address_busy_cycles = 0.0
        self.stall_cycles = 0.0
        self.stall_events = 0
        self.producer_stalls = 0
        self.dropped_responses = 0
        self.memory_requests = 0
        self.steps = 0
        self.high_water = {"request": 0, "access": 0, "response": 0, "contexts": 0}
        self.trace: List[Dict[str, Any]] = []
        self.checker.register("impica-queue-bounds", self._check_queue_bounds)

    def start(self) -> None:
        """Launch the address and access engine processes."""
        self.env.process(self._address_engine())
        self.env.process(self._access_engine())

    def enqueue_traversal(self, program: TraversalProgram) -> Generator[simpy.Event, Any, int]:
        """CPU packet offloading one traversal; blocks the producer while the queue is full."""
        request_id = self._next_request_id
        self._next_request_id += 1
        self.traversals.append(Traversal(request_id, program, self.env.now))
        self.memory.send_message(TrafficCategory.PACKET, self.env.now, PACKET_PAYLOAD_BYTES)
        if len(self.request_queue.items) >= self.config.queue_entries:
            self.producer_stalls += 1
            self._record("producer-stall", request_id)
        yield self.request_queue.put(self.traversals[-1])
        self.high_water["request"] = max(self.high_water["request"], len(self.request_queue.items))
        self._notify_address()
        return request_id

    def step_address_engine(self) -> Tuple[AddressAction, float]:
        """Run the current traversal until it loads, then switch; returns action and cycles."""
        traversal = self._current
        if traversal is None:
            return self._switch_context()
        step = traversal.held_step
        traversal.held_step = None
        if step is None:
            assert traversal.coroutine is not None
            value, traversal.resume_value = traversal.resume_value, None
            try:
                step = traversal.coroutine.send(value)
            except StopIteration:
                self._finish(traversal)
                return self._switch_context()
            self.steps += 1
            assert traversal.context is not None
            traversal.context.pc += 1
        if isinstance(step, Compute):
            self.address_busy_cycles += step.cycles
            return AddressAction.EXECUTED_COMPUTE, step.cycles
        if isinstance(step, Emit):
            traversal.results.append(step.result)
            self._record("emit", traversal.request_id)
            return AddressAction.EMITTED_RESULT, 0.0
        assert isinstance(step, Load), f"Unknown step {step}"
        if len(self.access_queue) >= self.config.queue_entries:
            traversal.held_step = step
            return AddressAction.IDLE, 0.0
        assert traversal.context is not None
        self.access_queue.append(
            AccessEntry(
                traversal, step.va, step.size, traversal.context.stack_pointer, traversal.accesses
            )
        )
        traversal.accesses += 1
        self.high_water["access"] = max(self.high_water["access"], len(self.access_queue))
        self._current = None
        self._notify_access()
        return AddressAction.ISSUED_LOAD, 0.0

    def step_access_engine(self) -> Tuple[AccessAction, float]:
        """Issue the access-queue head unless a response is waiting for an unlocked way."""
        while self._pending_inserts and self._try_insert(self._pending_inserts[0]):
            self._pending_inserts.popleft()
        if self._pending_inserts:
            if self._stalled_since is None:
                self._stalled_since = self.env.now
                self.stall_events += 1
                self._record("stall", self._pending_inserts[0].traversal.request_id)
            return AccessAction.STALLED_CACHE_FULL, 0.0
        if self._stalled_since is not None:
            self.stall_cycles += self.env.now - self._stalled_since
            self._stalled_since = None
            self._record("resume", None)
        if not self.access_queue:
            return AccessAction.IDLE, 0.0
        entry = self.access_queue.popleft()
        self._notify_address()
        self.env.process(self._serve(entry))
        return AccessAction.TRANSLATED_AND_ISSUED, self.config.access_issue_cycles

    def deliver_response(self, entry: ResponseEntry) -> None:
        """Insert a completed access into the IMPICA cache and the response queue."""
        traversal = entry.traversal
        if traversal.done:
            self.dropped_responses += 1
            self._record("drop", traversal.request_id)
            return
        if self._pending_inserts or not self._try_insert(entry):
            self._pending_inserts.append(entry)
            self._notify_access()

    def check_quiescent(self) -> None:
        """Raise if any lock, queue entry or context leaked past the end of a run."""
        if self.cache.locked_lines():
            raise InvariantViolation(
                "impica-lock-safety",
                f"{self.cache.locked_lines()} lines still locked",
                self.env.now,
            )
        if self.access_queue or self.response_queue or self._pending_inserts or self.active:
            raise InvariantViolation("impica-quiescent", "engine finished with work left")

    def report(self) -> TraversalReport:
        """Summarise the run."""
        finished = [t for t in self.traversals if t.finish_time is not None]
        return TraversalReport(
            completion_times={t.request_id: t.finish_time for t in finished},  # type: ignore
            results={t.request_id: list(t.results) for t in self.traversals},
            faults={t.request_id: t.fault for t in self.traversals if t.fault is not None},
            makespan=max((t.finish_time for t in finished), default=0.0),  # type: ignore
            address_busy_cycles=self.address_busy_cycles,
            stall_cycles=self.stall_cycles,
            stall_events=self.stall_events,
            producer_stalls=self.producer_stalls,
            dropped_responses=self.dropped_responses,
            queue_high_water=dict(self.high_water),
            cache_hits=self.cache.hits,
            cache_misses=self.cache.misses,
            memory_requests=self.memory_requests,
            walk_accesses=self.translator.walk_accesses,
            tlb_misses=self.translator.tlb.misses,
            steps=self.steps,
            trace=list(self.trace),
        )

    def write_trace(self, path: Path) -> None:
        """Write the per-access trace as JSON lines."""
        with open(path, "w", encoding="utf8") as file:
            for record in self.trace:
                file.write(json.dumps(record, sort_keys=True) + "\n")

    def _switch_context(self) -> Tuple[AddressAction, float]:
        if self.response_queue:
            entry = self.response_queue.popleft()
            for tag in entry.lines:
                self.cache.unlock(tag)
            self._record("consume", entry.traversal.request_id, index=entry.index)
            self._notify_access()
            traversal = entry.traversal
            assert traversal.context is not None
            traversal.context.registers = entry.words
            traversal.resume_value = entry.words
            self._current = traversal
            return AddressAction.CONTEXT_SWITCHED, self.config.context_switch_cycles
        if self.request_queue.items and len(self.active) < self.config.max_concurrency:
            traversal = self.request_queue.get().value
            self._begin(traversal)
            if traversal.done:
                return AddressAction.CONTEXT_SWITCHED, 0.0
            self._current = traversal
            return AddressAction.CONTEXT_SWITCHED, self.config.context_switch_cycles
        return AddressAction.IDLE, 0.0

    def _begin(self, traversal: Traversal) -> None:
        traversal.start_time = self.env.now
        assert self._free_slots, "Admission exceeded the data RAM context slots"
        slot = self._free_slots.pop(0)
        traversal.context = TraversalContext(
            traversal.request_id, slot * self.config.context_bytes
        )
        traversal.coroutine = traversal.program.start()
        self.active[traversal.request_id] = traversal
        self.high_water["contexts"] = max(self.high_water["contexts"], len(self.active))
        self._record("start", traversal.request_id)

    def _finish(self, traversal: Traversal) -> None:
        traversal.done = True
        traversal.finish_time = self.env.now
        self._release_context(traversal)
        evicted = self.cache.evict_request(traversal.request_id)
        self._record("complete", traversal.request_id, evicted=len(evicted))
        if self._current is traversal:
            self._current = None

    def _abort(self, traversal: Traversal, reason: str) -> None:
        _LOG.warning("Traversal %s aborted: %s", traversal.request_id, reason)
        traversal.fault = reason
        self._finish(traversal)
        self._notify_address()

    def _release_context(self, traversal: Traversal) -> None:
        if self.active.pop(traversal.request_id, None) is not None:
            assert traversal.context is not None
            self._free_slots.append(traversal.context.stack_pointer // self.config.context_bytes)
            self._free_slots.sort()

    def _serve(self, entry: AccessEntry) -> Generator[simpy.Event, Any, None]:
        traversal = entry.traversal
        try:
            translation = self.translator.translate(entry.va)
        except TranslationException as err:
            self._abort(traversal, f"translation fault: {err}")
            return
        issued = self.env.now
        requests = 0
        for walk_access in translation.walk:
            completion = self.memory.submit(
                AccessRequest(
                    self.walker, Address(walk_access.pa), AccessKind.READ, ENTRY_BYTES, self.env.now
                )
            )
            requests += 1
            yield self.env.timeout(completion.complete_time - self.env.now)
        lines = lines_spanned(translation.pa, entry.size)
        cache_hit = self.cache.contains_all(lines)
        if not cache_hit:
            completion = self.memory.submit(
                AccessRequest(
                    self.requester,
                    Address(translation.pa, entry.va),
                    AccessKind.READ,
                    entry.size,
                    self.env.now,
                )
            )
            requests += 1
            yield self.env.timeout(completion.complete_time - self.env.now)
        self.memory_requests += requests
        self._record(
            "access",
            traversal.request_id,
            index=entry.index,
            va=entry.va,
            pa=translation.pa,
            walk=len(translation.walk),
            tlb_hit=translation.tlb_hit,
            cache_hit=cache_hit,
            memory_requests=requests,
            latency=self.env.now - issued,
        )
        words = self.image.read_words(entry.va, -(-entry.size // 8))
        self.deliver_response(ResponseEntry(traversal, words, lines, entry.index))

    def _try_insert(self, entry: ResponseEntry) -> bool:
        if entry.traversal.done:
            self.dropped_responses += 1
            return True
        if len(self.response_queue) >= self.config.queue_entries:
            return False
        if not self.cache.can_insert(entry.lines):
            return False
        root = entry.index < self.config.root_window
        for tag in sorted(entry.lines, key=lambda tag: self.cache.find(tag) is None):
            self.cache.insert_locked(tag, entry.traversal.request_id, root)
        self.response_queue.append(entry)
        self.high_water["response"] = max(self.high_water["response"], len(self.response_queue))
        self._record("insert", entry.traversal.request_id, index=entry.index, lines=entry.lines)
        self._notify_address()
        return True

    def _address_engine(self) -> Generator[simpy.Event, Any, None]:
        while True:
            action, cycles = self.step_address_engine()
            self.checker.event(self.env.now)
            if action == AddressAction.IDLE:
                self._address_wake = self.env.event()
                yield self._address_wake
            elif cycles > 0:
                yield self.env.timeout(cycles)

    def _access_engine(self) -> Generator[simpy.Event, Any, None]:
        while True:
            action, cycles = self.step_access_engine()
            self.checker.event(self.env.now)
            if action == AccessAction.TRANSLATED_AND_ISSUED:
                if cycles > 0:
                    yield self.env.timeout(cycles)
            else:
                self._access_wake = self.env.event()
                yield self._access_wake

    def _notify_address(self) -> None:
        if not self._address_wake.triggered:
            self._address_wake.succeed()

    def _notify_access(self) -> None:
        if not self._access_wake.triggered:
            self._access_wake.succeed()

    def _check_queue_bounds(self) -> Optional[str]:
        for name, queue in (("access", self.access_queue), ("response", self.response_queue)):
            if len(queue) > self.config.queue_entries:
                return f"{name} queue holds {len(queue)} entries"
        return None

    def _record(self, event: str, request_id: Optional[int], **fields: Any) -> None:
        record = {"time": self.env.now, "event": event, "request_id": request_id}
        record.update(fields)
        self.trace.append(record)


def run_traversals(  # pylint: disable=too-many-arguments
    programs: Sequence[TraversalProgram],
    image: WordMemory,
    translator: PimTranslator,
    memory: MemorySystem,
    config: Optional[ImpicaConfig] = None,
    checker: Optional[InvariantChecker] = None,
    stack: int = 0,
) -> TraversalReport:
    """Offload a batch of traversals to one IMPICA engine and run them to completion."""
    config = config if config is not None else ImpicaConfig()
    env = simpy.Environment()
    engine = ImpicaEngine(env, config, memory, translator, image, stack, checker)
    engine.start()

    def producer() -> Generator[simpy.Event, Any, None]:
        for program in programs:
            yield env.process(engine.enqueue_traversal(program))

    env.process(producer())
    env.run()
    engine.check_quiescent()
    report = engine.report()
    _LOG.info(
        "%s traversals finished at cycle %s (utilisation %.3f)",
        len(programs),
        report.makespan,
        report.utilization,
    )
    return report
