"""Base class for the ways CPU caches and PIM cores can keep shared data coherent."""

import logging
from abc import abstractmethod
from typing import TYPE_CHECKING, Any, Dict, Generator, List, Tuple

import simpy

from pim_simulation.coherence.cache import CacheLineMeta
from pim_simulation.coherence.hierarchy import HostLevel
from pim_simulation.coherence.mesi import AccessEvent, MesiState, Message, MessageKind
from pim_simulation.coherence.system import HOST_AGENT, MechanismKind
from pim_simulation.memory.memory_system import TrafficCategory
from pim_simulation.workloads.coherence_workloads import KernelSpec, Op, apply_op

if TYPE_CHECKING:
    from pim_simulation.coherence.system import CoherenceSystem

_LOG = logging.getLogger(__name__)

KERNEL_PACKET_BYTES = 16

Process = Generator[simpy.Event, Any, Any]


class CoherenceMechanism:
    """Abstract coherence mechanism.

    Subclasses decide how a CPU access to PIM data and a PIM kernel run. The base class holds
    the shared pieces: a host access through the CPU caches, a PIM access kept coherent by the
    memory-side directory and the delivery of the messages that directory sends.
    """

    kind: MechanismKind
    # Kernels run on extra CPU cores instead of PIM cores.
    offloads_to_host: bool = False
    # The host takes part in the memory-side directory for PIM data.
    tracks_host: bool = False

    def __init__(self, system: "CoherenceSystem"):
        """Attach to a system."""
        self.system = system
        self.env = system.env
        self.blocked_cycles = 0.0
        self.blocked_accesses = 0

    @abstractmethod
    def run_kernel(self, kernel: KernelSpec) -> Process:
        """Execute one kernel to completion (simpy process body)."""

    def cpu_access(self, thread: int, op: Op, index: int) -> Process:
        """Perform one CPU operation and return its latency; may wait first."""
        yield from ()
        return self.cpu_op(thread, op, index)

    def finish(self) -> None:
        """Hook run once the event queue is empty."""

    def metrics(self) -> Dict[str, float]:
        """Mechanism-specific metrics."""
        return {
            "blocked_cycles": self.blocked_cycles,
            "blocked_accesses": float(self.blocked_accesses),
            "directory_transitions": float(self.system.directory.transitions),
        }

    def kernel_log(self) -> List[Dict[str, Any]]:
        """Per-kernel records, if the mechanism keeps any."""
        return []

    def cpu_op(self, thread: int, op: Op, index: int) -> float:
        """Run a CPU operation through the host caches and log it."""
        system = self.system
        system.cpu_acc[thread], latency = self.host_access(thread, op, system.cpu_acc[thread])
        system.log.append(("cpu", thread, index))
        return latency

    def launch(self, kernel: KernelSpec) -> Process:
        """Ship a kernel's launch packet to the memory stack."""
        arrival = self.system.memory.send_message(
            TrafficCategory.PACKET, self.env.now, KERNEL_PACKET_BYTES
        )
        _LOG.debug("Kernel %s launched on PIM core %s", kernel.kernel_id, kernel.pim_core)
        yield self.env.timeout(arrival - self.env.now)

    def run_pim_ops(self, kernel: KernelSpec) -> Process:
        """Run a kernel's operations through its PIM core's coherent L1, logging each one."""
        system = self.system
        acc = 0
        for index, op in enumerate(kernel.ops):
            acc, latency = self.pim_coherent_access(kernel.pim_core, op, acc)
            system.log.append(("pim", kernel.kernel_id, index))
            system.pim_ops += 1
            system.checker.event(self.env.now)
            yield self.env.timeout(latency)

    def wait_blocked(self, event: simpy.Event) -> Process:
        """Wait for an event, counting the time as blocked."""
        start = self.env.now
        self.blocked_accesses += 1
        yield event
        waited = self.env.now - start
        self.blocked_cycles += waited
        if waited > self.system.config.blocked_warning_cycles:
            _LOG.warning("%s: CPU access blocked for %s cycles", self.kind.value, waited)

    # Host side

    def host_access(self, core: int, op: Op, acc: int) -> Tuple[int, float]:
        """Apply an operation through a core's caches.

        Returns:
            Tuple[int, float]: the new accumulator and the access latency
        """
        host = self.system.host
        line = op.line
        latency = 0.0
        filled = host.level_of(core, line) == HostLevel.MEMORY
        if filled:
            data, fill_latency = self.host_fill(core, line, op.kind.writes)
            latency += fill_latency
            victim = host.install(line, data)
            if victim is not None:
                self.host_evicted(*victim)
        elif op.kind.writes:
            latency += self.host_upgrade(line)
        latency += host.core_access(core, line, op.kind.writes, after_fill=filled)
        acc, value = apply_op(op, acc, host.read_word(line, op.word))
        if value is not None:
            host.write_word(line, op.word, value)
            self.after_host_write(line)
        return acc, latency

    def host_fill(self, core: int, line: int, write: bool) -> Tuple[List[int], float]:
        """Fetch a line for the host from DRAM."""
        system = self.system
        latency = 0.0
        if self.tracks_host and system.is_pim(line):
            event = AccessEvent.WRITE if write else AccessEvent.READ
            messages = system.directory.access(HOST_AGENT, line, event)
            latency += self.resolve(line, messages, HOST_AGENT)
        latency += system.request(system.cpu_requester(core), line)
        return list(system.dram_line(line)), latency

    def host_upgrade(self, line: int) -> float:
        """Obtain write permission for a line the host already caches."""
        system = self.system
        if not (self.tracks_host and system.is_pim(line)):
            return 0.0
        if system.directory.holder_state(line, HOST_AGENT) == MesiState.MODIFIED:
            return 0.0
        messages = system.directory.access(HOST_AGENT, line, AccessEvent.WRITE)
        return self.resolve(line, messages, HOST_AGENT)

    def host_evicted(self, line: int, meta: CacheLineMeta) -> None:
        """Write back a line dropped from the L2."""
        system = self.system
        if self.tracks_host and system.is_pim(line):
            system.directory.access(HOST_AGENT, line, AccessEvent.EVICT)
        if meta.dirty:
            system.dram[line] = list(meta.data)
            system.request(
                system.cpu_requester(0), line, write=True, category=TrafficCategory.WRITEBACK
            )

    def after_host_write(self, line: int) -> None:
        """Hook called after the host modified a line."""

    def flush_host_line(self, line: int, invalidate: bool) -> float:
        """Write a dirty host line to DRAM as a flush, optionally dropping the host copy."""
        system = self.system
        latency = 0.0
        if system.host.is_dirty(line):
            system.dram[line] = list(system.host.data_of(line) or [])
            system.host.mark_clean(line)
            latency = system.request(
                system.cpu_requester(0), line, write=True, category=TrafficCategory.FLUSH
            )
        if invalidate:
            system.host.invalidate(line)
        return latency

    # Memory side

    def pim_transaction_cost(self, core: int, event: AccessEvent) -> float:
        """Latency a PIM core pays to reach the directory."""
        return 0.0

    def forward_cost(self, requester: int, target: int) -> float:
        """Latency of a downgrade or invalidation sent to another agent."""
        return 0.0

    def host_writeback_cost(self, line: int) -> float:
        """Latency of the host writing a line back because the directory asked it to."""
        system = self.system
        return system.request(
            system.cpu_requester(0), line, write=True, category=TrafficCategory.WRITEBACK
        )

    def resolve(self, line: int, messages: List[Message], requester: int) -> float:
        """Deliver the writebacks, downgrades and invalidations of one directory transition.

        Writebacks are applied first so no data is lost when the same agent is invalidated.
        Fills are left to the requester.
        """
        system = self.system
        latency = 0.0
        for message in messages:
            if message.kind == MessageKind.WRITEBACK:
                latency = max(latency, self._write_back_holder(message.agent, line))
        for message in messages:
            if message.kind not in (MessageKind.DOWNGRADE, MessageKind.INVALIDATE):
                continue
            latency = max(latency, self.forward_cost(requester, message.agent))
            if message.agent == HOST_AGENT:
                if message.kind == MessageKind.INVALIDATE:
                    system.host.invalidate(line)
            elif message.kind == MessageKind.INVALIDATE:
                system.pim_l1s[message.agent - 1].remove(line)
        self._sync_pim_states(line)
        return latency

    def pim_coherent_access(self, core: int, op: Op, acc: int) -> Tuple[int, float]:
        """Apply an operation through a PIM core's L1, kept coherent by the directory.

        Returns:
            Tuple[int, float]: the new accumulator and the access latency
        """
        system = self.system
        directory = system.directory
        agent = core + 1
        l1 = system.pim_l1s[core]
        line = op.line
        latency = system.timing.pim_l1_latency
        meta = l1.lookup(line)
        state = directory.holder_state(line, agent)
        if meta is not None and op.kind.writes and state == MesiState.EXCLUSIVE:
            directory.access(agent, line, AccessEvent.WRITE)
        elif meta is None or (op.kind.writes and state != MesiState.MODIFIED):
            event = AccessEvent.WRITE if op.kind.writes else AccessEvent.READ
            latency += self.pim_transaction_cost(core, event)
            messages = directory.access(agent, line, event)
            latency += self.resolve(line, messages, agent)
            if meta is None:
                latency += system.request(system.pim_requester(core), line)
                meta = CacheLineMeta(state, list(system.dram_line(line)))
                victim = l1.insert(line, meta)
                if victim is not None:
                    self.pim_evicted(core, *victim)
        meta.state = directory.holder_state(line, agent)
        acc, value = apply_op(op, acc, meta.data[op.word])
        if value is not None:
            meta.data[op.word] = value
            meta.dirty = True
        return acc, latency

    def pim_evicted(self, core: int, line: int, meta: CacheLineMeta) -> float:
        """Release a line dropped from a PIM L1, writing it back if modified."""
        system = self.system
        messages = system.directory.access(core + 1, line, AccessEvent.EVICT)
        self.pim_transaction_cost(core, AccessEvent.EVICT)
        if any(message.kind == MessageKind.WRITEBACK for message in messages):
            system.dram[line] = list(meta.data)
            return system.request(system.pim_requester(core), line, write=True)
        return 0.0

    def flush_pim_l1(self, core: int) -> float:
        """Write back and drop every line of a PIM core's L1."""
        latency = 0.0
        for line, meta in self.system.pim_l1s[core].clear():
            latency = max(latency, self.pim_evicted(core, line, meta))
        return latency

    def _write_back_holder(self, agent: int, line: int) -> float:
        system = self.system
        if agent == HOST_AGENT:
            data = system.host.data_of(line)
            assert data is not None, f"Host asked to write back line {line} it does not hold"
            system.dram[line] = list(data)
            system.host.mark_clean(line)
            return self.host_writeback_cost(line)
        core = agent - 1
        meta = system.pim_l1s[core].peek(line)
        assert meta is not None, f"PIM core {core} asked to write back line {line} it lacks"
        system.dram[line] = list(meta.data)
        meta.dirty = False
        return system.request(system.pim_requester(core), line, write=True)

    def _sync_pim_states(self, line: int) -> None:
        system = self.system
        for core, l1 in enumerate(system.pim_l1s):
            meta = l1.peek(line)
            if meta is None:
                continue
            state = system.directory.holder_state(line, core + 1)
            if state.valid:
                meta.state = state
            else:
                l1.remove(line)
