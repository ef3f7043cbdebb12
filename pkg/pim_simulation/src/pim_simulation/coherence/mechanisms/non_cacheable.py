"""Non-cacheable PIM data: the CPU reads and writes PIM data straight from DRAM."""

from typing import Dict

from pim_simulation.coherence.mechanisms.abstract_mechanism import CoherenceMechanism, Process
from pim_simulation.coherence.mesi import AccessEvent
from pim_simulation.coherence.system import HOST_AGENT, CoherenceSystem, MechanismKind
from pim_simulation.workloads.coherence_workloads import KernelSpec, Op, apply_op


class NonCacheableMechanism(CoherenceMechanism):
    """CPU accesses to PIM data bypass the host caches.

    The PIM cores keep their L1s coherent through the memory-side directory, which also
    recalls modified PIM copies before a CPU access reaches DRAM.
    """

    kind = MechanismKind.NC

    def __init__(self, system: CoherenceSystem):
        """Attach to a system."""
        super().__init__(system)
        self.uncached_accesses = 0

    def run_kernel(self, kernel: KernelSpec) -> Process:
        """Launch the kernel and run it on its PIM core."""
        yield from self.launch(kernel)
        yield from self.run_pim_ops(kernel)

    def cpu_access(self, thread: int, op: Op, index: int) -> Process:
        """Send PIM data accesses to DRAM; everything else goes through the caches."""
        yield from ()
        system = self.system
        if not system.is_pim(op.line):
            return self.cpu_op(thread, op, index)
        line = op.line
        directory = system.directory
        event = AccessEvent.WRITE if op.kind.writes else AccessEvent.READ
        latency = self.resolve(line, directory.access(HOST_AGENT, line, event), HOST_AGENT)
        words = system.dram_line(line)
        system.cpu_acc[thread], value = apply_op(op, system.cpu_acc[thread], words[op.word])
        if value is not None:
            words[op.word] = value
        directory.access(HOST_AGENT, line, AccessEvent.EVICT)
        latency += system.request(system.cpu_requester(thread), line, write=op.kind.writes)
        self.uncached_accesses += 1
        system.log.append(("cpu", thread, index))
        return latency

    def metrics(self) -> Dict[str, float]:
        """Add the number of uncached CPU accesses."""
        metrics = super().metrics()
        metrics["uncached_accesses"] = float(self.uncached_accesses)
        return metrics
