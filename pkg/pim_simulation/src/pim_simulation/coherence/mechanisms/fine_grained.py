"""Fine-grained coherence: PIM cores take part in the processor's directory protocol."""

from pim_simulation.coherence.mechanisms.abstract_mechanism import CoherenceMechanism, Process
from pim_simulation.coherence.mesi import AccessEvent
from pim_simulation.coherence.system import HOST_AGENT, MechanismKind
from pim_simulation.memory.memory_system import TrafficCategory
from pim_simulation.workloads.coherence_workloads import KernelSpec


class FineGrainedMechanism(CoherenceMechanism):
    """Every PIM miss or upgrade looks up the directory across the off-chip link.

    The lookup and its grant are each one off-chip message. Downgrades and invalidations of PIM
    copies requested on behalf of the host also cross the link. Host data written back for a
    PIM core is charged as writeback traffic.
    """

    kind = MechanismKind.FG
    tracks_host = True

    def run_kernel(self, kernel: KernelSpec) -> Process:
        """Launch the kernel and run it with per-access coherence."""
        yield from self.launch(kernel)
        yield from self.run_pim_ops(kernel)

    def pim_transaction_cost(self, core: int, event: AccessEvent) -> float:
        """Lookup and grant round trip; an eviction notice is one way."""
        memory = self.system.memory
        now = self.env.now
        lookup = memory.send_message(TrafficCategory.COHERENCE, now)
        if event == AccessEvent.EVICT:
            return 0.0
        grant = memory.send_message(TrafficCategory.COHERENCE, lookup)
        return grant - now

    def forward_cost(self, requester: int, target: int) -> float:
        """Messages to PIM cores cross the link; the host is local to the directory."""
        if target == HOST_AGENT:
            return 0.0
        now = self.env.now
        return self.system.memory.send_message(TrafficCategory.COHERENCE, now) - now
