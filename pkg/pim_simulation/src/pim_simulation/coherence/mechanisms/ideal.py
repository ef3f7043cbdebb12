"""Upper bound: fine-grained coherence whose messages cost nothing."""

from pim_simulation.coherence.mechanisms.fine_grained import FineGrainedMechanism
from pim_simulation.coherence.mesi import AccessEvent
from pim_simulation.coherence.system import MechanismKind


class IdealMechanism(FineGrainedMechanism):
    """Same protocol and data movement as fine-grained, with zero coherence traffic and latency."""

    kind = MechanismKind.IDEAL

    def pim_transaction_cost(self, core: int, event: AccessEvent) -> float:
        """Free."""
        return 0.0

    def forward_cost(self, requester: int, target: int) -> float:
        """Free."""
        return 0.0

    def host_writeback_cost(self, line: int) -> float:
        """Free; the data appears in DRAM without crossing the link."""
        return 0.0
