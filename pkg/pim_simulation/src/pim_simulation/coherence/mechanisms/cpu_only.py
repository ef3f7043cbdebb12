"""Baseline without PIM: kernels run on extra CPU cores through the host caches."""

from pim_simulation.coherence.mechanisms.abstract_mechanism import CoherenceMechanism, Process
from pim_simulation.coherence.system import MechanismKind
from pim_simulation.workloads.coherence_workloads import KernelSpec


class CpuOnlyMechanism(CoherenceMechanism):
    """Every agent is a CPU core; coherence is the processor's own."""

    kind = MechanismKind.CPU_ONLY
    offloads_to_host = True

    def run_kernel(self, kernel: KernelSpec) -> Process:
        """Run the kernel on the CPU core after the application threads."""
        system = self.system
        core = system.workload.cpu_threads + kernel.pim_core
        acc = 0
        for index, op in enumerate(kernel.ops):
            acc, latency = self.host_access(core, op, acc)
            system.log.append(("pim", kernel.kernel_id, index))
            system.pim_ops += 1
            system.checker.event(self.env.now)
            yield self.env.timeout(latency)
