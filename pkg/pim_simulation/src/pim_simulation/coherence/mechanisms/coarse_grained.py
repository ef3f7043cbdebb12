"""Coarse-grained coherence: one lock over all PIM data while kernels run."""

import logging
from collections import deque
from typing import Deque, Dict, Set

import simpy

from pim_simulation.coherence.mechanisms.abstract_mechanism import CoherenceMechanism, Process
from pim_simulation.coherence.system import CoherenceSystem, MechanismKind
from pim_simulation.workloads.coherence_workloads import KernelSpec, Op

_LOG = logging.getLogger(__name__)


class CoarseLockRefused(Exception):
    """A kernel asked for the coarse lock it already holds."""


class CoarseGrainedMechanism(CoherenceMechanism):
    """The first kernel to start flushes and invalidates every host copy of PIM data.

    While any kernel holds the lock, CPU accesses to PIM data wait; they resume in arrival
    order once the last holder releases it.
    """

    kind = MechanismKind.CG

    def __init__(self, system: CoherenceSystem):
        """Attach to a system with the lock free."""
        super().__init__(system)
        self.holders: Set[int] = set()
        self.waiting: Deque[simpy.Event] = deque()
        self.acquisitions = 0
        self.lines_flushed = 0
        self.lines_needed = 0
        self._epoch_flushed: Set[int] = set()
        self._epoch_touched: Set[int] = set()

    def cg_acquire(self, kernel_id: int) -> float:
        """Join the lock, flushing the host if it was free.

        Returns:
            float: latency of the flush

        Raises:
            CoarseLockRefused: if the kernel already holds the lock
        """
        if kernel_id in self.holders:
            raise CoarseLockRefused(f"Kernel {kernel_id} already holds the coarse lock")
        system = self.system
        latency = 0.0
        if not self.holders:
            self.acquisitions += 1
            for line in system.host.cached_lines(system.is_pim):
                if system.host.is_dirty(line):
                    self._epoch_flushed.add(line)
                latency = max(latency, self.flush_host_line(line, invalidate=True))
            _LOG.debug(
                "Coarse lock taken by kernel %s, %s lines flushed",
                kernel_id,
                len(self._epoch_flushed),
            )
        self.holders.add(kernel_id)
        return latency

    def cg_release(self, kernel_id: int) -> None:
        """Leave the lock; the last holder wakes the blocked CPU accesses."""
        self.holders.remove(kernel_id)
        if self.holders:
            return
        self.lines_flushed += len(self._epoch_flushed)
        self.lines_needed += len(self._epoch_flushed & self._epoch_touched)
        self._epoch_flushed = set()
        self._epoch_touched = set()
        while self.waiting:
            self.waiting.popleft().succeed()

    def cpu_access(self, thread: int, op: Op, index: int) -> Process:
        """Wait while the lock is held if the line is PIM data."""
        system = self.system
        while self.holders and system.is_pim(op.line):
            event = self.env.event()
            self.waiting.append(event)
            yield from self.wait_blocked(event)
        return self.cpu_op(thread, op, index)

    def run_kernel(self, kernel: KernelSpec) -> Process:
        """Take the lock, run, write back the PIM L1 and release."""
        yield from self.launch(kernel)
        flush = self.cg_acquire(kernel.kernel_id)
        yield self.env.timeout(flush)
        self._epoch_touched.update(op.line for op in kernel.ops)
        yield from self.run_pim_ops(kernel)
        yield self.env.timeout(self.flush_pim_l1(kernel.pim_core))
        self.cg_release(kernel.kernel_id)

    def metrics(self) -> Dict[str, float]:
        """Add lock acquisitions and how many flushed lines the kernels never touched."""
        metrics = super().metrics()
        metrics["coarse_acquisitions"] = float(self.acquisitions)
        metrics["coarse_lines_flushed"] = float(self.lines_flushed)
        metrics["coarse_overflush_factor"] = self.lines_flushed / max(self.lines_needed, 1)
        return metrics
