"""Lazy coherence for PIM kernels: run speculatively, check signatures at the end, commit."""

import logging
from typing import Any, Dict, List, Optional, Set

import simpy

from pim_simulation.coherence.cache import CacheLineMeta
from pim_simulation.coherence.mechanisms.abstract_mechanism import CoherenceMechanism, Process
from pim_simulation.coherence.mesi import MesiState
from pim_simulation.coherence.system import CoherenceSystem, MechanismKind
from pim_simulation.lazypim.speculation import (
    AccessOrigin,
    Attempt,
    KernelRecord,
    Outcome,
    merge_commit_line,
)
from pim_simulation.memory.memory_system import TrafficCategory
from pim_simulation.pim_utils import LINE_BYTES, InvariantViolation, child_rng
from pim_simulation.workloads.coherence_workloads import KernelSpec, Op, apply_op

_LOG = logging.getLogger(__name__)

SIGNATURE_STREAM = 21


class LazyPimMechanism(CoherenceMechanism):  # pylint: disable=too-many-instance-attributes
    """Speculative PIM kernels with batched conflict detection.

    A kernel runs without any coherence traffic, recording its reads and writes in signatures
    and keeping its writes in its L1 as speculative lines. At the end the signatures travel to
    the processor; the kernel commits if none of the CPU's dirty or written PIM data lines
    tests positive in its read set and rolls back otherwise. After rollback_limit rollbacks the
    kernel takes a global lock and locks every line it touches, which guarantees the commit.
    """

    kind = MechanismKind.LAZYPIM

    def __init__(self, system: CoherenceSystem):
        """Attach to a system with no kernel active."""
        super().__init__(system)
        self.config = system.config
        self.records: List[KernelRecord] = []
        self.active: Dict[int, Attempt] = {}
        self.lock_mutex = simpy.Resource(self.env, capacity=1)
        self.lock_holder: Optional[int] = None
        self.locked_lines: Set[int] = set()
        self._released = self.env.event()
        self.commit_lock_until = 0.0
        self.commits = 0
        self.rollbacks = 0
        self.locked_commits = 0
        self.pim_conflicts = 0
        self.overflows = 0
        self.flushes = 0
        self.commit_invalidations = 0
        system.checker.register("lazypim-isolation", self._check_isolation)

    # CPU side

    def cpu_access(self, thread: int, op: Op, index: int) -> Process:
        """Stall on PIM data while a commit holds the directory or a locked kernel owns the line."""
        if self.system.is_pim(op.line):
            while self.env.now < self.commit_lock_until or op.line in self.locked_lines:
                if self.env.now < self.commit_lock_until:
                    event = self.env.timeout(self.commit_lock_until - self.env.now)
                else:
                    event = self._released
                yield from self.wait_blocked(event)
        return self.cpu_op(thread, op, index)

    def after_host_write(self, line: int) -> None:
        """Record CPU writes to PIM data in every speculating kernel."""
        if not self.active or not self.system.is_pim(line):
            return
        for attempt in self.active.values():
            if not attempt.locked:
                attempt.record_access(AccessOrigin.CPU_WRITE, line)

    # Kernel side

    def run_kernel(self, kernel: KernelSpec) -> Process:
        """Attempt the kernel until it commits."""
        record = KernelRecord(kernel)
        self.records.append(record)
        yield from self.launch(kernel)
        lock_request = None
        while record.outcome is None:
            locked = record.rollbacks >= self.config.rollback_limit
            if locked and lock_request is None:
                _LOG.warning(
                    "Kernel %s falls back to locked execution after %s rollbacks",
                    kernel.kernel_id,
                    record.rollbacks,
                )
                lock_request = self.lock_mutex.request()
                yield lock_request
                self.lock_holder = kernel.kernel_id
            attempt = self.start_kernel(kernel, record, locked)
            yield from self._execute(attempt)
            yield from self.finish_kernel(attempt)
        if lock_request is not None:
            self._release_lock()
            self.lock_mutex.release(lock_request)

    def start_kernel(self, kernel: KernelSpec, record: KernelRecord, locked: bool) -> Attempt:
        """Open an attempt, seeding its CPU write set from the dirty PIM data in the CPU caches."""
        system = self.system
        config = self.config
        rng = child_rng(system.seed, SIGNATURE_STREAM, kernel.kernel_id, len(record.attempts))
        attempt = Attempt(
            record,
            locked,
            self.env.now,
            rng,
            config.signature_bits,
            config.signature_hashes,
            config.signature_capacity,
            config.exact_signatures,
        )
        for line in system.host.dirty_lines(system.is_pim):
            attempt.record_access(AccessOrigin.CPU_WRITE, line)
        assert not len(system.pim_l1s[kernel.pim_core]), "PIM L1 not empty at kernel start"
        self.active[kernel.kernel_id] = attempt
        _LOG.debug("Kernel %s attempt %s started", kernel.kernel_id, attempt.info.number)
        return attempt

    def finish_kernel(self, attempt: Attempt) -> Process:
        """Ship the signatures, check for conflicts and commit or roll back."""
        system = self.system
        info = attempt.info
        kernel_id = attempt.kernel.kernel_id
        info.read_links = attempt.read_set.chain_length
        info.write_links = attempt.write_set.chain_length
        info.signature_bytes = attempt.read_set.transfer_bytes + attempt.write_set.transfer_bytes
        arrival = system.memory.send_payload(
            TrafficCategory.SIGNATURE, self.env.now, info.signature_bytes
        )
        yield self.env.timeout(arrival - self.env.now)
        while self.lock_holder not in (None, kernel_id):
            yield self._released
        if attempt.locked:
            latency = self._commit(attempt, Outcome.LOCKED_COMMIT)
        else:
            detected = attempt.read_set.match(sorted(attempt.exact_cpu_writes))
            exact = attempt.exact_cpu_writes & attempt.exact_reads
            assert exact <= set(detected), f"Signature missed conflicts {exact - set(detected)}"
            info.detected = bool(detected)
            info.exact_conflict = bool(exact)
            info.false_positive = info.detected and not exact
            info.conflict_lines = detected
            if info.false_positive:
                _LOG.warning(
                    "Kernel %s rolls back on %s false-positive lines", kernel_id, len(detected)
                )
            if info.detected or info.pim_conflict or info.overflow:
                latency = self._rollback(attempt)
            else:
                latency = self._commit(attempt, Outcome.COMMITTED)
        info.end_time = self.env.now
        yield self.env.timeout(latency)

    def _execute(self, attempt: Attempt) -> Process:
        system = self.system
        for op in attempt.kernel.ops:
            if attempt.info.overflow:
                return
            latency = 0.0
            if attempt.locked:
                latency += self._lock_line(attempt, op.line)
            latency += self._pim_access(attempt, op)
            system.pim_ops += 1
            system.checker.event(self.env.now)
            yield self.env.timeout(latency)

    def _pim_access(self, attempt: Attempt, op: Op) -> float:
        system = self.system
        core = attempt.kernel.pim_core
        l1 = system.pim_l1s[core]
        line = op.line
        latency = system.timing.pim_l1_latency
        meta = l1.lookup(line)
        if meta is None:
            latency += system.request(system.pim_requester(core), line)
            meta = CacheLineMeta(MesiState.SHARED, list(system.dram_line(line)))
            victim = l1.insert(line, meta)
            if victim is not None:
                self._spill(attempt, *victim)
        if op.kind.reads:
            attempt.record_access(AccessOrigin.PIM_READ, line)
        attempt.acc, value = apply_op(op, attempt.acc, meta.data[op.word])
        if value is not None:
            meta.data[op.word] = value
            meta.dirty = True
            meta.speculative = True
            meta.dirty_mask |= 1 << op.word
            attempt.record_access(AccessOrigin.PIM_WRITE, line)
        return latency

    def _spill(self, attempt: Attempt, line: int, meta: CacheLineMeta) -> None:
        """Handle a line evicted from the kernel's L1."""
        if not meta.speculative:
            return
        if not attempt.locked:
            attempt.info.overflow = True
            self.overflows += 1
            _LOG.debug("Kernel %s overflowed its L1 at line %s", attempt.kernel.kernel_id, line)
            return
        self._merge(attempt.kernel.pim_core, line, meta)

    def _lock_line(self, attempt: Attempt, line: int) -> float:
        """Lock a line for the locked re-execution, writing back a dirty host copy first.

        Clean host copies stay cached: the CPU cannot touch the line until the lock is released
        and the commit invalidates whatever the kernel wrote.
        """
        if line in self.locked_lines:
            return 0.0
        latency = 0.0
        if line in self.system.host.l2:
            latency = self._flush(attempt, line, invalidate=False)
        self.locked_lines.add(line)
        return latency

    def _flush(self, attempt: Attempt, line: int, invalidate: bool) -> float:
        if self.system.host.is_dirty(line):
            attempt.info.flush_bytes += LINE_BYTES + self.system.timing.request_header_bytes
            self.flushes += 1
        return self.flush_host_line(line, invalidate)

    def _merge(self, core: int, line: int, meta: CacheLineMeta) -> float:
        system = self.system
        system.dram[line] = merge_commit_line(system.dram_line(line), meta.data, meta.dirty_mask)
        return system.request(system.pim_requester(core), line, write=True)

    def _commit(self, attempt: Attempt, outcome: Outcome) -> float:
        """Make the attempt's writes visible at this instant; returns the commit latency."""
        system = self.system
        info = attempt.info
        kernel = attempt.kernel
        latency = 0.0
        for line in attempt.write_set.match(system.host.cached_lines(system.is_pim)):
            latency = max(latency, self._flush(attempt, line, invalidate=True))
            system.memory.send_message(TrafficCategory.COHERENCE, self.env.now)
            info.invalidation_bytes += system.timing.request_header_bytes
            self.commit_invalidations += 1
        for line, meta in system.pim_l1s[kernel.pim_core].clear():
            if meta.speculative:
                latency = max(latency, self._merge(kernel.pim_core, line, meta))
        written = attempt.exact_writes
        for other in self.active.values():
            if other is attempt:
                continue
            if other.touched & written and not other.info.pim_conflict:
                other.info.pim_conflict = True
                self.pim_conflicts += 1
            other_l1 = system.pim_l1s[other.kernel.pim_core]
            for line in written:
                copy = other_l1.peek(line)
                if copy is not None and not copy.speculative:
                    other_l1.remove(line)
        system.log.append(("commit", kernel.kernel_id, info.number))
        info.outcome = outcome
        attempt.record.set_outcome(outcome)
        del self.active[kernel.kernel_id]
        if outcome == Outcome.LOCKED_COMMIT:
            self.locked_commits += 1
        else:
            self.commits += 1
        latency += self.config.commit_lock_cycles
        self.commit_lock_until = max(self.commit_lock_until, self.env.now + latency)
        _LOG.debug("Kernel %s %s on attempt %s", kernel.kernel_id, outcome.value, info.number)
        return latency

    def _rollback(self, attempt: Attempt) -> float:
        """Discard the attempt, flushing the CPU dirty lines it read."""
        system = self.system
        kernel = attempt.kernel
        latency = 0.0
        for line in attempt.read_set.match(system.host.dirty_lines(system.is_pim)):
            latency = max(latency, self._flush(attempt, line, invalidate=False))
        system.pim_l1s[kernel.pim_core].clear()
        attempt.info.outcome = Outcome.ROLLED_BACK
        del self.active[kernel.kernel_id]
        self.rollbacks += 1
        _LOG.debug("Kernel %s rolled back after attempt %s", kernel.kernel_id, attempt.info.number)
        return latency

    def _release_lock(self) -> None:
        self.lock_holder = None
        self.locked_lines.clear()
        released, self._released = self._released, self.env.event()
        released.succeed()

    def _check_isolation(self) -> Optional[str]:
        busy = {attempt.kernel.pim_core for attempt in self.active.values()}
        for core, l1 in enumerate(self.system.pim_l1s):
            if core in busy:
                continue
            for line, meta in l1.items():
                if meta.speculative:
                    return f"speculative line {line} in pim{core} L1 with no kernel running"
        return None

    # Reporting

    def finish(self) -> None:
        """Every kernel must have committed."""
        for record in self.records:
            if record.outcome is None:
                raise InvariantViolation(
                    "lazypim-progress",
                    f"kernel {record.kernel.kernel_id} never committed",
                    self.env.now,
                )

    def metrics(self) -> Dict[str, float]:
        """Commit, rollback and conflict counts."""
        metrics = super().metrics()
        checked = [a for record in self.records for a in record.attempts if not a.locked]
        metrics.update(
            {
                "commits": float(self.commits),
                "rollbacks": float(self.rollbacks),
                "locked_commits": float(self.locked_commits),
                "conflict_rate": sum(a.detected for a in checked) / max(len(checked), 1),
                "false_positive_conflicts": float(sum(a.false_positive for a in checked)),
                "pim_conflicts": float(self.pim_conflicts),
                "overflows": float(self.overflows),
                "flushes": float(self.flushes),
                "commit_invalidations": float(self.commit_invalidations),
            }
        )
        return metrics

    def kernel_log(self) -> List[Dict[str, Any]]:
        """One summary per kernel, in launch order."""
        return [record.to_dict() for record in self.records if record.outcome is not None]
