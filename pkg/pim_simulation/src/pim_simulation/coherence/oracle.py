"""Replay of an execution log on a flat memory, the reference for final memory contents."""

from typing import Dict, List, Sequence

from pim_simulation.coherence.system import LogEntry
from pim_simulation.pim_utils import WORDS_PER_LINE
from pim_simulation.workloads.coherence_workloads import CoherenceWorkload, Op, apply_op


class SerializationMismatch(Exception):
    """Final memory differs from the serial replay of the execution log."""


def _apply(memory: Dict[int, List[int]], op: Op, acc: int) -> int:
    words = memory.setdefault(op.line, [0] * WORDS_PER_LINE)
    acc, value = apply_op(op, acc, words[op.word])
    if value is not None:
        words[op.word] = value
    return acc


def serialization_oracle(
    workload: CoherenceWorkload, log: Sequence[LogEntry]
) -> Dict[int, List[int]]:
    """Memory contents after executing the log one entry at a time.

    Entries are ("cpu", thread, op index), ("pim", kernel id, op index) or
    ("commit", kernel id, attempt); a commit executes its whole kernel atomically.
    """
    memory = {line: list(words) for line, words in workload.initial.items()}
    cpu_acc = [0] * workload.cpu_threads
    kernel_acc: Dict[int, int] = {}
    kernels = {kernel.kernel_id: kernel for kernel in workload.kernels}
    for kind, agent, index in log:
        if kind == "cpu":
            cpu_acc[agent] = _apply(memory, workload.cpu_streams[agent][index], cpu_acc[agent])
        elif kind == "pim":
            op = kernels[agent].ops[index]
            kernel_acc[agent] = _apply(memory, op, kernel_acc.get(agent, 0))
        elif kind == "commit":
            acc = 0
            for op in kernels[agent].ops:
                acc = _apply(memory, op, acc)
        else:
            raise ValueError(f"Unknown log entry kind '{kind}'")
    for line in range(workload.total_lines):
        memory.setdefault(line, [0] * WORDS_PER_LINE)
    return memory


def check_serializable(
    workload: CoherenceWorkload, log: Sequence[LogEntry], final_memory: Dict[int, List[int]]
) -> None:
    """Compare simulated final memory with the replay.

    Raises:
        SerializationMismatch: naming the first differing line
    """
    expected = serialization_oracle(workload, log)
    zero = [0] * WORDS_PER_LINE
    for line in sorted(set(expected) | set(final_memory)):
        want = expected.get(line, zero)
        got = final_memory.get(line, zero)
        if want != got:
            raise SerializationMismatch(f"Line {line}: simulated {got}, serial replay {want}")
