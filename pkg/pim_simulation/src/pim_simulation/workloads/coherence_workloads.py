"""Operation streams for the coherence experiments."""

import hashlib
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from pim_simulation.pim_utils import LINE_BYTES, WORDS_PER_LINE, add64, child_rng
from pim_simulation.read_csv import read_edge_list

_LOG = logging.getLogger(__name__)

# Share of all PIM-data accesses made by the CPU threads in the shared graph workload.
CPU_SHARE_OF_PIM_ACCESSES = 0.426

# Sub-streams of the run seed.
GRAPH_STREAM = 11
CPU_STREAM = 12
KERNEL_STREAM = 13
TIMING_STREAM = 14

# PIM data is marked per 4 KB page, so private CPU lines start on a page of their own.
PAGE_LINES = 4096 // LINE_BYTES


class OpKind(Enum):
    """Memory operations of an agent."""

    LOAD = "load"
    STORE = "store"
    RMW = "rmw"

    @property
    def reads(self) -> bool:
        """Whether the operation observes the current value."""
        return self != OpKind.STORE

    @property
    def writes(self) -> bool:
        """Whether the operation produces a new value."""
        return self != OpKind.LOAD


@dataclass(frozen=True)
class Op:
    """One word access, issued think cycles after the previous operation of the same agent."""

    kind: OpKind
    line: int
    word: int
    operand: int = 0
    think: float = 0.0


def apply_op(op: Op, acc: int, current: int) -> Tuple[int, Optional[int]]:
    """Functional effect of an operation.

    Loads fold the value into the agent's accumulator, stores write accumulator plus operand and
    read-modify-writes add the accumulator and operand to the current value.

    Returns:
        Tuple[int, Optional[int]]: the new accumulator and the value written (None for loads)
    """
    if op.kind == OpKind.LOAD:
        return add64(acc, current), None
    if op.kind == OpKind.STORE:
        return acc, add64(acc, op.operand)
    return acc, add64(current, acc, op.operand)


@dataclass(frozen=True)
class KernelSpec:
    """A PIM kernel: the core it runs on, when it is launched and its operation stream."""

    kernel_id: int
    pim_core: int
    launch_time: float
    ops: Tuple[Op, ...]

    def read_lines(self) -> List[int]:
        """Lines the kernel reads."""
        return sorted({op.line for op in self.ops if op.kind.reads})

    def write_lines(self) -> List[int]:
        """Lines the kernel writes."""
        return sorted({op.line for op in self.ops if op.kind.writes})


@dataclass
class CoherenceWorkload:  # pylint: disable=too-many-instance-attributes
    """Per-agent operation streams over a shared line set.

    Lines [0, pim_lines) are PIM data; lines past them, starting on a fresh page and ending
    before total_lines, are private CPU data.
    """

    kind: str
    seed: int
    cpu_streams: List[List[Op]]
    kernels: List[KernelSpec]
    pim_lines: int
    total_lines: int
    pim_cores: int
    initial: Dict[int, List[int]] = field(default_factory=dict)
    params: Dict[str, Any] = field(default_factory=dict)

    @property
    def cpu_threads(self) -> int:
        """Number of CPU agents."""
        return len(self.cpu_streams)

    def is_pim_line(self, line: int) -> bool:
        """Whether a line belongs to the PIM data map."""
        return 0 <= line < self.pim_lines

    def access_counts(self) -> Dict[str, int]:
        """Operations on PIM data by CPU threads and by kernels, and CPU operations overall."""
        cpu_pim = sum(1 for ops in self.cpu_streams for op in ops if self.is_pim_line(op.line))
        return {
            "cpu_pim": cpu_pim,
            "cpu_total": sum(len(ops) for ops in self.cpu_streams),
            "pim": sum(len(kernel.ops) for kernel in self.kernels),
        }

    def digest(self) -> str:
        """Stable hash of the streams, for replayability checks."""
        sha = hashlib.sha256()
        for index, ops in enumerate(self.cpu_streams):
            sha.update(f"cpu{index}:{ops!r}".encode())
        for kernel in self.kernels:
            sha.update(repr(kernel).encode())
        sha.update(repr(sorted(self.initial.items())).encode())
        return sha.hexdigest()


def _page_align(lines: int) -> int:
    return -(-lines // PAGE_LINES) * PAGE_LINES


def _think(rng: np.random.Generator, low: float, high: float, count: int) -> List[float]:
    return [float(value) for value in rng.integers(int(low), int(high) + 1, size=count)]


def _initial_values(rng: np.random.Generator, lines: int) -> Dict[int, List[int]]:
    words = rng.integers(0, 2**32, size=(lines, WORDS_PER_LINE), dtype=np.uint64)
    return {line: [int(word) for word in words[line]] for line in range(lines)}


def _synthetic_edges(rng: np.random.Generator, vertices: int, edges: int) -> np.ndarray:
    pairs = rng.integers(0, vertices, size=(edges, 2))
    loops = pairs[:, 0] == pairs[:, 1]
    pairs[loops, 1] = (pairs[loops, 1] + 1) % vertices
    return pairs


def gen_graph_kernel(  # pylint: disable=too-many-arguments, too-many-locals, too-many-statements
    n_vertices: int = 4096,
    n_edges: int = 8192,
    cpu_threads: int = 16,
    pim_kernels: int = 16,
    seed: int = 0,
    iterations: int = 2,
    cpu_share: float = CPU_SHARE_OF_PIM_ACCESSES,
    store_fraction: float = 0.0005,
    private_fraction: float = 0.25,
    think_range: Tuple[float, float] = (100.0, 300.0),
    warmup: float = 20_000.0,
    period: Optional[float] = None,
    edge_list: Optional[Path] = None,
) -> CoherenceWorkload:
    """PageRank-style sharing between PIM kernels and CPU threads.

    PIM data holds two vertex arrays followed by the edge array, whose edges are grouped by the
    partition of their destination. The vertex arrays alternate between source and destination
    each iteration. Kernel k of an iteration scans the edges of partition k: for every edge
    (u, v) it loads the edge, loads source[u] and accumulates into destination[v]. CPU threads
    load words anywhere in the PIM data and now and then store into a vertex array, together
    making cpu_share of all accesses to PIM data.

    Iterations are launched period cycles apart. By default the launches are spread evenly
    over the time the CPU threads spend thinking through their streams.
    """
    rng = child_rng(seed, GRAPH_STREAM)
    if edge_list is not None:
        pairs = read_edge_list(edge_list)
        n_vertices = max(n_vertices, int(pairs.max()) + 1) if len(pairs) else n_vertices
    else:
        pairs = _synthetic_edges(rng, n_vertices, n_edges)
    owner = (pairs[:, 1].astype(np.int64) * max(pim_kernels, 1)) // n_vertices
    order = np.argsort(owner, kind="stable")
    pairs, owner = pairs[order], owner[order]
    array_lines = -(-n_vertices // WORDS_PER_LINE)
    edge_base = 2 * array_lines
    pim_lines = edge_base + -(-len(pairs) // WORDS_PER_LINE)
    private_lines = max(cpu_threads, 1) * 16
    private_base = _page_align(pim_lines)
    total_lines = private_base + private_lines

    def slot(array: int, vertex: int) -> Tuple[int, int]:
        return array * array_lines + vertex // WORDS_PER_LINE, vertex % WORDS_PER_LINE

    scans: List[Tuple[int, int, Tuple[Op, ...]]] = []
    if pim_kernels:
        bounds = np.searchsorted(owner, np.arange(pim_kernels + 1)).tolist()
        for iteration in range(iterations):
            source, destination = iteration % 2, (iteration + 1) % 2
            for part in range(pim_kernels):
                ops: List[Op] = []
                for position in range(bounds[part], bounds[part + 1]):
                    u, v = int(pairs[position, 0]), int(pairs[position, 1])
                    edge = edge_base + position // WORDS_PER_LINE, position % WORDS_PER_LINE
                    ops.append(Op(OpKind.LOAD, *edge))
                    ops.append(Op(OpKind.LOAD, *slot(source, u)))
                    ops.append(Op(OpKind.RMW, *slot(destination, v), operand=1))
                scans.append((iteration, part, tuple(ops)))

    pim_accesses = sum(len(ops) for _, _, ops in scans)
    if pim_kernels and cpu_threads:
        cpu_pim_ops = int(round(cpu_share / (1.0 - cpu_share) * pim_accesses))
    else:
        cpu_pim_ops = 4 * len(pairs) if cpu_threads else 0
    cpu_rng = child_rng(seed, CPU_STREAM)
    streams: List[List[Op]] = []
    for thread in range(cpu_threads):
        count = cpu_pim_ops // cpu_threads + (1 if thread < cpu_pim_ops % cpu_threads else 0)
        private = int(round(count * private_fraction / (1.0 - private_fraction)))
        kinds = cpu_rng.random(count + private)
        thinks = _think(cpu_rng, think_range[0], think_range[1], count + private)
        shared_positions = set(cpu_rng.choice(count + private, size=count, replace=False).tolist())
        ops = []
        for index in range(count + private):
            if index in shared_positions and kinds[index] < store_fraction:
                kind = OpKind.STORE
                array = int(cpu_rng.integers(0, 2))
                line, word = slot(array, int(cpu_rng.integers(0, n_vertices)))
            elif index in shared_positions:
                kind = OpKind.LOAD
                line = int(cpu_rng.integers(0, pim_lines))
                word = int(cpu_rng.integers(0, WORDS_PER_LINE))
            else:
                line = private_base + thread * 16 + int(cpu_rng.integers(0, 16))
                word = int(cpu_rng.integers(0, WORDS_PER_LINE))
                kind = OpKind.STORE if kinds[index] < 0.5 else OpKind.LOAD
            ops.append(Op(kind, line, word, operand=index + 1, think=thinks[index]))
        streams.append(ops)

    if period is None:
        thread_ops = sum(len(ops) for ops in streams) / max(cpu_threads, 1)
        period = thread_ops * (think_range[0] + think_range[1]) / 2.0 / max(iterations, 1)
    kernels = [
        KernelSpec(kernel_id, part, warmup + iteration * period, ops)
        for kernel_id, (iteration, part, ops) in enumerate(scans)
    ]
    _LOG.debug(
        "Graph workload: %s kernels every %s cycles, %s PIM ops, %s CPU PIM ops",
        len(kernels),
        period,
        pim_accesses,
        cpu_pim_ops,
    )
    return CoherenceWorkload(
        "graph",
        seed,
        streams,
        kernels,
        pim_lines,
        total_lines,
        max(pim_kernels, 1),
        _initial_values(child_rng(seed, GRAPH_STREAM, 1), pim_lines),
        {
            "vertices": n_vertices,
            "edges": int(len(pairs)),
            "iterations": iterations,
            "array_lines": array_lines,
            "period": period,
        },
    )


def gen_htap(  # pylint: disable=too-many-arguments, too-many-locals
    n_tuples: int = 10_000,
    n_transactions: int = 2_000,
    n_analytic_kernels: int = 16,
    seed: int = 0,
    cpu_threads: int = 4,
    pim_cores: int = 16,
    ops_per_transaction: Tuple[int, int] = (2, 4),
    scan_fraction: float = 0.25,
    think_range: Tuple[float, float] = (50.0, 150.0),
    launch_window: float = 200_000.0,
) -> CoherenceWorkload:
    """Short random tuple transactions on the CPU against long analytic scans in PIM kernels.

    Each transaction reads then rewrites a few random tuples. Each analytic kernel scans a random
    contiguous range of tuples and stores its aggregate into its own result line.
    """
    assert n_tuples >= 1, "Need at least one tuple"
    tuple_lines = -(-n_tuples // WORDS_PER_LINE)
    pim_lines = tuple_lines + n_analytic_kernels
    cpu_rng = child_rng(seed, CPU_STREAM)
    streams: List[List[Op]] = [[] for _ in range(cpu_threads)]
    for transaction in range(n_transactions if cpu_threads else 0):
        stream = streams[transaction % cpu_threads]
        size = int(cpu_rng.integers(ops_per_transaction[0], ops_per_transaction[1] + 1))
        for tuple_id in cpu_rng.integers(0, n_tuples, size=size).tolist():
            line, word = tuple_id // WORDS_PER_LINE, tuple_id % WORDS_PER_LINE
            think = float(cpu_rng.integers(int(think_range[0]), int(think_range[1]) + 1))
            stream.append(Op(OpKind.LOAD, line, word, think=think))
            stream.append(Op(OpKind.STORE, line, word, operand=transaction + 1, think=1.0))

    kernel_rng = child_rng(seed, KERNEL_STREAM)
    scan = max(1, int(n_tuples * scan_fraction))
    kernels = []
    for kernel_id in range(n_analytic_kernels):
        start = int(kernel_rng.integers(0, n_tuples))
        ops = [
            Op(OpKind.LOAD, tuple_id // WORDS_PER_LINE, tuple_id % WORDS_PER_LINE)
            for tuple_id in ((start + offset) % n_tuples for offset in range(scan))
        ]
        ops.append(Op(OpKind.STORE, tuple_lines + kernel_id, 0, operand=kernel_id))
        launch = float(kernel_rng.uniform(0.0, launch_window))
        kernels.append(KernelSpec(kernel_id, kernel_id % pim_cores, launch, tuple(ops)))
    kernels.sort(key=lambda kernel: (kernel.launch_time, kernel.kernel_id))
    return CoherenceWorkload(
        "htap",
        seed,
        streams,
        kernels,
        pim_lines,
        pim_lines,
        min(pim_cores, max(n_analytic_kernels, 1)),
        _initial_values(child_rng(seed, KERNEL_STREAM, 1), tuple_lines),
        {"tuples": n_tuples, "transactions": n_transactions, "kernels": n_analytic_kernels},
    )


def gen_random_sharing(  # pylint: disable=too-many-locals
    seed: int,
    max_cpu_threads: int = 4,
    max_kernels: int = 2,
    max_lines: int = 64,
    max_ops: int = 200,
) -> CoherenceWorkload:
    """Small random workload mixing CPU and kernel reads and writes on a few shared lines."""
    rng = child_rng(seed, TIMING_STREAM)
    cpu_threads = int(rng.integers(1, max_cpu_threads + 1))
    n_kernels = int(rng.integers(0, max_kernels + 1))
    total_lines = int(rng.integers(2, max_lines + 1))
    pim_lines = max(1, int(total_lines * rng.uniform(0.5, 1.0)))
    private_base = _page_align(pim_lines)
    total_ops = int(rng.integers(max_ops // 4, max_ops + 1))
    agents = cpu_threads + n_kernels
    owners = rng.integers(0, agents, size=total_ops)
    choices = (OpKind.LOAD, OpKind.STORE, OpKind.RMW)
    kinds = [choices[k] for k in rng.choice(3, size=total_ops, p=[0.5, 0.3, 0.2]).tolist()]
    streams: List[List[Op]] = [[] for _ in range(cpu_threads)]
    kernel_ops: List[List[Op]] = [[] for _ in range(n_kernels)]
    for index in range(total_ops):
        owner = int(owners[index])
        if owner < cpu_threads:
            line = int(rng.integers(0, total_lines))
            if line >= pim_lines:
                line += private_base - pim_lines
            kind = kinds[index] if kinds[index] != OpKind.RMW else OpKind.STORE
        else:
            line = int(rng.integers(0, pim_lines))
            kind = kinds[index]
        op = Op(
            kind,
            line,
            int(rng.integers(0, WORDS_PER_LINE)),
            operand=index + 1,
            think=float(rng.integers(1, 60)),
        )
        (streams[owner] if owner < cpu_threads else kernel_ops[owner - cpu_threads]).append(op)
    span = sum(op.think for ops in streams for op in ops) / max(cpu_threads, 1)
    kernels = [
        KernelSpec(k, k, float(rng.uniform(0.0, max(span, 1.0))), tuple(ops))
        for k, ops in enumerate(kernel_ops)
    ]
    return CoherenceWorkload(
        "random",
        seed,
        streams,
        kernels,
        pim_lines,
        private_base + total_lines - pim_lines,
        max(n_kernels, 1),
        _initial_values(child_rng(seed, TIMING_STREAM, 1), pim_lines),
        {"ops": total_ops},
    )


def gen_adversarial(seed: int, kernel_lines: int = 8, writes: int = 4000) -> CoherenceWorkload:
    """One kernel reading a few lines while a CPU thread keeps writing one of them."""
    rng = child_rng(seed, TIMING_STREAM)
    target = int(rng.integers(0, kernel_lines))
    ops = tuple(
        Op(OpKind.RMW, line, word, operand=1)
        for _ in range(4)
        for line in range(kernel_lines)
        for word in range(2)
    )
    writer = [
        Op(OpKind.STORE, target, int(rng.integers(0, WORDS_PER_LINE)), operand=i, think=25.0)
        for i in range(writes)
    ]
    return CoherenceWorkload(
        "adversarial",
        seed,
        [writer],
        [KernelSpec(0, 0, 100.0, ops)],
        kernel_lines,
        kernel_lines,
        1,
        _initial_values(child_rng(seed, TIMING_STREAM, 1), kernel_lines),
        {"target": target},
    )
