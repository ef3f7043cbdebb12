"""IMPICA engine, cache and overlap tests."""

from typing import Any, Generator, List, Tuple

import pytest
import simpy

from pim_simulation.impica.cache import ImpicaCache
from pim_simulation.impica.engine import (
    PACKET_PAYLOAD_BYTES,
    ImpicaConfig,
    ImpicaEngine,
    TraversalReport,
    run_traversals,
)
from pim_simulation.impica.program import (
    Load,
    ProgramBody,
    TraversalProgram,
    run_functionally,
)
from pim_simulation.memory.memory_system import MemorySystem, TimingConfig, TrafficCategory
from pim_simulation.pim_utils import InvariantChecker, InvariantViolation, line_of
from pim_simulation.translation.page_tables import REGION_SHIFT
from pim_simulation.translation.translator import PimTranslator
from pim_simulation.workloads.pointer_chasing import (
    PointerWorkload,
    gen_btree,
    gen_hash_table,
    gen_linked_list,
    gen_linked_lists,
)

NODES = 200


def run_lists(
    n_lists: int, n_nodes: int = NODES, seed: int = 0, **config: Any
) -> Tuple[TraversalReport, PointerWorkload, MemorySystem]:
    """Run independent linked-list traversals on one engine."""
    memory = MemorySystem()
    translator = PimTranslator(memory)
    workload = gen_linked_lists(n_lists, n_nodes, seed, translator)
    report = run_traversals(
        workload.programs, workload.image, translator, memory, ImpicaConfig(**config)
    )
    return report, workload, memory


@pytest.mark.unit
def test_empty_batch() -> None:
    """Does an empty batch give an empty schedule."""
    memory = MemorySystem()
    translator = PimTranslator(memory)
    workload = gen_linked_lists(1, 1, 0, translator)
    report = run_traversals([], workload.image, translator, memory)
    assert report.completion_times == {}
    assert report.makespan == 0.0
    assert report.utilization == 0.0


@pytest.mark.unit
def test_single_traversal_closed_form() -> None:
    """Does one traversal take d node loads plus the compute and the first page walk."""
    timing = TimingConfig()
    config = ImpicaConfig()
    memory = MemorySystem(timing)
    translator = PimTranslator(memory)
    image, program = gen_linked_list(16, 4, translator)
    report = run_traversals([program], image, translator, memory, config)
    per_node = timing.pim_dram_latency + config.compute_cycles
    expected = 2 * timing.pim_dram_latency + 16 * per_node
    assert report.makespan == pytest.approx(expected, abs=1.0), "Unexpected traversal time"
    assert report.completion_times == {0: report.makespan}
    assert report.steps > 0


@pytest.mark.unit
def test_first_request_id_and_packet() -> None:
    """Is the first request id 0 and is every offload packet charged to the link."""
    report, _, memory = run_lists(3, 4)
    assert sorted(report.completion_times) == [0, 1, 2]
    packet = memory.ledger.bytes_by_category[TrafficCategory.PACKET]
    assert packet == 3 * (PACKET_PAYLOAD_BYTES + memory.timing.request_header_bytes)
    assert memory.ledger.messages_by_category[TrafficCategory.PACKET] == 3


@pytest.mark.unit
def test_memory_requests_per_access() -> None:
    """Does a TLB miss on a 4KB leaf issue 3 requests and a TLB hit exactly 1."""
    report, _, _ = run_lists(1, 8)
    accesses = [record for record in report.trace if record["event"] == "access"]
    assert len(accesses) == 8
    assert not accesses[0]["tlb_hit"] and accesses[0]["memory_requests"] == 3
    for record in accesses[1:]:
        assert record["tlb_hit"], "List fits in one page, only the first access should miss"
        assert record["memory_requests"] == 1
    assert report.memory_requests == 3 + 7
    assert report.walk_accesses == 2


@pytest.mark.unit
def test_single_stream_utilization() -> None:
    """Is the address engine mostly idle when one stream waits on memory."""
    report, _, _ = run_lists(1)
    assert report.utilization < 0.10, f"Utilisation {report.utilization} too high"


@pytest.mark.unit
def test_two_streams_overlap() -> None:
    """Do two concurrent traversals finish well before two single traversal times."""
    single, _, _ = run_lists(1)
    double, _, _ = run_lists(2)
    assert double.makespan < 1.6 * single.makespan, "Traversals did not overlap"


@pytest.mark.unit
@pytest.mark.parametrize("streams", [2, 4, 8])
def test_overlap_against_serial_model(streams: int) -> None:
    """Does the decoupled engine beat the one-at-a-time accelerator for k streams."""
    single, _, _ = run_lists(1)
    decoupled, _, _ = run_lists(streams)
    serial, _, _ = run_lists(streams, decoupled=False)
    assert decoupled.makespan < 2.0 * single.makespan
    assert decoupled.makespan < streams * single.makespan
    assert serial.makespan > (streams - 1) * single.makespan, "Serial model overlapped"
    assert decoupled.makespan < serial.makespan


@pytest.mark.unit
def test_serial_model_runs_one_at_a_time() -> None:
    """Does each traversal start only after the previous one completed."""
    report, _, _ = run_lists(3, 10, decoupled=False)
    starts = {r["request_id"]: r["time"] for r in report.trace if r["event"] == "start"}
    for request_id in (1, 2):
        assert starts[request_id] >= report.completion_times[request_id - 1]


@pytest.mark.unit
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_results_match_functional_run(seed: int) -> None:
    """Does every traversal emit what a host-side execution of its program emits."""
    memory = MemorySystem()
    translator = PimTranslator(memory)
    workloads = [
        gen_linked_lists(4, 50, seed, translator),
        gen_hash_table(seed, translator, buckets=64, fill=96, lookups=40),
        gen_btree(500, seed, translator, lookups=40, random_insert=seed % 2 == 1),
    ]
    for workload in workloads:
        report = run_traversals(workload.programs, workload.image, translator, memory)
        assert not report.faults
        for request_id, program in enumerate(workload.programs):
            oracle = run_functionally(program, workload.image).results
            assert report.results[request_id] == oracle, f"{workload.kind} {request_id} differs"
            assert oracle == workload.expected[request_id]


@pytest.mark.unit
def test_translation_fault_aborts_only_its_traversal() -> None:
    """Is a traversal loading outside every region aborted while the others finish."""

    def stray_load() -> ProgramBody:
        yield Load(5 << REGION_SHIFT)

    memory = MemorySystem()
    translator = PimTranslator(memory)
    workload = gen_linked_lists(2, 10, 0, translator)
    programs = [workload.programs[0], TraversalProgram("stray", stray_load), workload.programs[1]]
    report = run_traversals(programs, workload.image, translator, memory)
    assert list(report.faults) == [1]
    assert "translation fault" in report.faults[1]
    assert report.results[0] == workload.expected[0]
    assert report.results[2] == workload.expected[1]
    assert report.results[1] == []


@pytest.mark.unit
def test_request_queue_backpressure() -> None:
    """Does the producer stall on a full request queue without exceeding its bound."""
    report, workload, _ = run_lists(20, 5, data_ram_bytes=128)
    assert report.producer_stalls >= 1
    assert report.queue_high_water["request"] <= 16
    assert [report.results[i] for i in range(20)] == workload.expected


@pytest.mark.unit
def test_live_contexts_bounded_by_data_ram() -> None:
    """Are live traversals capped by the data RAM slots even when the queue holds more."""
    report, workload, _ = run_lists(20, 5, data_ram_bytes=128)
    assert report.queue_high_water["contexts"] == 2
    assert not report.faults
    assert [report.results[i] for i in range(20)] == workload.expected


def run_one_set_engine() -> Tuple[ImpicaEngine, List[Any]]:
    """Four one-node traversals through a one-set, two-way cache with slow compute."""
    env = simpy.Environment()
    memory = MemorySystem()
    translator = PimTranslator(memory)
    workload = gen_linked_lists(4, 1, 0, translator, compute_cycles=500.0)
    config = ImpicaConfig(cache_bytes=128, cache_ways=2, root_window=0)
    engine = ImpicaEngine(
        env, config, memory, translator, workload.image, checker=InvariantChecker("debug")
    )
    engine.start()

    def producer() -> Generator[simpy.Event, Any, None]:
        for program in workload.programs:
            yield env.process(engine.enqueue_traversal(program))

    env.process(producer())
    env.run()
    engine.check_quiescent()
    return engine, workload.expected


@pytest.mark.unit
def test_cache_full_stall_and_resume() -> None:
    """Does a fully locked set stall the access engine until the address engine consumes."""
    engine, expected = run_one_set_engine()
    trace = engine.trace
    events = [record["event"] for record in trace]
    assert "stall" in events, "Access engine never stalled"
    stall = events.index("stall")
    resume = events.index("resume", stall)
    consumes = [
        i for i, record in enumerate(trace[:resume]) if i > stall and record["event"] == "consume"
    ]
    assert consumes, "Stall released without a consume"
    assert trace[consumes[-1]]["time"] == trace[resume]["time"]
    assert trace[resume]["time"] > trace[stall]["time"]
    report = engine.report()
    assert report.stall_events >= 1
    assert report.stall_cycles > 0
    assert [report.results[i] for i in range(4)] == expected


@pytest.mark.unit
def test_finished_traversal_lines_evicted() -> None:
    """Are a traversal's lines gone once it completes, with no lock left behind."""
    engine, _ = run_one_set_engine()
    for request_id in range(4):
        assert engine.cache.lines_of(request_id) == [], f"Lines of {request_id} remain"
    assert engine.cache.locked_lines() == 0
    completes = [record for record in engine.trace if record["event"] == "complete"]
    assert len(completes) == 4


@pytest.mark.unit
def test_root_bit_window() -> None:
    """Are the first accesses of a traversal inserted as root lines that outlive it."""
    memory = MemorySystem()
    translator = PimTranslator(memory)
    image, program = gen_linked_list(6, 0, translator)
    env = simpy.Environment()
    engine = ImpicaEngine(env, ImpicaConfig(root_window=2), memory, translator, image)
    engine.start()
    env.process(engine.enqueue_traversal(program))
    env.run()
    accesses = [record for record in engine.trace if record["event"] == "access"]
    roots = [engine.cache.find(line_of(record["pa"])) for record in accesses]
    assert all(line is not None and line.root for line in roots[:2])
    assert all(line is None for line in roots[2:]), "Non-root lines survived completion"


@pytest.mark.unit
def test_locked_set_refuses_eviction() -> None:
    """Does inserting into a fully locked set raise instead of evicting."""
    cache = ImpicaCache(128, 2)
    cache.insert_locked(0, 0, False)
    cache.insert_locked(64, 1, False)
    assert not cache.can_insert([128])
    with pytest.raises(InvariantViolation) as error:
        cache.insert_locked(128, 2, False)
    assert error.value.name == "impica-lock-safety"
    cache.unlock(0)
    assert cache.can_insert([128])
    assert cache.insert_locked(128, 2, False) == 0


@pytest.mark.unit
def test_victim_prefers_non_root_lines() -> None:
    """Is an unlocked non-root line evicted before an older unlocked root line."""
    cache = ImpicaCache(128, 2)
    cache.insert_locked(0, 0, True)
    cache.insert_locked(64, 0, False)
    cache.unlock(0)
    cache.unlock(64)
    assert cache.insert_locked(128, 1, False) == 64
    assert cache.find(0) is not None


@pytest.mark.unit
def test_evict_request_keeps_root_lines() -> None:
    """Are a request's plain lines dropped and its root lines kept unowned."""
    cache = ImpicaCache(4096, 2)
    cache.insert_locked(0, 7, True)
    cache.insert_locked(64, 7, False)
    cache.insert_locked(128, 8, False)
    for tag in (0, 64, 128):
        cache.unlock(tag)
    assert cache.evict_request(7) == [64]
    assert cache.find(0) is not None and cache.find(0).request_id is None  # type: ignore
    assert cache.lines_of(8) == [128]


@pytest.mark.unit
def test_hit_rate_counts() -> None:
    """Are B-tree lookups sharing the root served from the IMPICA cache."""
    memory = MemorySystem()
    translator = PimTranslator(memory)
    workload = gen_btree(2000, 3, translator, lookups=50)
    report = run_traversals(workload.programs, workload.image, translator, memory)
    assert report.cache_hits > 0, "Root node never hit"
    loads = sum(run_functionally(program, workload.image).loads for program in workload.programs)
    assert report.cache_hits + report.cache_misses == loads
