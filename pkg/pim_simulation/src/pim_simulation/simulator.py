"""Experiment runner: builds workloads, drives the simulators and collects metrics."""

import json
import logging
import multiprocessing
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Type

from tqdm.std import tqdm

from pim_simulation.coherence.mechanisms.abstract_mechanism import CoherenceMechanism
from pim_simulation.coherence.mechanisms.coarse_grained import CoarseGrainedMechanism
from pim_simulation.coherence.mechanisms.cpu_only import CpuOnlyMechanism
from pim_simulation.coherence.mechanisms.fine_grained import FineGrainedMechanism
from pim_simulation.coherence.mechanisms.ideal import IdealMechanism
from pim_simulation.coherence.mechanisms.non_cacheable import NonCacheableMechanism
from pim_simulation.coherence.oracle import SerializationMismatch, check_serializable
from pim_simulation.coherence.system import (
    CoherenceConfig,
    CoherenceReport,
    CoherenceSystem,
    MechanismKind,
)
from pim_simulation.impica.engine import TraversalReport, run_traversals
from pim_simulation.lazypim.protocol import LazyPimMechanism
from pim_simulation.memory.memory_system import MemorySystem, TimingConfig
from pim_simulation.parameters import ConfigError, ExperimentConfig, ExperimentKind, JSONParameters
from pim_simulation.pim_utils import InvariantChecker, InvariantViolation, child_rng
from pim_simulation.results import MetricsReport
from pim_simulation.translation.translator import PageTableKind, PimTranslator
from pim_simulation.units import DataSize
from pim_simulation.workloads.coherence_workloads import (
    CoherenceWorkload,
    gen_adversarial,
    gen_graph_kernel,
    gen_htap,
    gen_random_sharing,
)
from pim_simulation.workloads.pointer_chasing import (
    PointerWorkload,
    gen_btree,
    gen_hash_table,
    gen_linked_lists,
)

_LOG = logging.getLogger(__name__)

MECHANISMS: Dict[MechanismKind, Type[CoherenceMechanism]] = {
    MechanismKind.CPU_ONLY: CpuOnlyMechanism,
    MechanismKind.FG: FineGrainedMechanism,
    MechanismKind.CG: CoarseGrainedMechanism,
    MechanismKind.NC: NonCacheableMechanism,
    MechanismKind.LAZYPIM: LazyPimMechanism,
    MechanismKind.IDEAL: IdealMechanism,
}

THREADS_VARIABLE = "PIMBENCH_THREADS"
TRANSLATION_STREAM = 31
TRANSLATION_REGION_BYTES = DataSize(64, "MB").bytes()

IMPICA_TRACE = "impica_trace.jsonl"
KERNEL_TRACE = "lazypim_kernels.jsonl"
MAPPING_DUMP = "region_mapping.json"


def trace_path(folder: Path, name: str, seed: int) -> Path:
    """Per-seed trace file, e.g. lazypim_kernels.seed3.jsonl."""
    stem, suffix = name.rsplit(".", 1)
    return folder / f"{stem}.seed{seed}.{suffix}"


def write_jsonl(path: Path, records: Iterable[Dict[str, Any]]) -> None:
    """One JSON object per line."""
    with open(path, "w", encoding="utf8") as file:
        for record in records:
            file.write(json.dumps(record, sort_keys=True) + "\n")


def _experiment_label(config: ExperimentConfig) -> str:
    if config.scenario_name:
        return f"{config.experiment.value}/{config.scenario_name}"
    return config.experiment.value


def build_pointer_workload(
    config: ExperimentConfig, translator: PimTranslator, seed: int
) -> PointerWorkload:
    """Pointer-chasing workload named by the config, placed through the translator."""
    workload = config.workload
    leaf_size = config.impica.leaf_size
    compute = config.impica.compute_cycles
    if workload.kind == "linked-list":
        return gen_linked_lists(
            workload.lists, workload.nodes, seed, translator, leaf_size, compute, workload.locality
        )
    if workload.kind == "hash-table":
        return gen_hash_table(
            seed,
            translator,
            workload.buckets,
            workload.fill,
            workload.lookups,
            workload.hit_ratio,
            leaf_size,
            compute,
        )
    return gen_btree(
        workload.keys,
        seed,
        translator,
        workload.lookups,
        workload.hit_ratio,
        workload.random_insert,
        leaf_size,
        compute,
    )


def build_coherence_workload(
    config: ExperimentConfig, seed: int, base_folder: Path = Path(".")
) -> CoherenceWorkload:
    """Coherence workload named by the config; edge lists resolve against base_folder."""
    workload = config.workload
    if workload.kind == "graph":
        edge_list = base_folder / workload.edge_list if workload.edge_list else None
        return gen_graph_kernel(
            n_vertices=workload.vertices,
            n_edges=workload.edges,
            cpu_threads=workload.cpu_threads,
            pim_kernels=workload.pim_kernels,
            seed=seed,
            iterations=workload.iterations,
            edge_list=edge_list,
        )
    if workload.kind == "htap":
        return gen_htap(
            n_tuples=workload.tuples,
            n_transactions=workload.transactions,
            n_analytic_kernels=workload.analytic_kernels,
            seed=seed,
            cpu_threads=workload.cpu_threads,
            pim_cores=workload.pim_kernels,
        )
    if workload.kind == "random":
        return gen_random_sharing(seed)
    return gen_adversarial(seed)


def run_coherence(  # pylint: disable=too-many-arguments
    workload: CoherenceWorkload,
    config: CoherenceConfig,
    timing: Optional[TimingConfig] = None,
    profile: str = "debug",
    seed: int = 0,
) -> CoherenceReport:
    """Run a coherence workload under the configured mechanism.

    In the debug profile the final memory is also checked against a serial replay of the
    execution log.
    """
    system = CoherenceSystem(workload, config, MECHANISMS[config.mechanism], timing, profile, seed)
    report = system.run()
    if profile == "debug":
        try:
            check_serializable(workload, report.log, report.final_memory)
        except SerializationMismatch as error:
            raise InvariantViolation("serializability", str(error), report.makespan) from error
    return report


def run_impica(
    config: ExperimentConfig, seed: int, page_table: Optional[PageTableKind] = None
) -> Tuple[TraversalReport, PimTranslator]:
    """Offload the configured pointer-chasing workload to one IMPICA engine.

    Raises:
        InvariantViolation: if a traversal that did not fault returned a wrong result
    """
    impica = config.impica
    if page_table is not None:
        impica = impica.model_copy(update={"page_table": page_table})
    memory = MemorySystem(config.timing)
    translator = PimTranslator(memory, impica.page_table, impica.tlb_entries)
    workload = build_pointer_workload(config, translator, seed)
    checker = InvariantChecker(config.profile)
    report = run_traversals(workload.programs, workload.image, translator, memory, impica, checker)
    for request_id, expected in enumerate(workload.expected):
        if request_id in report.faults:
            continue
        if report.results[request_id] != expected:
            raise InvariantViolation(
                "traversal-results",
                f"traversal {request_id} returned {report.results[request_id]}, "
                f"expected {expected}",
                report.makespan,
            )
    return report, translator


def impica_metrics(report: TraversalReport, memory: MemorySystem) -> Dict[str, float]:
    """Flat metric table of one IMPICA run."""
    lookups = report.cache_hits + report.cache_misses
    metrics: Dict[str, float] = {
        "makespan": report.makespan,
        "traversals": len(report.results),
        "faults": len(report.faults),
        "steps": report.steps,
        "utilization": report.utilization,
        "stall_cycles": report.stall_cycles,
        "stall_events": report.stall_events,
        "producer_stalls": report.producer_stalls,
        "dropped_responses": report.dropped_responses,
        "cache_hits": report.cache_hits,
        "cache_misses": report.cache_misses,
        "cache_hit_rate": report.cache_hits / lookups if lookups else 0.0,
        "memory_requests": report.memory_requests,
        "walk_accesses": report.walk_accesses,
        "tlb_misses": report.tlb_misses,
        "tlb_mpki": report.tlb_mpki,
        "off_chip_bytes": memory.off_chip_traffic(),
    }
    for queue, high_water in report.queue_high_water.items():
        metrics[f"queue_high_water.{queue}"] = high_water
    for category, nbytes in memory.ledger.bytes_by_category.items():
        metrics[f"bytes.{category.value}"] = nbytes
    for kind, count in memory.request_counts.items():
        metrics[f"requests.{kind.value}"] = count
    return metrics


def _run_impica_micro(
    config: ExperimentConfig, seed: int, trace_folder: Optional[Path]
) -> MetricsReport:
    report, translator = run_impica(config, seed)
    if trace_folder is not None:
        write_jsonl(trace_path(trace_folder, IMPICA_TRACE, seed), report.trace)
        translator.rpt.write_mapping_dump(trace_path(trace_folder, MAPPING_DUMP, seed))
    return MetricsReport(
        experiment=_experiment_label(config),
        mechanism=config.impica.page_table.value,
        seed=seed,
        metrics=impica_metrics(report, translator.rpt.memory),
    )


def _run_impica_sensitivity(config: ExperimentConfig, seed: int) -> MetricsReport:
    """Both page-table kinds on the decoupled engine and on the serial accelerator."""
    metrics: Dict[str, float] = {}
    for page_table in PageTableKind:
        makespans = {}
        for decoupled in (True, False):
            mode = "decoupled" if decoupled else "serial"
            variant = config.model_copy(
                update={"impica": config.impica.model_copy(update={"decoupled": decoupled})}
            )
            report, translator = run_impica(variant, seed, page_table)
            prefix = f"{page_table.value}.{mode}"
            metrics[f"makespan.{prefix}"] = report.makespan
            metrics[f"utilization.{prefix}"] = report.utilization
            metrics[f"tlb_mpki.{prefix}"] = report.tlb_mpki
            metrics[f"walk_accesses.{prefix}"] = report.walk_accesses
            metrics[f"off_chip_bytes.{prefix}"] = translator.rpt.memory.off_chip_traffic()
            makespans[mode] = report.makespan
        metrics[f"overlap_speedup.{page_table.value}"] = (
            makespans["serial"] / makespans["decoupled"] if makespans["decoupled"] else 0.0
        )
    return MetricsReport(
        experiment=_experiment_label(config), mechanism="impica", seed=seed, metrics=metrics
    )


def translation_sweep(config: ExperimentConfig, seed: int) -> Dict[str, float]:
    """Random TLB-bypassing translations through identically mapped RPT and four-level tables."""
    memory = MemorySystem(config.timing)
    translator = PimTranslator(memory, PageTableKind.RPT, config.impica.tlb_entries, True)
    region = translator.allocate_region(TRANSLATION_REGION_BYTES, config.impica.leaf_size)
    translator.map_region(region)
    rng = child_rng(seed, TRANSLATION_STREAM)
    samples = config.workload.translations
    offsets = rng.integers(0, region.size_bytes // 8, size=samples) * 8
    rpt_accesses = 0
    four_level_accesses = 0
    rpt_max = 0
    four_level_max = 0
    mismatches = 0
    for offset in offsets.tolist():
        va = region.va_base + offset
        rpt = translator.translate_rpt(va, tlb_enabled=False)
        four_level = translator.translate_4level(va, tlb_enabled=False)
        rpt_accesses += len(rpt.walk)
        four_level_accesses += len(four_level.walk)
        rpt_max = max(rpt_max, len(rpt.walk))
        four_level_max = max(four_level_max, len(four_level.walk))
        mismatches += rpt.pa != four_level.pa
    if mismatches:
        _LOG.warning("%s of %s translations disagree between page tables", mismatches, samples)
    return {
        "translations": samples,
        "mismatches": mismatches,
        "rpt_walk_accesses": rpt_accesses,
        "four_level_walk_accesses": four_level_accesses,
        "rpt_max_walk": rpt_max,
        "four_level_max_walk": four_level_max,
        "walk_ratio": four_level_accesses / rpt_accesses if rpt_accesses else 0.0,
        "region_table_footprint": translator.rpt.region_table_footprint(),
        "leaf_size": region.leaf_size,
    }


def coherence_metrics(report: CoherenceReport) -> Dict[str, float]:
    """Flat metric table of one coherence run."""
    metrics: Dict[str, float] = {
        "makespan": report.makespan,
        "off_chip_bytes": report.off_chip_bytes,
        "cpu_ops": report.cpu_ops,
        "pim_ops": report.pim_ops,
        "host_l1_hits": report.host_l1_hits,
        "host_l2_hits": report.host_l2_hits,
        "host_misses": report.host_misses,
        "pim_hits": report.pim_hits,
        "pim_misses": report.pim_misses,
    }
    for category, nbytes in report.bytes_by_category.items():
        metrics[f"bytes.{category}"] = nbytes
    for category, count in report.messages_by_category.items():
        metrics[f"messages.{category}"] = count
    metrics.update(report.metrics)
    return metrics


def _coherence_report(
    config: ExperimentConfig, workload: CoherenceWorkload, mechanism: MechanismKind, seed: int
) -> Tuple[MetricsReport, CoherenceReport]:
    coherence = config.coherence.model_copy(update={"mechanism": mechanism})
    report = run_coherence(workload, coherence, config.timing, config.profile, seed)
    metrics = MetricsReport(
        experiment=_experiment_label(config),
        mechanism=mechanism.value,
        seed=seed,
        metrics=coherence_metrics(report),
        kernels=report.kernel_log,
    )
    return metrics, report


def run_experiment(
    config: ExperimentConfig,
    seed: Optional[int] = None,
    base_folder: Path = Path("."),
    trace_folder: Optional[Path] = None,
) -> MetricsReport:
    """Run one experiment for one seed (the config's own seed by default).

    Args:
        config (ExperimentConfig): validated experiment
        seed (Optional[int]): seed overriding config.seed
        base_folder (Path): folder relative input paths are resolved against
        trace_folder (Optional[Path]): folder for JSON-lines traces, none written if None

    Raises:
        InvariantViolation: if a simulator invariant fails
    """
    seed = config.seed if seed is None else seed
    _LOG.info("Running %s (%s) with seed %s", _experiment_label(config), config.workload.kind, seed)
    if config.experiment == ExperimentKind.IMPICA_MICRO:
        return _run_impica_micro(config, seed, trace_folder)
    if config.experiment == ExperimentKind.IMPICA_SENSITIVITY:
        return _run_impica_sensitivity(config, seed)
    if config.experiment == ExperimentKind.TRANSLATION:
        return MetricsReport(
            experiment=_experiment_label(config),
            mechanism="rpt-vs-four-level",
            seed=seed,
            metrics=translation_sweep(config, seed),
        )
    workload = build_coherence_workload(config, seed, base_folder)
    metrics, report = _coherence_report(config, workload, config.coherence.mechanism, seed)
    if trace_folder is not None:
        write_jsonl(trace_path(trace_folder, KERNEL_TRACE, seed), report.kernel_log)
    return metrics


def _ratio(value: float, base: float) -> float:
    return value / base if base else 0.0


def compare_mechanisms(
    config: ExperimentConfig,
    mechanisms: Sequence[MechanismKind],
    seed: Optional[int] = None,
    base_folder: Path = Path("."),
    trace_folder: Optional[Path] = None,
) -> List[MetricsReport]:
    """Run one coherence workload under several mechanisms with a shared seed.

    The CPU-only arm always runs first; every report gains makespan and traffic ratios against
    it, and a speedup over it.

    Raises:
        ConfigError: if no mechanism is given or the experiment is not a coherence one
    """
    if not mechanisms:
        raise ConfigError("Error: compare needs at least one mechanism")
    if config.experiment != ExperimentKind.COHERENCE:
        raise ConfigError(
            f"Error: compare runs coherence experiments, not '{config.experiment.value}'"
        )
    seed = config.seed if seed is None else seed
    workload = build_coherence_workload(config, seed, base_folder)
    arms = [MechanismKind.CPU_ONLY] + [
        mechanism for mechanism in dict.fromkeys(mechanisms) if mechanism != MechanismKind.CPU_ONLY
    ]
    reports = []
    for mechanism in arms:
        metrics, report = _coherence_report(config, workload, mechanism, seed)
        if trace_folder is not None and mechanism == MechanismKind.LAZYPIM:
            write_jsonl(trace_path(trace_folder, KERNEL_TRACE, seed), report.kernel_log)
        reports.append(metrics)
    base = reports[0].metrics
    for report in reports:
        if report.mechanism == MechanismKind.CPU_ONLY.value:
            ratios = {"normalized_makespan": 1.0, "normalized_traffic": 1.0, "speedup": 1.0}
        else:
            ratios = {
                "normalized_makespan": _ratio(report.metrics["makespan"], base["makespan"]),
                "normalized_traffic": _ratio(
                    report.metrics["off_chip_bytes"], base["off_chip_bytes"]
                ),
                "speedup": _ratio(base["makespan"], report.metrics["makespan"]),
            }
        report.metrics.update(ratios)
    return reports


def harness_threads() -> int:
    """Worker processes for parallel sweeps, capped by PIMBENCH_THREADS."""
    threads = multiprocessing.cpu_count()
    limit = os.environ.get(THREADS_VARIABLE)
    if limit:
        try:
            threads = min(threads, int(limit))
        except ValueError as error:
            raise ConfigError(f"Error: {THREADS_VARIABLE}='{limit}' is not an integer") from error
    return max(threads, 1)


SweepTask = Tuple[int, int, ExperimentConfig, Path]


def run_task(task: SweepTask) -> Tuple[int, int, MetricsReport]:
    """Run a single (scenario, seed) task."""
    scenario_idx, seed, config, base_folder = task
    return scenario_idx, seed, run_experiment(config, seed, base_folder)


def run_simulations(params: JSONParameters, use_parallel: bool = False) -> List[MetricsReport]:
    """Run every scenario and seed of a parameters file.

    All scenarios are validated before the first run. Reports come back ordered by scenario
    index, then seed.
    """
    configs = [params.experiment(idx) for idx in range(len(params))]
    tasks: List[SweepTask] = [
        (idx, seed, config, params.folder)
        for idx, config in enumerate(configs)
        for seed in config.seeds
    ]
    results: List[Tuple[int, int, MetricsReport]] = []
    threads = harness_threads() if use_parallel else 1
    if threads > 1 and len(tasks) > 1:
        with multiprocessing.Pool(min(threads, len(tasks))) as pool:
            for result in tqdm(
                pool.imap_unordered(run_task, tasks),
                total=len(tasks),
                unit="run",
                smoothing=0,
            ):
                results.append(result)
    else:
        for result in tqdm(map(run_task, tasks), total=len(tasks), unit="run", smoothing=0):
            results.append(result)
    results.sort(key=lambda result: (result[0], result[1]))
    return [report for _, _, report in results]
