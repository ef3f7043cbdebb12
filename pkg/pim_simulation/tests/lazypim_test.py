"""LazyPIM speculation tests: commits, rollbacks, the locked fallback and its accounting."""

import pytest

from pim_simulation.coherence.oracle import check_serializable
from pim_simulation.coherence.system import CoherenceConfig, CoherenceSystem, MechanismKind
from pim_simulation.lazypim.protocol import LazyPimMechanism
from pim_simulation.lazypim.speculation import KernelRecord, Outcome, merge_commit_line
from pim_simulation.simulator import run_coherence
from pim_simulation.workloads.coherence_workloads import (
    KernelSpec,
    Op,
    OpKind,
    gen_adversarial,
    gen_graph_kernel,
    gen_htap,
    gen_random_sharing,
)

LAZY = CoherenceConfig(mechanism=MechanismKind.LAZYPIM)


@pytest.mark.unit
@pytest.mark.parametrize("seed", range(50))
def test_adversarial_writer_forces_locked_commit(seed: int) -> None:
    """Does a kernel under a constant CPU writer roll back three times, then commit locked."""
    workload = gen_adversarial(seed)
    report = run_coherence(workload, LAZY, seed=seed)
    (kernel,) = report.kernel_log
    assert kernel["attempts"] == 4
    assert kernel["rollbacks"] == 3
    assert kernel["outcome"] == Outcome.LOCKED_COMMIT.value
    assert kernel["conflict-lines"] == [workload.params["target"]]
    assert kernel["signature-bytes"] == 4 * 2 * 256
    assert kernel["flush-bytes"] > 0, "Rollback never flushed the written line"
    assert report.metrics["rollbacks"] == 3
    assert report.metrics["locked_commits"] == 1
    assert report.metrics["commits"] == 0
    assert report.metrics["conflict_rate"] == 1.0
    assert report.metrics["blocked_accesses"] >= 1, "Writer never waited on the locked line"


@pytest.mark.unit
def test_rollback_limit_is_configurable() -> None:
    """Does a limit of one rollback lock the kernel on its second attempt."""
    workload = gen_adversarial(0)
    config = CoherenceConfig(mechanism=MechanismKind.LAZYPIM, rollback_limit=1)
    (kernel,) = run_coherence(workload, config).kernel_log
    assert (kernel["attempts"], kernel["rollbacks"]) == (2, 1)


@pytest.mark.unit
def test_lone_kernel_commits_first_try() -> None:
    """Does a kernel with no CPU activity commit on its first attempt."""
    ops = tuple(Op(OpKind.RMW, line, 0, operand=1) for line in range(4))
    kernel = KernelSpec(0, 0, 0.0, ops)
    workload = gen_adversarial(0)
    workload.cpu_streams = [[]]
    workload.kernels = [kernel]
    report = run_coherence(workload, LAZY)
    assert report.metrics["commits"] == 1
    assert report.metrics["rollbacks"] == 0
    (record,) = report.kernel_log
    assert record["outcome"] == Outcome.COMMITTED.value
    assert record["flush-bytes"] == 0 and record["invalidation-bytes"] == 0
    for line in range(4):
        assert report.final_memory[line][0] == workload.initial[line][0] + 1


@pytest.mark.unit
def test_htap_without_transactions_never_rolls_back() -> None:
    """Do analytic kernels with no transactions all commit first try."""
    workload = gen_htap(n_tuples=2000, n_transactions=0, n_analytic_kernels=8, seed=2)
    report = run_coherence(workload, LAZY)
    assert report.metrics["commits"] == 8
    assert report.metrics["rollbacks"] == 0
    assert all(kernel["attempts"] == 1 for kernel in report.kernel_log)


@pytest.mark.unit
@pytest.mark.parametrize("seed", range(5))
def test_traffic_identity(seed: int) -> None:
    """Do the per-kernel byte counts add up to the signature, flush and coherence ledgers."""
    workload = gen_graph_kernel(
        n_vertices=128, n_edges=256, cpu_threads=4, pim_kernels=4, seed=seed, store_fraction=0.05
    )
    report = run_coherence(workload, LAZY, seed=seed)
    kernels = report.kernel_log
    assert len(kernels) == len(workload.kernels)
    ledger = report.bytes_by_category
    assert ledger["signature"] == sum(kernel["signature-bytes"] for kernel in kernels)
    assert ledger["flush"] == sum(kernel["flush-bytes"] for kernel in kernels)
    assert ledger["coherence"] == sum(kernel["invalidation-bytes"] for kernel in kernels)
    assert sum(kernel["bytes"] for kernel in kernels) == (
        ledger["signature"] + ledger["flush"] + ledger["coherence"]
    )
    assert report.metrics["commit_invalidations"] * 8 == ledger["coherence"]


@pytest.mark.unit
@pytest.mark.parametrize("seed", range(5))
def test_exact_signatures_have_no_false_positives(seed: int) -> None:
    """Are all detected conflicts real when the signatures are exact sets."""
    workload = gen_graph_kernel(
        n_vertices=128, n_edges=256, cpu_threads=4, pim_kernels=4, seed=seed, store_fraction=0.05
    )
    config = CoherenceConfig(mechanism=MechanismKind.LAZYPIM, exact_signatures=True)
    report = run_coherence(workload, config, seed=seed)
    assert report.metrics["false_positive_conflicts"] == 0


@pytest.mark.slow
def test_random_sharing_against_oracle() -> None:
    """Over 1000 random workloads, is every exact conflict rolled back and the result serial."""
    for seed in range(1000):
        workload = gen_random_sharing(seed)
        system = CoherenceSystem(workload, LAZY, LazyPimMechanism, seed=seed)
        report = system.run()
        check_serializable(workload, report.log, report.final_memory)
        mechanism = system.mechanism
        assert isinstance(mechanism, LazyPimMechanism)
        for record in mechanism.records:
            assert record.outcome in (Outcome.COMMITTED, Outcome.LOCKED_COMMIT)
            for attempt in record.attempts:
                if attempt.exact_conflict:
                    assert attempt.outcome == Outcome.ROLLED_BACK, f"seed {seed}"
        assert report.metrics["commits"] + report.metrics["locked_commits"] == len(
            workload.kernels
        )


@pytest.mark.unit
def test_merge_commit_line() -> None:
    """Are only the words a kernel wrote taken from its speculative line."""
    dram = list(range(8))
    speculative = [100 + word for word in range(8)]
    assert merge_commit_line(dram, speculative, 0) == dram
    assert merge_commit_line(dram, speculative, 0xFF) == speculative
    assert merge_commit_line(dram, speculative, 0b101) == [100, 1, 102, 3, 4, 5, 6, 7]
    with pytest.raises(AssertionError):
        merge_commit_line(dram, speculative, 0x100)


@pytest.mark.unit
def test_kernel_record_outcome_rules() -> None:
    """Is the outcome set once, never to a rollback, and required before summarising."""
    record = KernelRecord(KernelSpec(3, 1, 0.0, ()))
    with pytest.raises(AssertionError):
        record.to_dict()
    with pytest.raises(AssertionError):
        record.set_outcome(Outcome.ROLLED_BACK)
    record.set_outcome(Outcome.COMMITTED)
    with pytest.raises(AssertionError):
        record.set_outcome(Outcome.LOCKED_COMMIT)
    summary = record.to_dict()
    assert summary["kernel-id"] == 3 and summary["pim-core"] == 1
    assert summary["attempts"] == 0 and summary["bytes"] == 0
