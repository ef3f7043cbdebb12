"""Region-based and four-level page table tests."""

import json
from pathlib import Path
from typing import Any, Dict, Tuple

import pytest

from pim_simulation.memory.memory_system import MemorySystem
from pim_simulation.pim_utils import child_rng
from pim_simulation.translation.page_tables import (
    LARGE_PAGE,
    REGION_TABLE_ENTRIES,
    SMALL_PAGE,
    AllocationRefused,
    NonCanonicalAddress,
    NotAPimRegion,
    PageFault,
    RegionDescriptor,
    split_va,
)
from pim_simulation.translation.tlb import PimTlb
from pim_simulation.translation.translator import PageTableKind, PimTranslator

SAMPLES = 10_000


def mapped_translator(
    size: int = 2**26, leaf_size: int = SMALL_PAGE
) -> Tuple[PimTranslator, RegionDescriptor, int]:
    """Translator maintaining both tables over one mapped region."""
    translator = PimTranslator(MemorySystem(), PageTableKind.RPT, with_four_level=True)
    region = translator.allocate_region(size, leaf_size)
    base = translator.map_region(region)
    return translator, region, base


@pytest.fixture(name="small_leaf", scope="module")
def fixture_small_leaf() -> Tuple[PimTranslator, RegionDescriptor, int]:
    """A 64MB region of 4KB pages."""
    return mapped_translator()


@pytest.mark.unit
def test_split_va() -> None:
    """Is a virtual address split into region, flat, small and offset fields."""
    va = (5 << 41) | (123 << 21) | (77 << 12) | 0xABC
    assert tuple(split_va(va)) == (5, 123, 77, 0xABC)
    with pytest.raises(NonCanonicalAddress):
        split_va(2**48)


@pytest.mark.unit
def test_first_region_aligned() -> None:
    """Does the first region get id 0 and a region-aligned base."""
    translator = PimTranslator(MemorySystem())
    region = translator.allocate_region(2**20)
    assert region.region_id == 0
    assert region.va_base & (2**41 - 1) == 0
    second = translator.allocate_region(2**20)
    assert second.region_id == 1
    assert second.va_base == 2**41


@pytest.mark.unit
def test_region_table_footprint() -> None:
    """Does a 4-entry region table take 68 bytes."""
    translator = PimTranslator(MemorySystem())
    for _ in range(4):
        translator.allocate_region(2**20)
    assert translator.rpt.region_table_footprint() == 68


@pytest.mark.unit
def test_region_table_full() -> None:
    """Is the 129th region refused."""
    translator = PimTranslator(MemorySystem())
    for _ in range(REGION_TABLE_ENTRIES):
        translator.allocate_region(SMALL_PAGE)
    with pytest.raises(AllocationRefused):
        translator.allocate_region(SMALL_PAGE)


@pytest.mark.unit
def test_region_size_limits() -> None:
    """Are empty regions, regions above 2TB and odd leaf sizes refused."""
    translator = PimTranslator(MemorySystem())
    with pytest.raises(AllocationRefused):
        translator.allocate_region(0)
    with pytest.raises(AllocationRefused):
        translator.allocate_region(2**41 + 1)
    with pytest.raises(AllocationRefused):
        translator.allocate_region(2**20, leaf_size=8192)


@pytest.mark.unit
def test_large_page_single_access() -> None:
    """Does a 2MB leaf translate with one table access and keep the page offset."""
    translator, region, base = mapped_translator(4 * LARGE_PAGE, LARGE_PAGE)
    first = translator.translate_rpt(region.va_base, tlb_enabled=False)
    assert first.pa == base
    assert len(first.walk) == 1
    inside = translator.translate_rpt(region.va_base + LARGE_PAGE + 12345, tlb_enabled=False)
    assert inside.pa == base + LARGE_PAGE + 12345


@pytest.mark.unit
def test_translation_faults() -> None:
    """Are unmapped, foreign and non-canonical addresses reported."""
    translator = PimTranslator(MemorySystem())
    region = translator.allocate_region(2**20)
    with pytest.raises(PageFault) as fault:
        translator.translate_rpt(region.va_base, tlb_enabled=False)
    assert fault.value.region_id == region.region_id
    with pytest.raises(NotAPimRegion):
        translator.translate_rpt(region.va_base + 2**41)
    with pytest.raises(NotAPimRegion):
        translator.translate_rpt(region.va_base + 2**20)
    with pytest.raises(NonCanonicalAddress):
        translator.translate_rpt(2**48 + 64)


@pytest.mark.slow
def test_walk_depth_and_oracle(small_leaf: Tuple[PimTranslator, RegionDescriptor, int]) -> None:
    """Do 10^4 TLB-missing translations walk 2 vs 4 entries and agree with a flat reference."""
    translator, region, base = small_leaf
    offsets = child_rng(1, 1).integers(0, region.size_bytes, size=SAMPLES)
    rpt_total = 0
    four_level_total = 0
    for offset in offsets.tolist():
        va = region.va_base + offset
        rpt = translator.translate_rpt(va, tlb_enabled=False)
        four_level = translator.translate_4level(va, tlb_enabled=False)
        assert len(rpt.walk) == 2, f"RPT walk for {va:#x} read {len(rpt.walk)} entries"
        assert len(four_level.walk) == 4, f"Four-level walk for {va:#x} was not 4 entries"
        assert rpt.pa == four_level.pa == base + offset, f"Tables disagree on {va:#x}"
        rpt_total += len(rpt.walk)
        four_level_total += len(four_level.walk)
    assert four_level_total / rpt_total == 2.0


@pytest.mark.unit
def test_tlb_hit_matches_walk(small_leaf: Tuple[PimTranslator, RegionDescriptor, int]) -> None:
    """Does a TLB hit give the cold-walk address without touching the tables."""
    translator, region, _ = small_leaf
    va = region.va_base + 5 * SMALL_PAGE + 40
    cold = translator.translate_rpt(va, tlb_enabled=False)
    translator.translate_rpt(va)
    hit = translator.translate_rpt(va)
    assert hit.tlb_hit
    assert hit.walk == []
    assert hit.pa == cold.pa


@pytest.mark.unit
def test_shootdown() -> None:
    """Does a shootdown drop exactly one region's entries."""
    translator = PimTranslator(MemorySystem())
    first = translator.allocate_region(2**20)
    second = translator.allocate_region(2**20)
    translator.map_region(first)
    translator.map_region(second)
    assert translator.tlb_shootdown(first.region_id) == 0
    for page in range(3):
        translator.translate(first.va_base + page * SMALL_PAGE)
    for page in range(2):
        translator.translate(second.va_base + page * SMALL_PAGE)
    assert len(translator.tlb) == 5
    assert translator.tlb_shootdown(first.region_id) == 3
    assert len(translator.tlb) == 2
    again = translator.translate(first.va_base)
    assert not again.tlb_hit
    assert len(again.walk) == 2


@pytest.mark.unit
def test_tlb_lru() -> None:
    """Does the TLB evict its least recently used entry."""
    tlb = PimTlb(2)
    tlb.insert(0, 0x10000, SMALL_PAGE, 0)
    tlb.insert(SMALL_PAGE, 0x20000, SMALL_PAGE, 0)
    assert tlb.lookup(8) == 0x10008
    tlb.insert(2 * SMALL_PAGE, 0x30000, SMALL_PAGE, 0)
    assert tlb.lookup(SMALL_PAGE) is None, "Least recently used entry was kept"
    assert tlb.lookup(0) == 0x10000
    assert tlb.lookup(2 * SMALL_PAGE + 1) == 0x30001
    assert (tlb.hits, tlb.misses) == (3, 1)


@pytest.mark.unit
def test_four_level_page_table_kind() -> None:
    """Does a four-level translator walk four entries per TLB miss."""
    translator = PimTranslator(MemorySystem(), PageTableKind.FOUR_LEVEL)
    region = translator.allocate_region(16 * SMALL_PAGE)
    base = translator.map_region(region)
    result = translator.translate(region.va_base + 3 * SMALL_PAGE + 8)
    assert len(result.walk) == 4
    assert result.pa == base + 3 * SMALL_PAGE + 8
    assert translator.walk_accesses == 4


@pytest.mark.unit
def test_mapping_dump(tmp_path: Path) -> None:
    """Are region descriptors written as JSON."""
    translator = PimTranslator(MemorySystem())
    translator.allocate_region(2**20)
    translator.allocate_region(LARGE_PAGE, LARGE_PAGE)
    path = tmp_path / "mapping.json"
    translator.rpt.write_mapping_dump(path)
    with open(path, encoding="utf8") as file:
        dump: Any = json.load(file)
    expected: Dict[str, int] = {
        "region_id": 1,
        "va_base": 2**41,
        "size_bytes": LARGE_PAGE,
        "leaf_size": LARGE_PAGE,
        "stack": 0,
    }
    assert dump[1] == expected
    assert len(dump) == 2
