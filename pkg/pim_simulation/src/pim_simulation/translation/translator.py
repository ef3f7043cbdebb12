"""PIM-side address translation: TLB in front of a region-based or four-level page table."""

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

from pim_simulation.memory.memory_system import MemorySystem
from pim_simulation.pim_utils import InvariantViolation
from pim_simulation.translation.page_tables import (
    REGION_SHIFT,
    SMALL_PAGE,
    FourLevelPageTable,
    RegionDescriptor,
    RegionPageTable,
    WalkAccess,
)
from pim_simulation.translation.tlb import PimTlb

MAX_RPT_WALK = 2


class PageTableKind(Enum):
    """Page table organisation used by the access engine."""

    RPT = "rpt"
    FOUR_LEVEL = "four-level"


@dataclass(frozen=True)
class Translation:
    """Result of one translation."""

    va: int
    pa: int
    walk: List[WalkAccess] = field(default_factory=list)
    tlb_hit: bool = False


class PimTranslator:
    """Translates PIM virtual addresses, keeping both table kinds mapped identically."""

    def __init__(
        self,
        memory: MemorySystem,
        kind: PageTableKind = PageTableKind.RPT,
        tlb_entries: int = 32,
        with_four_level: bool = False,
    ):
        """Create empty tables and TLB.

        Args:
            memory (MemorySystem): memory system page-table storage is allocated from
            kind (PageTableKind): table used by translate()
            tlb_entries (int): TLB size
            with_four_level (bool): also maintain a four-level table (forced for FOUR_LEVEL)
        """
        self.kind = kind
        self.rpt = RegionPageTable(memory)
        self.four_level: Optional[FourLevelPageTable] = None
        if with_four_level or kind == PageTableKind.FOUR_LEVEL:
            self.four_level = FourLevelPageTable(memory, memory.default_stack)
        self.tlb = PimTlb(tlb_entries)
        self.translations = 0
        self.walks = 0
        self.walk_accesses = 0

    def allocate_region(
        self, size_bytes: int, leaf_size: int = SMALL_PAGE, stack: Optional[int] = None
    ) -> RegionDescriptor:
        """Allocate a PIM region (tables are filled by map_region / map_page)."""
        return self.rpt.allocate_region(size_bytes, leaf_size, stack)

    def map_region(self, region: RegionDescriptor) -> int:
        """Back a region with frames in every maintained table."""
        base = self.rpt.map_region(region)
        if self.four_level is not None:
            pages = -(-region.size_bytes // region.leaf_size)
            for page in range(pages):
                offset = page * region.leaf_size
                self.four_level.map_page(region.va_base + offset, base + offset, region.leaf_size)
        return base

    def map_page(self, va: int, frame_pa: int, page_size: Optional[int] = None) -> None:
        """Map one page identically in every maintained table."""
        self.rpt.map_page(va, frame_pa, page_size)
        if self.four_level is not None:
            self.four_level.map_page(va, frame_pa, page_size or self.rpt.region_of(va).leaf_size)

    def translate(self, va: int) -> Translation:
        """Translate with the configured table kind and the TLB enabled."""
        if self.kind == PageTableKind.FOUR_LEVEL:
            return self.translate_4level(va)
        return self.translate_rpt(va)

    def translate_rpt(self, va: int, tlb_enabled: bool = True) -> Translation:
        """Translate through the TLB and the region-based page table."""
        self.translations += 1
        if tlb_enabled:
            pa = self.tlb.lookup(va)
            if pa is not None:
                return Translation(va, pa, [], True)
        pa, walk = self.rpt.translate(va)
        if len(walk) > MAX_RPT_WALK:
            raise InvariantViolation(
                "rpt-walk-depth", f"walk for {va:#x} read {len(walk)} table entries"
            )
        self._walked(walk)
        if tlb_enabled:
            self.tlb.insert(va, pa, self.rpt.page_size_of(va), va >> REGION_SHIFT)
        return Translation(va, pa, walk, False)

    def translate_4level(self, va: int, tlb_enabled: bool = True) -> Translation:
        """Translate through the TLB and the four-level page table."""
        assert self.four_level is not None, "Four-level table not maintained"
        self.translations += 1
        if tlb_enabled:
            pa = self.tlb.lookup(va)
            if pa is not None:
                return Translation(va, pa, [], True)
        pa, walk = self.four_level.translate(va)
        self._walked(walk)
        if tlb_enabled:
            self.tlb.insert(va, pa, SMALL_PAGE, va >> REGION_SHIFT)
        return Translation(va, pa, walk, False)

    def tlb_shootdown(self, region_id: int) -> int:
        """Invalidate every TLB entry of a region."""
        return self.tlb.shootdown(region_id)

    def _walked(self, walk: List[WalkAccess]) -> None:
        self.walks += 1
        self.walk_accesses += len(walk)
