"""Region-based page table and the conventional four-level page table it is compared against."""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Tuple, Union

from pim_simulation.memory.memory_system import MemorySystem
from pim_simulation.pim_utils import VA_BITS

_LOG = logging.getLogger(__name__)

REGION_SHIFT = 41
FLAT_SHIFT = 21
SMALL_SHIFT = 12
REGION_TABLE_ENTRIES = 2 ** (VA_BITS - REGION_SHIFT)
FLAT_TABLE_ENTRIES = 2 ** (REGION_SHIFT - FLAT_SHIFT)
SMALL_TABLE_ENTRIES = 2 ** (FLAT_SHIFT - SMALL_SHIFT)
REGION_BYTES = 2**REGION_SHIFT
LARGE_PAGE = 2**FLAT_SHIFT
SMALL_PAGE = 2**SMALL_SHIFT
PAGE_SIZES = (SMALL_PAGE, LARGE_PAGE)

ENTRY_BYTES = 8
# Region table entries hold a 7 bit tag, flat table base and bookkeeping: 68B for 4 entries.
REGION_TABLE_ENTRY_BYTES = 17
FOUR_LEVEL_INDEX_BITS = 9
FOUR_LEVEL_LEVELS = 4


class TranslationException(Exception):
    """Base class of translation failures."""


class PageFault(TranslationException):
    """Virtual address has no mapping."""

    def __init__(self, va: int, region_id: Optional[int]):
        """Initialise with faulting address and region."""
        super().__init__(f"Page fault at {va:#x} in region {region_id}")
        self.va = va
        self.region_id = region_id


class NotAPimRegion(TranslationException):
    """Virtual address lies outside every allocated PIM region."""

    def __init__(self, va: int):
        """Initialise with the offending address."""
        super().__init__(f"Address {va:#x} is not inside an allocated PIM region")
        self.va = va


class NonCanonicalAddress(TranslationException):
    """Virtual address does not fit in 48 bits."""

    def __init__(self, va: int):
        """Initialise with the offending address."""
        super().__init__(f"Address {va:#x} is not a canonical 48-bit virtual address")
        self.va = va


class AllocationRefused(TranslationException):
    """A PIM region cannot be allocated."""


class VaFields(NamedTuple):
    """Bit-split of a virtual address as used by the region-based page table."""

    region: int
    flat: int
    small: int
    offset: int


def split_va(va: int) -> VaFields:
    """Split va into (bits 47-41, bits 40-21, bits 20-12, bits 11-0)."""
    check_canonical(va)
    return VaFields(
        va >> REGION_SHIFT,
        (va >> FLAT_SHIFT) & (FLAT_TABLE_ENTRIES - 1),
        (va >> SMALL_SHIFT) & (SMALL_TABLE_ENTRIES - 1),
        va & (SMALL_PAGE - 1),
    )


def check_canonical(va: int) -> None:
    """Reject addresses that are negative or above 2^48."""
    if va < 0 or va >> VA_BITS:
        raise NonCanonicalAddress(va)


@dataclass(frozen=True)
class RegionDescriptor:
    """A contiguous virtual range holding one linked data structure."""

    region_id: int
    va_base: int
    size_bytes: int
    leaf_size: int
    stack: int

    def contains(self, va: int) -> bool:
        """Whether va is inside this region."""
        return self.va_base <= va < self.va_base + self.size_bytes


@dataclass(frozen=True)
class WalkAccess:
    """One page-table entry read during a walk."""

    table: str
    pa: int


@dataclass(frozen=True)
class _LargeFrame:
    frame_pa: int


@dataclass
class _SmallTable:
    base_pa: int
    frames: Dict[int, int] = field(default_factory=dict)


@dataclass
class _FlatTable:
    base_pa: int
    entries: Dict[int, Union[_LargeFrame, _SmallTable]] = field(default_factory=dict)


class RegionPageTable:
    """Region table (always resident) -> flat 2MB-page table -> small 4KB-page table."""

    def __init__(self, memory: MemorySystem):
        """Create an empty region table."""
        self.memory = memory
        self.region_table: List[Optional[RegionDescriptor]] = [None] * REGION_TABLE_ENTRIES
        self._flat_tables: Dict[int, _FlatTable] = {}

    def allocate_region(
        self, size_bytes: int, leaf_size: int = SMALL_PAGE, stack: Optional[int] = None
    ) -> RegionDescriptor:
        """Reserve a region-aligned virtual range for PIM data.

        Args:
            size_bytes (int): size of the region, at most 2TB
            leaf_size (int): leaf page size used when the region is mapped
            stack (Optional[int]): stack to pin the region to (default placement policy if None)

        Returns:
            RegionDescriptor: the new region
        """
        if not 0 < size_bytes <= REGION_BYTES:
            raise AllocationRefused(f"Region size {size_bytes} must be in (0, {REGION_BYTES}]")
        if leaf_size not in PAGE_SIZES:
            raise AllocationRefused(f"Leaf size {leaf_size} is neither 4KB nor 2MB")
        try:
            region_id = self.region_table.index(None)
        except ValueError as err:
            raise AllocationRefused(
                f"Region table full ({REGION_TABLE_ENTRIES} regions allocated)"
            ) from err
        if stack is None:
            stack_id = self.memory.stack_for_region(region_id)
        else:
            stack_id = self.memory.map_region_to_stack(region_id, stack).stack_id
        region = RegionDescriptor(
            region_id, region_id << REGION_SHIFT, size_bytes, leaf_size, stack_id
        )
        self.region_table[region_id] = region
        _LOG.debug("Allocated PIM region %s at %#x", region_id, region.va_base)
        return region

    def allocated_regions(self) -> List[RegionDescriptor]:
        """Allocated regions in id order."""
        return [region for region in self.region_table if region is not None]

    def region_table_footprint(self) -> int:
        """Bytes of region-table storage held in the IMPICA cache."""
        return REGION_TABLE_ENTRY_BYTES * len(self.allocated_regions())

    def region_of(self, va: int) -> RegionDescriptor:
        """Region containing va."""
        fields = split_va(va)
        region = self.region_table[fields.region]
        if region is None or not region.contains(va):
            raise NotAPimRegion(va)
        return region

    def map_page(self, va: int, frame_pa: int, page_size: Optional[int] = None) -> None:
        """Map one page of a region to a physical frame."""
        region = self.region_of(va)
        page_size = region.leaf_size if page_size is None else page_size
        assert page_size in PAGE_SIZES, f"Unsupported page size {page_size}"
        assert va % page_size == 0, f"{va:#x} is not aligned to {page_size}"
        assert frame_pa % page_size == 0, f"Frame {frame_pa:#x} is not aligned to {page_size}"
        fields = split_va(va)
        flat = self._flat_table(region)
        entry = flat.entries.get(fields.flat)
        if page_size == LARGE_PAGE:
            assert not isinstance(entry, _SmallTable), f"{va:#x} already holds a small table"
            flat.entries[fields.flat] = _LargeFrame(frame_pa)
            return
        if entry is None:
            entry = _SmallTable(
                self.memory.allocate_frames(region.stack, SMALL_TABLE_ENTRIES * ENTRY_BYTES)
            )
            flat.entries[fields.flat] = entry
        assert isinstance(entry, _SmallTable), f"{va:#x} already mapped by a 2MB page"
        entry.frames[fields.small] = frame_pa

    def map_region(self, region: RegionDescriptor) -> int:
        """Back a whole region with contiguous frames on its stack; returns the frame base."""
        pages = -(-region.size_bytes // region.leaf_size)
        base = self.memory.allocate_frames(
            region.stack, pages * region.leaf_size, alignment=region.leaf_size
        )
        for page in range(pages):
            self.map_page(
                region.va_base + page * region.leaf_size, base + page * region.leaf_size
            )
        return base

    def translate(self, va: int) -> Tuple[int, List[WalkAccess]]:
        """Walk the tables for va.

        Returns:
            Tuple[int, List[WalkAccess]]: physical address and the table entries read
        """
        region = self.region_of(va)
        fields = split_va(va)
        flat = self._flat_tables.get(region.region_id)
        if flat is None:
            raise PageFault(va, region.region_id)
        trace = [WalkAccess("flat", flat.base_pa + fields.flat * ENTRY_BYTES)]
        entry = flat.entries.get(fields.flat)
        if entry is None:
            raise PageFault(va, region.region_id)
        if isinstance(entry, _LargeFrame):
            return entry.frame_pa + (va & (LARGE_PAGE - 1)), trace
        trace.append(WalkAccess("small", entry.base_pa + fields.small * ENTRY_BYTES))
        frame = entry.frames.get(fields.small)
        if frame is None:
            raise PageFault(va, region.region_id)
        return frame + fields.offset, trace

    def page_size_of(self, va: int) -> int:
        """Leaf size of the mapping holding va."""
        region = self.region_of(va)
        flat = self._flat_tables.get(region.region_id)
        entry = None if flat is None else flat.entries.get(split_va(va).flat)
        return LARGE_PAGE if isinstance(entry, _LargeFrame) else SMALL_PAGE

    def mapping_dump(self) -> List[Dict[str, int]]:
        """Region descriptors as plain dictionaries."""
        return [asdict(region) for region in self.allocated_regions()]

    def write_mapping_dump(self, path: Path) -> None:
        """Write the mapping dump as JSON."""
        with open(path, "w", encoding="utf8") as file:
            json.dump(self.mapping_dump(), file, indent=2)

    def _flat_table(self, region: RegionDescriptor) -> _FlatTable:
        flat = self._flat_tables.get(region.region_id)
        if flat is None:
            flat = _FlatTable(
                self.memory.allocate_frames(region.stack, FLAT_TABLE_ENTRIES * ENTRY_BYTES)
            )
            self._flat_tables[region.region_id] = flat
        return flat


@dataclass
class _Node:
    base_pa: int
    children: Dict[int, Union["_Node", int]] = field(default_factory=dict)


class FourLevelPageTable:
    """Four chained 512-entry levels over va bits 47-12 with 4KB leaves."""

    def __init__(self, memory: MemorySystem, stack: int = 0):
        """Create a table with an empty root node."""
        self.memory = memory
        self.stack = stack
        self.root = self._new_node()
        self.nodes = 1

    def map_page(self, va: int, frame_pa: int, page_size: int = SMALL_PAGE) -> None:
        """Map a page; 2MB pages are entered as 512 consecutive 4KB leaves."""
        check_canonical(va)
        assert page_size in PAGE_SIZES, f"Unsupported page size {page_size}"
        assert va % page_size == 0, f"{va:#x} is not aligned to {page_size}"
        for offset in range(0, page_size, SMALL_PAGE):
            self._map_small(va + offset, frame_pa + offset)

    def translate(self, va: int) -> Tuple[int, List[WalkAccess]]:
        """Walk all four levels for va."""
        check_canonical(va)
        trace: List[WalkAccess] = []
        node: Union[_Node, int] = self.root
        for level in range(FOUR_LEVEL_LEVELS, 0, -1):
            assert isinstance(node, _Node)
            index = self._index(va, level)
            trace.append(WalkAccess(f"l{level}", node.base_pa + index * ENTRY_BYTES))
            child = node.children.get(index)
            if child is None:
                raise PageFault(va, None)
            node = child
        assert isinstance(node, int)
        return node + (va & (SMALL_PAGE - 1)), trace

    def _map_small(self, va: int, frame_pa: int) -> None:
        node = self.root
        for level in range(FOUR_LEVEL_LEVELS, 1, -1):
            index = self._index(va, level)
            child = node.children.get(index)
            if child is None:
                child = self._new_node()
                self.nodes += 1
                node.children[index] = child
            assert isinstance(child, _Node)
            node = child
        node.children[self._index(va, 1)] = frame_pa

    def _new_node(self) -> _Node:
        return _Node(self.memory.allocate_frames(self.stack, SMALL_TABLE_ENTRIES * ENTRY_BYTES))

    @staticmethod
    def _index(va: int, level: int) -> int:
        shift = SMALL_SHIFT + FOUR_LEVEL_INDEX_BITS * (level - 1)
        return (va >> shift) & (2**FOUR_LEVEL_INDEX_BITS - 1)
