"""Fully associative PIM-side TLB with least-recently-used replacement."""

import logging
from collections import OrderedDict
from typing import NamedTuple, Optional, Tuple

from pim_simulation.translation.page_tables import PAGE_SIZES

_LOG = logging.getLogger(__name__)


class TlbEntry(NamedTuple):
    """Cached translation of one page."""

    frame_pa: int
    page_size: int
    region_id: Optional[int]


class PimTlb:
    """TLB keyed by (page size, virtual page number)."""

    def __init__(self, entries: int = 32):
        """Initialise an empty TLB."""
        assert entries > 0, "TLB needs at least one entry"
        self.capacity = entries
        self._entries: "OrderedDict[Tuple[int, int], TlbEntry]" = OrderedDict()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        """Number of valid entries."""
        return len(self._entries)

    def lookup(self, va: int) -> Optional[int]:
        """Physical address of va on a hit, None on a miss."""
        for page_size in PAGE_SIZES:
            key = (page_size, va // page_size)
            entry = self._entries.get(key)
            if entry is not None:
                self._entries.move_to_end(key)
                self.hits += 1
                return entry.frame_pa + va % page_size
        self.misses += 1
        return None

    def insert(self, va: int, pa: int, page_size: int, region_id: Optional[int]) -> None:
        """Cache the translation of the page holding va."""
        assert page_size in PAGE_SIZES, f"Unsupported page size {page_size}"
        key = (page_size, va // page_size)
        if key not in self._entries and len(self._entries) >= self.capacity:
            self._entries.popitem(last=False)
        self._entries[key] = TlbEntry(pa - va % page_size, page_size, region_id)
        self._entries.move_to_end(key)

    def shootdown(self, region_id: int) -> int:
        """Drop every entry of a region and return how many were dropped."""
        doomed = [key for key, entry in self._entries.items() if entry.region_id == region_id]
        for key in doomed:
            del self._entries[key]
        if doomed:
            _LOG.debug("TLB shootdown of region %s dropped %s entries", region_id, len(doomed))
        return len(doomed)
