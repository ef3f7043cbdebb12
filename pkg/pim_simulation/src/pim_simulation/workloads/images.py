"""Memory images of the linked data structures placed in PIM regions."""

from typing import Dict, List, Union

import numpy as np

from pim_simulation.impica.program import Words
from pim_simulation.pim_utils import WORD_BYTES
from pim_simulation.translation.page_tables import REGION_SHIFT, RegionDescriptor
from pim_simulation.translation.translator import PimTranslator


class LinkedDataImage:
    """Word contents of one or more PIM regions, addressed by virtual address."""

    def __init__(self) -> None:
        """Create an image with no regions."""
        self.regions: Dict[int, RegionDescriptor] = {}
        self.words: Dict[int, Words] = {}

    def add_region(self, region: RegionDescriptor) -> Words:
        """Attach zeroed storage for a region and return its word array."""
        assert region.size_bytes % WORD_BYTES == 0, "Region size not a multiple of a word"
        words = np.zeros(region.size_bytes // WORD_BYTES, dtype=np.uint64)
        self.regions[region.region_id] = region
        self.words[region.region_id] = words
        return words

    def _locate(self, va: int, count: int) -> Words:
        region = self.regions.get(va >> REGION_SHIFT)
        assert region is not None, f"Address {va:#x} is outside every region of the image"
        assert va % WORD_BYTES == 0, f"Unaligned word address {va:#x}"
        offset = (va - region.va_base) // WORD_BYTES
        assert offset + count <= len(self.words[region.region_id]), f"Read past {va:#x}"
        return self.words[region.region_id][offset : offset + count]

    def read_words(self, va: int, count: int) -> Words:
        """Copy of count words starting at va."""
        return self._locate(va, count).copy()

    def write_words(self, va: int, values: Union[Words, List[int]]) -> None:
        """Overwrite words starting at va."""
        target = self._locate(va, len(values))
        target[:] = np.asarray(values, dtype=np.uint64)

    def read_word(self, va: int) -> int:
        """Single word as a Python integer."""
        return int(self._locate(va, 1)[0])

    def digest(self) -> bytes:
        """Bytes of every region in region order, for replayability checks."""
        return b"".join(self.words[rid].tobytes() for rid in sorted(self.words))


def place_region(
    translator: PimTranslator, image: LinkedDataImage, size_bytes: int, leaf_size: int
) -> RegionDescriptor:
    """Allocate, map and attach storage for one PIM region."""
    region = translator.allocate_region(size_bytes, leaf_size)
    translator.map_region(region)
    image.add_region(region)
    return region
