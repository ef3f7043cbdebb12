"""IMPICA cache: set-associative, with lock bits, request ids and root bits in the tags."""

from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Optional

from pim_simulation.pim_utils import LINE_BYTES, InvariantViolation


@dataclass
class ImpicaCacheLine:
    """Tag state of one cached line."""

    tag: int
    request_id: Optional[int]
    root: bool
    lock_count: int = 0
    last_used: int = 0

    @property
    def locked(self) -> bool:
        """Whether a response holding this line is still waiting for the address engine."""
        return self.lock_count > 0


class ImpicaCache:
    """Physically tagged cache whose locked lines are never evicted."""

    def __init__(self, size_bytes: int, ways: int, line_bytes: int = LINE_BYTES):
        """Build an empty cache."""
        assert size_bytes % (ways * line_bytes) == 0, "Cache size not a multiple of a set"
        self.ways = ways
        self.line_bytes = line_bytes
        self.num_sets = size_bytes // (ways * line_bytes)
        self.sets: List[List[ImpicaCacheLine]] = [[] for _ in range(self.num_sets)]
        self._tick = 0
        self.hits = 0
        self.misses = 0
        self.evictions = 0

    def set_index(self, tag: int) -> int:
        """Set holding a line address."""
        return (tag // self.line_bytes) % self.num_sets

    def find(self, tag: int) -> Optional[ImpicaCacheLine]:
        """Line with this tag, or None."""
        for line in self.sets[self.set_index(tag)]:
            if line.tag == tag:
                return line
        return None

    def contains_all(self, tags: List[int]) -> bool:
        """Whether every line is present, counting a hit or a miss."""
        present = all(self.find(tag) is not None for tag in tags)
        if present:
            self.hits += 1
        else:
            self.misses += 1
        return present

    def can_insert(self, tags: List[int]) -> bool:
        """Whether every absent line has an unlocked or free way in its set."""
        wanted = set(tags)
        needed: Dict[int, int] = Counter(
            self.set_index(tag) for tag in wanted if self.find(tag) is None
        )
        for index, count in needed.items():
            available = sum(
                1 for line in self.sets[index] if not line.locked and line.tag not in wanted
            )
            available += self.ways - len(self.sets[index])
            if available < count:
                return False
        return True

    def insert_locked(self, tag: int, request_id: int, root: bool) -> Optional[int]:
        """Insert (or re-lock) a line for a response; returns the evicted tag, if any."""
        self._tick += 1
        line = self.find(tag)
        if line is not None:
            line.lock_count += 1
            line.last_used = self._tick
            line.root = line.root or root
            if line.request_id is not None and not line.root:
                line.request_id = request_id
            return None
        cache_set = self.sets[self.set_index(tag)]
        evicted = None
        if len(cache_set) >= self.ways:
            victim = self._victim(cache_set)
            cache_set.remove(victim)
            self.evictions += 1
            evicted = victim.tag
        cache_set.append(ImpicaCacheLine(tag, request_id, root, 1, self._tick))
        return evicted

    def unlock(self, tag: int) -> None:
        """Release one lock on a line."""
        line = self.find(tag)
        assert line is not None and line.locked, f"Line {tag:#x} is not locked"
        line.lock_count -= 1

    def evict_request(self, request_id: int) -> List[int]:
        """Evict the lines fetched by a finished traversal; root lines stay as shared lines."""
        evicted: List[int] = []
        for cache_set in self.sets:
            for line in list(cache_set):
                if line.request_id != request_id:
                    continue
                if line.root or line.locked:
                    line.request_id = None
                else:
                    cache_set.remove(line)
                    evicted.append(line.tag)
        return evicted

    def lines_of(self, request_id: int) -> List[int]:
        """Tags currently stamped with a request id."""
        return [line.tag for s in self.sets for line in s if line.request_id == request_id]

    def locked_lines(self) -> int:
        """Number of locked lines."""
        return sum(1 for s in self.sets for line in s if line.locked)

    @staticmethod
    def _victim(cache_set: List[ImpicaCacheLine]) -> ImpicaCacheLine:
        unlocked = [line for line in cache_set if not line.locked]
        if not unlocked:
            raise InvariantViolation("impica-lock-safety", "eviction from a fully locked set")
        non_root = [line for line in unlocked if not line.root]
        return min(non_root or unlocked, key=lambda line: line.last_used)
