"""Linked list, hash table and B-tree microbenchmarks for the IMPICA accelerator."""

import logging
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from pim_simulation.impica.program import Compute, Emit, Load, ProgramBody, TraversalProgram
from pim_simulation.pim_utils import (
    LINE_BYTES,
    NULL_POINTER,
    WORD_BYTES,
    MultiplyShiftHash,
    child_rng,
)
from pim_simulation.translation.page_tables import SMALL_PAGE
from pim_simulation.translation.translator import PimTranslator
from pim_simulation.workloads.images import LinkedDataImage, place_region

_LOG = logging.getLogger(__name__)

LIST_NODE_BYTES = LINE_BYTES
LIST_PAYLOAD_WORDS = LIST_NODE_BYTES // WORD_BYTES - 1

BUCKET_BYTES = WORD_BYTES
HASH_NODE_BYTES = LINE_BYTES
MAX_LOAD_FACTOR = 4.0

BTREE_FANOUT = 16
BTREE_MAX_KEYS = BTREE_FANOUT - 1
BTREE_MIN_KEYS = -(-BTREE_FANOUT // 2) - 1
BTREE_KEY_SLOTS = BTREE_FANOUT
BTREE_CHILD_SLOTS = BTREE_FANOUT + 1
BTREE_NODE_WORDS = 1 + BTREE_KEY_SLOTS + BTREE_CHILD_SLOTS
BTREE_NODE_BYTES = BTREE_NODE_WORDS * WORD_BYTES
BTREE_SLOT_BYTES = -(-BTREE_NODE_BYTES // LINE_BYTES) * LINE_BYTES
BTREE_LEAF_BIT = 1 << 63
BTREE_COUNT_MASK = 0xFFFF

# Sub-streams of the run seed.
PLACEMENT_STREAM = 1
CONTENT_STREAM = 2
HASH_STREAM = 3
QUERY_STREAM = 4

DEFAULT_COMPUTE_CYCLES = 11.0


@dataclass
class PointerWorkload:
    """Image plus the traversals to run over it and their expected results."""

    kind: str
    image: LinkedDataImage
    programs: List[TraversalProgram]
    expected: List[List[Any]]
    info: Dict[str, Any] = field(default_factory=dict)


def _region_size(nbytes: int, leaf_size: int) -> int:
    return max(leaf_size, -(-nbytes // leaf_size) * leaf_size)


def _slot_order(n_slots: int, rng: np.random.Generator, locality: float) -> np.ndarray:
    """Slot of each logical node: a seeded permutation, leaving a locality share in order."""
    assert 0.0 <= locality <= 1.0, "locality must be within [0, 1]"
    order = np.arange(n_slots)
    shuffled = int(round((1.0 - locality) * n_slots))
    if shuffled > 1:
        chosen = np.sort(rng.choice(n_slots, size=shuffled, replace=False))
        order[chosen] = order[rng.permutation(chosen)]
    return order


def _unique_keys(rng: np.random.Generator, count: int) -> np.ndarray:
    keys = np.unique(rng.integers(0, NULL_POINTER, size=count, dtype=np.uint64))
    while len(keys) < count:
        extra = rng.integers(0, NULL_POINTER, size=count - len(keys), dtype=np.uint64)
        keys = np.unique(np.concatenate([keys, extra]))
    return rng.permutation(keys)


def _walk_list(head: int, compute: float) -> ProgramBody:
    va = head
    while True:
        words = yield Load(va, LIST_NODE_BYTES)
        assert words is not None
        yield Compute(compute)
        successor = int(words[0])
        if successor == NULL_POINTER:
            yield Emit(int(words[1]))
            return
        va = successor


def gen_linked_lists(  # pylint: disable=too-many-arguments, too-many-locals
    n_lists: int,
    n_nodes: int,
    seed: int,
    translator: PimTranslator,
    leaf_size: int = SMALL_PAGE,
    compute_cycles: float = DEFAULT_COMPUTE_CYCLES,
    locality: float = 0.0,
) -> PointerWorkload:
    """Independent singly linked lists sharing one PIM region.

    Each node occupies one 64 byte slot: the next pointer followed by a 56 byte payload. Slots are
    assigned by a seeded permutation so consecutive nodes land in unrelated parts of the region.
    """
    assert n_lists >= 1 and n_nodes >= 1, "Need at least one list with one node"
    total = n_lists * n_nodes
    image = LinkedDataImage()
    region = place_region(
        translator, image, _region_size(total * LIST_NODE_BYTES, leaf_size), leaf_size
    )
    slots = _slot_order(total, child_rng(seed, PLACEMENT_STREAM), locality)
    payload = child_rng(seed, CONTENT_STREAM).integers(
        0, NULL_POINTER, size=(total, LIST_PAYLOAD_WORDS), dtype=np.uint64
    )
    addresses = region.va_base + slots.astype(np.uint64) * np.uint64(LIST_NODE_BYTES)
    programs = []
    expected = []
    for chain in range(n_lists):
        first = chain * n_nodes
        for node in range(first, first + n_nodes):
            successor = NULL_POINTER if node == first + n_nodes - 1 else int(addresses[node + 1])
            image.write_words(int(addresses[node]), [successor, *payload[node].tolist()])
        programs.append(
            TraversalProgram("linked-list", _walk_list, (int(addresses[first]), compute_cycles))
        )
        expected.append([int(payload[first + n_nodes - 1][0])])
    _LOG.debug("Generated %s linked lists of %s nodes", n_lists, n_nodes)
    return PointerWorkload(
        "linked-list", image, programs, expected, {"nodes": total, "region": region.region_id}
    )


def gen_linked_list(
    n_nodes: int, seed: int, translator: PimTranslator, **kwargs: Any
) -> Tuple[LinkedDataImage, TraversalProgram]:
    """One linked list of n nodes and the traversal emitting its tail payload."""
    workload = gen_linked_lists(1, n_nodes, seed, translator, **kwargs)
    return workload.image, workload.programs[0]


def _hash_lookup(
    table: int, hash_function: MultiplyShiftHash, key: int, compute: float
) -> ProgramBody:
    yield Compute(compute)
    words = yield Load(table + hash_function(key) * BUCKET_BYTES, BUCKET_BYTES)
    assert words is not None
    va = int(words[0])
    while va != NULL_POINTER:
        words = yield Load(va, HASH_NODE_BYTES)
        assert words is not None
        yield Compute(compute)
        if int(words[0]) == key:
            yield Emit(int(words[1]))
            return
        va = int(words[2])
    yield Emit(None)


@dataclass
class HashTableLayout:
    """Where the pieces of a generated hash table live."""

    table_va: int
    buckets: int
    entries: Dict[int, int]
    hash_function: MultiplyShiftHash


def gen_hash_table(  # pylint: disable=too-many-arguments, too-many-locals
    seed: int,
    translator: PimTranslator,
    buckets: int = 2**14,
    fill: Optional[int] = None,
    lookups: int = 1000,
    hit_ratio: float = 0.5,
    leaf_size: int = SMALL_PAGE,
    compute_cycles: float = DEFAULT_COMPUTE_CYCLES,
) -> PointerWorkload:
    """Chained hash table of random 64 bit keys plus a batch of random lookups.

    Bucket heads are an array of pointers at the region base; chained nodes hold
    (key, value, next) in 64 byte slots placed by a seeded permutation.
    """
    assert buckets >= 2 and buckets & (buckets - 1) == 0, "Bucket count must be a power of 2"
    fill = int(1.5 * buckets) if fill is None else fill
    assert 0 <= fill <= MAX_LOAD_FACTOR * buckets, "Load factor above 4"
    assert 0.0 <= hit_ratio <= 1.0, "hit_ratio must be within [0, 1]"
    hash_function = MultiplyShiftHash(buckets.bit_length() - 1, child_rng(seed, HASH_STREAM))
    table_bytes = buckets * BUCKET_BYTES
    nodes_base = -(-table_bytes // LINE_BYTES) * LINE_BYTES
    image = LinkedDataImage()
    region = place_region(
        translator,
        image,
        _region_size(nodes_base + max(fill, 1) * HASH_NODE_BYTES, leaf_size),
        leaf_size,
    )
    content = child_rng(seed, CONTENT_STREAM)
    keys = _unique_keys(content, 2 * fill + lookups)
    stored, absent = keys[:fill], keys[fill:]
    values = content.integers(0, NULL_POINTER, size=fill, dtype=np.uint64)
    slots = _slot_order(fill, child_rng(seed, PLACEMENT_STREAM), 0.0)
    heads = np.full(buckets, NULL_POINTER, dtype=np.uint64)
    bucket_of = hash_function.hash_many(stored)
    entries: Dict[int, int] = {}
    for index in range(fill):
        va = region.va_base + nodes_base + int(slots[index]) * HASH_NODE_BYTES
        bucket = int(bucket_of[index])
        image.write_words(va, [int(stored[index]), int(values[index]), int(heads[bucket])])
        heads[bucket] = va
        entries[int(stored[index])] = int(values[index])
    image.write_words(region.va_base, heads)

    queries = child_rng(seed, QUERY_STREAM)
    hits = queries.random(lookups) < hit_ratio
    programs = []
    expected: List[List[Any]] = []
    for index in range(lookups):
        if hits[index] and fill:
            key = int(stored[int(queries.integers(0, fill))])
        else:
            key = int(absent[index])
        programs.append(
            TraversalProgram(
                "hash-table", _hash_lookup, (region.va_base, hash_function, key, compute_cycles)
            )
        )
        expected.append([entries.get(key)])
    layout = HashTableLayout(region.va_base, buckets, entries, hash_function)
    return PointerWorkload(
        "hash-table", image, programs, expected, {"layout": layout, "region": region.region_id}
    )


def hash_chain_lengths(image: LinkedDataImage, layout: HashTableLayout) -> List[int]:
    """Length of every bucket chain, read back from the image."""
    lengths = []
    heads = image.read_words(layout.table_va, layout.buckets)
    for head in heads.tolist():
        length = 0
        va = head
        while va != NULL_POINTER:
            length += 1
            va = image.read_word(va + 2 * WORD_BYTES)
        lengths.append(length)
    return lengths


@dataclass
class _BTreeNode:
    keys: List[int] = field(default_factory=list)
    children: List["_BTreeNode"] = field(default_factory=list)

    @property
    def leaf(self) -> bool:
        return not self.children


def _even_groups(items: List[Any], capacity: int) -> List[List[Any]]:
    groups = -(-len(items) // capacity)
    bounds = np.linspace(0, len(items), groups + 1).round().astype(int)
    return [items[bounds[i] : bounds[i + 1]] for i in range(groups)]


def _bulk_load(keys: List[int]) -> _BTreeNode:
    level = [_BTreeNode(group) for group in _even_groups(keys, BTREE_MAX_KEYS)]
    lowest = [node.keys[0] for node in level]
    while len(level) > 1:
        parents = []
        parent_lowest = []
        start = 0
        for group in _even_groups(level, BTREE_FANOUT):
            separators = lowest[start + 1 : start + len(group)]
            parents.append(_BTreeNode(separators, group))
            parent_lowest.append(lowest[start])
            start += len(group)
        level, lowest = parents, parent_lowest
    return level[0]


def _insert(node: _BTreeNode, key: int) -> Optional[Tuple[int, _BTreeNode]]:
    """Insert below node; returns (separator, new right sibling) when node split."""
    position = bisect_right(node.keys, key)
    if node.leaf:
        node.keys.insert(position, key)
    else:
        split = _insert(node.children[position], key)
        if split is None:
            return None
        separator, right = split
        node.keys.insert(position, separator)
        node.children.insert(position + 1, right)
    if len(node.keys) <= BTREE_MAX_KEYS:
        return None
    middle = len(node.keys) // 2
    if node.leaf:
        right = _BTreeNode(node.keys[middle:])
        node.keys = node.keys[:middle]
        return right.keys[0], right
    separator = node.keys[middle]
    right = _BTreeNode(node.keys[middle + 1 :], node.children[middle + 1 :])
    node.keys = node.keys[:middle]
    node.children = node.children[: middle + 1]
    return separator, right


def _insert_all(keys: List[int]) -> _BTreeNode:
    root = _BTreeNode()
    for key in keys:
        split = _insert(root, key)
        if split is not None:
            root = _BTreeNode([split[0]], [root, split[1]])
    return root


def _btree_lookup(root: int, key: int, compute: float) -> ProgramBody:
    va = root
    while True:
        words = yield Load(va, BTREE_NODE_BYTES)
        assert words is not None
        yield Compute(compute)
        header = int(words[0])
        keys = [int(k) for k in words[1 : 1 + (header & BTREE_COUNT_MASK)]]
        position = bisect_right(keys, key)
        if header & BTREE_LEAF_BIT:
            yield Emit(position > 0 and keys[position - 1] == key)
            return
        va = int(words[1 + BTREE_KEY_SLOTS + position])


def _nodes_in_order(root: _BTreeNode) -> List[_BTreeNode]:
    order = [root]
    for node in order:
        order.extend(node.children)
    return order


def gen_btree(  # pylint: disable=too-many-arguments, too-many-locals
    n_keys: int,
    seed: int,
    translator: PimTranslator,
    lookups: int = 1000,
    hit_ratio: float = 0.5,
    random_insert: bool = False,
    leaf_size: int = SMALL_PAGE,
    compute_cycles: float = DEFAULT_COMPUTE_CYCLES,
) -> PointerWorkload:
    """16-way B+-tree over random 64 bit keys plus a batch of random lookups.

    The tree is bulk loaded from the sorted keys, or built by inserting the keys in random order
    when random_insert is set. Nodes hold a header (leaf bit and key count), 16 key slots and 17
    child pointers, and are placed in shuffled slots of one region.
    """
    assert n_keys >= 1, "Need at least one key"
    content = child_rng(seed, CONTENT_STREAM)
    keys = _unique_keys(content, n_keys + lookups)
    stored, absent = keys[:n_keys], keys[n_keys:]
    if random_insert:
        root = _insert_all([int(key) for key in stored])
    else:
        root = _bulk_load(sorted(int(key) for key in stored))
    nodes = _nodes_in_order(root)
    image = LinkedDataImage()
    region = place_region(
        translator, image, _region_size(len(nodes) * BTREE_SLOT_BYTES, leaf_size), leaf_size
    )
    slots = _slot_order(len(nodes), child_rng(seed, PLACEMENT_STREAM), 0.0)
    address = {
        id(node): region.va_base + int(slots[i]) * BTREE_SLOT_BYTES for i, node in enumerate(nodes)
    }
    for node in nodes:
        words = [NULL_POINTER] * BTREE_NODE_WORDS
        words[0] = len(node.keys) | (BTREE_LEAF_BIT if node.leaf else 0)
        words[1 : 1 + len(node.keys)] = node.keys
        for index, child in enumerate(node.children):
            words[1 + BTREE_KEY_SLOTS + index] = address[id(child)]
        image.write_words(address[id(node)], words)

    sorted_keys = np.sort(stored)
    queries = child_rng(seed, QUERY_STREAM)
    hits = queries.random(lookups) < hit_ratio
    programs = []
    expected: List[List[Any]] = []
    for index in range(lookups):
        key = int(stored[int(queries.integers(0, n_keys))]) if hits[index] else int(absent[index])
        programs.append(
            TraversalProgram("btree", _btree_lookup, (address[id(root)], key, compute_cycles))
        )
        position = int(np.searchsorted(sorted_keys, np.uint64(key)))
        expected.append([position < n_keys and int(sorted_keys[position]) == key])
    _LOG.debug("Generated B-tree with %s keys in %s nodes", n_keys, len(nodes))
    return PointerWorkload(
        "btree",
        image,
        programs,
        expected,
        {"root": address[id(root)], "nodes": len(nodes), "region": region.region_id},
    )


def btree_shape(image: LinkedDataImage, root: int) -> Tuple[int, List[int]]:
    """Depth of the tree and the key count of every non-root node, read back from the image."""
    counts: List[int] = []
    depth = 0
    level = [root]
    while level:
        depth += 1
        below = []
        for va in level:
            words = image.read_words(va, BTREE_NODE_WORDS)
            count = int(words[0]) & BTREE_COUNT_MASK
            if va != root:
                counts.append(count)
            if not int(words[0]) & BTREE_LEAF_BIT:
                start = 1 + BTREE_KEY_SLOTS
                below.extend(int(child) for child in words[start : start + count + 1])
        level = below
    return depth, counts
