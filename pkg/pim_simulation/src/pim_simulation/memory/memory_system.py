"""Memory hierarchy timing and off-chip traffic accounting."""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional

from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from pim_simulation.memory.address import (
    MAX_STACKS,
    STACK_BYTES,
    AccessRequest,
    Requester,
    RequesterKind,
    make_pa,
    stack_of,
)
from pim_simulation.units import Bandwidth, Frequency

_LOG = logging.getLogger(__name__)

CORE_CLOCK = Frequency(2, "GHz")
FRAME_BASE_OFFSET = 2**21


class UnmappedAddress(Exception):
    """Physical address does not belong to any configured stack."""

    def __init__(self, pa: int):
        """Initialise with the faulting address."""
        super().__init__(f"Physical address {pa:#x} is not mapped to a configured stack")
        self.pa = pa


class RemapRefused(Exception):
    """Region is already pinned to a different stack."""


class TimingConfig(BaseModel):
    """Latencies (cycles of a 2 GHz core clock) and bandwidths (bytes/cycle)."""

    model_config = ConfigDict(extra="forbid")

    cpu_dram_latency: float = 200.0
    pim_dram_latency: float = 130.0
    cpu_channel_bw: float = Bandwidth(12.8, "GB/s").per_cycle(CORE_CLOCK)
    pim_internal_bw: float = Bandwidth(51.2, "GB/s").per_cycle(CORE_CLOCK)
    line_size: int = 64
    link_latency: float = 40.0
    request_header_bytes: int = 8
    stack_count: int = 1
    cpu_l1_latency: float = 2.0
    cpu_l2_latency: float = 20.0
    pim_l1_latency: float = 2.0

    @field_validator(
        "cpu_dram_latency",
        "pim_dram_latency",
        "cpu_channel_bw",
        "pim_internal_bw",
        "line_size",
    )
    @classmethod
    def _positive(cls, value: float) -> float:
        if value <= 0:
            raise ValueError("must be positive")
        return value

    @field_validator("link_latency", "request_header_bytes", "cpu_l1_latency", "cpu_l2_latency")
    @classmethod
    def _non_negative(cls, value: float) -> float:
        if value < 0:
            raise ValueError("must not be negative")
        return value

    @model_validator(mode="after")
    def _check_stacks(self) -> "TimingConfig":
        if not 1 <= self.stack_count <= MAX_STACKS:
            raise ValueError(f"stack_count must be between 1 and {MAX_STACKS}")
        if self.line_size != 64:
            raise ValueError("only 64 byte lines are modelled")
        return self


class TrafficCategory(Enum):
    """What an off-chip transfer was for."""

    DEMAND = "demand"
    WRITEBACK = "writeback"
    COHERENCE = "coherence"
    SIGNATURE = "signature"
    FLUSH = "flush"
    PACKET = "packet"


@dataclass
class TrafficLedger:
    """Off-chip bytes and message counts per category."""

    bytes_by_category: Dict[TrafficCategory, int] = field(
        default_factory=lambda: {category: 0 for category in TrafficCategory}
    )
    messages_by_category: Dict[TrafficCategory, int] = field(
        default_factory=lambda: {category: 0 for category in TrafficCategory}
    )

    def record(self, category: TrafficCategory, nbytes: int) -> None:
        """Record one off-chip transfer."""
        assert nbytes >= 0, "Negative transfer size"
        self.bytes_by_category[category] += nbytes
        self.messages_by_category[category] += 1

    @property
    def total_bytes(self) -> int:
        """All off-chip bytes."""
        return sum(self.bytes_by_category.values())

    @property
    def total_messages(self) -> int:
        """All off-chip transfers."""
        return sum(self.messages_by_category.values())


class Channel:
    """A link modelled as a token bucket: one transfer at a time at a fixed byte rate."""

    def __init__(self, name: str, bytes_per_cycle: float):
        """Initialise idle channel."""
        self.name = name
        self.bytes_per_cycle = bytes_per_cycle
        self.next_free = 0.0
        self.bytes_moved = 0

    def reserve(self, time: float, nbytes: int) -> float:
        """Reserve the channel for nbytes no earlier than time and return the start time."""
        start = max(time, self.next_free)
        self.next_free = start + nbytes / self.bytes_per_cycle
        self.bytes_moved += nbytes
        return start


@dataclass(frozen=True)
class Completion:
    """When a request completes and how many bytes it moved."""

    complete_time: float
    bytes_moved: int
    off_chip: bool


@dataclass(frozen=True)
class Placement:
    """Region pinned to a stack."""

    region_id: int
    stack_id: int


class MemorySystem:
    """CPU-to-stack off-chip channel, per-stack internal channels and traffic counters."""

    def __init__(self, timing: Optional[TimingConfig] = None, default_stack: int = 0):
        """Initialise an idle memory system."""
        self.timing = timing if timing is not None else TimingConfig()
        assert 0 <= default_stack < self.timing.stack_count, "Default stack not configured"
        self.default_stack = default_stack
        self.off_chip_channel = Channel("off-chip", self.timing.cpu_channel_bw)
        self.internal_channels = [
            Channel(f"stack{stack}", self.timing.pim_internal_bw)
            for stack in range(self.timing.stack_count)
        ]
        self.ledger = TrafficLedger()
        self.internal_bytes = 0
        self.request_counts: Dict[RequesterKind, int] = {kind: 0 for kind in RequesterKind}
        self.cross_stack_requests = 0
        self.placements: Dict[int, Placement] = {}
        self._next_frame = [FRAME_BASE_OFFSET for _ in range(self.timing.stack_count)]

    def submit(
        self, req: AccessRequest, category: TrafficCategory = TrafficCategory.DEMAND
    ) -> Completion:
        """Time a request and account for the bytes it moves.

        Args:
            req (AccessRequest): request, its complete_time is filled in
            category (TrafficCategory): ledger category if the request crosses the off-chip link

        Returns:
            Completion: completion time and bytes moved
        """
        assert req.size_bytes > 0, "Request size must be positive"
        stack = stack_of(req.addr.pa)
        if stack >= self.timing.stack_count:
            raise UnmappedAddress(req.addr.pa)
        self.request_counts[req.requester.kind] += 1
        if req.requester.cpu_side or req.requester.stack != stack:
            if not req.requester.cpu_side:
                self.cross_stack_requests += 1
            start = self.off_chip_channel.reserve(req.issue_time, req.size_bytes)
            self.ledger.record(category, req.size_bytes + self.timing.request_header_bytes)
            latency = self.timing.cpu_dram_latency
            off_chip = True
        else:
            start = self.internal_channels[stack].reserve(req.issue_time, req.size_bytes)
            self.internal_bytes += req.size_bytes
            latency = self.timing.pim_dram_latency
            off_chip = False
        req.complete_time = start + latency
        return Completion(req.complete_time, req.size_bytes, off_chip)

    def send_message(
        self, category: TrafficCategory, time: float, payload_bytes: int = 0
    ) -> float:
        """Send a control message (header plus optional payload) across the off-chip link.

        Returns:
            float: arrival time at the far side
        """
        nbytes = payload_bytes + self.timing.request_header_bytes
        start = self.off_chip_channel.reserve(time, nbytes)
        self.ledger.record(category, nbytes)
        return start + self.timing.link_latency

    def send_payload(self, category: TrafficCategory, time: float, payload_bytes: int) -> float:
        """Send header-less payload (signature chain links) across the off-chip link."""
        start = self.off_chip_channel.reserve(time, payload_bytes)
        self.ledger.record(category, payload_bytes)
        return start + payload_bytes / self.off_chip_channel.bytes_per_cycle

    def off_chip_traffic(self) -> int:
        """Bytes that crossed the CPU-to-memory link so far."""
        return self.ledger.total_bytes

    def map_region_to_stack(self, region_id: int, stack_id: int) -> Placement:
        """Pin all storage and translations of a region to one stack."""
        if not 0 <= stack_id < self.timing.stack_count:
            raise ValueError(f"Stack {stack_id} is not configured")
        existing = self.placements.get(region_id)
        if existing is not None:
            if existing.stack_id != stack_id:
                raise RemapRefused(
                    f"Region {region_id} is pinned to stack {existing.stack_id}, "
                    f"cannot remap to stack {stack_id}"
                )
            return existing
        placement = Placement(region_id, stack_id)
        self.placements[region_id] = placement
        _LOG.debug("Region %s pinned to stack %s", region_id, stack_id)
        return placement

    def stack_for_region(self, region_id: int) -> int:
        """Stack of a region, pinning it to the default stack on first use."""
        if region_id in self.placements:
            return self.placements[region_id].stack_id
        return self.map_region_to_stack(region_id, self.default_stack).stack_id

    def allocate_frames(self, stack_id: int, nbytes: int, alignment: int = 4096) -> int:
        """Reserve physical memory inside a stack and return its base address."""
        assert nbytes > 0, "Cannot allocate an empty range"
        assert alignment > 0 and alignment & (alignment - 1) == 0, "Alignment not a power of 2"
        base = -(-self._next_frame[stack_id] // alignment) * alignment
        if base + nbytes > STACK_BYTES:
            raise MemoryError(f"Stack {stack_id} is out of physical memory")
        self._next_frame[stack_id] = base + nbytes
        return make_pa(stack_id, base)
