"""Addresses, requesters and access requests of the simulated memory system.

Physical addresses are laid out as::

    bit 43..40  stack id
    bit 39..14  row / remaining offset
    bit 13..10  bank id
    bit  9..6   vault id (consecutive lines interleave across vaults)
    bit  5..0   byte within line
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional

from pim_simulation.pim_utils import VA_BITS

LINE_OFFSET_BITS = 6
VAULT_SHIFT = 6
VAULT_BITS = 4
BANK_SHIFT = VAULT_SHIFT + VAULT_BITS
BANK_BITS = 4
STACK_SHIFT = 40
STACK_BITS = 4
MAX_STACKS = 2**STACK_BITS
STACK_BYTES = 2**STACK_SHIFT


class RequesterKind(Enum):
    """Who issued a memory request."""

    CPU_CORE = "cpu"
    PIM_CORE = "pim"
    PAGE_WALKER = "walker"


class AccessKind(Enum):
    """Direction of a memory access."""

    READ = "read"
    WRITE = "write"


@dataclass(frozen=True)
class Requester:
    """Identity of a requester. PIM cores and page walkers live on a stack."""

    kind: RequesterKind
    index: int
    stack: int = 0

    @property
    def cpu_side(self) -> bool:
        """Whether requests from this requester cross the off-chip link."""
        return self.kind == RequesterKind.CPU_CORE

    def __str__(self) -> str:
        """Short name such as cpu3 or pim0@1."""
        if self.cpu_side:
            return f"{self.kind.value}{self.index}"
        return f"{self.kind.value}{self.index}@{self.stack}"


def make_pa(stack: int, offset: int) -> int:
    """Physical address of a byte offset inside a stack."""
    assert 0 <= stack < MAX_STACKS, f"Stack {stack} out of range"
    assert 0 <= offset < STACK_BYTES, f"Offset {offset:#x} does not fit in a stack"
    return (stack << STACK_SHIFT) | offset


def stack_of(pa: int) -> int:
    """Stack id subfield."""
    return (pa >> STACK_SHIFT) & (MAX_STACKS - 1)


def vault_of(pa: int) -> int:
    """Vault id subfield."""
    return (pa >> VAULT_SHIFT) & (2**VAULT_BITS - 1)


def bank_of(pa: int) -> int:
    """Bank id subfield."""
    return (pa >> BANK_SHIFT) & (2**BANK_BITS - 1)


@dataclass(frozen=True)
class Address:
    """A physical address, optionally with the virtual address it was translated from."""

    pa: int
    va: Optional[int] = None

    def __post_init__(self) -> None:
        """Check field ranges."""
        assert self.pa >= 0 and self.pa >> (STACK_SHIFT + STACK_BITS) == 0, (
            f"Physical address {self.pa:#x} out of range"
        )
        assert self.va is None or 0 <= self.va < 2**VA_BITS, (
            f"Virtual address {self.va:#x} is not a 48-bit address"
        )

    @property
    def stack(self) -> int:
        """Stack this address lives on."""
        return stack_of(self.pa)

    @property
    def vault(self) -> int:
        """Vault this address lives in."""
        return vault_of(self.pa)

    @property
    def bank(self) -> int:
        """Bank this address lives in."""
        return bank_of(self.pa)


@dataclass
class AccessRequest:
    """One memory read or write, the unit of traffic accounting."""

    requester: Requester
    addr: Address
    kind: AccessKind
    size_bytes: int
    issue_time: float
    complete_time: Optional[float] = None
