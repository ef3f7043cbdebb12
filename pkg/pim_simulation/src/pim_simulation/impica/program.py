"""Traversal programs run by the IMPICA address engine.

A program is a generator that yields steps. ``Load`` steps receive the loaded words (a numpy
``uint64`` array) back through ``send``; returning from the generator is the ``Done`` step.
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Generator, List, Optional, Protocol, Tuple, Union

import numpy as np
import numpy.typing as npt

from pim_simulation.pim_utils import WORD_BYTES

Words = npt.NDArray[np.uint64]


@dataclass(frozen=True)
class Compute:
    """Spend cycles in the address engine."""

    cycles: float


@dataclass(frozen=True)
class Load:
    """Read size bytes at a virtual address inside a PIM region."""

    va: int
    size: int = 64

    @property
    def words(self) -> int:
        """Number of 8 byte words returned."""
        return -(-self.size // WORD_BYTES)


@dataclass(frozen=True)
class Emit:
    """Produce a traversal result."""

    result: Any


Step = Union[Compute, Load, Emit]
ProgramBody = Generator[Step, Optional[Words], None]


class WordMemory(Protocol):  # pylint: disable=too-few-public-methods
    """Anything holding the words of one or more PIM regions."""

    def read_words(self, va: int, count: int) -> Words:
        """Return count words starting at va."""


@dataclass(frozen=True)
class TraversalProgram:
    """A named program body together with its parameters."""

    name: str
    body: Callable[..., ProgramBody]
    params: Tuple[Any, ...] = ()

    def start(self) -> ProgramBody:
        """Fresh coroutine for one execution."""
        return self.body(*self.params)


@dataclass
class TraversalContext:
    """Hardware context pushed into the data RAM stack while a load is outstanding."""

    request_id: int
    stack_pointer: int
    pc: int = 0
    registers: Optional[Words] = None


@dataclass
class FunctionalRun:
    """Outcome of running a program directly against memory."""

    results: List[Any] = field(default_factory=list)
    loads: int = 0
    compute_cycles: float = 0.0


def run_functionally(program: TraversalProgram, memory: WordMemory) -> FunctionalRun:
    """Execute a program on the host with no timing, as an oracle for the engine."""
    run = FunctionalRun()
    coroutine = program.start()
    value: Optional[Words] = None
    while True:
        try:
            step = coroutine.send(value)
        except StopIteration:
            return run
        value = None
        if isinstance(step, Load):
            run.loads += 1
            value = memory.read_words(step.va, step.words)
        elif isinstance(step, Compute):
            run.compute_cycles += step.cycles
        else:
            run.results.append(step.result)
