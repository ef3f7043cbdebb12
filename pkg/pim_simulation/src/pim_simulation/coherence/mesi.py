"""MESI directory transitions as a pure function of (holder states, requesting agent, event)."""

from dataclasses import dataclass
from enum import Enum
from typing import List, Tuple


class ProtocolViolation(Exception):
    """An illegal (state, event) pair reached the directory."""


class MesiState(Enum):
    """Per-cache state of one line."""

    MODIFIED = "M"
    EXCLUSIVE = "E"
    SHARED = "S"
    INVALID = "I"

    @property
    def valid(self) -> bool:
        """Whether the cache holds a copy."""
        return self != MesiState.INVALID

    @property
    def owner(self) -> bool:
        """Whether this is the single-writer copy."""
        return self in (MesiState.MODIFIED, MesiState.EXCLUSIVE)


class AccessEvent(Enum):
    """Events a cache raises at the directory."""

    READ = "read"
    WRITE = "write"
    EVICT = "evict"


class MessageKind(Enum):
    """Directory messages; the list returned by a transition drives traffic accounting."""

    FILL = "fill"
    INVALIDATE = "invalidate"
    DOWNGRADE = "downgrade"
    WRITEBACK = "writeback"
    EVICT_NOTICE = "evict-notice"


@dataclass(frozen=True)
class Message:
    """A message to or from one agent."""

    kind: MessageKind
    agent: int


M, E, S, I = (MesiState.MODIFIED, MesiState.EXCLUSIVE, MesiState.SHARED, MesiState.INVALID)

DirectoryState = Tuple[MesiState, ...]


def swmr_holds(state: DirectoryState) -> bool:
    """Single writer or multiple readers: one M/E copy and nothing else, or only S copies."""
    owners = sum(1 for holder in state if holder.owner)
    valid = sum(1 for holder in state if holder.valid)
    return owners == 0 or (owners == 1 and valid == 1)


def directory_transition(
    state: DirectoryState, agent: int, event: AccessEvent
) -> Tuple[DirectoryState, List[Message]]:
    """Next holder states and the messages exchanged for one event.

    Args:
        state (DirectoryState): MESI state of the line in every agent's cache
        agent (int): index of the agent raising the event
        event (AccessEvent): read, write or eviction

    Returns:
        Tuple[DirectoryState, List[Message]]: new states and messages in the order they are sent

    Raises:
        ProtocolViolation: if the state breaks SWMR or an agent evicts a line it does not hold
    """
    if not 0 <= agent < len(state):
        raise ProtocolViolation(f"Agent {agent} outside a directory of {len(state)} agents")
    if not swmr_holds(state):
        raise ProtocolViolation(f"Directory state {[s.value for s in state]} breaks SWMR")
    current = state[agent]
    others = [index for index, holder in enumerate(state) if index != agent and holder.valid]
    new = list(state)
    messages: List[Message] = []

    if event == AccessEvent.EVICT:
        if not current.valid:
            raise ProtocolViolation(f"Agent {agent} evicts a line it does not hold")
        if current == M:
            messages.append(Message(MessageKind.WRITEBACK, agent))
        messages.append(Message(MessageKind.EVICT_NOTICE, agent))
        new[agent] = I
        return tuple(new), messages

    if event == AccessEvent.READ:
        if current.valid:
            return state, messages
        for other in others:
            if state[other] == M:
                messages.append(Message(MessageKind.DOWNGRADE, other))
                messages.append(Message(MessageKind.WRITEBACK, other))
            elif state[other] == E:
                messages.append(Message(MessageKind.DOWNGRADE, other))
            new[other] = S
        messages.append(Message(MessageKind.FILL, agent))
        new[agent] = S if others else E
        return tuple(new), messages

    if current in (M, E):
        new[agent] = M
        return tuple(new), messages
    for other in others:
        messages.append(Message(MessageKind.INVALIDATE, other))
        if state[other] == M:
            messages.append(Message(MessageKind.WRITEBACK, other))
        new[other] = I
    if current == I:
        messages.append(Message(MessageKind.FILL, agent))
    new[agent] = M
    return tuple(new), messages


def initial_state(agents: int) -> DirectoryState:
    """Every cache invalid."""
    return tuple(I for _ in range(agents))
