"""Directory tracking the MESI state of every line in every agent's cache."""

import logging
from typing import Dict, List, Optional

from pim_simulation.coherence.mesi import (
    AccessEvent,
    DirectoryState,
    MesiState,
    Message,
    MessageKind,
    directory_transition,
    initial_state,
    swmr_holds,
)

_LOG = logging.getLogger(__name__)


class Directory:
    """Per-line sharer states for a fixed set of agents."""

    def __init__(self, name: str, agents: int):
        """Create a directory with every line invalid everywhere."""
        assert agents > 0, "A directory needs at least one agent"
        self.name = name
        self.agents = agents
        self._entries: Dict[int, DirectoryState] = {}
        self.transitions = 0
        self.messages: Dict[MessageKind, int] = {kind: 0 for kind in MessageKind}

    def state(self, line: int) -> DirectoryState:
        """Holder states of a line."""
        return self._entries.get(line, initial_state(self.agents))

    def holder_state(self, line: int, agent: int) -> MesiState:
        """State of a line in one agent's cache."""
        return self.state(line)[agent]

    def access(self, agent: int, line: int, event: AccessEvent) -> List[Message]:
        """Apply one event and return the messages it caused."""
        new, messages = directory_transition(self.state(line), agent, event)
        if any(holder.valid for holder in new):
            self._entries[line] = new
        else:
            self._entries.pop(line, None)
        self.transitions += 1
        for message in messages:
            self.messages[message.kind] += 1
        return messages

    def lines_held_by(self, agent: int) -> List[int]:
        """Lines with a valid copy in an agent's cache."""
        return sorted(line for line, state in self._entries.items() if state[agent].valid)

    def check_swmr(self) -> Optional[str]:
        """None when every tracked line satisfies single-writer/multiple-reader."""
        for line, state in self._entries.items():
            if not swmr_holds(state):
                return f"{self.name}: line {line} in {[s.value for s in state]}"
        return None

    def __len__(self) -> int:
        """Number of lines cached somewhere."""
        return len(self._entries)
