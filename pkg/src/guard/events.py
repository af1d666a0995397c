"""Append-only event log: the replayable record of one scenario run.

Events are plain dicts with an ``event`` discriminator and a ``t`` timestamp
(scenario seconds); appends must be time-ordered. Persisted as JSONL, one
event per line, and replayable byte-for-byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator


class EventOrderError(ValueError):
    """An append regressed the log clock."""


@dataclass
class EventLog:
    events: list[dict] = field(default_factory=list)

    def append(self, event: str, t: float, **payload) -> dict:
        if self.events and t < self.events[-1]["t"]:
            raise EventOrderError(
                f"event {event!r} at t={t} after t={self.events[-1]['t']}"
            )
        row = {"event": event, "t": t, **payload}
        self.events.append(row)
        return row

    def __iter__(self) -> Iterator[dict]:
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def of_kind(self, *kinds: str) -> list[dict]:
        return [e for e in self.events if e["event"] in kinds]

    def write_jsonl(self, path: Path | str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for row in self.events:
                fh.write(json.dumps(row, sort_keys=False) + "\n")

    @classmethod
    def read_jsonl(cls, path: Path | str) -> "EventLog":
        log = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    log.events.append(json.loads(line))
        return log
