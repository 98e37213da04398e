"""Processing records and the append-only JSON Lines ledger."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any

from .errors import LedgerError

log = logging.getLogger(__name__)


class State(str, Enum):
    RECEIVED = "Received"
    EXTRACTED = "Extracted"
    PLANNED = "Planned"
    FILLED = "Filled"
    REPLIED = "Replied"
    FAILED = "Failed"


CHAIN = (State.RECEIVED, State.EXTRACTED, State.PLANNED, State.FILLED, State.REPLIED)
TERMINAL = frozenset({State.REPLIED, State.FAILED})


def is_legal_path(path: list[State]) -> bool:
    """A prefix of the chain, optionally ending in Failed after a non-terminal state."""
    if not path or path[0] is not State.RECEIVED:
        return False
    if path[-1] is State.FAILED:
        body = path[:-1]
        if not body or body[-1] in TERMINAL:
            return False
    else:
        body = path
    return list(body) == list(CHAIN[: len(body)])


class Entry(str, Enum):
    PROCESSED = "processed"
    # message_id was already handled; nothing was done
    DUPLICATE = "duplicate"
    # rebuilt at startup from an outbox reply whose ledger line was lost
    RECONCILED = "reconciled"


@dataclass
class ProcessingRecord:
    message_id: str
    state: State = State.RECEIVED
    entry: Entry = Entry.PROCESSED
    path: list[State] = field(default_factory=lambda: [State.RECEIVED])
    timings: dict[str, float] = field(default_factory=dict)
    attachment_timings: dict[str, float] = field(default_factory=dict)
    attempt_counts: dict[str, int] = field(default_factory=dict)
    failure_reason: str | None = None
    outputs: dict[str, str] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    recorded_at: str = ""

    def advance(self, new: State) -> None:
        if self.state in TERMINAL:
            raise ValueError(f"{self.message_id}: already terminal ({self.state.value})")
        if new is State.FAILED:
            pass
        elif CHAIN.index(new) != CHAIN.index(self.state) + 1:
            raise ValueError(f"illegal transition {self.state.value} -> {new.value}")
        self.state = new
        self.path.append(new)

    def fail(self, reason: str) -> None:
        self.advance(State.FAILED)
        self.failure_reason = reason

    @property
    def is_terminal(self) -> bool:
        return self.state in TERMINAL

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["state"] = self.state.value
        d["entry"] = self.entry.value
        d["path"] = [s.value for s in self.path]
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ProcessingRecord:
        d = dict(data)
        d["state"] = State(d["state"])
        d["entry"] = Entry(d.get("entry", "processed"))
        d["path"] = [State(s) for s in d.get("path", [d["state"].value])]
        known = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in known})


class Ledger:
    """One JSON object per line, appended and fsynced; never rewritten."""

    def __init__(self, path: str | os.PathLike) -> None:
        self.path = Path(path)
        self._count: int | None = None

    def _lines(self) -> list[str]:
        try:
            text = self.path.read_text(encoding="utf-8")
        except FileNotFoundError:
            return []
        except OSError as exc:
            raise LedgerError(f"ledger {self.path} unreadable: {exc}") from exc
        return text.splitlines()

    def append(self, record: ProcessingRecord) -> int:
        """Append ``record``; returns its 0-based line position."""
        if not (record.is_terminal or record.entry is Entry.DUPLICATE):
            raise ValueError("only terminal or skip records belong in the ledger")
        if not record.recorded_at:
            record.recorded_at = datetime.now(timezone.utc).isoformat()
        line = json.dumps(record.to_dict(), ensure_ascii=False, sort_keys=True)
        if self._count is None:
            self._count = sum(1 for ln in self._lines() if ln.strip())
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "ab") as fh:
                # a torn final line from a crash must not swallow this record
                if fh.tell() > 0:
                    with open(self.path, "rb") as rd:
                        rd.seek(-1, os.SEEK_END)
                        if rd.read(1) != b"\n":
                            fh.write(b"\n")
                fh.write(line.encode("utf-8") + b"\n")
                fh.flush()
                os.fsync(fh.fileno())
        except OSError as exc:
            raise LedgerError(f"ledger {self.path} not writable: {exc}") from exc
        position = self._count
        self._count += 1
        return position

    def records(self) -> list[ProcessingRecord]:
        out = []
        for n, line in enumerate(self._lines(), start=1):
            if not line.strip():
                continue
            try:
                out.append(ProcessingRecord.from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                log.warning("ledger %s line %d unreadable, ignored: %s", self.path, n, exc)
        return out

    def processed_ids(self) -> set[str]:
        return {r.message_id for r in self.records() if r.entry is not Entry.DUPLICATE}


def record_ledger_entry(record: ProcessingRecord, ledger: Ledger) -> int:
    return ledger.append(record)
