"""Abstract cost accounting shared by every relay instance."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

STORAGE_WRITE = "storageWrite"
STORAGE_DELETE = "storageDelete"
STORAGE_READ = "storageRead"
HASH_EVAL = "hashEval"
VALIDATOR = "validatorInvocation"
TX_BASE = "txBase"
CALLDATA_WORD = "calldataWord"

EVENTS = (STORAGE_WRITE, STORAGE_DELETE, STORAGE_READ, HASH_EVAL, VALIDATOR, TX_BASE, CALLDATA_WORD)


@dataclass(frozen=True)
class CostSchedule:
    """Cost units per event.

    ``header_words`` is the footprint (in 32-byte words) a full header occupies
    in storage and calldata. It is a calibration constant: the model header is
    only a handful of words, the headers the costs are calibrated against are
    not. ``None`` uses the true encoded size.
    """

    storage_write: int = 20_000
    storage_delete: int = 5_000
    storage_read: int = 800
    hash_eval: int = 36
    validator_invocation: int = 3_000_000
    tx_base: int = 21_000
    calldata_word: int = 512
    header_words: int | None = 18
    block_cost_ceiling: int = 6_700_000

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None and v < 0:
                raise ValueError(f"{f.name} must be >= 0")

    def price(self, event: str) -> int:
        return {
            STORAGE_WRITE: self.storage_write,
            STORAGE_DELETE: self.storage_delete,
            STORAGE_READ: self.storage_read,
            HASH_EVAL: self.hash_eval,
            VALIDATOR: self.validator_invocation,
            TX_BASE: self.tx_base,
            CALLDATA_WORD: self.calldata_word,
        }[event]

    @classmethod
    def from_json(cls, path) -> "CostSchedule":
        raw = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown schedule keys: {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Meter:
    schedule: CostSchedule = field(default_factory=CostSchedule)
    keep_trace: bool = False
    total: int = 0
    visits: int = 0
    counts: Counter = field(default_factory=Counter)
    trace: list = field(default_factory=list)

    def meter(self, event: str, count: int = 1) -> int:
        if count < 0:
            raise ValueError("count must be >= 0")
        if count:
            self.total += self.schedule.price(event) * count
            self.counts[event] += count
            if self.keep_trace:
                self.trace.append((event, count))
        return self.total

    def visit(self, n: int = 1) -> None:
        """Record ``n`` header inspections by a search (each is a storage read)."""
        self.visits += n
        self.meter(STORAGE_READ, n)

    def mark(self) -> tuple:
        return (self.total, self.visits, self.counts[VALIDATOR], self.counts[STORAGE_WRITE])

    def since(self, mark: tuple) -> dict:
        return {
            "cost": self.total - mark[0],
            "visits": self.visits - mark[1],
            "validator": self.counts[VALIDATOR] - mark[2],
            "writes": self.counts[STORAGE_WRITE] - mark[3],
        }


@dataclass(frozen=True)
class PrototypeMode:
    name: str
    validation: str = "on-demand"  # on-submission | on-demand
    store: str = "full"  # full | compact
    search: str = "optimized"  # naive | optimized

    def __post_init__(self):
        if self.validation not in ("on-submission", "on-demand"):
            raise ValueError(f"bad validation mode {self.validation!r}")
        if self.store not in ("full", "compact"):
            raise ValueError(f"bad store mode {self.store!r}")
        if self.search not in ("naive", "optimized"):
            raise ValueError(f"bad search mode {self.search!r}")
        if self.store == "compact" and self.search == "naive":
            raise ValueError("naive search walks parent links, which compact storage drops")


BASELINE = PrototypeMode("Baseline", "on-submission", "full", "naive")
TESTIMONIUM1 = PrototypeMode("Testimonium1", "on-demand", "full", "optimized")
TESTIMONIUM2 = PrototypeMode("Testimonium2", "on-demand", "compact", "optimized")

MODES = {"baseline": BASELINE, "t1": TESTIMONIUM1, "t2": TESTIMONIUM2}
