"""Seeded source-chain generation, the line-delimited dataset format, and replay."""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .chain import (ZERO_HASH, BlockHeader, break_seal, build_merkle_tree, client_id, generate_merkle_proof,
                    hash_header, seal_header, tx_id_for)
from .errors import ParseError
from .meter import TESTIMONIUM1, PrototypeMode
from .relay import Relay

# ordering ranks among headers of equal height
_SIDE_EARLY, _MAIN, _SIDE_LATE, _INVALID = 0, 1, 2, 3


@dataclass(frozen=True)
class ChainGenConfig:
    length: int = 1000  # total headers, genesis included
    branch_probability: float = 0.02
    branch_max_depth: int = 2
    invalid_header_rate: float = 0.0
    difficulty_range: tuple = (100, 120)
    tx_per_block: int = 4
    random_seed: int = 0
    # chance a side branch reaches the relay before the competing main-chain header
    side_first_probability: float = 0.5

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("length must be >= 1")
        for name in ("branch_probability", "invalid_header_rate", "side_first_probability"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        lo, hi = self.difficulty_range
        if not 0 < lo <= hi:
            raise ValueError("difficulty_range must satisfy 0 < lo <= hi")
        if self.branch_max_depth < 1 or self.tx_per_block < 1:
            raise ValueError("branch_max_depth and tx_per_block must be >= 1")


@dataclass(frozen=True)
class GeneratedBlock:
    header: BlockHeader
    hash: bytes
    tx_ids: tuple
    is_valid: bool
    on_main_chain: bool
    submitter_hint: str = "honest"

    def proof(self, index: int = 0):
        return generate_merkle_proof(build_merkle_tree(self.tx_ids), self.tx_ids[index])


@dataclass
class GeneratedChain:
    blocks: list  # submission order, genesis first
    junctions: set = field(default_factory=set)

    @property
    def genesis(self) -> GeneratedBlock:
        return self.blocks[0]

    @property
    def headers(self) -> list:
        return [b.header for b in self.blocks]

    @property
    def main_chain(self) -> list:
        return [b.hash for b in self.blocks if b.on_main_chain]

    @property
    def true_head(self) -> bytes:
        return max((b for b in self.blocks if b.on_main_chain), key=lambda b: b.header.block_height).hash

    def by_hash(self) -> dict:
        return {b.hash: b for b in self.blocks}


@dataclass
class _Node:
    parent: int | None
    height: int
    difficulty: int
    rank: int
    seq: int
    valid: bool = True
    main: bool = False
    children: int = 0


def generate_chain(config: ChainGenConfig) -> GeneratedChain:
    """Deterministic branchy header stream for ``config.random_seed``.

    The true main chain is always strictly heaviest at the end: side branches
    mine at the minimum difficulty and the main chain is grown past every side
    branch before the header budget runs out.
    """
    rng = random.Random(config.random_seed)
    lo, hi = config.difficulty_range
    nodes = [_Node(None, 0, lo, _MAIN, 0, main=True)]
    main = [0]
    must_reach = 0

    def add(parent, difficulty, rank, valid=True, is_main=False):
        nodes.append(_Node(parent, nodes[parent].height + 1, difficulty, rank, len(nodes), valid, is_main))
        nodes[parent].children += 1
        return len(nodes) - 1

    while len(nodes) < config.length:
        fork_at = main[-1]
        main.append(add(fork_at, rng.randint(lo, hi), _MAIN, is_main=True))
        h = nodes[main[-1]].height
        # draws happen unconditionally so the stream prefix is stable under the budget
        branch = rng.random() < config.branch_probability
        depth = rng.randint(1, config.branch_max_depth)
        early = rng.random() < config.side_first_probability
        invalid = rng.random() < config.invalid_header_rate
        if branch:
            reach = max(must_reach, h + depth)
            if len(nodes) + depth + (reach - h) <= config.length:
                must_reach = reach
                p = fork_at
                for _ in range(depth):
                    p = add(p, lo, _SIDE_EARLY if early else _SIDE_LATE)
        if invalid:
            reach = max(must_reach, h + 1)
            if len(nodes) + 1 + (reach - h) <= config.length:
                must_reach = reach
                add(fork_at, lo, _INVALID, valid=False)

    order = sorted(range(len(nodes)), key=lambda i: (nodes[i].height, nodes[i].rank, nodes[i].seq))
    hashes: dict[int, bytes] = {}
    blocks = []
    slot = {}
    for i in order:
        n = nodes[i]
        slot[n.height] = slot.get(n.height, -1) + 1
        txs = tuple(tx_id_for(config.random_seed, i, k) for k in range(config.tx_per_block))
        header = BlockHeader(
            parent_hash=ZERO_HASH if n.parent is None else hashes[n.parent],
            block_height=n.height,
            merkle_root=build_merkle_tree(txs).root,
            difficulty=n.difficulty,
            timestamp=n.height * 100 + slot[n.height],
        )
        header = seal_header(header) if n.valid else break_seal(header)
        hashes[i] = hash_header(header)
        hint = "honest" if n.valid else "forger"
        blocks.append(GeneratedBlock(header, hashes[i], txs, n.valid, n.main, hint))
    junctions = {hashes[i] for i, n in enumerate(nodes) if n.children >= 2}
    return GeneratedChain(blocks, junctions)


# -- dataset files ----------------------------------------------------------

def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name.split(".")[0] + ".annotations.jsonl")


def header_record(header: BlockHeader, hint: str = "") -> dict:
    return {
        "hash": hash_header(header).hex(),
        "parentHash": header.parent_hash.hex(),
        "blockHeight": header.block_height,
        "merkleRoot": header.merkle_root.hex(),
        "difficulty": header.difficulty,
        "timestamp": header.timestamp,
        "validitySeed": header.validity_seed.hex(),
        "submitterHint": hint,
    }


def record_header(rec: dict, line: int | None = None) -> BlockHeader:
    try:
        return BlockHeader(
            parent_hash=bytes.fromhex(rec["parentHash"]),
            block_height=int(rec["blockHeight"]),
            merkle_root=bytes.fromhex(rec["merkleRoot"]),
            difficulty=int(rec["difficulty"]),
            timestamp=int(rec["timestamp"]),
            validity_seed=bytes.fromhex(rec.get("validitySeed", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad header record: {exc!r}", line) from exc


def write_dataset(chain: GeneratedChain, path) -> tuple:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for b in chain.blocks:
            fh.write(json.dumps(header_record(b.header, b.submitter_hint), sort_keys=True) + "\n")
    side = sidecar_path(path)
    with side.open("w") as fh:
        for b in chain.blocks:
            fh.write(json.dumps({
                "hash": b.hash.hex(),
                "isValid": b.is_valid,
                "onTrueMainChain": b.on_main_chain,
                "isJunction": b.hash in chain.junctions,
                "txIds": [t.hex() for t in b.tx_ids],
            }, sort_keys=True) + "\n")
    return path, side


def read_dataset(path) -> list:
    """[(line_number, header, record), ...]; raises ParseError on the first bad line."""
    out = []
    with Path(path).open() as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", n) from exc
            if not isinstance(rec, dict):
                raise ParseError("record is not an object", n)
            out.append((n, record_header(rec, n), rec))
    return out


def read_annotations(path) -> dict:
    side = Path(path)
    if not side.exists():
        return {}
    out = {}
    with side.open() as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out[bytes.fromhex(rec["hash"])] = rec
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ParseError(f"bad annotation: {exc!r}", n) from exc
    return out


def load_chain(path) -> GeneratedChain:
    """Rebuild a GeneratedChain from a dataset file and its sidecar."""
    rows = read_dataset(path)
    notes = read_annotations(sidecar_path(path))
    blocks, junctions = [], set()
    for _, header, rec in rows:
        h = hash_header(header)
        note = notes.get(h, {})
        txs = tuple(bytes.fromhex(t) for t in note.get("txIds", []))
        blocks.append(GeneratedBlock(header, h, txs, note.get("isValid", True), note.get("onTrueMainChain", False),
                                     rec.get("submitterHint", "")))
        if note.get("isJunction"):
            junctions.add(h)
    return GeneratedChain(blocks, junctions)


@dataclass
class ReplayReport:
    submitted: int = 0
    accepted: int = 0
    rejected: list = field(default_factory=list)  # [(line, hash hex)]
    hash_mismatches: list = field(default_factory=list)  # lines whose "hash" field disagrees with the fields
    relay_junctions: int = 0
    annotated_junctions: int = 0
    junction_mismatches: list = field(default_factory=list)
    pointer_mismatches: list = field(default_factory=list)
    main_head: str = ""
    true_head: str = ""

    @property
    def junctions_match(self) -> bool:
        return not self.junction_mismatches and not self.pointer_mismatches

    def to_dict(self) -> dict:
        return {
            "submitted": self.submitted,
            "accepted": self.accepted,
            "rejected": [{"line": n, "hash": h} for n, h in self.rejected],
            "hashMismatches": self.hash_mismatches,
            "relayJunctions": self.relay_junctions,
            "annotatedJunctions": self.annotated_junctions,
            "junctionMismatches": self.junction_mismatches,
            "pointerMismatches": self.pointer_mismatches,
            "junctionsMatch": self.junctions_match,
            "mainHead": self.main_head,
            "trueHead": self.true_head,
        }


def replay_dataset(path, relay: Relay | None = None, lock_period: int = 10, mode: PrototypeMode = TESTIMONIUM1,
                   ticks_per_header: int = 1) -> tuple:
    """Submit every header of a dataset file in order. Returns (report, relay).

    Without a relay, one is initialised from the file's first record.
    """
    rows = read_dataset(path)
    report = ReplayReport()
    if not rows:
        return report, relay
    if relay is None:
        relay = Relay(rows[0][1], lock_period=lock_period, mode=mode)
    for n, header, rec in rows:
        h = hash_header(header)
        if rec.get("hash") and rec["hash"] != h.hex():
            report.hash_mismatches.append(n)
        if h == relay.genesis_hash:
            continue
        report.submitted += 1
        if relay.submit_block_header(header, client_id(rec.get("submitterHint") or "replay")):
            report.accepted += 1
        else:
            report.rejected.append((n, h.hex()))
        relay.advance_clock(ticks_per_header)

    notes = read_annotations(sidecar_path(path))
    if notes:
        annotated = {h for h, r in notes.items() if r.get("isJunction")}
        main = [(r, h) for h, r in notes.items() if r.get("onTrueMainChain")]
        heights = {hash_header(hd): hd.block_height for _, hd, _ in rows}
        if main:
            report.true_head = max(main, key=lambda x: heights.get(x[1], -1))[1].hex()
    else:
        kids: dict = {}
        for _, header, _ in rows:
            kids[header.parent_hash] = kids.get(header.parent_hash, 0) + 1
        annotated = {h for h, k in kids.items() if k >= 2}
    ours = relay.junctions()
    report.relay_junctions = len(ours)
    report.annotated_junctions = len(annotated)
    report.junction_mismatches = sorted(h.hex() for h in ours ^ annotated)
    report.pointer_mismatches = sorted(h.hex() for h in relay.junction_pointers() ^ (annotated - {relay.genesis_hash}))
    report.main_head = relay.main_chain_head.hex()
    return report, relay
