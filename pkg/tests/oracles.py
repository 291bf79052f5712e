"""Independent reference implementations used by the test-suite.

Nothing here calls into relay search or pruning code; oracles work from a
plain parent map recorded while building the state.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from testimonium.chain import BlockHeader, break_seal, client_id, hash_header, merkle_root, seal_header, tx_id_for
from testimonium.meter import TESTIMONIUM1
from testimonium.relay import Relay


def h256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def merkle_root_oracle(txs: list) -> bytes:
    """Recursive top-down root: split at the largest power of two below the
    padded width, duplicating the last leaf of odd levels."""
    level = [h256(b"\x00" + t) for t in txs]
    if len(level) == 1:
        return level[0]

    def up(nodes):
        if len(nodes) == 1:
            return nodes[0]
        if len(nodes) % 2:
            nodes = nodes + [nodes[-1]]
        return up([h256(nodes[i] + nodes[i + 1]) for i in range(0, len(nodes), 2)])

    return up(level)


def make_genesis(tag="g", difficulty=1) -> BlockHeader:
    txs = [tx_id_for(tag, k) for k in range(2)]
    return seal_header(BlockHeader(bytes(32), 0, merkle_root(txs), difficulty, 0))


@dataclass
class World:
    """A relay together with the ground truth needed by the oracles."""

    relay: Relay
    parent: dict = field(default_factory=dict)  # hash -> parent hash (everything ever accepted)
    full: dict = field(default_factory=dict)  # hash -> BlockHeader
    txs: dict = field(default_factory=dict)
    submitter: dict = field(default_factory=dict)
    names: dict = field(default_factory=dict)
    seq: int = 0

    @classmethod
    def new(cls, lock_period=0, mode=TESTIMONIUM1, ledger=None, genesis=None, **kw):
        genesis = genesis or make_genesis()
        relay = Relay(genesis, lock_period, mode, ledger=ledger, **kw)
        w = cls(relay)
        g = hash_header(genesis)
        w.full[g] = genesis
        w.txs[g] = [tx_id_for("g", k) for k in range(2)]
        w.names["G"] = g
        return w

    @property
    def genesis(self) -> bytes:
        return self.relay.genesis_hash

    def header(self, parent: bytes, difficulty=1, valid=True) -> BlockHeader:
        self.seq += 1
        ph = self.full[parent]
        txs = [tx_id_for("w", self.seq, k) for k in range(3)]
        hd = BlockHeader(parent, ph.block_height + 1, merkle_root(txs), difficulty, self.seq)
        hd = seal_header(hd) if valid else break_seal(hd)
        self.txs[hash_header(hd)] = txs
        return hd

    def add(self, parent, difficulty=1, valid=True, who="s", name=None) -> bytes:
        parent = self.names.get(parent, parent)
        hd = self.header(parent, difficulty, valid)
        h = hash_header(hd)
        self.full[h] = hd
        ok = self.relay.submit_block_header(hd, client_id(who))
        assert ok, "submission unexpectedly rejected"
        self.parent[h] = parent
        self.submitter[h] = client_id(who)
        if name:
            self.names[name] = h
        return h

    def chain(self, parent, n, **kw) -> list:
        out = []
        for _ in range(n):
            parent = self.add(parent, **kw)
            out.append(parent)
        return out

    def __getitem__(self, name) -> bytes:
        return self.names[name]

    # -- oracles over the live set --------------------------------------

    def live(self) -> set:
        return set(self.relay.headers)

    def children(self) -> dict:
        live = self.live()
        kids = {h: [] for h in live}
        for h in live:
            p = self.parent.get(h)
            if p is not None and p in live:
                kids[p].append(h)
        return kids

    def closure(self, root) -> set:
        kids = self.children()
        out, stack = set(), [root]
        while stack:
            h = stack.pop()
            out.add(h)
            stack.extend(kids.get(h, []))
        return out

    def total_difficulty(self, h) -> int:
        td = 0
        while h is not None:
            td += self.full[h].difficulty
            h = self.parent.get(h)
        return td

    def heaviest_leaves(self) -> set:
        kids = self.children()
        leaves = [h for h, k in kids.items() if not k]
        top = max(self.total_difficulty(h) for h in leaves)
        return {h for h in leaves if self.total_difficulty(h) == top}

    def ancestors(self, h) -> list:
        """h, parent(h), ..., genesis."""
        out = []
        while h is not None:
            out.append(h)
            h = self.parent.get(h)
        return out

    def main_path(self) -> list:
        """Genesis-to-head list along the relay's current head."""
        return list(reversed(self.ancestors(self.relay.main_chain_head)))

    def unlocked(self, h) -> bool:
        return self.relay.headers[h].meta.locked_until < self.relay.clock

    def confirmed_on_main(self, target, n) -> bool:
        path = self.main_path()
        if target not in path:
            return False
        i = path.index(target)
        if i + n >= len(path):
            return False
        return all(self.unlocked(x) for x in path[i:i + n + 1])

    def first_child_confirmed(self, target, n) -> bool:
        """Brute force for the first-child confirmation walk."""
        kids = {h: self.relay.headers[h].meta.children for h in self.relay.headers}
        cur = target
        for k in range(n + 1):
            if cur not in self.relay.headers or not self.unlocked(cur):
                return False
            if k == n:
                return True
            if not kids[cur]:
                return False
            cur = kids[cur][0]
        return True

    def junctions_oracle(self) -> set:
        return {h for h, k in self.children().items() if len(k) >= 2}

    def junctions_on_path(self, target) -> int:
        """Junctions strictly above ``target`` on the head-to-target path."""
        path = self.main_path()
        kids = self.children()
        i = path.index(target)
        return sum(1 for h in path[i:] if len(kids[h]) >= 2)
