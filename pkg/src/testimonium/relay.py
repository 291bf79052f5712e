"""The relay state machine.

Headers are accepted optimistically and locked for ``lock_period`` ticks.
Branch bookkeeping (branch ids and junction pointers) lets main-chain
membership be decided by jumping from junction to junction instead of
walking every header back from the head. Disputes run the expensive
validator on demand and prune the offending branch.

All mutation goes through one ``Relay`` object, one call at a time.
"""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field

from .chain import (BlockHeader, HeaderValidator, MerkleProof, default_validator, encode_header, hash_header, header_words,
                    verify_merkle_proof)
from .errors import HeaderIntegrity, InsufficientFunds, InsufficientStake, NoSuchChild, RelayError, UnknownHeader
from .ledger import StakeLedger
from .meter import (CALLDATA_WORD, HASH_EVAL, STORAGE_DELETE, STORAGE_READ, STORAGE_WRITE, TESTIMONIUM1, TX_BASE,
                    TESTIMONIUM2, VALIDATOR, Meter, PrototypeMode)

# lockedUntil, submitter, branchId, junction, totalDifficulty
META_FIELDS = 5


@dataclass
class HeaderMeta:
    locked_until: int
    submitter: bytes
    children: list = field(default_factory=list)
    branch_id: int = 0
    junction: bytes = b""
    total_difficulty: int = 0


@dataclass(frozen=True)
class CompactRecord:
    header_hash: bytes
    block_height: int
    total_difficulty: int


@dataclass
class StoredHeader:
    body: BlockHeader | CompactRecord
    meta: HeaderMeta

    @property
    def height(self) -> int:
        return self.body.block_height


@dataclass(frozen=True)
class MembershipResult:
    on_main_chain: bool
    confirm_start: bytes | None = None
    # the unlocked junction whose child is confirm_start; None when the head itself is the start
    confirm_junction: bytes | None = None
    visits: int = 0


class Relay:
    def __init__(self, genesis: BlockHeader, lock_period: int = 10, mode: PrototypeMode = TESTIMONIUM1,
                 validator: HeaderValidator | None = None, ledger: StakeLedger | None = None,
                 meter: Meter | None = None):
        if lock_period < 0:
            raise ValueError("lock_period must be >= 0")
        self.mode = mode
        self.validator = validator or default_validator()
        self.ledger = ledger
        self.meter = meter or Meter()
        self.lock_period = lock_period
        self.clock = 0
        self.last_branch_id = 0

        gh = hash_header(genesis)
        self.genesis_hash = gh
        meta = HeaderMeta(locked_until=-1, submitter=bytes(20), branch_id=0, junction=gh,
                          total_difficulty=genesis.difficulty)
        self.headers: dict[bytes, StoredHeader] = {gh: StoredHeader(self._body(genesis, gh, meta.total_difficulty), meta)}
        self.branch_heads: set[bytes] = {gh}
        self.main_chain_head = gh

        # condemned subtrees awaiting (possibly chunked) physical deletion
        self._graveyard: dict[bytes, StoredHeader] = {}
        self._grave_parent: dict[bytes, bytes] = {}
        self._pending: dict[bytes, dict] = {}
        self._releases: list = []
        self._seq = 0

    # -- helpers ------------------------------------------------------------

    @property
    def compact(self) -> bool:
        return self.mode.store == "compact"

    @property
    def store_mode(self) -> str:
        return self.mode.store

    def _body(self, header: BlockHeader, h: bytes, td: int):
        if self.compact:
            return CompactRecord(h, header.block_height, td)
        return header

    def _hwords(self, header: BlockHeader) -> int:
        w = self.meter.schedule.header_words
        return header_words(header) if w is None else w

    def _body_words(self, entry: StoredHeader) -> int:
        if isinstance(entry.body, CompactRecord):
            return 1  # block height; the hash is the storage key
        return self._hwords(entry.body)

    def _get(self, block_hash: bytes) -> StoredHeader:
        try:
            return self.headers[block_hash]
        except KeyError:
            raise UnknownHeader(block_hash.hex()) from None

    def __contains__(self, block_hash: bytes) -> bool:
        return block_hash in self.headers

    def __len__(self) -> int:
        return len(self.headers)

    def height(self, block_hash: bytes) -> int:
        return self._get(block_hash).height

    def meta(self, block_hash: bytes) -> HeaderMeta:
        return self._get(block_hash).meta

    def is_locked(self, block_hash: bytes) -> bool:
        """Locked for verification purposes."""
        return self._get(block_hash).meta.locked_until >= self.clock

    def full_header(self, block_hash: bytes) -> BlockHeader:
        body = self._get(block_hash).body
        if isinstance(body, CompactRecord):
            raise RelayError("compact store keeps no full headers")
        return body

    # -- clock --------------------------------------------------------------

    def advance_clock(self, ticks: int = 1) -> "Relay":
        if ticks < 0:
            raise ValueError("ticks must be >= 0")
        self.clock += ticks
        while self._releases and self._releases[0][0] <= self.clock:
            _, _, h = heapq.heappop(self._releases)
            entry = self.headers.get(h)
            if entry is None or entry.meta.locked_until > self.clock:
                continue
            if self.ledger is not None and h in self.ledger.locked_by_header:
                self.ledger.release_stake(h)
        return self

    # -- submission ---------------------------------------------------------

    def submit_block_header(self, header: BlockHeader, submitter: bytes) -> bool:
        m = self.meter
        m.meter(TX_BASE)
        m.meter(CALLDATA_WORD, self._hwords(header))
        m.meter(HASH_EVAL)
        h = hash_header(header)
        m.meter(STORAGE_READ)
        if h in self.headers or h in self._graveyard:
            return False
        parent_hash = header.parent_hash
        m.meter(STORAGE_READ)
        parent = self.headers.get(parent_hash)
        if parent is None:
            return False
        if self.ledger is not None and not self.ledger.can_lock(submitter):
            raise InsufficientStake(f"submitter {submitter.hex()} lacks free stake")
        if self.mode.validation == "on-submission":
            m.meter(VALIDATOR)
            if not self.validator(header, parent.body):
                return False

        td = parent.meta.total_difficulty + header.difficulty
        meta = HeaderMeta(locked_until=self.clock + self.lock_period, submitter=submitter, total_difficulty=td)
        entry = StoredHeader(self._body(header, h, td), meta)
        self.headers[h] = entry
        m.meter(STORAGE_WRITE, self._body_words(entry) + META_FIELDS)

        parent.meta.children.append(h)
        self.branch_heads.add(h)
        m.meter(STORAGE_WRITE, 2)
        if parent_hash in self.branch_heads:
            self.branch_heads.remove(parent_hash)
            m.meter(STORAGE_DELETE)
            meta.branch_id = parent.meta.branch_id
            meta.junction = parent.meta.junction
        else:
            self.last_branch_id += 1
            m.meter(STORAGE_WRITE)
            meta.branch_id = self.last_branch_id
            meta.junction = parent_hash
            if len(parent.meta.children) == 2:
                self.set_junction(parent.meta.children[0], parent_hash)

        # Only the new header can overtake the incumbent, so this equals a full rescan.
        m.meter(STORAGE_READ)
        if td > self.headers[self.main_chain_head].meta.total_difficulty:
            self.main_chain_head = h
            m.meter(STORAGE_WRITE)

        if self.ledger is not None:
            self.ledger.lock_stake_for_header(submitter, h)
            self._seq += 1
            heapq.heappush(self._releases, (meta.locked_until, self._seq, h))
        return True

    def set_junction(self, start_hash: bytes, junction_hash: bytes) -> None:
        self._get(start_hash)
        cur = start_hash
        while True:
            entry = self.headers[cur]
            entry.meta.junction = junction_hash
            self.meter.meter(STORAGE_WRITE)
            if len(entry.meta.children) != 1:
                return
            cur = entry.meta.children[0]

    def get_main_chain_head(self) -> bytes:
        """Branch head with the highest total difficulty; the incumbent wins ties,
        otherwise the lowest hash."""
        self.meter.meter(STORAGE_READ, len(self.branch_heads))
        top = max(self.headers[h].meta.total_difficulty for h in self.branch_heads)
        best = [h for h in self.branch_heads if self.headers[h].meta.total_difficulty == top]
        if self.main_chain_head in best:
            return self.main_chain_head
        return min(best)

    # -- queries ------------------------------------------------------------

    def get_child_by_branch(self, junction_hash: bytes, branch_id: int) -> bytes:
        entry = self._get(junction_hash)
        for child in entry.meta.children:
            self.meter.meter(STORAGE_READ)
            if self.headers[child].meta.branch_id == branch_id:
                return child
        raise NoSuchChild(f"{junction_hash.hex()} has no child on branch {branch_id}")

    def is_part_of_main_chain(self, block_hash: bytes) -> MembershipResult:
        target = self._get(block_hash)
        visits = 1
        cur_hash = self.main_chain_head
        cur = self.headers[cur_hash]
        visits += 1
        confirm_start = confirm_junction = None
        if cur.meta.locked_until < self.clock:
            confirm_start = cur_hash
        while cur.meta.branch_id > target.meta.branch_id:
            old_branch = cur.meta.branch_id
            cur_hash = cur.meta.junction
            cur = self.headers[cur_hash]
            visits += 1
            if confirm_start is not None:
                continue
            if cur.meta.locked_until < self.clock:
                confirm_start = self.get_child_by_branch(cur_hash, old_branch)
                confirm_junction = cur_hash
        self.meter.visit(visits)
        if cur.meta.branch_id < target.meta.branch_id or cur.height < target.height:
            return MembershipResult(False, visits=visits)
        return MembershipResult(True, confirm_start, confirm_junction, visits)

    def naive_path(self, block_hash: bytes) -> list | None:
        """Headers from the main-chain head back to ``block_hash`` (inclusive),
        following parent links; None if the genesis is reached first."""
        self._get(block_hash)
        if self.compact:
            raise RelayError("naive search needs parent links, which the compact store drops")
        path = []
        cur = self.main_chain_head
        headers = self.headers
        while True:
            path.append(cur)
            if cur == block_hash or cur == self.genesis_hash:
                break
            cur = headers[cur].body.parent_hash
        self.meter.visit(len(path))
        return path if cur == block_hash else None

    def naive_is_part_of_main_chain(self, block_hash: bytes) -> bool:
        return self.naive_path(block_hash) is not None

    def is_confirmed(self, block_hash: bytes, confirmations: int) -> bool:
        if confirmations < 0:
            raise ValueError("confirmations must be >= 0")
        cur = block_hash
        while True:
            self.meter.meter(STORAGE_READ)
            entry = self.headers.get(cur)
            if entry is None or entry.meta.locked_until >= self.clock:
                return False
            if confirmations == 0:
                return True
            if not entry.meta.children:
                return False
            cur = entry.meta.children[0]
            confirmations -= 1

    def _confirmed_on_main_chain(self, block_hash: bytes, confirmations: int) -> bool:
        target = self.headers[block_hash]
        if self.mode.search == "naive":
            path = self.naive_path(block_hash)
            if path is None or target.meta.locked_until >= self.clock:
                return False
            if confirmations >= len(path):
                return False
            return self.headers[path[-1 - confirmations]].meta.locked_until < self.clock
        res = self.is_part_of_main_chain(block_hash)
        if not res.on_main_chain or target.meta.locked_until >= self.clock:
            return False
        if res.confirm_start is None:
            return self.is_confirmed(block_hash, confirmations)
        if res.confirm_junction is not None:
            # everything up to the unlocked junction is unlocked and on the main chain
            if confirmations <= self.headers[res.confirm_junction].height - target.height:
                return True
        covered = self.headers[res.confirm_start].height - target.height
        return self.is_confirmed(res.confirm_start, max(0, confirmations - covered))

    def _supplied_header(self, block_hash: bytes, header: BlockHeader | None) -> BlockHeader:
        """Full header for ``block_hash``: from storage, or in compact mode from
        the caller after an integrity check."""
        if not self.compact:
            return self.headers[block_hash].body
        if header is None:
            raise HeaderIntegrity(f"compact store needs the full header of {block_hash.hex()}")
        self.meter.meter(CALLDATA_WORD, self._hwords(header))
        self.meter.meter(HASH_EVAL)
        if hash_header(header) != block_hash:
            raise HeaderIntegrity(f"supplied header does not hash to {block_hash.hex()}")
        return header

    def verify_transaction(self, tx_id: bytes, block_hash: bytes, confirmations: int, proof: MerkleProof,
                           requester: bytes | None = None, fee: int = 0,
                           header: BlockHeader | None = None) -> bool:
        m = self.meter
        m.meter(TX_BASE)
        m.meter(CALLDATA_WORD, 3 + len(proof.path))
        entry = self._get(block_hash)
        full = self._supplied_header(block_hash, header)
        if not self._confirmed_on_main_chain(block_hash, confirmations):
            return False
        m.meter(HASH_EVAL, len(proof.path) + 1)
        if not verify_merkle_proof(full.merkle_root, tx_id, proof):
            return False
        if self.ledger is not None and fee:
            if requester is None:
                raise InsufficientFunds("a fee needs a requester")
            self.ledger.pay_verification_fee(requester, entry.meta.submitter, fee, block_hash)
        return True

    # -- disputes -----------------------------------------------------------

    def dispute_header(self, block_hash: bytes, disputer: bytes, header: BlockHeader | None = None,
                       parent: BlockHeader | None = None, prune_limit: int | None = None,
                       force: bool = False) -> list:
        """Challenge a locked header. Returns the submitters of every header
        removed by this call.

        ``force`` prunes regardless of the lock and of the validator's verdict
        (the validator still runs and is metered); it exists for cost
        experiments only. Calling again on a header whose pruning was cut short
        by ``prune_limit`` resumes the pruning.
        """
        if block_hash in self._pending:
            return self.prune_branch(block_hash, prune_limit)
        entry = self._get(block_hash)
        m = self.meter
        m.meter(TX_BASE)
        if block_hash == self.genesis_hash:
            return []
        if not force and entry.meta.locked_until <= self.clock:
            return []
        if self.mode.validation == "on-submission":
            return []
        full = self._supplied_header(block_hash, header)
        parent_hash = full.parent_hash
        if self.compact:
            if parent is None:
                raise HeaderIntegrity("compact store needs the parent's full header for validation")
            parent_full = self._supplied_header(parent_hash, parent)
        else:
            parent_full = self.headers[parent_hash].body
        m.meter(VALIDATOR)
        if self.validator(full, parent_full) and not force:
            return []
        return self._condemn(block_hash, parent_hash, disputer, prune_limit, strict=not force)

    def prune_branch(self, block_hash: bytes, prune_limit: int | None = None,
                     parent_hash: bytes | None = None) -> list:
        """Remove ``block_hash`` and all its descendants, children first.

        The subtree is detached (parent repaired, main chain recomputed) on the
        first call; physical deletion of at most ``prune_limit`` headers happens
        per call, and the root goes last.
        """
        if prune_limit is not None and prune_limit < 1:
            raise ValueError("prune_limit must be positive")
        if block_hash in self._pending:
            return self._delete_chunk(block_hash, prune_limit)
        entry = self._get(block_hash)
        if block_hash == self.genesis_hash:
            raise RelayError("the genesis header cannot be pruned")
        if parent_hash is None:
            if self.compact:
                raise RelayError("compact store needs the parent hash to prune")
            parent_hash = entry.body.parent_hash
        return self._condemn(block_hash, parent_hash, None, prune_limit, strict=False)

    def _condemn(self, root: bytes, parent_hash: bytes, disputer: bytes | None, prune_limit, strict: bool) -> list:
        m = self.meter
        stack = [root]
        while stack:
            h = stack.pop()
            entry = self.headers.pop(h)
            self._graveyard[h] = entry
            self.branch_heads.discard(h)
            for c in entry.meta.children:
                self._grave_parent[c] = h
                stack.append(c)
        self._grave_parent[root] = parent_hash

        parent = self.headers[parent_hash]
        parent.meta.children.remove(root)
        m.meter(STORAGE_WRITE)
        if not parent.meta.children:
            self.branch_heads.add(parent_hash)
            m.meter(STORAGE_WRITE)
        if len(parent.meta.children) == 1:
            self.update_desc(parent.meta.children[0], parent.meta.junction, parent.meta.branch_id)
        self.main_chain_head = self.get_main_chain_head()
        m.meter(STORAGE_WRITE)
        self._pending[root] = {"disputer": disputer, "strict": strict}
        return self._delete_chunk(root, prune_limit)

    def _postorder(self, root: bytes):
        stack = [(root, False)]
        while stack:
            h, expanded = stack.pop()
            if expanded:
                yield h
                continue
            stack.append((h, True))
            for c in reversed(self._graveyard[h].meta.children):
                stack.append((c, False))

    def _delete_chunk(self, root: bytes, prune_limit: int | None) -> list:
        order = []
        for h in self._postorder(root):
            order.append(h)
            if prune_limit is not None and len(order) >= prune_limit:
                break
        submitters = []
        for h in order:
            entry = self._graveyard.pop(h)
            self.meter.meter(STORAGE_DELETE, self._body_words(entry) + META_FIELDS + 1)
            submitters.append(entry.meta.submitter)
            parent = self._grave_parent.pop(h)
            if h != root:
                self._graveyard[parent].meta.children.remove(h)
        info = self._pending[root]
        if root not in self._graveyard:
            del self._pending[root]
        if self.ledger is not None and info["disputer"] is not None:
            removed = order if info["strict"] else [h for h in order if h in self.ledger.locked_by_header]
            self.ledger.reward_disputer(info["disputer"], removed)
        return submitters

    def update_desc(self, start_hash: bytes, junction: bytes, branch_id: int) -> None:
        self._get(start_hash)
        cur = start_hash
        while True:
            entry = self.headers[cur]
            entry.meta.junction = junction
            entry.meta.branch_id = branch_id
            self.meter.meter(STORAGE_WRITE, 2)
            if len(entry.meta.children) != 1:
                return
            cur = entry.meta.children[0]

    @property
    def pending_prunes(self) -> list:
        return sorted(self._pending)

    # -- inspection ---------------------------------------------------------

    def junctions(self) -> set:
        """Stored headers with two or more children."""
        return {h for h, e in self.headers.items() if len(e.meta.children) >= 2}

    def junction_pointers(self) -> set:
        """Distinct junction fields across stored headers, genesis excluded."""
        return {e.meta.junction for e in self.headers.values()} - {self.genesis_hash}

    def parent_of(self, block_hash: bytes) -> bytes | None:
        if block_hash == self.genesis_hash:
            return None
        body = self._get(block_hash).body
        if isinstance(body, BlockHeader):
            return body.parent_hash
        for h, e in self.headers.items():
            if block_hash in e.meta.children:
                return h
        raise RelayError(f"orphaned header {block_hash.hex()}")

    def structural_violations(self) -> list:
        """Every broken structural invariant, as human-readable strings."""
        out = []
        heads = {h for h, e in self.headers.items() if not e.meta.children}
        if heads != self.branch_heads:
            out.append("branch_heads != headers without children")
        if self.main_chain_head not in self.branch_heads:
            out.append("main chain head is not a branch head")
        elif self.branch_heads:
            top = max(self.headers[h].meta.total_difficulty for h in self.branch_heads)
            if self.headers[self.main_chain_head].meta.total_difficulty != top:
                out.append("main chain head is not the heaviest branch head")
        parent_of = {}
        for h, e in self.headers.items():
            for c in e.meta.children:
                if c not in self.headers:
                    out.append(f"{h.hex()[:8]} lists missing child {c.hex()[:8]}")
                    continue
                if c in parent_of:
                    out.append(f"{c.hex()[:8]} has two parents")
                parent_of[c] = h
        for h, e in self.headers.items():
            m = e.meta
            if m.branch_id > self.last_branch_id:
                out.append(f"{h.hex()[:8]} branch id above last_branch_id")
            if m.junction != self.genesis_hash:
                j = self.headers.get(m.junction)
                if j is None or len(j.meta.children) < 2:
                    out.append(f"{h.hex()[:8]} junction is not a junction")
            if h == self.genesis_hash:
                continue
            p = parent_of.get(h)
            if p is None:
                out.append(f"{h.hex()[:8]} not listed by any parent")
                continue
            if isinstance(e.body, BlockHeader) and e.body.parent_hash != p:
                out.append(f"{h.hex()[:8]} parent link disagrees with child list")
            pm = self.headers[p].meta
            if m.branch_id < pm.branch_id:
                out.append(f"{h.hex()[:8]} branch id below its parent's")
            if isinstance(e.body, BlockHeader) and m.total_difficulty != pm.total_difficulty + e.body.difficulty:
                out.append(f"{h.hex()[:8]} total difficulty mismatch")
        return out

    def snapshot(self) -> bytes:
        """Deterministic byte serialization of the full relay state."""
        def body(e):
            if isinstance(e.body, CompactRecord):
                return {"hash": e.body.header_hash.hex(), "blockHeight": e.body.block_height,
                        "totalDifficulty": e.body.total_difficulty}
            return {"encoded": encode_header(e.body).hex()}

        def meta(m):
            return [m.locked_until, m.submitter.hex(), [c.hex() for c in m.children], m.branch_id,
                    m.junction.hex(), m.total_difficulty]

        doc = {
            "storeMode": self.mode.store,
            "mode": self.mode.name,
            "clock": self.clock,
            "lockPeriod": self.lock_period,
            "lastBranchId": self.last_branch_id,
            "genesis": self.genesis_hash.hex(),
            "mainChainHead": self.main_chain_head.hex(),
            "branchHeads": sorted(h.hex() for h in self.branch_heads),
            "headers": [[h.hex(), body(self.headers[h]), meta(self.headers[h].meta)] for h in sorted(self.headers)],
            "pending": [[h.hex(), sorted(x.hex() for x in self._subtree(h))] for h in sorted(self._pending)],
            "ledger": self.ledger.snapshot() if self.ledger is not None else None,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()

    def _subtree(self, root: bytes) -> list:
        return list(self._postorder(root)) if root in self._graveyard else []


def init_relay(genesis: BlockHeader, lock_period: int = 10, store_mode: str = "full",
               validator: HeaderValidator | None = None, **kwargs) -> Relay:
    mode = kwargs.pop("mode", TESTIMONIUM2 if store_mode == "compact" else TESTIMONIUM1)
    return Relay(genesis, lock_period, mode, validator, **kwargs)
