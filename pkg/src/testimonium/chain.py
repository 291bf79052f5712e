"""Source-chain model: headers, their canonical encoding, Merkle trees and the
pluggable header-validity predicate.

Everything here is a pure function over immutable values.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

from .errors import EmptyBlock, NotInBlock, ParseError

HASH_SIZE = 32
ZERO_HASH = bytes(HASH_SIZE)
DEFAULT_SEAL_KEY = b"testimonium/seal/v1"
SEAL_SIZE = 16

LEFT = "left"
RIGHT = "right"


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class BlockHeader:
    parent_hash: bytes
    block_height: int
    merkle_root: bytes
    difficulty: int
    timestamp: int = 0
    validity_seed: bytes = b""

    def __post_init__(self):
        if len(self.parent_hash) != HASH_SIZE or len(self.merkle_root) != HASH_SIZE:
            raise ValueError("parent_hash and merkle_root must be 32 bytes")
        if self.block_height < 0 or self.timestamp < 0:
            raise ValueError("block_height and timestamp must be non-negative")
        if self.difficulty <= 0:
            raise ValueError("difficulty must be positive")


# parent_hash | height (u64) | merkle_root | difficulty (u256) | timestamp (u64)
_FIXED = struct.Struct(">32sQ32s32sQ")


def _encode_fixed(header: BlockHeader) -> bytes:
    return _FIXED.pack(
        header.parent_hash,
        header.block_height,
        header.merkle_root,
        header.difficulty.to_bytes(32, "big"),
        header.timestamp,
    )


def encode_header(header: BlockHeader) -> bytes:
    """Canonical byte encoding: fixed field order, big-endian integers,
    length-prefixed validity seed."""
    seed = header.validity_seed
    return _encode_fixed(header) + struct.pack(">I", len(seed)) + seed


def decode_header(data: bytes) -> BlockHeader:
    if len(data) < _FIXED.size + 4:
        raise ParseError(f"header encoding too short ({len(data)} bytes)")
    parent, height, root, difficulty, ts = _FIXED.unpack_from(data)
    (n,) = struct.unpack_from(">I", data, _FIXED.size)
    seed = data[_FIXED.size + 4:]
    if len(seed) != n:
        raise ParseError(f"validity seed length {len(seed)} != prefix {n}")
    try:
        return BlockHeader(parent, height, root, int.from_bytes(difficulty, "big"), ts, seed)
    except ValueError as exc:
        raise ParseError(str(exc)) from exc


def hash_header(header: BlockHeader) -> bytes:
    return sha256(encode_header(header))


def header_words(header: BlockHeader) -> int:
    """Size of the canonical encoding in 32-byte words."""
    return -(-len(encode_header(header)) // 32)


# -- sealing / validity ---------------------------------------------------

def compute_seal(header: BlockHeader, key: bytes = DEFAULT_SEAL_KEY) -> bytes:
    return sha256(key + _encode_fixed(header))[:SEAL_SIZE]


def seal_header(header: BlockHeader, key: bytes = DEFAULT_SEAL_KEY) -> BlockHeader:
    """Return ``header`` with a validity seed that passes the default check."""
    return replace(header, validity_seed=compute_seal(header, key))


def break_seal(header: BlockHeader, key: bytes = DEFAULT_SEAL_KEY) -> BlockHeader:
    """Return ``header`` with a seed guaranteed to fail the default check."""
    good = compute_seal(header, key)
    return replace(header, validity_seed=bytes(b ^ 0xFF for b in good))


@dataclass(frozen=True)
class HeaderValidator:
    """Stand-in for the source chain's (expensive) header validation."""

    is_valid: Callable[[BlockHeader, BlockHeader], bool]
    validation_cost: int = 3_000_000

    def __call__(self, header: BlockHeader, parent: BlockHeader) -> bool:
        return bool(self.is_valid(header, parent))


def seal_check(key: bytes = DEFAULT_SEAL_KEY) -> Callable[[BlockHeader, BlockHeader], bool]:
    def is_valid(header: BlockHeader, parent: BlockHeader) -> bool:
        if header.block_height != parent.block_height + 1:
            return False
        if header.parent_hash != hash_header(parent):
            return False
        return header.validity_seed == compute_seal(header, key)

    return is_valid


def default_validator(key: bytes = DEFAULT_SEAL_KEY, cost: int = 3_000_000) -> HeaderValidator:
    return HeaderValidator(seal_check(key), cost)


# -- Merkle trees -----------------------------------------------------------

def leaf_hash(tx_id: bytes) -> bytes:
    # the 0x00 prefix keeps a 32-byte inner node from posing as a transaction
    return sha256(b"\x00" + tx_id)


def node_hash(left: bytes, right: bytes) -> bytes:
    return sha256(left + right)


@dataclass(frozen=True)
class MerkleProof:
    leaf: bytes
    path: tuple = ()  # ((sibling_hash, LEFT | RIGHT), ...) from leaf to root

    def __len__(self):
        return len(self.path)


@dataclass(frozen=True)
class MerkleTree:
    tx_ids: tuple
    levels: tuple = field(repr=False)  # levels[0] = leaf hashes, levels[-1] = (root,)

    @property
    def root(self) -> bytes:
        return self.levels[-1][0]


def build_merkle_tree(tx_ids: Sequence[bytes]) -> MerkleTree:
    if not tx_ids:
        raise EmptyBlock("a block needs at least one transaction")
    level = [leaf_hash(t) for t in tx_ids]
    levels = [tuple(level)]
    while len(level) > 1:
        if len(level) % 2:
            level = level + [level[-1]]
        level = [node_hash(level[i], level[i + 1]) for i in range(0, len(level), 2)]
        levels.append(tuple(level))
    return MerkleTree(tuple(tx_ids), tuple(levels))


def merkle_root(tx_ids: Sequence[bytes]) -> bytes:
    return build_merkle_tree(tx_ids).root


def generate_merkle_proof(tree: MerkleTree, tx_id: bytes) -> MerkleProof:
    try:
        index = tree.tx_ids.index(tx_id)
    except ValueError:
        raise NotInBlock(tx_id.hex()) from None
    path = []
    for level in tree.levels[:-1]:
        if index % 2:
            path.append((level[index - 1], LEFT))
        else:
            sibling = level[index + 1] if index + 1 < len(level) else level[index]
            path.append((sibling, RIGHT))
        index //= 2
    return MerkleProof(tx_id, tuple(path))


def verify_merkle_proof(root: bytes, tx_id: bytes, proof: MerkleProof) -> bool:
    if proof.leaf != tx_id:
        return False
    acc = leaf_hash(tx_id)
    for step in proof.path:
        try:
            sibling, side = step
        except (TypeError, ValueError):
            return False
        if not isinstance(sibling, bytes) or len(sibling) != HASH_SIZE:
            return False
        if side == LEFT:
            acc = node_hash(sibling, acc)
        elif side == RIGHT:
            acc = node_hash(acc, sibling)
        else:
            return False
    return acc == root


def tx_id_for(*parts) -> bytes:
    """Deterministic transaction id from arbitrary printable parts."""
    return sha256("/".join(str(p) for p in parts).encode())


def client_id(name: str) -> bytes:
    """20-byte client identifier derived from a human-readable name."""
    return sha256(b"client/" + name.encode())[:20]
