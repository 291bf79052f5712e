"""Optimistic blockchain relay with on-demand header validation, branch-aware
SPV verification, a stake ledger, a cost meter and an adversarial simulator."""
from .chain import BlockHeader, HeaderValidator, MerkleProof, build_merkle_tree, generate_merkle_proof, hash_header, verify_merkle_proof
from .errors import RelayError
from .ledger import StakeLedger, min_verification_fee
from .meter import BASELINE, MODES, TESTIMONIUM1, TESTIMONIUM2, CostSchedule, Meter, PrototypeMode
from .relay import Relay, init_relay

__version__ = "0.1.0"

__all__ = [
    "BASELINE", "MODES", "TESTIMONIUM1", "TESTIMONIUM2", "BlockHeader", "CostSchedule", "HeaderValidator",
    "MerkleProof", "Meter", "PrototypeMode", "Relay", "RelayError", "StakeLedger", "build_merkle_tree",
    "generate_merkle_proof", "hash_header", "init_relay", "min_verification_fee", "verify_merkle_proof",
]
