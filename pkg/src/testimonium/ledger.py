"""Stake deposits, per-header stake locks, dispute rewards and verification fees."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable

from .errors import InsufficientFunds, InsufficientStake, LedgerDesync, NoLockedStake, NoVerifications


@dataclass
class StakeLedger:
    required_stake_per_header: int = 1
    free: dict = field(default_factory=lambda: defaultdict(int))
    locked_by_header: dict = field(default_factory=dict)  # header hash -> (client, amount)
    fees_earned: dict = field(default_factory=lambda: defaultdict(int))
    fees_by_header: dict = field(default_factory=lambda: defaultdict(int))
    # inflow/outflow counters, used only to check conservation
    deposited: int = 0
    withdrawn: int = 0
    external: int = 0

    def __post_init__(self):
        if self.required_stake_per_header < 0:
            raise ValueError("required_stake_per_header must be >= 0")
        self.free = defaultdict(int, self.free)
        self.fees_earned = defaultdict(int, self.fees_earned)
        self.fees_by_header = defaultdict(int, self.fees_by_header)

    # -- balances -----------------------------------------------------------

    def free_balance(self, client: bytes) -> int:
        return self.free.get(client, 0)

    def locked_balance(self, client: bytes) -> int:
        return sum(amount for owner, amount in self.locked_by_header.values() if owner == client)

    def balance(self, client: bytes) -> int:
        """Everything the client owns: free, locked and earned fees."""
        return self.free_balance(client) + self.locked_balance(client) + self.fees_earned.get(client, 0)

    def total(self) -> int:
        return (sum(self.free.values()) + sum(a for _, a in self.locked_by_header.values())
                + sum(self.fees_earned.values()))

    def expected_total(self) -> int:
        return self.deposited - self.withdrawn + self.external

    def is_conserved(self) -> bool:
        return self.total() == self.expected_total()

    # -- inflows / outflows -------------------------------------------------

    def deposit_stake(self, client: bytes, amount: int) -> "StakeLedger":
        if amount <= 0:
            raise ValueError(f"deposit must be positive, got {amount}")
        self.free[client] += amount
        self.deposited += amount
        return self

    def withdraw_stake(self, client: bytes, amount: int) -> "StakeLedger":
        if amount <= 0:
            raise ValueError(f"withdrawal must be positive, got {amount}")
        if amount > self.free_balance(client):
            raise InsufficientStake(f"withdraw {amount} > free {self.free_balance(client)}")
        self.free[client] -= amount
        self.withdrawn += amount
        return self

    def credit_external(self, client: bytes, amount: int) -> "StakeLedger":
        """Funds entering from outside the protocol (e.g. a bribe)."""
        if amount < 0:
            raise ValueError("external credit must be non-negative")
        self.free[client] += amount
        self.external += amount
        return self

    # -- internal transfers -------------------------------------------------

    def can_lock(self, client: bytes) -> bool:
        return self.free_balance(client) >= self.required_stake_per_header

    def lock_stake_for_header(self, client: bytes, header_hash: bytes) -> "StakeLedger":
        if header_hash in self.locked_by_header:
            raise LedgerDesync(f"stake already locked for {header_hash.hex()}")
        if not self.can_lock(client):
            raise InsufficientStake(
                f"free {self.free_balance(client)} < required {self.required_stake_per_header}")
        self.free[client] -= self.required_stake_per_header
        self.locked_by_header[header_hash] = (client, self.required_stake_per_header)
        return self

    def release_stake(self, header_hash: bytes) -> "StakeLedger":
        try:
            client, amount = self.locked_by_header.pop(header_hash)
        except KeyError:
            raise NoLockedStake(header_hash.hex()) from None
        self.free[client] += amount
        return self

    def reward_disputer(self, disputer: bytes, removed: Iterable[bytes]) -> int:
        """Move the stakes locked for ``removed`` headers to ``disputer``.

        Returns the credited amount. All hashes are checked before anything
        moves, so a desync leaves the ledger untouched.
        """
        removed = list(removed)
        missing = [h for h in removed if h not in self.locked_by_header]
        if missing:
            raise LedgerDesync(f"no locked stake for {len(missing)} removed header(s)")
        credited = 0
        for h in removed:
            _, amount = self.locked_by_header.pop(h)
            credited += amount
        self.free[disputer] += credited
        return credited

    def pay_verification_fee(self, requester: bytes, submitter: bytes, fee: int,
                             header_hash: bytes | None = None) -> "StakeLedger":
        if fee < 0:
            raise ValueError("fee must be non-negative")
        if fee == 0:
            return self
        if self.free_balance(requester) < fee:
            raise InsufficientFunds(f"requester holds {self.free_balance(requester)} < fee {fee}")
        self.free[requester] -= fee
        self.fees_earned[submitter] += fee
        if header_hash is not None:
            self.fees_by_header[header_hash] += fee
        return self

    def snapshot(self) -> dict:
        return {
            "requiredStakePerHeader": self.required_stake_per_header,
            "free": {k.hex(): v for k, v in sorted(self.free.items()) if v},
            "locked": {h.hex(): [c.hex(), a] for h, (c, a) in sorted(self.locked_by_header.items())},
            "feesEarned": {k.hex(): v for k, v in sorted(self.fees_earned.items()) if v},
            "deposited": self.deposited,
            "withdrawn": self.withdrawn,
            "external": self.external,
        }


@dataclass(frozen=True)
class FeeQuote:
    submission_cost: int
    expected_verifications: int
    min_fee: int


def min_verification_fee(submission_cost: int, expected_verifications: int) -> FeeQuote:
    """Smallest integer fee strictly above submission_cost / expected_verifications."""
    if expected_verifications <= 0:
        raise NoVerifications("at least one verification is needed to recover the submission cost")
    if submission_cost < 0:
        raise ValueError("submission cost must be non-negative")
    return FeeQuote(submission_cost, expected_verifications,
                    submission_cost // expected_verifications + 1)


def profitability(ledger: StakeLedger, submission_costs: dict) -> dict:
    """Per header: fees earned, metered submission cost and whether fees exceed it."""
    return {
        h: {"fees": ledger.fees_by_header.get(h, 0), "cost": cost,
            "profitable": ledger.fees_by_header.get(h, 0) > cost}
        for h, cost in submission_costs.items()
    }
