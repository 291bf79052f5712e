"""Adversarial scenarios: altruistic, rational and byzantine submitters and
disputers driving a live relay, tick by tick, under bribery attacks.

The engine is single-threaded and deterministic; ``run_scenarios`` fans out
independent scenarios over worker processes.
"""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

from .chain import BlockHeader, break_seal, build_merkle_tree, client_id, default_validator, generate_merkle_proof, hash_header, seal_header, tx_id_for
from .errors import BadScenario, InsufficientStake
from .ledger import StakeLedger
from .meter import TESTIMONIUM1, TESTIMONIUM2
from .relay import Relay
from .sim import ChainGenConfig, generate_chain

ALTRUISTIC, RATIONAL, BYZANTINE = "altruistic", "rational", "byzantine"
SUBMITTER, DISPUTER = "submitter", "disputer"
ATTACKS = ("none", "dispute-bribe", "submission-bribe", "valid-illegal")
STRATEGIES = ("silent", "spam-invalid", "false-dispute")


@dataclass(frozen=True)
class ClientBehavior:
    kind: str = ALTRUISTIC
    bribe_threshold: int = 0  # rational only
    strategy: str = "silent"  # byzantine only


@dataclass(frozen=True)
class Participant:
    name: str
    role: str
    behavior: ClientBehavior = ClientBehavior()

    @property
    def id(self) -> bytes:
        return client_id(self.name)


@dataclass(frozen=True)
class Attack:
    kind: str = "none"
    bribe: int = 0  # offered to each targeted rational client
    start: int = 3  # first block step of the attack
    duration: int | None = None  # block steps; None runs to the end of the honest stream
    rate: int = 2  # forged headers per step (invalid-header attacks only)
    budget: int | None = None  # total bribe money; None is unlimited


@dataclass(frozen=True)
class Scenario:
    generator: ChainGenConfig
    clients: tuple
    attack: Attack = Attack()
    ticks_per_block: int = 1
    lock_period: int = 4
    confirmations: int = 2
    stake: int = 1
    deposit: int = 100_000
    fee: int = 1
    expected_verifications: int = 1
    store_mode: str = "full"

    def validate(self) -> None:
        if not any(c.role == SUBMITTER for c in self.clients):
            raise BadScenario("a scenario needs at least one submitter")
        names = [c.name for c in self.clients]
        if len(set(names)) != len(names) or "attacker" in names or "requester" in names:
            raise BadScenario("client names must be unique and not reserved")
        for c in self.clients:
            if c.role not in (SUBMITTER, DISPUTER):
                raise BadScenario(f"unknown role {c.role!r}")
            if c.behavior.kind not in (ALTRUISTIC, RATIONAL, BYZANTINE):
                raise BadScenario(f"unknown client class {c.behavior.kind!r}")
            if c.behavior.kind == BYZANTINE and c.behavior.strategy not in STRATEGIES:
                raise BadScenario(f"unknown byzantine strategy {c.behavior.strategy!r}")
        if self.attack.kind not in ATTACKS:
            raise BadScenario(f"unknown attack {self.attack.kind!r}")
        if self.ticks_per_block < 1:
            raise BadScenario("ticks_per_block must be >= 1 so the tick schedule strictly increases")
        if self.lock_period < 1 or self.confirmations < 0 or self.stake < 1 or self.attack.rate < 1:
            raise BadScenario("lock_period, stake and attack rate must be positive")
        if self.store_mode not in ("full", "compact"):
            raise BadScenario(f"unknown store mode {self.store_mode!r}")


@dataclass
class ScenarioOutcome:
    poisoning_succeeded: bool = False
    illegal_header_ever_usable: bool = False
    attacker_branch_was_main: bool = False
    final_head_is_true_head: bool = False
    ledger_conserved: bool = True
    bribes_paid: int = 0
    bribed: list = field(default_factory=list)
    disputes: list = field(default_factory=list)  # (disputer, removed count, credited)
    ledger_deltas: dict = field(default_factory=dict)
    costs: dict = field(default_factory=dict)  # metered cost spent per client
    events: list = field(default_factory=list)

    def event_log(self) -> str:
        return "".join(json.dumps(e, sort_keys=True, separators=(",", ":")) + "\n" for e in self.events)

    def summary(self) -> dict:
        return {
            "poisoningSucceeded": self.poisoning_succeeded,
            "illegalHeaderEverUsable": self.illegal_header_ever_usable,
            "attackerBranchWasMain": self.attacker_branch_was_main,
            "finalHeadIsTrueHead": self.final_head_is_true_head,
            "ledgerConserved": self.ledger_conserved,
            "bribesPaid": self.bribes_paid,
            "bribed": self.bribed,
            "disputes": len(self.disputes),
            "ledgerDeltas": self.ledger_deltas,
            "costs": self.costs,
        }


class _Engine:
    def __init__(self, sc: Scenario):
        sc.validate()
        self.sc = sc
        self.chain = generate_chain(sc.generator)
        self.validator = default_validator()
        self.ledger = StakeLedger(required_stake_per_header=sc.stake)
        mode = TESTIMONIUM2 if sc.store_mode == "compact" else TESTIMONIUM1
        self.relay = Relay(self.chain.genesis.header, sc.lock_period, mode, self.validator, self.ledger)
        self.out = ScenarioOutcome()
        self.full: dict[bytes, BlockHeader] = {self.chain.genesis.hash: self.chain.genesis.header}
        self.txs: dict[bytes, tuple] = {}
        self.forged: set[bytes] = set()  # attacker and spam headers, valid seal or not
        self.bribed: set[str] = set()
        self.attacker_tip: bytes | None = None
        self.fake_seq = 0
        self.tick = 0

        self.names = {c.name: c for c in sc.clients}
        for name in [c.name for c in sc.clients] + ["attacker", "requester"]:
            self.ledger.deposit_stake(client_id(name), sc.deposit)
        self.start_balance = {n: self.ledger.balance(client_id(n)) for n in list(self.names) + ["attacker", "requester"]}
        self.out.costs = {n: 0 for n in self.start_balance}

    # -- bookkeeping --------------------------------------------------------

    def log(self, actor, action, outcome, cost=0):
        self.out.events.append({"tick": self.tick, "actor": actor, "action": action, "outcome": outcome, "cost": cost})
        self.out.costs[actor] = self.out.costs.get(actor, 0) + cost

    def metered(self, fn, *args, **kwargs):
        mark = self.relay.meter.mark()
        result = fn(*args, **kwargs)
        return result, self.relay.meter.since(mark)["cost"]

    def active(self, role):
        out = []
        for c in self.sc.clients:
            if c.role != role or c.name in self.bribed:
                continue
            if c.behavior.kind in (ALTRUISTIC, RATIONAL):
                out.append(c)
        return out

    def attack_live(self, step, last_step):
        a = self.sc.attack
        if a.kind == "none" or step < a.start or step > last_step:
            return False
        return a.duration is None or step < a.start + a.duration

    # -- actors -------------------------------------------------------------

    def offer_bribes(self, last_step):
        a = self.sc.attack
        role = {"dispute-bribe": DISPUTER, "submission-bribe": SUBMITTER}.get(a.kind)
        if role is None:
            return
        steps = (a.duration if a.duration is not None else last_step - a.start + 1)
        peers = max(1, sum(1 for c in self.sc.clients if c.role == role))
        budget = a.budget
        for c in self.sc.clients:
            if c.role != role:
                continue
            if c.behavior.kind != RATIONAL:
                self.log(c.name, "bribe-refused", c.behavior.kind)
                continue
            # what following the protocol is expected to earn over the attack
            if role == DISPUTER:
                forgone = self.sc.stake * a.rate * steps // peers
            else:
                forgone = self.sc.fee * self.sc.expected_verifications * steps // peers
            if a.bribe <= max(c.behavior.bribe_threshold, forgone):
                self.log(c.name, "bribe-refused", f"bribe {a.bribe} <= {max(c.behavior.bribe_threshold, forgone)}")
                continue
            if budget is not None and budget < a.bribe:
                self.log(c.name, "bribe-unfunded", f"budget {budget}")
                continue
            if budget is not None:
                budget -= a.bribe
            self.ledger.credit_external(c.id, a.bribe)
            self.out.bribes_paid += a.bribe
            self.bribed.add(c.name)
            self.out.bribed.append(c.name)
            self.log(c.name, "bribe-accepted", a.bribe)

    def submit(self, actor, header, txs):
        h = hash_header(header)
        self.full[h] = header
        self.txs[h] = txs
        try:
            ok, cost = self.metered(self.relay.submit_block_header, header, client_id(actor))
        except InsufficientStake:
            self.log(actor, "submit", "insufficient-stake")
            return False
        self.log(actor, "submit", f"{h.hex()[:12]}:{'ok' if ok else 'rejected'}", cost)
        return ok

    def honest_submissions(self, backlog):
        subs = self.active(SUBMITTER)
        if not subs:
            return
        i = 0
        for b in backlog:
            if b.hash in self.relay or b.header.parent_hash not in self.relay:
                continue
            self.submit(subs[i % len(subs)].name, b.header, b.tx_ids)
            i += 1

    def forge(self, parent_hash, difficulty, valid):
        parent = self.full[parent_hash]
        self.fake_seq += 1
        txs = (tx_id_for("forged", self.sc.generator.random_seed, self.fake_seq),
               tx_id_for("forged-pad", self.fake_seq))
        header = BlockHeader(parent_hash, parent.block_height + 1, build_merkle_tree(txs).root, difficulty,
                             parent.timestamp + 1)
        header = seal_header(header) if valid else break_seal(header)
        return header, txs

    def attacker_step(self):
        a = self.sc.attack
        lo, hi = self.sc.generator.difficulty_range
        tip = self.attacker_tip
        if tip is None or tip not in self.relay:
            head = self.relay.main_chain_head
            # submission attacks fork one header behind the head: they only mine at the network's rate
            if a.kind == "dispute-bribe" or head == self.relay.genesis_hash:
                tip = head
            else:
                tip = self.relay.parent_of(head)
        if a.kind == "dispute-bribe":
            for _ in range(a.rate):
                header, txs = self.forge(tip, 2 * hi, valid=False)
                if not self.submit("attacker", header, txs):
                    break
                tip = hash_header(header)
                self.forged.add(tip)
        else:
            header, txs = self.forge(tip, lo, valid=True)
            if self.submit("attacker", header, txs):
                tip = hash_header(header)
                self.forged.add(tip)
        self.attacker_tip = tip

    def byzantine_step(self, fresh):
        for c in self.sc.clients:
            if c.behavior.kind != BYZANTINE:
                continue
            if c.behavior.strategy == "spam-invalid" and c.role == SUBMITTER:
                header, txs = self.forge(self.relay.main_chain_head, self.sc.generator.difficulty_range[0], valid=False)
                if self.submit(c.name, header, txs):
                    h = hash_header(header)
                    self.forged.add(h)
                    fresh.append(h)
            elif c.behavior.strategy == "false-dispute" and c.role == DISPUTER:
                for h in list(fresh):
                    if h in self.relay and self.relay.is_locked(h) and self.honest(h):
                        self.dispute(c, h)

    def honest(self, h) -> bool:
        header = self.full[h]
        parent = self.full.get(header.parent_hash)
        return parent is not None and self.validator(header, parent)

    def dispute(self, c, h):
        before = self.ledger.free_balance(c.id)
        header = self.full[h]
        kw = {"header": header, "parent": self.full[header.parent_hash]} if self.relay.compact else {}
        removed, cost = self.metered(self.relay.dispute_header, h, c.id, **kw)
        credited = self.ledger.free_balance(c.id) - before
        if removed:
            self.out.disputes.append((c.name, len(removed), credited))
        self.log(c.name, "dispute", f"{h.hex()[:12]}:removed={len(removed)}:credited={credited}", cost)

    def disputer_step(self, fresh):
        for c in self.active(DISPUTER):
            for h in fresh:
                if h not in self.relay or self.relay.meta(h).locked_until <= self.relay.clock:
                    continue
                # only the root of an invalid lineage needs disputing
                if not self.honest(h) and self.honest_or_genesis(self.full[h].parent_hash):
                    self.dispute(c, h)

    def honest_or_genesis(self, h) -> bool:
        return h == self.relay.genesis_hash or self.honest(h)

    def verify(self, actor, h, tx, fee):
        kw = {"header": self.full[h]} if self.relay.compact else {}
        proof = generate_merkle_proof(build_merkle_tree(self.txs[h]), tx)
        ok, cost = self.metered(self.relay.verify_transaction, tx, h, self.sc.confirmations, proof,
                                client_id(actor), fee, **kw)
        return ok, cost

    def verification_step(self, honest_by_height, step):
        target_height = step - self.sc.confirmations - self.sc.lock_period // self.sc.ticks_per_block - 1
        for b in honest_by_height.get(target_height, []):
            if b.on_main_chain and b.hash in self.relay:
                ok, cost = self.verify("requester", b.hash, b.tx_ids[0], self.sc.fee)
                self.log("requester", "verify", f"{b.hash.hex()[:12]}:{ok}", cost)
        forged = [h for h in self.forged if h in self.relay]
        if not forged:
            return
        h = min(forged, key=lambda x: (self.relay.height(x), x))
        ok, cost = self.verify("attacker", h, self.txs[h][0], 0)
        self.log("attacker", "verify-forged", f"{h.hex()[:12]}:{ok}", cost)
        if ok:
            self.out.illegal_header_ever_usable = True
            self.out.poisoning_succeeded = True

    # -- main loop ----------------------------------------------------------

    def run(self) -> ScenarioOutcome:
        sc = self.sc
        honest_by_height: dict = {}
        for b in self.chain.blocks[1:]:
            if b.is_valid:
                honest_by_height.setdefault(b.header.block_height, []).append(b)
        last_step = max(honest_by_height, default=0)
        tail = sc.lock_period // sc.ticks_per_block + sc.confirmations + 2
        backlog = []
        bribes_offered = False
        for step in range(1, last_step + tail + 1):
            self.tick = self.relay.clock
            backlog.extend(honest_by_height.get(step, []))
            seen = set(self.relay.headers)
            if self.attack_live(step, last_step) and not bribes_offered:
                self.offer_bribes(last_step)
                bribes_offered = True
            self.honest_submissions(backlog)
            backlog = [b for b in backlog if b.hash not in self.relay]
            if self.attack_live(step, last_step):
                self.attacker_step()
            fresh = [h for h in self.relay.headers if h not in seen]
            self.byzantine_step(fresh)
            self.disputer_step(fresh)
            if self.relay.main_chain_head in self.forged or self.on_forged_lineage(self.relay.main_chain_head):
                self.out.attacker_branch_was_main = True
            self.verification_step(honest_by_height, step)
            if not self.ledger.is_conserved():
                self.out.ledger_conserved = False
            self.relay.advance_clock(sc.ticks_per_block)
        self.out.final_head_is_true_head = self.relay.main_chain_head == self.chain.true_head
        self.out.ledger_deltas = {n: self.ledger.balance(client_id(n)) - v for n, v in self.start_balance.items()}
        if not self.ledger.is_conserved():
            self.out.ledger_conserved = False
        return self.out

    def on_forged_lineage(self, h) -> bool:
        seen = 0
        while h in self.full and h != self.relay.genesis_hash and seen < 64:
            if h in self.forged:
                return True
            h = self.full[h].parent_hash
            seen += 1
        return False


def run_scenario(scenario: Scenario) -> ScenarioOutcome:
    return _Engine(scenario).run()


def run_scenarios(scenarios, workers: int = 1) -> list:
    """Run independent scenarios, in parallel when ``workers`` > 1; results keep input order."""
    scenarios = list(scenarios)
    if workers <= 1:
        return [run_scenario(s) for s in scenarios]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_scenario, scenarios))


# -- presets ----------------------------------------------------------------

def make_scenario(attack: str = "none", seed: int = 0, altruistic_submitters: int = 1, rational_submitters: int = 0,
                  altruistic_disputers: int = 1, rational_disputers: int = 0, bribe: int = 1_000,
                  length: int = 60, branch_probability: float = 0.05, lock_period: int = 4,
                  confirmations: int = 2, bribe_threshold: int = 0, budget: int | None = None,
                  byzantine: tuple = (), **kwargs) -> Scenario:
    clients = []
    for i in range(altruistic_submitters):
        clients.append(Participant(f"alt-sub-{i}", SUBMITTER, ClientBehavior(ALTRUISTIC)))
    for i in range(rational_submitters):
        clients.append(Participant(f"rat-sub-{i}", SUBMITTER, ClientBehavior(RATIONAL, bribe_threshold)))
    for i in range(altruistic_disputers):
        clients.append(Participant(f"alt-dis-{i}", DISPUTER, ClientBehavior(ALTRUISTIC)))
    for i in range(rational_disputers):
        clients.append(Participant(f"rat-dis-{i}", DISPUTER, ClientBehavior(RATIONAL, bribe_threshold)))
    for i, (role, strategy) in enumerate(byzantine):
        clients.append(Participant(f"byz-{i}", role, ClientBehavior(BYZANTINE, strategy=strategy)))
    gen = ChainGenConfig(length=length, branch_probability=branch_probability, branch_max_depth=2,
                         random_seed=seed, tx_per_block=2)
    return Scenario(gen, tuple(clients), Attack(attack, bribe, budget=budget), lock_period=lock_period,
                    confirmations=confirmations, **kwargs)


def with_seed(scenario: Scenario, seed: int) -> Scenario:
    return replace(scenario, generator=replace(scenario.generator, random_seed=seed))
