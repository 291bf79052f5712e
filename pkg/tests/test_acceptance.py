"""End-to-end acceptance checks. Each test records one PASS/FAIL line, printed
in the terminal summary (see conftest.py) and when run as a script."""
import functools
import random
import sys
import time
from collections import Counter

import pytest

from oracles import World
from testimonium.chain import build_merkle_tree, client_id, decode_header, encode_header, generate_merkle_proof
from testimonium.cli import main
from testimonium.costs import DISPUTE, SUBMIT, run_comparison
from testimonium.errors import HeaderIntegrity, ParseError
from testimonium.ledger import min_verification_fee
from testimonium.meter import BASELINE, STORAGE_WRITE, TESTIMONIUM1, TESTIMONIUM2
from testimonium.relay import Relay
from testimonium.scenarios import make_scenario, run_scenarios
from testimonium.sim import ChainGenConfig, generate_chain, replay_dataset, write_dataset

RESULTS = {}


def criterion(n, title):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            t0 = time.perf_counter()
            try:
                detail = fn(*args, **kwargs) or ""
            except BaseException as exc:
                RESULTS[n] = f"FAIL  criterion {n:2d}: {title} ({type(exc).__name__}: {str(exc)[:120]})"
                print(RESULTS[n])
                raise
            RESULTS[n] = f"PASS  criterion {n:2d}: {title} [{detail}; {time.perf_counter() - t0:.1f}s]"
            print(RESULTS[n])
        return run
    return wrap


@criterion(1, "branch replication on 10,000 headers")
def test_branch_replication(tmp_path):
    t0 = time.perf_counter()
    chain = generate_chain(ChainGenConfig(length=10_000, branch_probability=0.02, random_seed=1))
    path, _ = write_dataset(chain, tmp_path / "c.tjsonl")
    report, relay = replay_dataset(path)
    elapsed = time.perf_counter() - t0
    assert 150 <= report.annotated_junctions <= 250
    assert report.junction_mismatches == [] and report.pointer_mismatches == []
    assert relay.junctions() == chain.junctions
    assert elapsed < 60
    return f"{report.relay_junctions} junctions, 0 mismatches"


@criterion(2, "optimized search agrees with naive search")
def test_search_oracle_equivalence():
    rng = random.Random(99)
    checked = worst = 0
    for i in range(100):
        length = 5000 if i % 25 == 0 else rng.randint(30, 1200)
        chain = generate_chain(ChainGenConfig(length=length, branch_probability=rng.choice([0.01, 0.03, 0.08]),
                                              branch_max_depth=rng.randint(1, 4), random_seed=1000 + i))
        relay = Relay(chain.genesis.header, lock_period=rng.randint(0, 20))
        parent = {}
        for b in chain.blocks[1:]:
            relay.submit_block_header(b.header, client_id("s"))
            parent[b.hash] = b.header.parent_hash
            if rng.random() < 0.3:
                relay.advance_clock(1)
        for _ in range(rng.randint(0, 5)):
            live = sorted(h for h in relay.headers if h != relay.genesis_hash)
            if live:
                relay.prune_branch(rng.choice(live))
        assert relay.structural_violations() == []
        main_path = []
        h = relay.main_chain_head
        while h is not None:
            main_path.append(h)
            h = parent.get(h)
        junctions = relay.junctions()
        for h in relay.headers:
            res = relay.is_part_of_main_chain(h)
            assert res.on_main_chain == relay.naive_is_part_of_main_chain(h)
            checked += 1
            if res.on_main_chain:
                bound = sum(1 for x in main_path[:main_path.index(h) + 1] if x in junctions) + 2
                assert res.visits <= bound
                worst = max(worst, res.visits - bound)
    return f"100 states, {checked} headers, max slack {-worst}"


@criterion(3, "validator accounting and submission cost reduction")
def test_validator_accounting_and_reduction():
    chain = generate_chain(ChainGenConfig(length=1500, branch_probability=0.02, random_seed=3))
    r = run_comparison(chain.blocks)
    assert r.validator_invocations["baseline"] == r.accepted["baseline"] == 1499
    assert r.validator_invocations["t1"] == r.validator_invocations["t2"] == 0
    d = run_comparison(chain.blocks[:150], modes=("t1", "t2"), experiment=DISPUTE)
    assert d.validator_invocations["t1"] == d.disputes["t1"] == 149
    assert d.validator_invocations["t2"] == d.disputes["t2"] == 149
    t1, t2 = r.reduction("t1", SUBMIT), r.reduction("t2", SUBMIT)
    assert t1 >= 80 and t2 >= 90
    assert abs(t1 - 82) <= 5 and abs(t2 - 92) <= 5
    return f"T1 -{t1:.1f}%, T2 -{t2:.1f}%"


@criterion(4, "verification cost shape over 20,000 headers")
def test_verification_cost_shape():
    chain = generate_chain(ChainGenConfig(length=20_000, branch_probability=0.01, random_seed=4))
    g = chain.genesis
    proof = generate_merkle_proof(build_merkle_tree(g.tx_ids), g.tx_ids[0])
    naive = Relay(g.header, 10, BASELINE)
    fast = Relay(g.header, 10, TESTIMONIUM1)
    samples = []
    max_opt = 0
    kids = Counter()
    junctions = 0
    for i, b in enumerate(chain.blocks[1:], 1):
        fast.submit_block_header(b.header, client_id("s"))
        kids[b.header.parent_hash] += 1
        junctions += kids[b.header.parent_hash] == 2
        naive.submit_block_header(b.header, client_id("s"))
        mark = fast.meter.mark()
        assert fast.verify_transaction(g.tx_ids[0], g.hash, 0, proof)
        visits = fast.meter.since(mark)["visits"]
        assert visits <= junctions + 2
        max_opt = max(max_opt, visits)
        if i % 500 == 0 or i == len(chain.blocks) - 1:
            mark = naive.meter.mark()
            assert naive.verify_transaction(g.tx_ids[0], g.hash, 0, proof)
            samples.append((naive.height(naive.main_chain_head), naive.meter.since(mark)["visits"]))
    assert all(v == h + 1 for h, v in samples)
    final_junctions = len(fast.junctions())
    assert final_junctions == junctions
    assert final_junctions + 2 <= 300
    assert samples[-1][1] >= 19_000
    return f"naive {samples[-1][1]} visits, optimized max {max_opt} (junctions {final_junctions})"


def _random_world(rng, lock=10**6):
    w = World.new(lock_period=lock)
    for _ in range(rng.randint(20, 200)):
        live = sorted(w.live(), key=lambda h: (w.relay.height(h), h))
        parent = w.relay.main_chain_head if rng.random() < 0.6 else rng.choice(live)
        w.add(parent, difficulty=rng.randint(1, 4), valid=rng.random() > 0.2, who=f"s{rng.randint(0, 5)}")
    return w


@criterion(5, "dispute and prune closure oracle")
def test_dispute_prune_oracle():
    rng = random.Random(5)
    done = 0
    while done < 500:
        seed = rng.randint(0, 10**9)
        a = _random_world(random.Random(seed))
        b = _random_world(random.Random(seed))
        for _ in range(10):
            live = sorted(h for h in a.live() if h != a.genesis)
            if not live:
                break
            target = rng.choice(live)
            valid = a.relay.validator(a.full[target], a.full[a.parent[target]])
            closure = a.closure(target)
            removed = a.relay.dispute_header(target, client_id("d"), force=valid)
            assert a.live().isdisjoint(closure)
            assert Counter(removed) == Counter(a.submitter[h] for h in closure)
            assert a.relay.structural_violations() == []
            got = list(b.relay.dispute_header(target, client_id("d"), force=valid, prune_limit=2))
            while b.relay.pending_prunes:
                assert b.relay.structural_violations() == []
                got += b.relay.dispute_header(target, client_id("d"), force=valid, prune_limit=2)
            assert Counter(got) == Counter(removed)
            assert a.relay.snapshot() == b.relay.snapshot()
            done += 1
    return f"{done} disputes"


@criterion(6, "ledger conservation, dispute rewards and minimum fee")
def test_incentives():
    scenarios = []
    for seed in range(30):
        scenarios.append(make_scenario("dispute-bribe", seed=seed, altruistic_disputers=1 + seed % 2,
                                       rational_disputers=seed % 3, stake=1 + seed % 3))
        scenarios.append(make_scenario("submission-bribe", seed=seed, rational_submitters=2,
                                       altruistic_submitters=seed % 2))
        scenarios.append(make_scenario("none", seed=seed, byzantine=(("submitter", "spam-invalid"),), stake=2))
    outcomes = run_scenarios(scenarios)
    disputes = 0
    for sc, out in zip(scenarios, outcomes):
        assert out.ledger_conserved
        for _, removed, credited in out.disputes:
            assert credited == sc.stake * removed
            disputes += 1
    assert disputes > 0
    assert min_verification_fee(284_041, 10).min_fee == 28_405
    rng = random.Random(6)
    for _ in range(1000):
        cost, n = rng.randint(0, 10**12), rng.randint(1, 10**5)
        fee = min_verification_fee(cost, n).min_fee
        assert fee * n > cost >= (fee - 1) * n
    return f"{len(scenarios)} scenarios, {disputes} disputes, 1000 fee cases"


@criterion(7, "bribery attacks and the altruistic participant")
def test_security_properties():
    seeds = range(100)
    bribed_all = run_scenarios([make_scenario("dispute-bribe", seed=s, altruistic_disputers=0, rational_disputers=3,
                                              bribe=1000) for s in seeds])
    assert all(o.poisoning_succeeded for o in bribed_all)
    with_altruist = run_scenarios([make_scenario("dispute-bribe", seed=s, altruistic_disputers=1,
                                                 rational_disputers=3, bribe=1000) for s in seeds])
    assert not any(o.poisoning_succeeded for o in with_altruist)
    submission = run_scenarios([make_scenario("submission-bribe", seed=s, altruistic_submitters=1,
                                              rational_submitters=3, bribe=1000) for s in seeds])
    assert all(len(o.bribed) == 3 for o in submission)
    assert not any(o.attacker_branch_was_main for o in submission)
    return "(a) 100/100 poisoned, (b) 0/100 poisoned, (c) 0/100 attacker heads"


@criterion(8, "compact store equivalence and integrity")
def test_compact_equivalence():
    rng = random.Random(8)
    for seed in range(40):
        worlds = []
        for mode in (TESTIMONIUM1, TESTIMONIUM2):
            r = random.Random(seed)
            w = World.new(lock_period=3, mode=mode)
            log = []
            for _ in range(80):
                live = sorted(w.live(), key=lambda h: (w.relay.height(h), h))
                x = r.random()
                if x < 0.7:
                    w.add(r.choice(live), difficulty=r.randint(1, 3), valid=r.random() > 0.2)
                elif x < 0.85:
                    w.relay.advance_clock(1)
                elif len(live) > 1:
                    t = r.choice(live[1:])
                    kw = {"header": w.full[t], "parent": w.full[w.parent[t]]} if w.relay.compact else {}
                    log.append(("dispute", w.relay.dispute_header(t, client_id("d"), **kw)))
                for h in live[:5]:
                    if h in w.relay:
                        tx = w.txs[h][0]
                        proof = generate_merkle_proof(build_merkle_tree(w.txs[h]), tx)
                        kw = {"header": w.full[h]} if w.relay.compact else {}
                        log.append(("verify", w.relay.verify_transaction(tx, h, 1, proof, **kw)))
            worlds.append((w, log))
        (full, flog), (comp, clog) = worlds
        assert flog == clog
        assert full.relay.main_chain_head == comp.relay.main_chain_head
        assert full.relay.meter.counts[STORAGE_WRITE] > comp.relay.meter.counts[STORAGE_WRITE]

    w = World.new(lock_period=50, mode=TESTIMONIUM2)
    hs = w.chain("G", 5, valid=False)
    target = hs[2]
    enc = encode_header(w.full[target])
    tx = w.txs[target][0]
    proof = generate_merkle_proof(build_merkle_tree(w.txs[target]), tx)
    rejected = 0
    while rejected < 100:
        bit = rng.randrange(len(enc) * 8)
        mutated = bytearray(enc)
        mutated[bit // 8] ^= 1 << (bit % 8)
        try:
            tampered = decode_header(bytes(mutated))
        except ParseError:
            continue  # not a well-formed header at all
        with pytest.raises(HeaderIntegrity):
            w.relay.verify_transaction(tx, target, 0, proof, header=tampered)
        with pytest.raises(HeaderIntegrity):
            w.relay.dispute_header(target, client_id("d"), header=tampered, parent=w.full[hs[1]])
        rejected += 1
    assert target in w.relay
    return "40 paired runs identical, 100/100 tampered headers rejected"


@criterion(9, "six confirmations on a straight chain")
def test_confirmation_semantics():
    for k in range(11):
        w = World.new(lock_period=0)
        target = w.add("G")
        w.chain(target, k)
        w.relay.advance_clock(1)
        tx = w.txs[target][0]
        proof = generate_merkle_proof(build_merkle_tree(w.txs[target]), tx)
        assert w.relay.verify_transaction(tx, target, 6, proof) == (k >= 6)
    # one successor per tick under a lock: passes exactly when six successors are unlocked
    L = 3
    w = World.new(lock_period=L)
    target = w.add("G")
    tx = w.txs[target][0]
    proof = generate_merkle_proof(build_merkle_tree(w.txs[target]), tx)
    succ = []
    flipped_at = None
    for step in range(20):
        w.relay.advance_clock(1)
        succ.append(w.add(succ[-1] if succ else target))
        unlocked = sum(1 for h in succ if not w.relay.is_locked(h))
        ok = w.relay.verify_transaction(tx, target, 6, proof)
        assert ok == (unlocked >= 6 and not w.relay.is_locked(target))
        if ok and flipped_at is None:
            flipped_at = step
    assert flipped_at is not None
    return f"k=0..10 exhaustive; flips after {flipped_at + 1} ticks with lock {L}"


@criterion(10, "compare and attack reports are byte-identical on rerun")
def test_determinism(tmp_path):
    data = tmp_path / "c.tjsonl"
    assert main(["generate", "--length", "300", "--branch-prob", "0.03", "--seed", "10", "--out", str(data)]) == 0
    runs = []
    for tag in ("x", "y"):
        d = tmp_path / tag
        assert main(["compare", "--in", str(data), "--modes", "baseline,t1,t2", "--report", str(d / "cmp")]) == 0
        assert main(["compare", "--in", str(data), "--experiment", "dispute", "--modes", "t1,t2",
                     "--report", str(d / "disp")]) == 0
        assert main(["attack", "--scenario", "dispute-bribe", "--altruistic-disputers", "1", "--seed", "3",
                     "--runs", "3", "--report", str(d / "atk")]) == 0
        runs.append(d)
    files = ["cmp/costs.csv", "cmp/summary.json", "disp/costs.csv", "disp/summary.json",
             "atk/events.jsonl", "atk/summary.json"]
    for f in files:
        assert (runs[0] / f).read_bytes() == (runs[1] / f).read_bytes(), f
    return f"{len(files)} artifacts identical"


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
