"""Command-line entry point: generate, replay, compare, attack, verify."""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from .chain import build_merkle_tree, generate_merkle_proof
from .costs import EXPERIMENTS, run_comparison
from .errors import RelayError
from .meter import MODES, CostSchedule
from .scenarios import ATTACKS, make_scenario, run_scenarios, with_seed
from .sim import ChainGenConfig, generate_chain, load_chain, replay_dataset, write_dataset

OK, FAILED, USAGE = 0, 1, 2


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("TESTIMONIUM_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise SystemExit(f"TESTIMONIUM_SEED must be an integer, got {env!r}") from None


def _schedule(args) -> CostSchedule:
    sched = CostSchedule.from_json(args.schedule) if getattr(args, "schedule", None) else CostSchedule()
    overrides = {}
    known = set(sched.to_dict())
    for item in getattr(args, "set", None) or []:
        key, _, value = item.partition("=")
        if not value:
            raise ValueError(f"--set expects key=value, got {item!r}")
        if key not in known:
            raise ValueError(f"unknown schedule field {key!r}; known: {sorted(known)}")
        overrides[key] = None if value == "none" else int(value)
    return replace(sched, **overrides) if overrides else sched


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def cmd_generate(args) -> int:
    cfg = ChainGenConfig(length=args.length, branch_probability=args.branch_prob, branch_max_depth=args.branch_depth,
                         invalid_header_rate=args.invalid_rate, tx_per_block=args.tx_per_block,
                         random_seed=_seed(args), side_first_probability=args.side_first)
    chain = generate_chain(cfg)
    path, side = write_dataset(chain, args.out)
    print(f"wrote {len(chain.blocks)} headers ({len(chain.junctions)} junctions) to {path}; annotations in {side}")
    return OK


def cmd_replay(args) -> int:
    report, relay = replay_dataset(args.input, lock_period=args.lock_period, mode=MODES[args.mode])
    out = report.to_dict()
    out["structuralViolations"] = relay.structural_violations() if relay else []
    if args.report:
        Path(args.report).mkdir(parents=True, exist_ok=True)
        (Path(args.report) / "replay.json").write_text(_dump(out))
    print(f"accepted {report.accepted}/{report.submitted}, junctions relay={report.relay_junctions} "
          f"annotated={report.annotated_junctions} match={report.junctions_match}")
    return OK


def cmd_compare(args) -> int:
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    unknown = [m for m in modes if m not in MODES]
    if unknown:
        raise ValueError(f"unknown modes {unknown}; choose from {sorted(MODES)}")
    if args.input:
        blocks = load_chain(args.input).blocks
    else:
        blocks = generate_chain(ChainGenConfig(length=args.length, branch_probability=args.branch_prob,
                                               random_seed=_seed(args))).blocks
    report = run_comparison(blocks, modes, args.experiment, lock_period=args.lock_period, schedule=_schedule(args))
    csv_path, json_path = report.write(args.report)
    for mode in modes:
        red = report.reduction(mode) if mode != "baseline" else None
        extra = f" reduction={red:.1f}%" if red is not None else ""
        print(f"{mode}: mean submit={report.mean(mode, 'submit'):.0f}{extra} "
              f"validator={report.validator_invocations[mode]}")
    print(f"wrote {csv_path} and {json_path}")
    return OK


def cmd_attack(args) -> int:
    base = make_scenario(args.scenario, seed=_seed(args), altruistic_submitters=args.altruistic_submitters,
                         rational_submitters=args.rational_submitters, altruistic_disputers=args.altruistic_disputers,
                         rational_disputers=args.rational_disputers, bribe=args.bribe, length=args.length,
                         lock_period=args.lock_period, confirmations=args.confirmations, budget=args.budget)
    seeds = [base.generator.random_seed + i for i in range(args.runs)]
    outcomes = run_scenarios([with_seed(base, s) for s in seeds], workers=args.workers)
    summary = {"scenario": args.scenario, "runs": [dict(seed=s, **o.summary()) for s, o in zip(seeds, outcomes)]}
    summary["poisoningSucceeded"] = sum(o.poisoning_succeeded for o in outcomes)
    if args.report:
        d = Path(args.report)
        d.mkdir(parents=True, exist_ok=True)
        (d / "summary.json").write_text(_dump(summary))
        with (d / "events.jsonl").open("w") as fh:
            for s, o in zip(seeds, outcomes):
                for e in o.events:
                    fh.write(json.dumps(dict(seed=s, **e), sort_keys=True, separators=(",", ":")) + "\n")
    for s, o in zip(seeds, outcomes):
        print(f"seed={s} poisoningSucceeded={str(o.poisoning_succeeded).lower()} "
              f"attackerBranchWasMain={str(o.attacker_branch_was_main).lower()} bribed={len(o.bribed)}")
    return OK


def cmd_verify(args) -> int:
    mode = MODES[args.mode]
    chain = load_chain(args.input)
    _, relay = replay_dataset(args.input, lock_period=args.lock_period, mode=mode)
    relay.advance_clock(args.wait)
    block = chain.by_hash().get(bytes.fromhex(args.block))
    if block is None:
        raise ValueError(f"block {args.block} is not in {args.input}")
    if not block.tx_ids:
        raise ValueError("the annotations sidecar lists no transactions for this block")
    tx = block.tx_ids[args.tx_index]
    proof = generate_merkle_proof(build_merkle_tree(block.tx_ids), tx)
    ok = relay.verify_transaction(tx, block.hash, args.confirmations, proof,
                                  header=block.header if relay.compact else None)
    print(f"verified={str(ok).lower()}")
    return OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="testimonium", description="Blockchain relay simulator and cost meter.")
    sub = p.add_subparsers(dest="command", required=True)

    def seeded(sp):
        sp.add_argument("--seed", type=int, default=None, help="random seed (default: $TESTIMONIUM_SEED or 0)")

    g = sub.add_parser("generate", help="write a seeded header dataset and its annotations")
    g.add_argument("--length", type=int, default=1000)
    g.add_argument("--branch-prob", type=float, default=0.02)
    g.add_argument("--branch-depth", type=int, default=2)
    g.add_argument("--invalid-rate", type=float, default=0.0)
    g.add_argument("--tx-per-block", type=int, default=4)
    g.add_argument("--side-first", type=float, default=0.5)
    g.add_argument("--out", required=True)
    seeded(g)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("replay", help="replay a dataset into a relay and check branch replication")
    r.add_argument("--in", dest="input", required=True)
    r.add_argument("--mode", choices=sorted(MODES), default="t1")
    r.add_argument("--lock-period", type=int, default=10)
    r.add_argument("--report")
    r.set_defaults(func=cmd_replay)

    c = sub.add_parser("compare", help="cost comparison across relay modes")
    c.add_argument("--in", dest="input")
    c.add_argument("--length", type=int, default=500, help="generated stream length when --in is absent")
    c.add_argument("--branch-prob", type=float, default=0.02)
    c.add_argument("--modes", default="baseline,t1,t2")
    c.add_argument("--experiment", choices=EXPERIMENTS, default="verify")
    c.add_argument("--lock-period", type=int, default=10)
    c.add_argument("--schedule", help="JSON file of cost schedule fields")
    c.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one schedule field")
    c.add_argument("--report", required=True)
    seeded(c)
    c.set_defaults(func=cmd_compare)

    a = sub.add_parser("attack", help="run a bribery attack scenario")
    a.add_argument("--scenario", choices=ATTACKS, required=True)
    a.add_argument("--altruistic-submitters", type=int, default=1)
    a.add_argument("--rational-submitters", type=int, default=2)
    a.add_argument("--altruistic-disputers", type=int, default=0)
    a.add_argument("--rational-disputers", type=int, default=2)
    a.add_argument("--bribe", type=int, default=1000)
    a.add_argument("--budget", type=int, default=None)
    a.add_argument("--length", type=int, default=60)
    a.add_argument("--lock-period", type=int, default=4)
    a.add_argument("--confirmations", type=int, default=2)
    a.add_argument("--runs", type=int, default=1, help="consecutive seeds starting at --seed")
    a.add_argument("--workers", type=int, default=1)
    a.add_argument("--report")
    seeded(a)
    a.set_defaults(func=cmd_attack)

    v = sub.add_parser("verify", help="replay a dataset, then verify one transaction")
    v.add_argument("--in", dest="input", required=True)
    v.add_argument("--block", required=True, help="block hash (hex)")
    v.add_argument("--tx-index", type=int, default=0)
    v.add_argument("--confirmations", type=int, default=0)
    v.add_argument("--mode", choices=sorted(MODES), default="t1")
    v.add_argument("--lock-period", type=int, default=10)
    v.add_argument("--wait", type=int, default=0, help="ticks to advance after the replay")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("length", "runs", "workers"):
        if getattr(args, name, 1) is not None and getattr(args, name, 1) < 1:
            parser.error(f"--{name} must be >= 1")
    try:
        return args.func(args)
    except (RelayError, ValueError, KeyError, IndexError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FAILED


if __name__ == "__main__":
    sys.exit(main())
