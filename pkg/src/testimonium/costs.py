"""Side-by-side replay of one header stream into Baseline, Testimonium1 and
Testimonium2 relays, recording the metered cost of every operation."""
from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path

from .chain import build_merkle_tree, client_id, generate_merkle_proof, hash_header
from .errors import BadStream
from .meter import MODES, VALIDATOR, CostSchedule, Meter
from .relay import Relay

SUBMIT, VERIFY, DISPUTE = "submit", "verify", "dispute"
EXPERIMENTS = (VERIFY, DISPUTE)


@dataclass
class CostReport:
    schedule: CostSchedule
    modes: list
    experiment: str
    records: list = field(default_factory=list)  # (index, mode, opClass, cost, visits)
    validator_invocations: dict = field(default_factory=dict)
    accepted: dict = field(default_factory=dict)
    disputes: dict = field(default_factory=dict)
    outcomes: dict = field(default_factory=dict)  # mode -> list of verification booleans
    heads: dict = field(default_factory=dict)  # mode -> final main chain head (hex)

    def series(self, mode: str, op: str) -> list:
        return [r[3] for r in self.records if r[1] == mode and r[2] == op]

    def visits(self, mode: str, op: str = VERIFY) -> list:
        return [r[4] for r in self.records if r[1] == mode and r[2] == op]

    def mean(self, mode: str, op: str) -> float:
        s = self.series(mode, op)
        return statistics.fmean(s) if s else 0.0

    def stddev(self, mode: str, op: str) -> float:
        s = self.series(mode, op)
        return statistics.pstdev(s) if s else 0.0

    def reduction(self, mode: str, op: str = SUBMIT) -> float | None:
        """100 x (1 - mean(mode) / mean(baseline)); None without a baseline series."""
        base = self.mean("baseline", op)
        if not base or not self.series(mode, op):
            return None
        return 100.0 * (1.0 - self.mean(mode, op) / base)

    def summary(self) -> dict:
        ops = sorted({r[2] for r in self.records})
        out = {"experiment": self.experiment, "schedule": self.schedule.to_dict(), "modes": {}}
        for mode in self.modes:
            stats = {}
            for op in ops:
                s = self.series(mode, op)
                if not s:
                    continue
                stats[op] = {
                    "count": len(s),
                    "mean": round(self.mean(mode, op), 3),
                    "stddev": round(self.stddev(mode, op), 3),
                    "max": max(s),
                    "overCeiling": sum(1 for c in s if c > self.schedule.block_cost_ceiling),
                    "maxVisits": max(self.visits(mode, op)),
                }
                red = self.reduction(mode, op) if mode != "baseline" else None
                if red is not None:
                    stats[op]["reductionPct"] = round(red, 3)
            out["modes"][mode] = {
                "ops": stats,
                "validatorInvocations": self.validator_invocations.get(mode, 0),
                "acceptedSubmissions": self.accepted.get(mode, 0),
                "disputes": self.disputes.get(mode, 0),
                "finalHead": self.heads.get(mode, ""),
            }
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "mode", "opClass", "cost", "visits"])
        w.writerows(self.records)
        return buf.getvalue()

    def write(self, directory) -> tuple:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "costs.csv").write_text(self.to_csv())
        (d / "summary.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        return d / "costs.csv", d / "summary.json"


def check_stream(blocks) -> None:
    """Every header after the first must extend a header seen earlier in the stream."""
    if not blocks:
        raise BadStream("empty header stream")
    seen = {hash_header(blocks[0].header)}
    for i, b in enumerate(blocks[1:], 1):
        if b.header.parent_hash not in seen:
            raise BadStream(f"header {i} has a parent not seen earlier in the stream")
        seen.add(b.hash)


def run_comparison(blocks, modes=("baseline", "t1", "t2"), experiment: str = VERIFY,
                   verification_target: bytes | None = None, dispute_target: bytes | None = None,
                   lock_period: int = 10, schedule: CostSchedule | None = None) -> CostReport:
    """Replay ``blocks`` (GeneratedBlock list, genesis first) once per mode.

    After every accepted submission the verify experiment checks inclusion of
    the target's first transaction with zero confirmations; the dispute
    experiment disputes the target and resubmits whatever was removed. The
    dispute forcibly prunes, since every header in the stream is valid.
    """
    if experiment not in EXPERIMENTS:
        raise ValueError(f"experiment must be one of {EXPERIMENTS}")
    unknown = [m for m in modes if m not in MODES]
    if unknown:
        raise ValueError(f"unknown modes {unknown}")
    blocks = list(blocks)
    check_stream(blocks)
    schedule = schedule or CostSchedule()
    genesis = blocks[0]
    by_hash = {b.hash: b for b in blocks}
    vt = verification_target or genesis.hash
    if vt not in by_hash or not by_hash[vt].tx_ids:
        raise BadStream("verification target is not in the stream or carries no transactions")
    if dispute_target is None and experiment == DISPUTE:
        dispute_target = next((b.hash for b in blocks[1:] if b.header.parent_hash == genesis.hash), None)
        if dispute_target is None:
            raise BadStream("stream has no child of the first header to dispute")

    report = CostReport(schedule, list(modes), experiment)
    target = by_hash[vt]
    proof = generate_merkle_proof(build_merkle_tree(target.tx_ids), target.tx_ids[0])
    submitter = client_id("cost-submitter")
    for name in modes:
        mode = MODES[name]
        relay = Relay(genesis.header, lock_period, mode, meter=Meter(schedule))
        m = relay.meter
        outcomes = []
        accepted = disputes = 0
        supply = relay.compact
        for i, b in enumerate(blocks[1:], 1):
            mark = m.mark()
            ok = relay.submit_block_header(b.header, submitter)
            report.records.append((i, name, SUBMIT, m.since(mark)["cost"], 0))
            accepted += ok
            relay.advance_clock(1)
            if experiment == VERIFY:
                mark = m.mark()
                res = relay.verify_transaction(target.tx_ids[0], vt, 0, proof,
                                               header=target.header if supply else None)
                d = m.since(mark)
                report.records.append((i, name, VERIFY, d["cost"], d["visits"]))
                outcomes.append(res)
            elif mode.validation == "on-demand" and dispute_target in relay:
                t = by_hash[dispute_target]
                kw = {"header": t.header, "parent": by_hash[t.header.parent_hash].header} if supply else {}
                mark = m.mark()
                removed = relay.dispute_header(dispute_target, submitter, force=True, **kw)
                d = m.since(mark)
                report.records.append((i, name, DISPUTE, d["cost"], len(removed)))
                disputes += 1
                # restore: resubmit the pruned part of the stream seen so far, unmetered in the report
                for rb in blocks[1:i + 1]:
                    if rb.hash not in relay and rb.header.parent_hash in relay:
                        relay.submit_block_header(rb.header, submitter)
        report.validator_invocations[name] = m.counts[VALIDATOR]
        report.accepted[name] = accepted
        report.disputes[name] = disputes
        report.outcomes[name] = outcomes
        report.heads[name] = relay.main_chain_head.hex()
    return report
