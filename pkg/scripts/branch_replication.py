"""Generate a branchy header stream, replay it into a relay, and compare the
relay's junctions with the generator's ground truth."""
import argparse
import json
import tempfile
import time
from pathlib import Path

from testimonium.sim import ChainGenConfig, generate_chain, replay_dataset, write_dataset


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--length", type=int, default=10_000)
    p.add_argument("--branch-prob", type=float, default=0.02)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", default=None, help="directory for the per-seed JSON reports")
    args = p.parse_args()

    out = Path(args.out) if args.out else Path(tempfile.mkdtemp(prefix="replication-"))
    out.mkdir(parents=True, exist_ok=True)
    print(f"{'seed':>4} {'junctions':>9} {'mismatch':>8} {'head ok':>7} {'secs':>6}")
    for seed in range(args.seeds):
        t0 = time.perf_counter()
        chain = generate_chain(ChainGenConfig(length=args.length, branch_probability=args.branch_prob, random_seed=seed))
        path, _ = write_dataset(chain, out / f"chain-{seed}.tjsonl")
        report, _ = replay_dataset(path)
        secs = time.perf_counter() - t0
        (out / f"replay-{seed}.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
        mism = len(report.junction_mismatches) + len(report.pointer_mismatches)
        print(f"{seed:>4} {report.relay_junctions:>9} {mism:>8} {str(report.main_head == report.true_head):>7} {secs:>6.2f}")
    print(f"reports in {out}")


if __name__ == "__main__":
    main()
