"""Both cost experiments across the three relay modes.

verify:  after each submission, check a genesis transaction (cost and visits
         per mode as the chain grows).
dispute: after each submission, dispute the first header after genesis and
         restore the pruned headers (cost as the pruned branch grows).
"""
import argparse
from pathlib import Path

from testimonium.costs import DISPUTE, SUBMIT, VERIFY, run_comparison
from testimonium.sim import ChainGenConfig, generate_chain


def table(report, op, every):
    modes = [m for m in report.modes if report.series(m, op)]
    print(f"\n{op}: cost (visits) every {every} submissions")
    print(f"{'n':>6} " + " ".join(f"{m:>20}" for m in modes))
    n = len(report.series(modes[0], op))
    for i in range(every - 1, n, every):
        cells = [f"{report.series(m, op)[i]:>12} ({report.visits(m, op)[i]:>5})" for m in modes]
        print(f"{i + 1:>6} " + " ".join(cells))


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--length", type=int, default=2000)
    p.add_argument("--dispute-length", type=int, default=200)
    p.add_argument("--branch-prob", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="results/costs")
    args = p.parse_args()

    chain = generate_chain(ChainGenConfig(length=args.length, branch_probability=args.branch_prob,
                                          random_seed=args.seed))
    verify = run_comparison(chain.blocks, experiment=VERIFY)
    verify.write(Path(args.out) / "verify")
    print("per-submission cost")
    for m in verify.modes:
        red = verify.reduction(m) if m != "baseline" else None
        tail = f"  reduction {red:.1f}%" if red is not None else ""
        print(f"  {m:>8}: mean {verify.mean(m, SUBMIT):>12.0f}  sd {verify.stddev(m, SUBMIT):>8.0f}{tail}")
    table(verify, VERIFY, max(1, args.length // 10))

    dispute = run_comparison(chain.blocks[:args.dispute_length], modes=("t1", "t2"), experiment=DISPUTE)
    dispute.write(Path(args.out) / "dispute")
    table(dispute, DISPUTE, max(1, args.dispute_length // 10))
    print(f"\nreports under {args.out}/verify and {args.out}/dispute")


if __name__ == "__main__":
    main()
