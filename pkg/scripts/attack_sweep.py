"""Success rate of bribery attacks as the number of altruistic participants
and the bribe size vary, over many seeds in parallel."""
import argparse
import itertools
import json
from pathlib import Path

from testimonium.scenarios import make_scenario, run_scenarios


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=50)
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--out", default="results/attacks.json")
    args = p.parse_args()

    grid = []
    for attack, altruists, bribe in itertools.product(["dispute-bribe", "submission-bribe"], [0, 1, 2], [5, 1000]):
        if attack == "dispute-bribe":
            kw = dict(altruistic_disputers=altruists, rational_disputers=3)
        else:
            kw = dict(altruistic_submitters=altruists, rational_submitters=3)
        grid.append((attack, altruists, bribe, [make_scenario(attack, seed=s, bribe=bribe, bribe_threshold=10, **kw)
                                                for s in range(args.seeds)]))
    rows = []
    print(f"{'attack':>17} {'altruists':>9} {'bribe':>6} {'bribed':>7} {'poisoned':>9} {'paid':>7}")
    for attack, altruists, bribe, scenarios in grid:
        outs = run_scenarios(scenarios, workers=args.workers)
        poisoned = sum(o.poisoning_succeeded for o in outs)
        bribed = sum(len(o.bribed) for o in outs) / len(outs)
        paid = sum(o.bribes_paid for o in outs) / len(outs)
        rows.append(dict(attack=attack, altruists=altruists, bribe=bribe, poisoned=poisoned, runs=len(outs),
                         meanBribed=bribed, meanPaid=paid))
        print(f"{attack:>17} {altruists:>9} {bribe:>6} {bribed:>7.1f} {poisoned:>4}/{len(outs):<4} {paid:>7.0f}")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(rows, indent=2) + "\n")


if __name__ == "__main__":
    main()
