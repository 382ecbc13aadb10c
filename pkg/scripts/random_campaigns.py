"""Run simulated campaigns on random variant sets and tally verdicts and exclusions.

    python3 scripts/random_campaigns.py --runs 500 --seed 0
"""
import argparse
import random
from collections import Counter

from vehsec.campaign import run_campaign
from vehsec.synth import random_store, random_sut, random_variant_set


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--variants", type=int, default=3)
    ap.add_argument("--msv", type=int, default=80)
    ap.add_argument("--budget", type=int, default=30)
    args = ap.parse_args()

    verdicts = Counter()
    steps = exclusions = unsound = narrowed = 0
    for i in range(args.runs):
        rng = random.Random(args.seed * 1_000_003 + i)
        vs = random_variant_set(rng, args.variants)
        sut = random_sut(rng, vs)
        rep = run_campaign(vs, random_store(rng, vs), args.msv, "t", sut, args.budget)
        verdicts[rep.verdict.value] += 1
        steps += len(rep.steps)
        exclusions += len(rep.exclusions)
        unsound += sut.true_variant_id not in rep.plausible
        narrowed += rep.plausible == [sut.true_variant_id]

    print(f"runs {args.runs}  msv {args.msv}  budget {args.budget}")
    for verdict, count in sorted(verdicts.items()):
        print(f"  {verdict:<13}{count}")
    print(f"mean steps {steps / args.runs:.2f}  exclusions {exclusions}  narrowed to truth {narrowed}")
    print(f"true variant excluded: {unsound}")
    return 1 if unsound else 0


if __name__ == "__main__":
    raise SystemExit(main())
