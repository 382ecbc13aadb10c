"""Clock-skew estimation error versus jitter and sample count.

    python3 scripts/skew_recovery.py --skew 50 --period 0.01
"""
import argparse

import numpy as np

from vehsec.fingerprint import MessageTrace, estimate_clock_skew


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--skew", type=float, default=50.0, help="true skew in ppm")
    ap.add_argument("--period", type=float, default=0.010)
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    gen = np.random.default_rng(args.seed)
    print(f"{'samples':>8} {'sigma_ms':>9} {'mean_err':>9} {'max_err':>9}")
    for n in (1_000, 10_000, 50_000):
        for sigma in (0.0, 1e-5, 1e-4, 1e-3):
            errs = []
            for _ in range(args.trials):
                t = np.arange(n) * args.period * (1 + args.skew * 1e-6) + gen.normal(0, sigma, n)
                t.sort()
                est = estimate_clock_skew(MessageTrace.from_arrivals(t.tolist()), 0, args.period)
                errs.append(abs(est.skew_ppm - args.skew))
            print(f"{n:>8} {sigma * 1e3:>9.3f} {np.mean(errs):>9.3f} {np.max(errs):>9.3f}")


if __name__ == "__main__":
    main()
