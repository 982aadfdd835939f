"""Compare IPFM with the original DSB regression on N(a, I) -> N(-a, I).

Both objectives are trained with the same budget, once from random weights
and once from a pair of pre-trained flow models. The averaged KL of the final
backward sampler against the analytic bridge marginals is printed per seed.

    python3 demos/gaussian_trend.py            # the full three-seed budget, ~3 min
    python3 demos/gaussian_trend.py --quick    # one seed, smaller budget
"""

import argparse
import logging

import numpy as np

from sblab.experiments import TrendConfig, run_trend_experiment


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    cfg = TrendConfig()
    if args.quick:
        cfg.seeds = (0,)
        cfg.steps_per_half_epoch = 500
        cfg.pretrain_steps = 1500
        cfg.eval_paths = 5000
    res = run_trend_experiment(cfg)

    print(f"{'objective':<10}{'init':<8}" + "".join(f"seed {s:<6}" for s in cfg.seeds) + "median")
    for kind, init in res.runs:
        vals = res.final_kl(kind, init)
        print(f"{kind:<10}{init:<8}" + "".join(f"{v:<11.4f}" for v in vals) + f"{np.median(vals):.4f}")

    # the endpoint gap of whichever network was just trained should shrink
    gaps = res.median_gap_sequence("ipfm", "random")
    print("\nIPFM from scratch, endpoint gap per half-epoch:", " ".join(f"{g:.4f}" for g in gaps))
    print(f"\n{res.seconds:.0f}s")


if __name__ == "__main__":
    main()
