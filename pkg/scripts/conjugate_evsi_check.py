"""Regression EVSI against exact Beta-Binomial preposterior enumeration.

Prior p ~ Beta(a, b), output alpha = p, future data y ~ Bin(n, p).  The
exact EVSI is var(p) - E_y[var(p | y)].

    python scripts/conjugate_evsi_check.py --a 1 --b 1 --draws 50000
"""

import argparse
import time

import numpy as np
from scipy import stats

from voisynth import voi
from voisynth.designs import DesignSpec
from voisynth.samples import SampleTable


def exact_evsi(n, a, b):
    y = np.arange(n + 1)
    w = stats.betabinom.pmf(y, n, a, b)
    a1, b1 = a + y, b + n - y
    post_var = a1 * b1 / ((a1 + b1) ** 2 * (a1 + b1 + 1))
    return stats.beta.var(a, b) - np.sum(w * post_var)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--a", type=float, default=1.0)
    ap.add_argument("--b", type=float, default=1.0)
    ap.add_argument("--draws", type=int, default=50_000)
    ap.add_argument("--n", default="1,5,10,20,50,100,500,1000")
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    grid = [int(v) for v in args.n.split(",")]
    p = np.random.default_rng(args.seed).beta(args.a, args.b, args.draws)
    table = SampleTable.from_columns({"p": p})
    t0 = time.perf_counter()
    curve = voi.evsi_curve(DesignSpec("binomial", 0, args.seed, "p"), grid, table,
                           voi.LossSpec.scalar("p"), seed=args.seed)
    print(f"{'n':>6} {'regression':>12} {'se':>10} {'exact':>12} {'rel.err':>8}")
    for pt in curve:
        ex = exact_evsi(pt.n, args.a, args.b)
        print(f"{pt.n:6d} {pt.value:12.6f} {pt.estimate.se:10.2e} {ex:12.6f} "
              f"{pt.value / ex - 1:8.4f}")
    print(f"{time.perf_counter() - t0:.1f}s for {len(grid)} sample sizes")


if __name__ == "__main__":
    main()
