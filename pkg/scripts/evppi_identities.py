"""Sanity checks of the regression EVPPI estimator on models with known answers.

alpha = sum_i w_i phi_i with independent standard normal phi_i, so the
EVPPI proportion of phi_i is w_i^2 / sum w^2.  A nonlinear variant checks
main effects of a product term (both zero).

    python scripts/evppi_identities.py --draws 100000
"""

import argparse

import numpy as np

from voisynth import voi
from voisynth.samples import SampleTable


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--draws", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    K = args.draws
    phi = rng.normal(size=(K, 3))
    w = np.array([1.0, 2.0, 0.5])
    cols = {f"phi{i}": phi[:, i] for i in range(3)}
    cols["linear"] = phi @ w
    cols["product"] = phi[:, 0] * phi[:, 1]
    table = SampleTable.from_columns(cols)
    grid = voi.evppi_grid(table, [f"phi{i}" for i in range(3)] + [["phi0", "phi1"]],
                          ["linear", "product"], seed=args.seed)
    expected = {"linear": list(w ** 2 / np.sum(w ** 2)) + [(w[0] ** 2 + w[1] ** 2) / np.sum(w ** 2)],
                "product": [0.0, 0.0, 0.0, 1.0]}
    P = grid.proportions()
    print(f"{'inputs':>10} " + " ".join(f"{o:>18}" for o in grid.outputs))
    for i, g in enumerate(grid.groups):
        cells = [f"{P[i, j]:.3f} (exact {expected[o][i]:.3f})" for j, o in enumerate(grid.outputs)]
        print(f"{g:>10} " + " ".join(f"{c:>18}" for c in cells))


if __name__ == "__main__":
    main()
