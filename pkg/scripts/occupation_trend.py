"""Reflection invariants near the characteristic boundary.

Starts the reflected S0IS1 process 0.02 from the saddle towards the star
centre, checks that no recorded state leaves the domain, and tabulates the
boundary occupation X(T) for a range of N.

    python3 scripts/occupation_trend.py --replicates 10000 --out occupation.json
"""
import argparse
import json
import time

import numpy as np

from reflected_ldp.boundary import build_domain, compute_separatrix
from reflected_ldp.fluid import equilibria
from reflected_ldp.ldp_verify import _median_ci
from reflected_ldp.model_core import S0is1Params, build_s0is1
from reflected_ldp.simulate import simulate_batch, simulate_reflected


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--N", type=int, nargs="+", default=[250, 500, 1000, 2000, 4000])
    ap.add_argument("--replicates", type=int, default=10_000)
    ap.add_argument("--path-checks", type=int, default=1000, help="full paths checked state by state")
    ap.add_argument("--shift", type=float, default=0.02)
    ap.add_argument("--T", type=float, default=5.0)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--out")
    args = ap.parse_args()

    p = S0is1Params.fitted()
    net, eq = build_s0is1(p), equilibria("s0is1", p)
    dom = build_domain(compute_separatrix(net, eq.endemic_unstable), "s0is1", p)
    zt = eq.endemic_unstable
    z = zt + args.shift * (dom.z0 - zt) / np.linalg.norm(dom.z0 - zt)

    rows = []
    for N in args.N:
        t0 = time.time()
        mask = dom.lattice_mask(N)
        outside = 0
        for r in range(args.path_checks):
            c = simulate_reflected(net, dom, N, z, args.T, args.seed + N, replicate=r).all_counts()
            outside += int((~mask[c[:, 0], c[:, 1]]).sum())
        occ = simulate_batch(net, N, z, args.T, args.seed + N, range(args.replicates), domain=dom).occupation
        lo, hi = _median_ci(occ)
        rows.append({"N": N, "median": float(np.median(occ)), "median_ci": [lo, hi],
                     "mean": float(occ.mean()), "zero_fraction": float((occ == 0).mean()),
                     "states_outside": outside})
        print(f"N={N:6d} median={rows[-1]['median']:.4f} [{lo:.4f}, {hi:.4f}] "
              f"mean={rows[-1]['mean']:.4f} P(X=0)={rows[-1]['zero_fraction']:.3f} "
              f"outside={outside} ({time.time() - t0:.1f}s)", flush=True)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"start": z.tolist(), "T": args.T, "rows": rows}, fh, indent=2)


if __name__ == "__main__":
    main()
