"""Decay of P(I_T(Upsilon|mu) > s) in N for a grid of (T, K).

Helps pick a desk-scale window for the upper-bound experiment: the local
slope of -log p in N approaches s only once s is a moderate deviation at
that N.

    python3 scripts/slope_scan.py --T 0.5 1.0 --K 0.02 0.05 --replicates 200000
"""
import argparse
import json
import time

from reflected_ldp.ldp_verify import ExperimentConfig, verify_upper_machinery


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--T", type=float, nargs="+", default=[0.5])
    ap.add_argument("--K", type=float, nargs="+", default=[0.02])
    ap.add_argument("--eps", type=float, default=0.25)
    ap.add_argument("--N", type=int, nargs="+", default=[10, 15, 20, 25, 30])
    ap.add_argument("--replicates", type=int, default=200_000)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--out")
    args = ap.parse_args()
    table = []
    for T in args.T:
        for K in args.K:
            t0 = time.time()
            cfg = ExperimentConfig(T=T, K=K, eps=args.eps, N_schedule=tuple(args.N),
                                   replicates=args.replicates, master_seed=args.seed)
            res = verify_upper_machinery(cfg)
            entry = {"T": T, "K": K, "a": res.extra["a"], "slope": res.extra["slope"],
                     "slope_conservative": res.extra["slope_conservative"],
                     "freq": {r["N"]: r["p_hat"] for r in res.rows}}
            table.append(entry)
            print(json.dumps(entry), f"({time.time() - t0:.0f}s)", flush=True)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(table, fh, indent=2)


if __name__ == "__main__":
    main()
