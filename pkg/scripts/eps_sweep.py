"""Clean and robust risk of the closed-form predictor as the training radius grows.

    python3 scripts/eps_sweep.py --rho 1.0 --m 4 --tasks 10000
"""

import argparse

import numpy as np

from iclcat import solver
from iclcat.mathcore import SpdMatrix
from iclcat.montecarlo import McConfig
from iclcat.risk import mc_clean_risk, mc_robust_path
from iclcat.tasks import TaskConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--d0", type=int, default=4)
    ap.add_argument("--n", type=int, default=16)
    ap.add_argument("--m", type=int, default=4)
    ap.add_argument("--rho", type=float, default=1.0)
    ap.add_argument("--eps", default="0,0.05,0.1,0.2,0.3,0.5")
    ap.add_argument("--tasks", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int)
    args = ap.parse_args()

    lam = SpdMatrix.identity(args.d0)
    we = np.eye(args.d0)
    tc = TaskConfig(args.d0, args.n, lam)
    mc = McConfig(args.tasks, seed=args.seed)
    eps_values = [float(e) for e in args.eps.split(",")]
    preds = [solver.optimal_predictor_matrix(we, lam, args.n, e) for e in eps_values]
    # common tasks and warm starts make neighbouring points directly comparable
    robust = mc_robust_path([(b, args.rho) for b in preds], tc, args.m, mc, threads=args.threads)

    print("eps,clean_exact,clean_mc,robust_mc,robust_stderr,bound")
    for e, b, r in zip(eps_values, preds, robust):
        clean = mc_clean_risk(b, tc, mc, args.threads)
        bound = solver.robust_bound(we, lam, args.n, e, args.m, args.rho).bound
        print(f"{e:g},{solver.clean_risk_exact(b, lam, args.n):.6f},{clean.value:.6f},"
              f"{r.value:.6f},{r.stderr:.6f},{bound:.6f}")


if __name__ == "__main__":
    main()
