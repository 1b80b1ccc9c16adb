"""Train the embedding with and without the singular-value-variance penalty and
compare the resulting spectra and robust bounds.

    python3 scripts/er_training.py --betas 0,0.1,0.5
"""

import argparse

import numpy as np

from iclcat import solver
from iclcat.mathcore import SpdMatrix, sv_stats
from iclcat.trainer import InitSpec, TrainConfig, init_params, train_surrogate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--betas", default="0,0.1,0.5")
    ap.add_argument("--init", default="3,1.5,1,0.5", help="diagonal of the initial embedding")
    ap.add_argument("--n", type=int, default=16)
    ap.add_argument("--eps", type=float, default=0.05)
    ap.add_argument("--m", type=int, default=4)
    ap.add_argument("--rho", type=float, default=1.0)
    ap.add_argument("--steps", type=int, default=20_000)
    ap.add_argument("--lr", type=float, default=0.05)
    args = ap.parse_args()

    we0 = np.diag([float(v) for v in args.init.split(",")])
    d = we0.shape[0]
    lam = SpdMatrix.identity(d)
    print("beta,steps,final_objective,sv_min,sv_max,sv_var,bound")
    for beta in (float(b) for b in args.betas.split(",")):
        cfg = TrainConfig(steps=args.steps, lr=args.lr, eps=args.eps, beta=beta, train_we=True)
        res = train_surrogate(init_params(d, d, InitSpec(we_init=we0), lam), lam, args.n, cfg)
        we = res.params.we
        st = sv_stats(we)
        bound = solver.robust_bound(we, lam, args.n, args.eps, args.m, args.rho).bound
        print(f"{beta:g},{res.steps_taken},{res.final_loss:.6g},{st.sv_min:.4f},{st.sv_max:.4f},"
              f"{st.variance:.3g},{bound:.6g}")


if __name__ == "__main__":
    main()
