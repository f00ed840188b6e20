"""Parameter recovery study for the ARMA(0,1)-GARCH(1,1) skew-Student model.

Simulates long series from fixed parameters, refits each on the full sample
and prints the relative error of every estimate.
"""

import argparse

import numpy as np

from latentfolio.garch import ArmaGarchModel, fit_arma_garch, simulate

TRUE = dict(mu=3.20, ma=0.19, omega=0.10, alpha=0.22, beta=0.69, skew=0.77, shape=7.92)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=20_000)
    ap.add_argument("--seeds", type=int, default=10)
    args = ap.parse_args(argv)

    t = TRUE
    model = ArmaGarchModel(0, 1, 1, 1, "sstd", t["mu"], np.array([]), np.array([t["ma"]]), t["omega"],
                           np.array([t["alpha"]]), np.array([t["beta"]]), t["skew"], t["shape"])
    print("seed " + " ".join(f"{k:>7s}" for k in t))
    for seed in range(args.seeds):
        m = fit_arma_garch(simulate(model, args.n, seed=seed), (0, 1, 1, 1), "sstd", window=None)
        est = dict(mu=m.mu, ma=m.ma[0], omega=m.omega, alpha=m.alpha[0], beta=m.beta[0], skew=m.skew, shape=m.shape)
        print(f"{seed:4d} " + " ".join(f"{abs(est[k] - v) / abs(v):7.3f}" for k, v in t.items()))


if __name__ == "__main__":
    main()
