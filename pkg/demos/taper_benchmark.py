"""Wall-clock comparison of a tapered and a dense fit on n = 2000 points in 2-D.

Both fits run with the same iteration cap so the comparison measures the
cost per likelihood evaluation rather than differences in convergence.

    python3 demos/taper_benchmark.py [--n 2000] [--taper 1.0] [--maxiter 5]
"""
import argparse
import time

import numpy as np

from gpsvc import SvcData, fit_mle, sample_full_svc


def timed_fit(data, taper, maxiter):
    start = time.perf_counter()
    fit = fit_mle(data, kernel="exp", taper=taper, maxiter=maxiter, hessian=False)
    return time.perf_counter() - start, fit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--taper", type=float, default=1.0)
    ap.add_argument("--maxiter", type=int, default=5)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    locs = rng.uniform(0, 10, size=(args.n, 2))
    truth = sample_full_svc([1, 2], [2, 1], [0.5, 1], 0.5, locs, "exp", rng)

    # first call compiles the sparse kernels; keep it out of the timing
    d = truth.data
    timed_fit(SvcData(d.y[:200], d.X[:200], d.locs[:200]), args.taper, 1)

    t_taper, fit_taper = timed_fit(truth.data, args.taper, args.maxiter)
    t_dense, fit_dense = timed_fit(truth.data, None, args.maxiter)
    print(f"n = {args.n}, taper range {args.taper}, iteration cap {args.maxiter}")
    print(f"dense   : {t_dense:8.2f} s  {fit_dense.nfev:4d} evaluations  -2logL {fit_dense.neg2loglik:.2f}")
    print(f"tapered : {t_taper:8.2f} s  {fit_taper.nfev:4d} evaluations  -2logL {fit_taper.neg2loglik:.2f}")
    print(f"speed-up: {t_dense / t_taper:.1f}x overall, "
          f"{(t_dense / fit_dense.neval) / (t_taper / fit_taper.neval):.1f}x per likelihood evaluation")


if __name__ == "__main__":
    main()
