"""Box-constrained quasi-Newton minimization with finite-difference gradients.

The objective evaluations needed for one gradient are independent and can be
spread over a thread pool. Results do not depend on the number of threads:
every evaluation point is fixed in advance and the gradient is assembled in
a fixed order.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

logger = logging.getLogger(__name__)

# value reported to the optimizer when the objective cannot be evaluated
FAILED_VALUE = 1e30

# convergence codes, following R's optim
CONVERGED = 0
MAXITER = 1
WARNING = 51
ABNORMAL = 52


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    nfev: int
    neval: int
    nit: int
    code: int
    message: str


def _evaluate_all(fun, points, threads):
    if threads <= 1 or len(points) <= 1:
        return [fun(x) for x in points]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fun, points))


def _safe(fun):
    def wrapped(x):
        try:
            value = float(fun(x))
        except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
            logger.debug("objective failed at %s: %s", x, exc)
            return FAILED_VALUE
        if not np.isfinite(value):
            return FAILED_VALUE
        return value

    return wrapped


def fd_gradient(fun, x, fx, lower, upper, step, scheme="forward", threads=1):
    """Finite-difference gradient that never leaves the box ``[lower, upper]``."""
    d = x.shape[0]
    points, plan = [], []
    for i in range(d):
        h = step[i]
        up = x[i] + h <= upper[i]
        down = x[i] - h >= lower[i]
        if scheme == "central" and up and down:
            plan.append(("c", i, h))
            points += [_shift(x, i, h), _shift(x, i, -h)]
        elif up:
            plan.append(("f", i, h))
            points.append(_shift(x, i, h))
        else:
            plan.append(("b", i, h))
            points.append(_shift(x, i, -h))
    values = _evaluate_all(fun, points, threads)
    grad = np.empty(d)
    j = 0
    for kind, i, h in plan:
        if kind == "c":
            grad[i] = (values[j] - values[j + 1]) / (2 * h)
            j += 2
        elif kind == "f":
            grad[i] = (values[j] - fx) / h
            j += 1
        else:
            grad[i] = (fx - values[j]) / h
            j += 1
    return grad, len(points)


def _shift(x, i, h):
    y = x.copy()
    y[i] += h
    return y


def minimize_box(
    fun,
    x0,
    lower,
    upper,
    parscale=None,
    scheme="forward",
    threads=1,
    maxiter=200,
    ftol=1e7 * np.finfo(float).eps,
    ndeps=1e-3,
):
    """Minimize `fun` over a box with L-BFGS-B and numerical gradients.

    Parameters
    ----------
    fun : callable
        Objective on the original parameter scale.
    x0, lower, upper : array_like
        Start and bounds; bounds may be infinite.
    parscale : array_like, optional
        The optimizer works on ``x / parscale``; finite-difference steps are
        `ndeps` in those units.
    scheme : {"forward", "central"}
    threads : int
        Number of concurrent objective evaluations per gradient.
    """
    x0 = np.asarray(x0, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    scale = np.ones_like(x0) if parscale is None else np.asarray(parscale, dtype=float)
    if np.any(scale <= 0):
        raise ValueError("parscale must be positive")
    if np.any(lower > upper):
        raise ValueError("lower bounds exceed upper bounds")
    if scheme not in ("forward", "central"):
        raise ValueError(f"unknown difference scheme {scheme!r}")

    safe = _safe(fun)
    lo, hi = lower / scale, upper / scale
    z0 = np.clip(x0 / scale, lo, hi)
    step = np.full_like(z0, ndeps)
    counter = {"neval": 0}

    def scaled(z):
        return safe(z * scale)

    def fun_and_grad(z):
        z = np.clip(z, lo, hi)
        fz = scaled(z)
        grad, extra = fd_gradient(scaled, z, fz, lo, hi, step, scheme, threads)
        counter["neval"] += 1 + extra
        return fz, grad

    res = minimize(
        fun_and_grad,
        z0,
        jac=True,
        method="L-BFGS-B",
        bounds=list(zip(lo, hi)),
        options={"maxiter": maxiter, "ftol": ftol, "gtol": 0.0, "maxcor": 5},
    )
    if res.status == 0:
        code = CONVERGED
    elif res.status == 1:
        code = MAXITER
    elif res.status == 2:
        code = ABNORMAL
    else:
        code = WARNING
    z = np.clip(res.x, lo, hi)
    message = res.message if isinstance(res.message, str) else res.message.decode()
    return OptimResult(
        x=z * scale,
        fun=float(res.fun),
        nfev=int(res.nfev),
        neval=counter["neval"],
        nit=int(res.nit),
        code=code,
        message=message,
    )


def numerical_hessian(fun, x, step, lower=None, upper=None, threads=1):
    """Central-difference Hessian of `fun` at `x`.

    Coordinates closer than one step to a bound are differenced around a
    point moved inward by that step, so `fun` is never evaluated outside
    ``[lower, upper]``.
    """
    x = np.asarray(x, dtype=float).copy()
    d = x.shape[0]
    step = np.asarray(step, dtype=float)
    if lower is not None:
        x = np.maximum(x, np.asarray(lower, dtype=float) + step)
    if upper is not None:
        x = np.minimum(x, np.asarray(upper, dtype=float) - step)

    points = [x]
    for i in range(d):
        points += [_shift(x, i, step[i]), _shift(x, i, -step[i])]
    pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
    for i, j in pairs:
        for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
            y = x.copy()
            y[i] += si * step[i]
            y[j] += sj * step[j]
            points.append(y)
    values = np.asarray(_evaluate_all(fun, points, threads), dtype=float)

    H = np.empty((d, d))
    f0 = values[0]
    for i in range(d):
        fp, fm = values[1 + 2 * i], values[2 + 2 * i]
        H[i, i] = (fp - 2 * f0 + fm) / step[i] ** 2
    base = 1 + 2 * d
    for m, (i, j) in enumerate(pairs):
        fpp, fpm, fmp, fmm = values[base + 4 * m : base + 4 * m + 4]
        H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4 * step[i] * step[j])
    return H
