"""Isotropic correlation and covariance functions.

Every covariance is written as ``c(u) = sigma2 * r(u / rho)`` where ``r`` is
one of six closed-form correlation functions. Three of them (``sph``,
``wend1``, ``wend2``) have compact support on ``[0, 1)`` and can also serve
as tapers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KERNELS = ("exp", "mat32", "mat52", "sph", "wend1", "wend2")
COMPACT_KERNELS = ("sph", "wend1", "wend2")

_SQRT3 = np.sqrt(3.0)
_SQRT5 = np.sqrt(5.0)

# taper smoothness at the origin must match or exceed the base kernel's
_DEFAULT_TAPER = {
    "exp": "wend1",
    "sph": "wend1",
    "mat32": "wend2",
    "mat52": "wend2",
    "wend1": "wend1",
    "wend2": "wend2",
}


def _check_kind(kind):
    if kind not in KERNELS:
        raise ValueError(f"unknown kernel {kind!r}; expected one of {KERNELS}")


def is_compact(kind):
    """Return True if the correlation of `kind` vanishes for h >= 1."""
    _check_kind(kind)
    return kind in COMPACT_KERNELS


def default_taper_kind(kind):
    """Compactly supported correlation used to taper `kind` by default."""
    _check_kind(kind)
    return _DEFAULT_TAPER[kind]


def correlation(kind, h):
    """Evaluate the correlation function ``r(h)``.

    Parameters
    ----------
    kind : str
        One of ``"exp"``, ``"mat32"``, ``"mat52"``, ``"sph"``, ``"wend1"``,
        ``"wend2"``.
    h : float or array_like
        Scaled distances, must be nonnegative.

    Returns
    -------
    float or ndarray
        Correlations in ``[0, 1]`` with the shape of `h`.
    """
    _check_kind(kind)
    h_arr = np.asarray(h, dtype=float)
    if np.any(h_arr < 0) or np.any(np.isnan(h_arr)):
        raise ValueError("correlation is only defined for nonnegative distances")

    if kind == "exp":
        r = np.exp(-h_arr)
    elif kind == "mat32":
        t = _SQRT3 * h_arr
        r = (1.0 + t) * np.exp(-t)
    elif kind == "mat52":
        t = _SQRT5 * h_arr
        r = (1.0 + t + 5.0 * h_arr**2 / 3.0) * np.exp(-t)
    elif kind == "sph":
        r = np.maximum(1.0 - 1.5 * h_arr + 0.5 * h_arr**3, 0.0)
        r = np.where(h_arr < 1.0, r, 0.0)
    elif kind == "wend1":
        g = np.maximum(1.0 - h_arr, 0.0)
        r = g**4 * (4.0 * h_arr + 1.0)
    else:
        g = np.maximum(1.0 - h_arr, 0.0)
        r = g**6 * (35.0 * h_arr**2 / 3.0 + 6.0 * h_arr + 1.0)

    if np.ndim(h) == 0:
        return float(r)
    return r


def covariance(kind, rho, sigma2, u):
    """Covariance ``sigma2 * r(u / rho)`` at distances `u`."""
    if not rho > 0:
        raise ValueError(f"range must be positive, got {rho}")
    if sigma2 < 0:
        raise ValueError(f"variance must be nonnegative, got {sigma2}")
    return sigma2 * correlation(kind, np.divide(u, rho, dtype=float))


@dataclass(frozen=True)
class Taper:
    """Compactly supported taper with range `range` and family `kind`."""

    range: float
    kind: str = "wend1"

    def __post_init__(self):
        if not self.range > 0:
            raise ValueError(f"taper range must be positive, got {self.range}")
        if self.kind not in COMPACT_KERNELS:
            raise ValueError(
                f"taper kind must be compactly supported {COMPACT_KERNELS}, got {self.kind!r}"
            )

    @classmethod
    def for_kernel(cls, kind, taper_range):
        return cls(float(taper_range), default_taper_kind(kind))

    def __call__(self, u):
        return correlation(self.kind, np.divide(u, self.range, dtype=float))


def tapered_covariance(kind, rho, sigma2, taper, u):
    """Covariance multiplied by the taper correlation; exactly zero for u >= taper range."""
    return covariance(kind, rho, sigma2, u) * taper(u)
