"""Probit link helpers built on the scaled complementary error function."""

from __future__ import annotations

import numpy as np
from scipy.special import erfcx

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)


def log_ndtr_pair(f):
    """Return ``(log Phi(f), log Phi(-f), phi(f)/Phi(f), phi(f)/Phi(-f))``.

    The lower tail uses ``Phi(-a) = erfcx(a / sqrt 2) exp(-a**2 / 2) / 2`` so
    neither the log nor the Mills ratio ever touches an underflowed ``Phi``.
    """
    f = np.asarray(f, dtype=float)
    a = np.abs(f)
    z = a * _INV_SQRT2
    e = erfcx(z)
    z2 = z * z
    small = 0.5 * e * np.exp(-z2)       # Phi(-|f|)
    log_small = np.log(0.5 * e) - z2
    log_big = np.log1p(-small)          # log Phi(|f|)
    mills_small = _SQRT_2_OVER_PI / e   # phi(f) / Phi(-|f|)
    mills_big = np.exp(-z2 - 0.5 * np.log(2.0 * np.pi) - log_big)
    neg = f < 0
    return (
        np.where(neg, log_small, log_big),
        np.where(neg, log_big, log_small),
        np.where(neg, mills_small, mills_big),
        np.where(neg, mills_big, mills_small),
    )


def log_ndtr(f):
    """Stable ``log Phi(f)``."""
    return log_ndtr_pair(f)[0]
