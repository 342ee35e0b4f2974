"""Stretched-exponential decay fitting with a scikit-learn style estimator."""

from __future__ import annotations

import numpy as np
from scipy.optimize import curve_fit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted


class NoDecayError(ValueError):
    """Raised when a curve never drops below the decay threshold."""

    def __init__(self, message, curve=None):
        super().__init__(message)
        self.curve = curve


def stretched_exp(t, t2, n):
    return np.exp(-np.power(np.abs(t) / t2, n))


class StretchedExponentialDecay(RegressorMixin, BaseEstimator):
    """Fit y = exp(-(t / T2)^n) by least squares.

    Parameters
    ----------
    decay_threshold : float
        The data must fall below this value somewhere, otherwise fitting
        raises ``NoDecayError``.
    min_points : int
        Minimum number of samples.
    fix_exponent : float or None
        Hold n fixed instead of fitting it.

    Attributes
    ----------
    t2_, n_ : fitted decay time and stretch exponent
    residual_ : rms residual of the fit
    """

    def __init__(self, decay_threshold=0.9, min_points=8, fix_exponent=None):
        self.decay_threshold = decay_threshold
        self.min_points = min_points
        self.fix_exponent = fix_exponent

    def fit(self, X, y):
        t = np.asarray(X, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        if t.shape != y.shape:
            raise ValueError("X and y differ in length")
        if t.size < self.min_points:
            raise ValueError(f"need at least {self.min_points} points, got {t.size}")
        if np.min(y) > self.decay_threshold:
            raise NoDecayError("curve does not decay below threshold")

        # initial guess: first crossing of 1/e, else extrapolate
        below = np.nonzero(y < np.exp(-1))[0]
        t_guess = t[below[0]] if below.size else t[-1] * 2
        t_guess = max(t_guess, np.min(t[t > 0]) if np.any(t > 0) else 1.0)
        if self.fix_exponent is None:
            f = stretched_exp
            p0, lo, hi = [t_guess, 1.5], [1e-15, 0.05], [np.inf, 10.0]
        else:
            n_fixed = float(self.fix_exponent)
            f = lambda tt, t2: stretched_exp(tt, t2, n_fixed)
            p0, lo, hi = [t_guess], [1e-15], [np.inf]
        popt, _ = curve_fit(f, t, y, p0=p0, bounds=(lo, hi), maxfev=20000,
                            x_scale=[t_guess] + [1.0] * (len(p0) - 1))
        self.t2_ = float(popt[0])
        self.n_ = float(popt[1]) if self.fix_exponent is None else float(self.fix_exponent)
        self.residual_ = float(np.sqrt(np.mean((f(t, *popt) - y) ** 2)))
        return self

    def predict(self, X):
        check_is_fitted(self, "t2_")
        return stretched_exp(np.asarray(X, dtype=float).reshape(-1), self.t2_, self.n_)
