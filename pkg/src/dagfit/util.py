"""Small numeric helpers used across modules."""

import numpy as np


def expit(x):
    """Numerically stable logistic sigmoid."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def expit_grad(x):
    """Derivative of the sigmoid, sigma(x) * (1 - sigma(x))."""
    s = expit(x)
    return s * (1.0 - s)


def log_expit(x):
    """log(sigmoid(x)) computed without overflow for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    return -np.logaddexp(0.0, -x)


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)
