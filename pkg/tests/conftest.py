"""Shared helpers for the suite."""

import numpy as np


def rel_err(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-30)
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / denom


def min_preactivation(params, X):
    """Smallest |ReLU pre-activation| over a batch of feature rows.

    Central differences are meaningless for instances whose pre-activations
    sit within the step of 0, so finite-difference suites resample when
    this falls below the step scale.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    worst = np.inf
    a = X
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        z = a @ w.T + b
        worst = min(worst, float(np.abs(z).min()))
        a = np.maximum(z, 0.0)
    return worst
