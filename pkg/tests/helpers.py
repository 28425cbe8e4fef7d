import math

import numpy as np


def central_diff(f, x, eps=1e-5):
    """Central finite-difference gradient of scalar ``f`` at flat ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + eps
        fp = f(x)
        x[i] = old - eps
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def rel_error(analytic, numeric):
    """Elementwise |a - n| / max(1, |a|), the gradient-check metric used throughout."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))


def subset(n, k, rng):
    """Indices to spot-check when a parameter vector is too large to difference fully."""
    return np.arange(n) if n <= k else np.sort(rng.choice(n, size=k, replace=False))


def partial_diff(f, x, idx, eps=1e-5):
    x = np.array(x, dtype=np.float64)
    out = np.zeros(len(idx))
    for j, i in enumerate(idx):
        old = x[i]
        x[i] = old + eps
        fp = f(x)
        x[i] = old - eps
        fm = f(x)
        x[i] = old
        out[j] = (fp - fm) / (2 * eps)
    return out


def enumerated_toy(reps=100):
    """Exact-proportion batch of (s, a, a_E) for a 2-state/2-action toy, plus its exact MI.

    a and a_E are conditionally independent given s, so I(a_E; (s, a)) = I(a_E; s).
    """
    p_s = np.array([0.5, 0.5])
    pi = np.array([[0.7, 0.3], [0.4, 0.6]])
    pi_e = np.array([[0.9, 0.1], [0.2, 0.8]])
    rows, mi = [], 0.0
    marg = p_s @ pi_e
    for s in range(2):
        for a in range(2):
            for ae in range(2):
                p = p_s[s] * pi[s, a] * pi_e[s, ae]
                rows += [(s, a, ae)] * int(round(p * reps * 100))
                mi += p * math.log(pi_e[s, ae] / marg[ae])
    rows = np.array(rows)
    return np.eye(2)[rows[:, 0]], rows[:, 1], rows[:, 2], mi
