"""Shared test helpers: finite-difference gradients, relative error, and an
independent brute-force equal-error-rate oracle."""

import numpy as np
import pytest

FD_STEP = 1e-6


def rel_error(a, b, floor=1e-12):
    """Infinity-norm relative difference between two arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), floor)
    return float(np.max(np.abs(a - b)) / denom)


def finite_difference_grad(f, x, h=FD_STEP):
    """Central-difference gradient of scalar f with respect to array x.

    Perturbs x in place and restores it, so f may close over x directly.
    """
    x = np.asarray(x)
    grad = np.zeros(x.shape, dtype=np.float64)
    flat_x = x.reshape(-1)
    flat_g = grad.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + h
        fp = f()
        flat_x[i] = orig - h
        fm = f()
        flat_x[i] = orig
        flat_g[i] = (fp - fm) / (2.0 * h)
    return grad


def eer_bruteforce(scores, genuine):
    """O(n^2) reference EER: try every observed score as the threshold.

    Independent of the library implementation: plain Python counting, no
    sorting tricks. Ties in |FAR - FRR| resolve toward the lowest threshold.
    """
    scores = [float(s) for s in scores]
    genuine = [bool(g) for g in genuine]
    n_gen = sum(genuine)
    n_imp = len(genuine) - n_gen
    if n_gen == 0 or n_imp == 0:
        raise ValueError("need both genuine and impostor scores")
    best = None
    for t in sorted(set(scores)):
        far = sum(1 for s, g in zip(scores, genuine) if not g and s >= t) / n_imp
        frr = sum(1 for s, g in zip(scores, genuine) if g and s < t) / n_gen
        d = abs(far - frr)
        if best is None or d < best[0]:
            best = (d, far, frr, t)
    _, far, frr, t = best
    return 100.0 * (far + frr) / 2.0, t


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
