"""Shared test helpers: central-difference gradients and tolerance checks."""
import numpy as np
import pytest


def finite_diff(f, arrays, step=1e-6):
    """Central-difference gradient of scalar f() w.r.t. each array.

    f must recompute the value from the arrays' current contents; the
    arrays are perturbed in place and restored.
    """
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = f()
            flat[i] = orig - step
            down = f()
            flat[i] = orig
            gf[i] = (up - down) / (2.0 * step)
        grads.append(g)
    return grads


def grads_close(analytic, numeric, rel=1e-4, abs_tol=1e-8):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.shape != n.shape:
        return False
    diff = np.abs(a - n)
    denom = np.maximum(np.abs(a), np.abs(n))
    return bool(np.all((diff <= abs_tol) | (diff <= rel * denom)))


def assert_grads_close(analytic, numeric, rel=1e-4, abs_tol=1e-8, what=""):
    if not grads_close(analytic, numeric, rel=rel, abs_tol=abs_tol):
        a = np.asarray(analytic, dtype=np.float64)
        n = np.asarray(numeric, dtype=np.float64)
        worst = float(np.max(np.abs(a - n)))
        pytest.fail(f"gradient mismatch {what}: max abs diff {worst:.3e}")
