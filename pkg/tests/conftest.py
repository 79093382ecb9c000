import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_pd_quadratic(rng, dim, spread=1.0, shift=1.0):
    """Random positive-definite quadratic with eigenvalues in [shift, shift+spread]."""
    from fedpal.model import Quadratic

    M = rng.standard_normal((dim, dim))
    Q, _ = np.linalg.qr(M)
    eigs = shift + spread * rng.uniform(size=dim)
    A = (Q * eigs) @ Q.T
    A = 0.5 * (A + A.T)
    b = rng.standard_normal(dim)
    return Quadratic(A, b), A, b


def finite_difference_gradient(f, w, step=1e-6):
    """Central differences, matching the analytic-gradient tolerance checks."""
    w = np.asarray(w, dtype=float)
    g = np.zeros_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = step
        g[i] = (f(w + e) - f(w - e)) / (2.0 * step)
    return g


def relative_error(approx, exact):
    approx, exact = np.asarray(approx), np.asarray(exact)
    denom = max(float(np.linalg.norm(exact)), 1e-12)
    return float(np.linalg.norm(approx - exact)) / denom
