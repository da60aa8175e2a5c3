import numpy as np
import pytest

from idgp.core import IdgpInstance
from idgp.gen import random_feasible_instance


def random_rotation(K, rng, proper=True):
    Q, R = np.linalg.qr(rng.standard_normal((K, K)))
    Q = Q * np.sign(np.diag(R))
    if proper and np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


def exact_instance(x, pairs, order=None):
    """Exact-distance instance on realization ``x`` over 1-based ``pairs``."""
    x = np.asarray(x, dtype=float)
    edges = []
    for u, v in pairs:
        d = float(np.linalg.norm(x[u - 1] - x[v - 1]))
        edges.append((u, v, d, d))
    return IdgpInstance(x.shape[0], x.shape[1], edges, order=order, reference=x)


def fd_gradient(f, z, h=1e-6):
    g = np.zeros_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        g[i] = (f(z + e) - f(z - e)) / (2 * h)
    return g


@pytest.fixture
def two_triangles():
    """Four vertices in the plane, two triangles sharing edge {2,3}."""
    return IdgpInstance(
        4, 2, [(1, 2, 1, 1), (1, 3, 1, 1), (2, 3, 1, 1), (2, 4, 1, 1), (3, 4, 1, 1)], order=[1, 2, 3, 4]
    )


@pytest.fixture
def small_feasible():
    return random_feasible_instance(12, 3, 0.1, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
