import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def finite_difference(f, arrays, h=1e-4):
    """Central-difference gradients of a scalar function of numpy arrays.

    Independent numerical oracle for the autodiff engine: perturbs every
    coordinate of every input array by +-h and differences the results.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f()
            flat[i] = orig - h
            down = f()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def rel_err(a, b, floor=1e-12):
    """Scale-invariant distance between two gradient arrays."""
    na = np.linalg.norm(np.asarray(a).ravel())
    nb = np.linalg.norm(np.asarray(b).ravel())
    diff = np.linalg.norm((np.asarray(a) - np.asarray(b)).ravel())
    return diff / max(na, nb, floor)
