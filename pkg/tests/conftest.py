import numpy as np
import pytest

from dperm.data import Dataset


class QuadraticObjective:
    """0.5 * modulus * ||theta - center||^2: closed-form test objective."""

    def __init__(self, modulus, center):
        self.modulus = float(modulus)
        self.center = np.asarray(center, dtype=np.float64)
        self.dim = self.center.shape[0]

    def value(self, theta):
        d = np.asarray(theta, dtype=np.float64) - self.center
        return 0.5 * self.modulus * float(d @ d)

    def gradient(self, theta):
        return self.modulus * (np.asarray(theta, dtype=np.float64) - self.center)


@pytest.fixture
def quadratic():
    return QuadraticObjective


def unit_ball_dataset(n, dim, seed, balanced=True):
    """Random rows inside the unit ball with +-1 labels."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, dim))
    X /= np.maximum(1.0, np.sqrt((X * X).sum(axis=1, keepdims=True)))
    if balanced:
        y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    else:
        y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    return Dataset(X, y)
