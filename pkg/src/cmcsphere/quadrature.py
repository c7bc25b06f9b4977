"""Fixed quadrature rules used by the volume functional."""

import numpy as np
from numpy.polynomial.legendre import leggauss

# Dunavant degree-5 rule on the reference triangle; weights sum to one.
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
_W0, _W1, _W2 = 0.225, 0.132394152788506, 0.125939180544827

TRIANGLE_POINTS = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
TRIANGLE_WEIGHTS = np.array([_W0, _W1, _W1, _W1, _W2, _W2, _W2])

BARYCENTER_POINTS = np.array([[1 / 3, 1 / 3, 1 / 3]])
BARYCENTER_WEIGHTS = np.array([1.0])


def gauss_unit_interval(n: int):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def triangle_rule(name: str = "degree5"):
    if name == "degree5":
        return TRIANGLE_POINTS, TRIANGLE_WEIGHTS
    if name == "barycenter":
        return BARYCENTER_POINTS, BARYCENTER_WEIGHTS
    raise KeyError(name)
