"""Quadrature rules on the reference triangle and reference interval."""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

REFERENCE_AREA = 0.5


@dataclass(frozen=True)
class Quadrature:
    """Rule on the reference triangle with vertices (0,0), (1,0), (0,1).

    ``points`` are barycentric coordinates (lambda0, lambda1, lambda2); the
    Cartesian reference coordinates are (lambda1, lambda2).
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def ref_points(self) -> np.ndarray:
        return self.points[:, 1:]

    def __len__(self) -> int:
        return len(self.weights)


@functools.lru_cache(maxsize=None)
def triangle_rule(degree: int) -> Quadrature:
    """Collapsed Gauss-Jacobi x Gauss-Legendre product rule exact to ``degree``.

    Points are strictly interior and weights strictly positive.
    """
    if degree < 0:
        raise ValueError("quadrature degree must be nonnegative")
    k = max(1, (degree + 2) // 2)
    xj, wj = roots_jacobi(k, 1.0, 0.0)
    xl, wl = roots_legendre(k)
    s = 0.5 * (1.0 + xj)
    ws = 0.25 * wj
    t = 0.5 * (1.0 + xl)
    wt = 0.5 * wl
    S, T = np.meshgrid(s, t, indexing="ij")
    xi = S.ravel()
    eta = ((1.0 - S) * T).ravel()
    w = np.outer(ws, wt).ravel()
    bary = np.column_stack([1.0 - xi - eta, xi, eta])
    return Quadrature(bary, w, degree)


@functools.lru_cache(maxsize=None)
def interval_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points on [0, 1] and weights summing to 1."""
    k = max(1, (degree + 2) // 2)
    x, w = roots_legendre(k)
    return 0.5 * (1.0 + x), 0.5 * w


def monomial_integral(a: int, b: int) -> float:
    """Exact integral of xi^a eta^b over the reference triangle: a! b! / (a+b+2)!."""
    from math import factorial

    return factorial(a) * factorial(b) / factorial(a + b + 2)
