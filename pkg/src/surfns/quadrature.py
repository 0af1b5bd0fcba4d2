"""Quadrature rules on the reference triangle (0,0), (1,0), (0,1)."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

MAX_DEGREE = 12


class UnsupportedDegree(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (Q, 2) reference coordinates
    weights: np.ndarray  # (Q,), sum 1/2
    degree: int

    def __len__(self):
        return len(self.weights)


def _orbit3(a, w):
    # S3 orbit of (a, a, 1-2a) in barycentric form
    b = 1.0 - 2.0 * a
    return [(a, a), (b, a), (a, b)], [w] * 3


def _symmetric_rule(degree):
    if degree <= 1:
        return np.array([[1 / 3, 1 / 3]]), np.array([0.5])
    if degree == 2:
        pts, w = _orbit3(1 / 6, 1 / 3)
        return np.array(pts), 0.5 * np.array(w)
    if degree <= 4:
        # 6-point degree-4 rule
        p1, w1 = _orbit3(0.445948490915965, 0.223381589678011)
        p2, w2 = _orbit3(0.091576213509771, 0.109951743655322)
        return np.array(p1 + p2), 0.5 * np.array(w1 + w2)
    if degree == 5:
        r15 = np.sqrt(15.0)
        p1, w1 = _orbit3((6 - r15) / 21, (155 - r15) / 1200)
        p2, w2 = _orbit3((6 + r15) / 21, (155 + r15) / 1200)
        pts = [(1 / 3, 1 / 3)] + p1 + p2
        return np.array(pts), 0.5 * np.array([9 / 40] + w1 + w2)
    return None


def _collapsed_rule(degree):
    # Gauss-Legendre x Gauss-Jacobi(1,0) on the collapsed square
    n = (degree + 2) // 2
    a, wa = roots_legendre(n)
    b, wb = roots_jacobi(n, 1.0, 0.0)
    A, B = np.meshgrid(a, b, indexing="ij")
    WA, WB = np.meshgrid(wa, wb, indexing="ij")
    x = (1 + A) * (1 - B) / 4
    y = (1 + B) / 2
    pts = np.stack([x.ravel(), y.ravel()], axis=-1)
    return pts, (WA * WB).ravel() / 8


@lru_cache(maxsize=None)
def quadrature(degree: int) -> QuadratureRule:
    """Rule exact for all bivariate polynomials of total degree ``<= degree``.

    Degrees up to 5 use fully symmetric closed-form rules; higher degrees use
    the collapsed Gauss-Jacobi product rule, which has positive weights and
    interior points.
    """
    degree = int(degree)
    if degree < 1:
        degree = 1
    if degree > MAX_DEGREE:
        raise UnsupportedDegree(f"quadrature degree {degree} > {MAX_DEGREE}")
    rule = _symmetric_rule(degree)
    if rule is None:
        rule = _collapsed_rule(degree)
    pts, w = rule
    pts.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(pts, w, degree)


def monomial_integral(i: int, j: int) -> float:
    """Exact integral of ``x**i * y**j`` over the reference triangle."""
    from math import factorial

    return factorial(i) * factorial(j) / factorial(i + j + 2)


def gauss_legendre_01(n):
    """n-point Gauss rule on [0, 1]."""
    x, w = roots_legendre(n)
    return 0.5 * (x + 1), 0.5 * w
