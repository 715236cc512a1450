"""Lagrange bases on the reference triangle and quadrature rules.

Reference triangle: vertices (0,0), (1,0), (0,1), measure 1/2.
Reference edge: the unit interval [0,1].
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAX_DEGREE = 4
MAX_EXACTNESS = 2 * MAX_DEGREE + 3

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
# local edges by endpoint vertex indices, edge i opposite vertex (i+2)%3
LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))


class UnsupportedDegreeError(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    """Points and weights on the reference triangle or unit interval."""

    points: np.ndarray  # (n, 2) for triangles, (n,) for edges
    weights: np.ndarray  # (n,)
    exactness: int


def _check_exactness(exactness):
    if not 1 <= exactness <= MAX_EXACTNESS:
        raise UnsupportedDegreeError(
            f"quadrature exactness {exactness} unsupported; "
            f"supported range is 1..{MAX_EXACTNESS}"
        )


@lru_cache(maxsize=None)
def edge_quadrature(exactness: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0,1] exact up to the given degree."""
    _check_exactness(exactness)
    n = (exactness + 2) // 2
    pts, wts = np.polynomial.legendre.leggauss(n)
    return QuadratureRule(0.5 * (pts + 1.0), 0.5 * wts, exactness)


@lru_cache(maxsize=None)
def triangle_quadrature(exactness: int) -> QuadratureRule:
    """Tensor Gauss rule mapped to the triangle by the Duffy transform.

    A monomial x^a y^b with a+b <= p becomes u^(a+b+1-b) * ... degree
    (a+b+1) in u and b in v after x = u, y = v(1-u), with Jacobian (1-u),
    so n = ceil((p+2)/2) Gauss points per direction integrate exactly.
    """
    _check_exactness(exactness)
    n = (exactness + 3) // 2
    gp, gw = np.polynomial.legendre.leggauss(n)
    gp = 0.5 * (gp + 1.0)
    gw = 0.5 * gw
    u, v = np.meshgrid(gp, gp, indexing="ij")
    w = np.outer(gw, gw) * (1.0 - u)
    pts = np.column_stack([u.ravel(), (v * (1.0 - u)).ravel()])
    return QuadratureRule(pts, w.ravel(), exactness)


def _monomial_exponents(k):
    return [(a, b) for total in range(k + 1) for a in range(total, -1, -1)
            for b in [total - a]]


def _reference_nodes(k):
    """Equispaced nodes with entity tags, vertices first, then edges, then
    interior.  Entity tags: ('vertex', i), ('edge', e, j), ('cell', j) where
    j orders nodes along the edge from its first endpoint / lexicographically.
    """
    if k == 0:
        return np.array([[1.0 / 3.0, 1.0 / 3.0]]), [("cell", 0)]
    nodes = [REF_VERTICES[0], REF_VERTICES[1], REF_VERTICES[2]]
    tags = [("vertex", 0), ("vertex", 1), ("vertex", 2)]
    for e, (a, b) in enumerate(LOCAL_EDGES):
        pa, pb = REF_VERTICES[a], REF_VERTICES[b]
        for j in range(1, k):
            nodes.append(pa + (j / k) * (pb - pa))
            tags.append(("edge", e, j - 1))
    j = 0
    for a in range(1, k):
        for b in range(1, k - a):
            nodes.append(np.array([a / k, b / k]))
            tags.append(("cell", j))
            j += 1
    return np.array(nodes), tags


class ReferenceBasis:
    """Nodal Lagrange basis of degree k on the reference triangle."""

    def __init__(self, degree: int):
        if not 0 <= degree <= MAX_DEGREE:
            raise UnsupportedDegreeError(
                f"degree {degree} unsupported; supported range is 0..{MAX_DEGREE}"
            )
        self.degree = degree
        self.nodes, self.node_tags = _reference_nodes(degree)
        self.exponents = _monomial_exponents(degree)
        self.ndofs = len(self.exponents)
        vand = self._monomials(self.nodes)
        self._coeffs = np.linalg.inv(vand)

    def _monomials(self, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        cols = [pts[:, 0] ** a * pts[:, 1] ** b for a, b in self.exponents]
        return np.column_stack(cols)

    def _monomial_grads(self, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        x, y = pts[:, 0], pts[:, 1]
        gx = np.column_stack([
            a * x ** max(a - 1, 0) * y ** b if a > 0 else np.zeros_like(x)
            for a, b in self.exponents])
        gy = np.column_stack([
            b * x ** a * y ** max(b - 1, 0) if b > 0 else np.zeros_like(x)
            for a, b in self.exponents])
        return gx, gy

    def eval(self, points):
        """Values and reference gradients of all basis functions.

        Returns (values, grads) with shapes (npts, ndofs) and
        (npts, ndofs, 2).
        """
        values = self._monomials(points) @ self._coeffs
        gx, gy = self._monomial_grads(points)
        grads = np.stack([gx @ self._coeffs, gy @ self._coeffs], axis=-1)
        return values, grads


@lru_cache(maxsize=None)
def reference_basis(degree: int) -> ReferenceBasis:
    return ReferenceBasis(degree)


def eval_basis(basis: ReferenceBasis, points):
    return basis.eval(points)
