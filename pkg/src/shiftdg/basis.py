"""Physical-space modal bases on triangles, quadrature, mass matrices, L2 projection.

The basis on an element K with centroid (xK, yK) and size hK is the scaled
Taylor monomial family

    psi_m(x, y) = (x-xK)^a (y-yK)^b / (a! b! hK^(a+b)),   a + b <= p,

which evaluates unambiguously anywhere in the plane (extrapolation beyond the
element is required by the shifted-boundary corrections).  The factorial
scaling makes directional-derivative operators on the coefficients exact
integer-free shifts, see :func:`derivative_operators`.
"""

from dataclasses import dataclass, field
from math import factorial

import numpy as np
from scipy.special import roots_jacobi

__all__ = [
    "SimplexBasis",
    "TriangleRule",
    "monomial_exponents",
    "space_dimension",
    "triangle_rule",
    "edge_rule",
    "eval_basis",
    "mass_matrix",
    "l2_project",
    "derivative_operators",
    "reference_moment",
]


def monomial_exponents(p):
    """Exponent pairs (a, b) of the modal basis, ordered by total degree."""
    return [(deg - b, b) for deg in range(p + 1) for b in range(deg + 1)]


def space_dimension(p, d=2):
    """Number of polynomial basis functions of degree p in d variables."""
    n = 1
    for l in range(1, d + 1):
        n = n * (p + l) // l
    return n


@dataclass(frozen=True)
class SimplexBasis:
    """Modal (Taylor) basis attached to one triangle."""

    degree: int
    centroid: np.ndarray
    h: float

    @property
    def dimension(self):
        return space_dimension(self.degree)

    @property
    def exponents(self):
        return monomial_exponents(self.degree)


@dataclass(frozen=True)
class TriangleRule:
    """Quadrature on the reference triangle {x,y >= 0, x+y <= 1}.

    Weights sum to 1 and are interpreted as fractions of the physical element
    area; points are barycentric coordinates (l0, l1, l2).
    """

    points: np.ndarray  # (nq, 3) barycentric
    weights: np.ndarray  # (nq,), sums to 1
    exactness: int


def triangle_rule(exactness):
    """Conical-product rule on the triangle, exact to the stated degree.

    Built from Gauss-Jacobi (weight 1-x) times Gauss-Legendre nodes, so all
    weights are positive and exactness is guaranteed by construction.
    """
    m = (exactness + 2) // 2  # 2m-1 >= exactness
    xj, wj = roots_jacobi(m, 1.0, 0.0)  # weight (1-x) on [-1, 1]
    xg, wg = np.polynomial.legendre.leggauss(m)
    # map to [0,1]: x = (1+t)/2; jacobi weight (1-t) = 2(1-x) absorbs the
    # triangle collapse factor
    a = 0.5 * (1.0 + xj)
    wa = wj / 4.0  # 1/2 for dx scaling, 1/2 for the weight (1-t) -> (1-x)
    b = 0.5 * (1.0 + xg)
    wb = 0.5 * wg
    X, Y = np.meshgrid(a, b, indexing="ij")
    WA, WB = np.meshgrid(wa, wb, indexing="ij")
    x = X.ravel()
    y = (Y * (1.0 - X)).ravel()
    w = (WA * WB).ravel()
    w = w / w.sum() * 0.5  # reference-triangle area is 1/2
    bary = np.column_stack([1.0 - x - y, x, y])
    return TriangleRule(points=bary, weights=2.0 * w, exactness=exactness)


def edge_rule(npoints):
    """Gauss-Legendre rule on [0, 1]: (points, weights), weights sum to 1."""
    x, w = np.polynomial.legendre.leggauss(npoints)
    return 0.5 * (x + 1.0), 0.5 * w


def reference_moment(a, b):
    """Exact integral of x^a y^b over the reference triangle."""
    return factorial(a) * factorial(b) / factorial(a + b + 2)


def eval_basis(basis, points, derivative_order=0):
    """Evaluate the modal basis (and optionally gradients) at points.

    points has shape (..., 2); returns values with shape (..., D) and, when
    derivative_order == 1, also gradients with shape (..., D, 2).
    """
    pts = np.asarray(points, dtype=float)
    xi = (pts[..., 0] - basis.centroid[0]) / basis.h
    eta = (pts[..., 1] - basis.centroid[1]) / basis.h
    p = basis.degree
    # power tables up to degree p
    pow_xi = np.ones(xi.shape + (p + 1,))
    pow_eta = np.ones(eta.shape + (p + 1,))
    for k in range(1, p + 1):
        pow_xi[..., k] = pow_xi[..., k - 1] * xi
        pow_eta[..., k] = pow_eta[..., k - 1] * eta
    exps = monomial_exponents(p)
    D = len(exps)
    vals = np.empty(xi.shape + (D,))
    for m, (a, b) in enumerate(exps):
        vals[..., m] = pow_xi[..., a] * pow_eta[..., b] / (factorial(a) * factorial(b))
    if derivative_order == 0:
        return vals
    grads = np.zeros(xi.shape + (D, 2))
    for m, (a, b) in enumerate(exps):
        if a > 0:
            grads[..., m, 0] = (
                pow_xi[..., a - 1] * pow_eta[..., b] / (factorial(a - 1) * factorial(b) * basis.h)
            )
        if b > 0:
            grads[..., m, 1] = (
                pow_xi[..., a] * pow_eta[..., b - 1] / (factorial(a) * factorial(b - 1) * basis.h)
            )
    return vals, grads


def derivative_operators(basis):
    """Matrices (Dx, Dy) mapping coefficients to derivative coefficients.

    With the factorial-scaled basis, d/dx sends psi_(a,b) to psi_(a-1,b)/h,
    so both operators are sparse single-shift matrices.  They are exact.
    """
    exps = monomial_exponents(basis.degree)
    index = {e: i for i, e in enumerate(exps)}
    D = len(exps)
    Dx = np.zeros((D, D))
    Dy = np.zeros((D, D))
    for m, (a, b) in enumerate(exps):
        if a > 0:
            Dx[index[(a - 1, b)], m] = 1.0 / basis.h
        if b > 0:
            Dy[index[(a, b - 1)], m] = 1.0 / basis.h
    return Dx, Dy


def physical_points(rule, vertices):
    """Map barycentric rule points onto a triangle given by (3, 2) vertices."""
    return rule.points @ np.asarray(vertices)


def triangle_area(vertices):
    v = np.asarray(vertices)
    return 0.5 * abs(
        (v[1, 0] - v[0, 0]) * (v[2, 1] - v[0, 1]) - (v[2, 0] - v[0, 0]) * (v[1, 1] - v[0, 1])
    )


def mass_matrix(basis, vertices, rule=None):
    """Elemental mass matrix M_ik = int_K psi_i psi_k dx.

    The rule must integrate degree 2p exactly; the default uses 2p+1.
    Raises ValueError when the result fails a Cholesky factorization, which
    only happens for degenerate elements.
    """
    if rule is None:
        rule = triangle_rule(2 * basis.degree + 1)
    pts = physical_points(rule, vertices)
    vals = eval_basis(basis, pts)
    area = triangle_area(vertices)
    M = (vals.T * (rule.weights * area)) @ vals
    M = 0.5 * (M + M.T)
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise ValueError("mass matrix is not SPD (degenerate element?)") from exc
    return M


def l2_project(f, basis, vertices, rule=None):
    """Coefficients of the L2 projection of a pointwise function onto the basis.

    f maps an (nq, 2) array of points to (nq,) or (nq, k) values.
    """
    if rule is None:
        rule = triangle_rule(2 * basis.degree + 1)
    pts = physical_points(rule, vertices)
    vals = eval_basis(basis, pts)
    area = triangle_area(vertices)
    fv = np.asarray(f(pts), dtype=float)
    rhs = vals.T @ (rule.weights[:, None] * area * fv.reshape(len(pts), -1))
    M = mass_matrix(basis, vertices, rule)
    coef = np.linalg.solve(M, rhs)
    return coef[:, 0] if fv.ndim == 1 else coef
