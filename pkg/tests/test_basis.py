import numpy as np
import pytest

from shiftdg import basis as B


def direct_monomial_eval(p, centroid, h, pts):
    """Independent oracle: evaluate the scaled monomials straight from the definition."""
    from math import factorial

    pts = np.atleast_2d(pts)
    out = []
    for a, b in B.monomial_exponents(p):
        out.append(
            (pts[:, 0] - centroid[0]) ** a
            * (pts[:, 1] - centroid[1]) ** b
            / (factorial(a) * factorial(b) * h ** (a + b))
        )
    return np.array(out).T


@pytest.mark.parametrize("deg", [1, 2, 3, 5, 7, 9])
def test_triangle_rule_exactness_vs_analytic_moments(deg):
    rule = B.triangle_rule(deg)
    assert np.all(rule.weights > 0)
    assert rule.weights.sum() == pytest.approx(1.0, abs=1e-14)
    # physical coordinates on the reference triangle (v0=(0,0), v1=(1,0), v2=(0,1));
    # weights are area fractions, so int f = sum(w * area * f(x_q))
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    pts = rule.points @ verts
    area = 0.5
    for a in range(deg + 1):
        for b in range(deg + 1 - a):
            got = np.sum(rule.weights * area * pts[:, 0] ** a * pts[:, 1] ** b)
            exact = B.reference_moment(a, b)
            assert got == pytest.approx(exact, rel=1e-13, abs=1e-16)


def test_edge_rule_exactness():
    x, w = B.edge_rule(4)
    for k in range(8):
        assert np.sum(w * x**k) == pytest.approx(1.0 / (k + 1), rel=1e-14)


def test_eval_basis_p0_constant():
    b = B.SimplexBasis(0, np.array([0.3, -0.2]), 0.7)
    pts = np.random.default_rng(0).uniform(-5, 5, (10, 2))
    assert np.allclose(B.eval_basis(b, pts), 1.0)


def test_eval_basis_p1_centroid():
    b = B.SimplexBasis(1, np.array([0.5, 1.5]), 2.0)
    vals = B.eval_basis(b, np.array([0.5, 1.5]))
    assert np.allclose(vals, [1.0, 0.0, 0.0])


def test_eval_basis_p3_outside_element_matches_direct_monomials():
    rng = np.random.default_rng(3)
    centroid = np.array([0.2, 0.1])
    h = 0.5
    b = B.SimplexBasis(3, centroid, h)
    pts = rng.uniform(-3, 3, (20, 2))  # mostly far outside any triangle of size h
    got = B.eval_basis(b, pts)
    want = direct_monomial_eval(3, centroid, h, pts)
    assert np.allclose(got, want, rtol=1e-13, atol=1e-13)


def test_eval_basis_gradients_match_central_differences():
    rng = np.random.default_rng(4)
    b = B.SimplexBasis(4, np.array([0.1, 0.2]), 0.8)
    pts = rng.uniform(-1, 1, (30, 2))
    _, grads = B.eval_basis(b, pts, derivative_order=1)
    eps = 1e-6 * b.h
    for j, e in enumerate(np.eye(2)):
        fd = (B.eval_basis(b, pts + eps * e) - B.eval_basis(b, pts - eps * e)) / (2 * eps)
        scale = np.maximum(np.abs(grads[..., j]), 1.0)
        assert np.max(np.abs(fd - grads[..., j]) / scale) < 1e-6


def test_mass_matrix_p0_equals_area():
    verts = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 3.0]])
    b = B.SimplexBasis(0, verts.mean(axis=0), 1.0)
    M = B.mass_matrix(b, verts)
    assert M.shape == (1, 1)
    assert M[0, 0] == pytest.approx(3.0, rel=1e-14)


def test_mass_matrix_p1_reference_matches_closed_form_moments():
    # Closed-form oracle: entries are integrals of scaled monomial products,
    # computable from the exact reference moments int x^a y^b = a! b!/(a+b+2)!
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    centroid = verts.mean(axis=0)
    h = 0.6
    b = B.SimplexBasis(1, centroid, h)
    M = B.mass_matrix(b, verts)

    def moment_shifted(a, b_):
        # int (x - cx)^a (y - cy)^b over reference triangle by binomial expansion
        from math import comb

        cx, cy = centroid
        total = 0.0
        for i in range(a + 1):
            for j in range(b_ + 1):
                total += (
                    comb(a, i)
                    * comb(b_, j)
                    * (-cx) ** (a - i)
                    * (-cy) ** (b_ - j)
                    * B.reference_moment(i, j)
                )
        return total

    exps = B.monomial_exponents(1)
    want = np.empty((3, 3))
    from math import factorial

    for i, (a1, b1) in enumerate(exps):
        for j, (a2, b2) in enumerate(exps):
            scale = factorial(a1) * factorial(b1) * factorial(a2) * factorial(b2)
            want[i, j] = moment_shifted(a1 + a2, b1 + b2) / (scale * h ** (a1 + b1 + a2 + b2))
    assert np.allclose(M, want, rtol=1e-13)


def test_mass_matrix_symmetric_p3_random_triangle():
    rng = np.random.default_rng(7)
    verts = rng.uniform(-1, 1, (3, 2))
    if B.triangle_area(verts) < 0.05:
        verts[2] += 1.0
    b = B.SimplexBasis(3, verts.mean(axis=0), 0.9)
    M = B.mass_matrix(b, verts)
    assert np.max(np.abs(M - M.T)) == 0.0


@pytest.mark.parametrize("p", [1, 2, 3, 4])
def test_mass_matrix_conditioning_shape_regular(p):
    # hK chosen like the solver does: circumradius of the element
    for verts in [
        np.array([[0.0, 0.0], [0.11, 0.01], [0.04, 0.1]]),
        np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]]) * 0.03,
    ]:
        a = np.linalg.norm(verts[1] - verts[0])
        bb = np.linalg.norm(verts[2] - verts[1])
        c = np.linalg.norm(verts[0] - verts[2])
        h = a * bb * c / (4 * B.triangle_area(verts))
        b = B.SimplexBasis(p, verts.mean(axis=0), h)
        M = B.mass_matrix(b, verts)
        assert np.linalg.cond(M) < 1e8


def test_l2_project_constant():
    verts = np.array([[0.0, 0.0], [1.0, 0.2], [0.3, 1.1]])
    for p in [0, 1, 3]:
        b = B.SimplexBasis(p, verts.mean(axis=0), 1.0)
        c = B.l2_project(lambda x: np.full(len(x), 1.4), b, verts)
        assert c[0] == pytest.approx(1.4, rel=1e-13)
        assert np.allclose(c[1:], 0.0, atol=1e-12)


def test_l2_project_reproduces_degree_p_polynomial():
    rng = np.random.default_rng(11)
    verts = np.array([[0.0, 0.0], [1.0, 0.1], [0.2, 0.9]])
    b = B.SimplexBasis(3, verts.mean(axis=0), 0.8)
    coef = rng.standard_normal(b.dimension)

    def f(pts):
        return B.eval_basis(b, pts) @ coef

    got = B.l2_project(f, b, verts)
    assert np.allclose(got, coef, rtol=1e-11, atol=1e-12)


def test_l2_projection_error_decays_at_order_p_plus_1():
    # project sin(x+y) on a triangle and on its 4 split children; the L2
    # error must drop by at least 2^(p+1) * 0.9
    p = 2
    verts = np.array([[0.0, 0.0], [0.5, 0.0], [0.0, 0.5]])

    def f(pts):
        return np.sin(pts[:, 0] + pts[:, 1])

    def proj_error(tris):
        rule = B.triangle_rule(2 * p + 3)
        err2 = 0.0
        for v in tris:
            h = 2.0 * circumradius(v)
            b = B.SimplexBasis(p, v.mean(axis=0), h)
            c = B.l2_project(f, b, v)
            pts = rule.points @ v
            vals = B.eval_basis(b, pts) @ c
            err2 += np.sum(rule.weights * B.triangle_area(v) * (vals - f(pts)) ** 2)
        return np.sqrt(err2)

    def circumradius(v):
        a = np.linalg.norm(v[1] - v[0])
        bb = np.linalg.norm(v[2] - v[1])
        c = np.linalg.norm(v[0] - v[2])
        area = B.triangle_area(v)
        return a * bb * c / (4 * area)

    def split(v):
        m01 = 0.5 * (v[0] + v[1])
        m12 = 0.5 * (v[1] + v[2])
        m20 = 0.5 * (v[2] + v[0])
        return [
            np.array([v[0], m01, m20]),
            np.array([m01, v[1], m12]),
            np.array([m20, m12, v[2]]),
            np.array([m01, m12, m20]),
        ]

    e0 = proj_error([verts])
    e1 = proj_error(split(verts))
    assert e0 / e1 >= 2 ** (p + 1) * 0.9


def test_derivative_operators_are_exact():
    rng = np.random.default_rng(13)
    b = B.SimplexBasis(3, np.array([0.4, -0.3]), 0.7)
    Dx, Dy = B.derivative_operators(b)
    coef = rng.standard_normal(b.dimension)
    pts = rng.uniform(-1, 1, (15, 2))
    vals, grads = B.eval_basis(b, pts, derivative_order=1)
    assert np.allclose(vals @ (Dx @ coef), grads[..., 0] @ coef, rtol=1e-12, atol=1e-12)
    assert np.allclose(vals @ (Dy @ coef), grads[..., 1] @ coef, rtol=1e-12, atol=1e-12)


def test_space_dimension():
    assert [B.space_dimension(p) for p in range(5)] == [1, 3, 6, 10, 15]
    assert B.space_dimension(3, d=3) == 20
