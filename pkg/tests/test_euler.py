import numpy as np
import pytest

from shiftdg import euler

GAMMA = 1.4


def test_flux_rest_state_gives_pure_pressure_normal_flux():
    U = euler.conserved(1.4, 0.0, 0.0, 1.0)
    for ang in np.linspace(0, 2 * np.pi, 7):
        n = np.array([np.cos(ang), np.sin(ang)])
        F, _ = euler.normal_flux_and_speed(U, n[0], n[1])
        assert np.allclose(F, [0.0, n[0], n[1], 0.0], atol=1e-15)


def test_flux_hand_evaluated_value():
    # rho=1, u=(1,1), p=1 -> rhoE = 1/0.4 + 1; x-flux = (1, 2, 1, rhoE + p)
    U = euler.conserved(1.0, 1.0, 1.0, 1.0)
    rhoE = 1.0 / 0.4 + 1.0
    assert U[3] == pytest.approx(rhoE)
    F = euler.flux(U)
    assert np.allclose(F[0], [1.0, 2.0, 1.0, rhoE + 1.0], rtol=1e-14)
    assert np.allclose(F[1], [1.0, 1.0, 2.0, rhoE + 1.0], rtol=1e-14)


def test_flux_convective_part_scales_linearly_in_density():
    u, v, p = 0.7, -0.3, 2.0
    g = GAMMA
    F1 = euler.flux(euler.conserved(1.1, u, v, p))
    F2 = euler.flux(euler.conserved(2.2, u, v, p))
    # rho-independent part at fixed (u, p): momentum pressure p*I and the
    # enthalpy pressure gamma*p/(gamma-1) advected in the energy flux
    P = np.array(
        [[0.0, p, 0.0, g * p * u / (g - 1)], [0.0, 0.0, p, g * p * v / (g - 1)]]
    )
    assert np.allclose(F2 - F1, F1 - P, rtol=1e-13, atol=1e-13)


def test_eos_round_trip_identity():
    rng = np.random.default_rng(0)
    rho = rng.uniform(0.1, 5, 50)
    u = rng.uniform(-3, 3, 50)
    v = rng.uniform(-3, 3, 50)
    p = rng.uniform(0.05, 9, 50)
    U = euler.conserved(rho, u, v, p)
    r2, u2, v2, p2 = euler.primitives(U)
    for a, b in [(rho, r2), (u, u2), (v, v2), (p, p2)]:
        assert np.max(np.abs(a - b) / np.abs(a).clip(1e-10)) < 1e-14


def test_rusanov_consistency():
    U = euler.conserved(0.9, 1.2, -0.4, 1.7)
    n = np.array([0.6, 0.8])
    got = euler.rusanov_flux(U, U, n[0], n[1])
    want, _ = euler.normal_flux_and_speed(U, n[0], n[1])
    assert np.allclose(got, want, rtol=1e-14)


def test_rusanov_antisymmetry_under_swap_and_flip():
    UL = euler.conserved(1.0, 0.75, 0.0, 1.0)
    UR = euler.conserved(0.125, 0.0, 0.1, 0.1)
    n = np.array([1.0, 0.0])
    f_lr = euler.rusanov_flux(UL, UR, n[0], n[1])
    f_rl = euler.rusanov_flux(UR, UL, -n[0], -n[1])
    assert np.allclose(f_lr, -f_rl, rtol=1e-14, atol=1e-15)


def test_rusanov_sod_pair_matches_scalar_evaluation():
    # independent spreadsheet-style evaluation with plain floats
    import math

    g = 1.4
    rhoL, uL, vL, pL = 1.0, 0.75, 0.0, 1.0
    rhoR, uR, vR, pR = 0.125, 0.0, 0.0, 0.1
    EL = pL / (g - 1) + 0.5 * rhoL * (uL * uL + vL * vL)
    ER = pR / (g - 1) + 0.5 * rhoR * (uR * uR + vR * vR)
    FL = [rhoL * uL, rhoL * uL * uL + pL, rhoL * uL * vL, (EL + pL) * uL]
    FR = [rhoR * uR, rhoR * uR * uR + pR, rhoR * uR * vR, (ER + pR) * uR]
    sL = abs(uL) + math.sqrt(g * pL / rhoL)
    sR = abs(uR) + math.sqrt(g * pR / rhoR)
    s = max(sL, sR)
    QL = [rhoL, rhoL * uL, rhoL * vL, EL]
    QR = [rhoR, rhoR * uR, rhoR * vR, ER]
    want = [0.5 * (FL[k] + FR[k]) - 0.5 * s * (QR[k] - QL[k]) for k in range(4)]

    got = euler.rusanov_flux(
        euler.conserved(rhoL, uL, vL, pL), euler.conserved(rhoR, uR, vR, pR), 1.0, 0.0
    )
    assert np.allclose(got, want, rtol=1e-14)


def test_rusanov_dissipation_lower_bound():
    rng = np.random.default_rng(5)
    for _ in range(20):
        UL = euler.conserved(*rng.uniform([0.2, -2, -2, 0.2], [3, 2, 2, 3]))
        UR = euler.conserved(*rng.uniform([0.2, -2, -2, 0.2], [3, 2, 2, 3]))
        n = rng.standard_normal(2)
        n /= np.linalg.norm(n)
        _, sL = euler.normal_flux_and_speed(UL, n[0], n[1])
        _, sR = euler.normal_flux_and_speed(UR, n[0], n[1])
        s = max(sL, sR)
        assert s >= sL and s >= sR


def test_admissibility_predicate():
    good = euler.conserved(1.0, 0.5, 0.0, 1.0)
    assert euler.is_admissible(good)
    vac = np.array([1e-13, 0.0, 0.0, 1.0])
    assert not euler.is_admissible(vac)
    negp = euler.conserved(1.0, 0.0, 0.0, 1.0)
    negp[3] = 0.0  # kinetic-only energy -> p < 0
    assert not euler.is_admissible(negp)
    nan = np.array([1.0, np.nan, 0.0, 1.0])
    assert not euler.is_admissible(nan)
    with pytest.raises(euler.PhysicsError):
        euler.require_admissible(vac)


def test_manufactured_source_values():
    s = euler.manufactured_source(np.array([np.pi / 4, np.pi / 4]))
    assert np.allclose(s, 0.0, atol=1e-15)
    s0 = euler.manufactured_source(np.array([0.0, 0.0]))
    assert np.allclose(s0, [0.4, 0.6, 0.6, 1.8], rtol=1e-15)
    with pytest.raises(ValueError):
        euler.manufactured_source(np.zeros(2), case="nope")


def manufactured_state(xy):
    s = 1.0 + 0.2 * np.sin(xy[..., 0] + xy[..., 1])
    return euler.conserved(s, 1.0, 1.0, s)


def test_manufactured_solution_satisfies_divF_equals_source():
    # finite-difference divergence oracle at 100 random points
    rng = np.random.default_rng(42)
    pts = rng.uniform(-1, 1, (100, 2))
    h = 1e-3

    def Fx(xy):
        return euler.flux(manufactured_state(xy))[..., 0, :]

    def Fy(xy):
        return euler.flux(manufactured_state(xy))[..., 1, :]

    def d4(F, e):
        # fourth-order central stencil keeps truncation + roundoff below 1e-10
        return (F(pts - 2 * h * e) - 8 * F(pts - h * e) + 8 * F(pts + h * e) - F(pts + 2 * h * e)) / (
            12 * h
        )

    div = d4(Fx, np.array([1.0, 0.0])) + d4(Fy, np.array([0.0, 1.0]))
    S = euler.manufactured_source(pts)
    assert np.max(np.abs(div - S)) < 1e-10


def test_flux_directional_derivative_matches_finite_differences():
    rng = np.random.default_rng(9)
    U = euler.conserved(*rng.uniform([0.5, -1, -1, 0.5], [2, 1, 1, 2], (30, 4)).T)
    dUx = rng.standard_normal(U.shape)
    dUy = rng.standard_normal(U.shape)
    got = euler.flux_directional_derivative(U, dUx, dUy)
    eps = 1e-7
    fd = (
        euler.flux(U + eps * dUx)[..., 0, :] - euler.flux(U - eps * dUx)[..., 0, :]
        + euler.flux(U + eps * dUy)[..., 1, :] - euler.flux(U - eps * dUy)[..., 1, :]
    ) / (2 * eps)
    assert np.max(np.abs(got - fd)) < 1e-6


def test_riemann_invariants_definition():
    U = euler.conserved(1.2, 0.8, -0.1, 0.9)
    rp, rm = euler.riemann_invariants(U, 1.0, 0.0)
    c = np.sqrt(GAMMA * 0.9 / 1.2)
    assert rp == pytest.approx(0.8 + 2 * c / 0.4, rel=1e-14)
    assert rm == pytest.approx(0.8 - 2 * c / 0.4, rel=1e-14)
