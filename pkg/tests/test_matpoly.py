import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from carmadelay.acceptance import random_stable_poly
from carmadelay.matpoly import (MatrixPoly, companion, companion_of, long_divide, mp_eval,
                                mp_eval_many, mp_mul, scalar_poly, solve_E, solve_F)


def test_scalar_worked_example():
    P = scalar_poly([1, 3, 3, 1])          # (z+1)^3
    Q = scalar_poly([2, 1])                # z+2
    C, S = long_divide(P, Q, 1)
    assert [c[0, 0] for c in C] == pytest.approx([1.0, 1.0], abs=1e-14)
    assert S.coeff(0)[0, 0] == pytest.approx(1.0, abs=1e-14)
    E = solve_E(P, Q)
    assert [e[0, 0] for e in E] == pytest.approx([0.0, 1.0, -1.0], abs=1e-14)
    F = solve_F(P, Q, S)
    assert F[0][0, 0] == pytest.approx(1.0, abs=1e-14)


def test_carma21_coefficients():
    P = scalar_poly([3, 4, 1])
    Q = scalar_poly([2, 1])
    C, S = long_divide(P, Q, 1)
    assert C[0][0, 0] == pytest.approx(2.0)
    assert [e[0, 0] for e in solve_E(P, Q)] == pytest.approx([1.0, -2.0])
    assert solve_F(P, Q, S)[0][0, 0] == pytest.approx(1.0)


def test_symbolic_formulas_p3_q1():
    # closed-form coefficients for p=3, q=1 in terms of A_1, A_2, A_3, B_0
    A1, A2, A3, B0 = 5.0, 7.0, 2.0, 1.5
    P = scalar_poly([A3, A2, A1, 1.0])
    Q = scalar_poly([B0, 1.0])
    C, S = long_divide(P, Q, 1)
    assert C[1][0, 0] == pytest.approx(A1 - B0)
    assert C[0][0, 0] == pytest.approx(A2 + B0 * (B0 - A1))
    assert solve_F(P, Q, S)[0][0, 0] == pytest.approx(B0 * (A2 - B0 * (A1 - B0)) - A3)


def test_q_zero_gives_R_equal_P():
    P = scalar_poly([3, 4, 1])
    C, S = long_divide(P, MatrixPoly.identity(1), 0)
    assert [c[0, 0] for c in C] == [3.0, 4.0]
    assert np.all(S.coeff(0) == 0)
    with pytest.raises(ValueError):
        solve_F(P, MatrixPoly.identity(1), S)


def test_companion_eigenvalues_are_roots(rng):
    P = random_stable_poly(rng, 2, 3)
    eig = np.linalg.eigvals(companion_of(P))
    dets = np.abs([np.linalg.det(mp_eval(P, z)) for z in eig])
    assert dets.max() < 1e-8


def test_companion_layout():
    A1, A2 = np.array([[1.0, 2], [3, 4]]), np.array([[5.0, 6], [7, 8]])
    M = companion([A1, A2])
    assert np.array_equal(M[:2, 2:], np.eye(2))
    assert np.array_equal(M[2:, :2], -A2)
    assert np.array_equal(M[2:, 2:], -A1)


def test_eval_many_matches_scalar_eval(rng):
    P = random_stable_poly(rng, 2, 2)
    z = rng.normal(size=5) + 1j * rng.normal(size=5)
    many = mp_eval_many(P, z)
    for k, zk in enumerate(z):
        assert np.allclose(many[k], mp_eval(P, zk))


def test_non_monic_rejected():
    with pytest.raises(ValueError):
        long_divide(scalar_poly([1, 2]), scalar_poly([1, 2.0, 3.0]), 1)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(1, 2), p=st.integers(1, 5),
       data=st.data())
def test_division_degree_law(seed, n, p, data):
    q = data.draw(st.integers(0, p - 1))
    rng = np.random.default_rng(seed)
    P, Q = random_stable_poly(rng, n, p), random_stable_poly(rng, n, q)
    C, S = long_divide(P, Q, q)
    R = MatrixPoly(tuple(C) + (np.eye(n),))
    D = mp_mul(Q, R) - P
    assert all(np.abs(D.coeff(k)).max() < 1e-10 for k in range(q, p + 1))
    assert all(np.allclose(D.coeff(k), S.coeff(k), atol=1e-10) for k in range(q))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_product_evaluates_as_matrix_product(seed):
    rng = np.random.default_rng(seed)
    P, Q = random_stable_poly(rng, 2, 2), random_stable_poly(rng, 2, 3)
    z = complex(*rng.normal(size=2))
    assert np.allclose(mp_eval(mp_mul(P, Q), z), mp_eval(P, z) @ mp_eval(Q, z))
