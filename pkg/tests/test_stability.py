import numpy as np
import pytest

from carmadelay.matpoly import MatrixPoly, scalar_poly
from carmadelay.measures import DelayMeasure
from carmadelay.stability import halfplane_check, msdde_char_scan


def test_stable_polynomial_passes():
    rep = halfplane_check(scalar_poly([3, 4, 1]))
    assert rep.passed
    assert rep.max_real_part == pytest.approx(-1.0)
    assert sorted(rep.eigenvalues.real) == pytest.approx([-3.0, -1.0])


def test_unstable_polynomial_fails():
    rep = halfplane_check(scalar_poly([-1, 1]))     # z - 1
    assert not rep.passed
    assert "FAIL" in str(rep)


def test_root_on_axis_fails():
    assert not halfplane_check(scalar_poly([1, 0, 1])).passed   # z^2 + 1


def test_constant_polynomial():
    assert halfplane_check(MatrixPoly.identity(2)).passed


def test_non_monic_rejected():
    with pytest.raises(ValueError):
        halfplane_check(scalar_poly([1, 2]) - scalar_poly([0, 0, 1]))


def test_matrix_polynomial_uses_determinant():
    # diag(z+1, z-0.5): one root in the right half-plane
    P = MatrixPoly((np.diag([1.0, -0.5]), np.eye(2)))
    rep = halfplane_check(P)
    assert not rep.passed
    assert rep.max_real_part == pytest.approx(0.5)


def test_char_scan_ou():
    eta = DelayMeasure.point(np.array([[-2.0]]))
    dmin, y = msdde_char_scan(eta, np.linspace(-10, 10, 2001))
    # |det h(iy)| = |2 - iy| is smallest at y = 0
    assert dmin == pytest.approx(2.0)
    assert y == pytest.approx(0.0, abs=1e-12)


def test_char_scan_detects_singular_system():
    # eta = 0: h(iy) = -iy I vanishes at y = 0
    eta = DelayMeasure.point(np.zeros((1, 1)))
    dmin, _ = msdde_char_scan(eta, np.linspace(-1, 1, 201))
    assert dmin < 1e-12
