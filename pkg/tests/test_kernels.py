import numpy as np
import pytest

from carmadelay.acceptance import gauss_fourier
from carmadelay.kernels import (CarmaModel, HypothesisViolation, f_kernel, f_kernel_many,
                                gtilde, gtilde_j, gtilde_many, matrix_exp, sample_f,
                                sample_gtilde, truncation_horizon)
from carmadelay.matpoly import mp_eval_many, mp_mul
from carmadelay.msdde import kernel_fft, nest


def test_matrix_exp_trivial_cases():
    assert np.array_equal(matrix_exp(np.zeros((3, 3))), np.eye(3))
    assert np.allclose(matrix_exp(np.diag([-1.0, -2.0])), np.diag(np.exp([-1.0, -2.0])), rtol=1e-14)
    N = np.array([[0.0, 1.0], [0.0, 0.0]])
    assert np.allclose(matrix_exp(N), np.eye(2) + N, atol=1e-15)


def test_matrix_exp_failures():
    with pytest.raises(ValueError):
        matrix_exp(np.array([[np.nan]]))
    with pytest.raises(OverflowError):
        matrix_exp(np.array([[1e6]]))


def test_ou_kernel(ou):
    t = np.linspace(0, 5, 11)
    assert np.allclose(gtilde_many(ou, t)[:, 0, 0], np.exp(-2 * t), rtol=1e-13)
    assert gtilde(ou, -0.1)[0, 0] == 0.0
    assert np.all(f_kernel_many(ou, t) == 0)
    assert ou.F == [] and ou.Bcomp is None


def test_f_is_exponential(carma21, carma31):
    for m in (carma21, carma31):
        assert f_kernel(m, 0.7)[0, 0] == pytest.approx(np.exp(-1.4), rel=1e-13)


def test_leading_value_of_gtilde(carma21, carma31, carma21_2d):
    assert np.allclose(gtilde(carma21, 0.0), np.eye(1))
    assert np.allclose(gtilde(carma21_2d, 0.0), np.eye(2))
    assert gtilde(carma31, 0.0)[0, 0] == 0.0


def test_gtilde_j(ou, carma31):
    t = 0.8
    assert gtilde_j(ou, 1, t)[0, 0] == pytest.approx(np.exp(-2 * t))
    A, E = carma31.Acomp, carma31.Estack
    C1 = carma31.C[1]
    ref = (matrix_exp(A * t) @ (E @ C1 + A @ E))[:1]
    assert np.allclose(gtilde_j(carma31, 1, t), ref, atol=1e-14)
    assert gtilde_j(carma31, 2, 0.0)[0, 0] == pytest.approx(carma31.E[0][0, 0])
    assert gtilde_j(carma31, 1, 0.0)[0, 0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        gtilde_j(carma31, 3, t)


def test_semigroup(carma21_2d):
    A = carma21_2d.Acomp
    s, t = 0.4, 1.3
    assert np.allclose(matrix_exp(A * (s + t)), matrix_exp(A * s) @ matrix_exp(A * t), rtol=1e-10)


def test_smoothness_at_zero():
    # p - q = 3: gtilde and its first derivative vanish at 0
    m = CarmaModel([[[6.0]], [[11.0]], [[6.0]], [[1.0]]], [[[2.0]]])
    h = 1e-4
    g = gtilde_many(m, [0.0, h, 2 * h])[:, 0, 0]
    assert g[0] == 0.0
    assert abs((g[1] - g[0]) / h) < 1e-3


def test_model_invariants(carma21_2d):
    m = carma21_2d
    D = mp_mul(m.Q, m.R()) - m.P
    assert all(np.abs(D.coeff(k)).max() < 1e-12 for k in range(m.q, m.p + 1))
    bound = min(-m.P_report.max_real_part, -m.Q_report.max_real_part)
    assert m.decay == pytest.approx(0.9 * bound)


def test_hypothesis_violations():
    with pytest.raises(HypothesisViolation):
        CarmaModel([[[-1.0]]])
    with pytest.raises(HypothesisViolation):
        CarmaModel([[[4.0]], [[3.0]]], [[[-2.0]]])
    m = CarmaModel([[[-1.0]]], check=False)
    assert not m.P_report.passed
    with pytest.raises(ValueError):
        CarmaModel([[[1.0]]], [[[1.0]]])


def test_frequency_identities(carma21, carma21_2d):
    y = np.logspace(-2, 2, 64)
    z = -1j * y
    for m in (carma21, carma21_2d):
        T = truncation_horizon(m, 1e-13, step=2 ** -6)
        lhs = gauss_fourier(lambda u: gtilde_many(m, u), y, 0.05 * np.ceil(T / 0.05))
        rhs = np.linalg.solve(mp_eval_many(m.P, z), mp_eval_many(m.Q, z))
        assert np.max(np.abs(lhs - rhs)) / np.max(np.abs(rhs)) < 1e-6


def test_truncation_horizon(ou, carma21):
    assert truncation_horizon(ou, 1e-8) == pytest.approx(np.log(1e8) / 2, abs=2 ** -8)
    T = truncation_horizon(carma21, 1e-8)
    assert np.log(1e8) * 0.9 < T < np.log(1e8) * 1.1
    assert truncation_horizon(ou, 1.0) <= 2 ** -7
    assert abs(gtilde(carma21, T)[0, 0]) < 1e-8


def test_sampled_kernels(carma21, ou):
    g = sample_gtilde(carma21, 0.25, 2.0)
    assert g.values.shape == (9, 1, 1)
    assert np.allclose(g.atom_at_zero, np.eye(1))
    assert sample_f(ou, 0.25, 2.0) is None
    f = sample_f(carma21, 0.25, 2.0)
    assert np.allclose(f.values[:, 0, 0], np.exp(-2 * f.times))


def test_agrees_with_fft_kernel(carma31):
    step = 2 ** -8
    g = kernel_fft(nest(carma31.delay_system()), step=step, horizon=20.0)
    ref = gtilde_many(carma31, g.times)
    assert np.abs(g.values[:, :1, 1:] - ref).max() < 1e-4


def test_summary_lists_coefficients(carma31, ou):
    s = carma31.summary()
    assert "C_1" in s and "F_1" in s
    assert "not applicable" in ou.summary()
