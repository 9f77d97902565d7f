import numpy as np
import pytest
from scipy.integrate import quad, trapezoid

from carmadelay.drivers import DriverPath, DriverSpec, gen_driver
from carmadelay.engine import (SampledPath, predict, predict_msdde, read_path_csv, recover_noise,
                               simulate_continuations, simulate_ma, simulate_statespace,
                               write_driver_csv, write_path_csv, write_prediction_csv)
from carmadelay.kernels import CarmaModel, gtilde_many, matrix_exp, sample_gtilde
from carmadelay.matpoly import mp_eval
from carmadelay.measures import DelayMeasure
from carmadelay.msdde import kernel_fft, nest

BM = DriverSpec("brownian", 1)


def brownian(dt, T, seed, mu=0.0):
    spec = DriverSpec("brownian", 1, mu=np.array([mu]))
    return gen_driver(spec, 0.0, dt, int(round(T / dt)), seed)


def test_zero_driver_gives_zero_path(ou):
    dt = 2 ** -6
    g = sample_gtilde(ou, dt, 10.0)
    d = DriverPath(0.0, dt, np.zeros((2000, 1)))
    x = simulate_ma(g, d, 10.0)
    assert np.all(x.values == 0)
    assert x.t0 == pytest.approx(10.0)


def test_ma_needs_history(ou):
    g = sample_gtilde(ou, 2 ** -6, 10.0)
    d = brownian(2 ** -6, 5.0, 1)
    with pytest.raises(ValueError):
        simulate_ma(g, d, 10.0)
    with pytest.raises(ValueError):
        simulate_ma(g, d, 5.0)


def test_ou_stationary_variance(ou):
    dt = 2 ** -5
    x = simulate_ma(sample_gtilde(ou, dt, 10.0), brownian(dt, 5010.0, 2), 10.0).values[:, 0]
    assert x.var() == pytest.approx(0.25, rel=0.05)


def test_carma21_autocovariance(carma21):
    def spectral_acov(lag):
        dens = lambda y: abs(mp_eval(carma21.Q, 1j * y)[0, 0] / mp_eval(carma21.P, 1j * y)[0, 0]) ** 2
        if lag == 0:
            val, _ = quad(dens, 0, np.inf)
        else:
            val, _ = quad(dens, 0, np.inf, weight="cos", wvar=lag)
        return val / np.pi

    dt = 2 ** -5
    x = simulate_ma(sample_gtilde(carma21, dt, 20.0), brownian(dt, 20020.0, 3), 20.0).values[:, 0]
    for lag in (0.0, 1.0):
        k = int(lag / dt)
        emp = np.mean(x[k:] * x[:x.size - k])
        assert emp == pytest.approx(spectral_acov(lag), rel=0.05)


def test_statespace_ou_lag_correlation(ou):
    dt = 2 ** -4
    x = simulate_statespace(ou, brownian(dt, 4000.0, 4), 10.0).values[:, 0]
    r = np.corrcoef(x[1:], x[:-1])[0, 1]
    assert r == pytest.approx(np.exp(-2 * dt), abs=0.01)


def test_statespace_zero_noise_flow(carma31):
    dt = 2 ** -6
    spec = DriverSpec("brownian", 1, sigma=np.array([0.0]))
    d = gen_driver(spec, 0.0, dt, 320, 1)
    s0 = np.array([1.0, -0.5, 0.25])
    x = simulate_statespace(carma31, d, 0.0, state0=s0)
    ref = np.array([(matrix_exp(carma31.Acomp * t) @ s0)[0] for t in x.times])
    assert np.abs(x.values[:, 0] - ref).max() < 1e-12
    assert len(x.derivs) == 1


def test_statespace_rejects_non_brownian(ou):
    spec = DriverSpec("compound_poisson", 1, rate=np.array([1.0]))
    with pytest.raises(ValueError):
        simulate_statespace(ou, gen_driver(spec, 0, 0.1, 100, 1), 1.0)


def test_cross_route_first_order(carma21):
    fine = 2 ** -8
    base = gen_driver(BM, 0.0, fine, int(220 / fine), 5)
    errs = []
    for e in (6, 7, 8):
        dt = 2.0 ** -e
        d = base.coarsen(2 ** (8 - e))
        a = simulate_ma(sample_gtilde(carma21, dt, 20.0), d, 20.0).values
        b = simulate_statespace(carma21, d, 20.0).values
        errs.append(np.abs(a - b).max())
    assert errs[0] > errs[1] > errs[2]
    assert 1.4 < errs[0] / errs[2] / 2 < 2.8


def roundtrip(model, dt, seed=6, T=100.0):
    d = brownian(dt, 20.0 + T, seed)
    x = simulate_statespace(model, d, 20.0)
    z = recover_noise(model, x)
    k0 = int(round(20.0 / dt))
    true = d.increments[k0:k0 + z.steps]
    return z, true


def test_recover_ou(ou):
    z, true = roundtrip(ou, 2 ** -8)
    assert z.valid.all()
    assert np.corrcoef(z.increments[:, 0], true[:, 0])[0, 1] > 0.99


def test_recover_carma21_masks_warmup(carma21):
    z, true = roundtrip(carma21, 2 ** -8)
    assert not z.valid[0] and z.valid[-1]
    assert np.all(np.isnan(z.increments[~z.valid]))
    v = z.valid
    assert np.corrcoef(z.increments[v, 0], true[v, 0])[0, 1] > 0.95


def test_recover_carma21_converges(carma21):
    nr = []
    for e in (6, 8):
        z, true = roundtrip(carma21, 2.0 ** -e, T=50.0)
        v = z.valid
        nr.append(np.sqrt(np.mean((z.increments[v] - true[v]) ** 2)) / true[v].std())
    assert nr[1] < nr[0] < 0.1


def test_recover_zero_path(carma21):
    x = SampledPath(0.0, 2 ** -6, np.zeros((3000, 1)))
    z = recover_noise(carma21, x)
    assert np.all(z.increments[z.valid] == 0)


def test_recover_errors(carma21, carma31):
    with pytest.raises(ValueError, match="too short"):
        recover_noise(carma21, SampledPath(0.0, 2 ** -6, np.zeros((100, 1))))
    p4 = CarmaModel([[[6.0]], [[11.0]], [[6.0]], [[1.0]]])       # p - q = 4
    with pytest.raises(ValueError, match="amplify"):
        recover_noise(p4, SampledPath(0.0, 2 ** -8, np.zeros((5000, 1))))


def test_recover_warns_for_finite_differences():
    m = CarmaModel([[[6.0]], [[11.0]], [[6.0]]])                  # p - q = 3
    x = SampledPath(0.0, 2 ** -4, np.zeros((500, 1)))
    with pytest.warns(RuntimeWarning):
        recover_noise(m, x)


def test_recover_with_differenced_derivatives(carma31):
    d = brownian(2 ** -8, 120.0, 8)
    x = simulate_statespace(carma31, d, 20.0)
    z_exact = recover_noise(carma31, x)
    z_fd = recover_noise(carma31, SampledPath(x.t0, x.dt, x.values))
    v = z_exact.valid
    # differenced derivatives spread each increment over neighbouring steps
    a, b = z_exact.increments[v, 0], z_fd.increments[v, 0]
    L = a.size // 16 * 16
    agg = np.corrcoef(a[:L].reshape(-1, 16).sum(1), b[:L].reshape(-1, 16).sum(1))[0, 1]
    assert agg > 0.97


def test_predict_ou_exact(ou):
    d = brownian(2 ** -8, 30.0, 9)
    x = simulate_statespace(ou, d, 10.0)
    lead = np.linspace(0, 2, 17)
    r = predict(ou, x, lead)
    assert np.abs(r.mean[:, 0] - np.exp(-2 * lead) * x.values[-1, 0]).max() < 1e-12
    assert np.all(r.memory_term == 0) and np.all(r.noise_term == 0)


def test_predict_continuity(carma31, carma21):
    for m in (carma31, carma21):
        x = simulate_statespace(m, brownian(2 ** -8, 60.0, 10), 20.0)
        r = predict(m, x, [0.0, 1e-8])
        assert np.abs(r.mean[:, 0] - x.values[-1, 0]).max() < 1e-6


def test_predict_tower_ou(ou):
    x = simulate_statespace(ou, brownian(2 ** -8, 30.0, 11), 10.0)
    direct = predict(ou, x, [1.5]).mean[0]
    mid = predict(ou, x, [0.5]).mean[0]
    x2 = SampledPath(x.t0, x.dt, np.vstack([x.values[:-1], mid]))
    assert np.abs(predict(ou, x2, [1.0]).mean[0] - direct).max() < 1e-8


def test_predict_noise_routes_agree(carma21, carma31):
    lead = 2 ** -8 * np.arange(257)
    for m in (carma21, carma31):
        x = simulate_statespace(m, brownian(2 ** -8, 60.0, 12), 20.0)
        a = predict(m, x, lead, mean_rate=[0.4])
        b = predict(m, x, lead, zhat=0.4 * lead[:, None])
        assert np.abs(a.noise_term - b.noise_term).max() < 1e-4


def test_predict_insufficient_history(carma21):
    x = SampledPath(0.0, 2 ** -6, np.zeros((50, 1)))
    with pytest.raises(ValueError, match="history"):
        predict(carma21, x, [1.0])


def test_predict_unbiased_monte_carlo(carma21):
    x = simulate_statespace(carma21, brownian(2 ** -8, 60.0, 13), 20.0)
    lead = np.array([0.5, 1.0, 2.0])
    pred = predict(carma21, x, lead).mean[:, 0]
    X = simulate_continuations(carma21, x.states[-1], lead, 4000, 14)[:, :, 0]
    se = X.std(axis=0) / np.sqrt(X.shape[0])
    assert np.all(np.abs(X.mean(axis=0) - pred) < 3 * se)


def test_predict_msdde_ou(ou):
    dt = 2 ** -8
    x = simulate_statespace(ou, brownian(dt, 30.0, 15), 10.0)
    eta = DelayMeasure.point(np.array([[-2.0]]))
    g = kernel_fft(eta, step=dt)
    lead = dt * np.arange(257)
    a = predict(ou, x, lead, mean_rate=[0.5]).mean
    b = predict_msdde(eta, g, x, lead, mean_rate=[0.5])
    assert np.abs(a - b.mean).max() < 1e-4
    assert np.abs(b.state_term[:, 0] - g.values[:257, 0, 0] * x.values[-1, 0]).max() < 1e-14
    assert np.all(b.memory_term == 0)


def test_predict_msdde_nested(carma21, carma31):
    dt = 2 ** -8
    lead = dt * np.arange(257)
    for m in (carma21, carma31):
        x = simulate_statespace(m, brownian(dt, 80.0, 16, mu=0.2), 20.0)
        aug = SampledPath(x.t0, dt, np.hstack([x.values] + x.derivs))
        eta = nest(m.delay_system())
        g = kernel_fft(eta, step=dt)
        mu = np.zeros(m.m)
        mu[-1] = 0.2
        a = predict(m, x, lead, mean_rate=[0.2]).mean[:, 0]
        b = predict_msdde(eta, g, aug, lead, mean_rate=mu).mean[:, 0]
        assert np.abs(a - b).max() < 1e-3


def test_predict_msdde_delayed_atom_memory():
    # dX = (-2 X_t + 0.5 X_(t-1)) dt + dZ: the memory term only sees X on [s-1, s]
    dt = 2 ** -6
    eta = DelayMeasure(1, ((0.0, np.array([[-2.0]])), (1.0, np.array([[0.5]]))))
    g = kernel_fft(eta, step=dt)
    hist = SampledPath(0.0, dt, np.ones((200, 1)))
    lead = dt * np.arange(33)
    r = predict_msdde(eta, g, hist, lead)
    # memory integrand is 0.5 on (s, s + 1); its g-weighted integral up to t = s + 0.5
    ref = 0.5 * trapezoid(g.values[:33, 0, 0], dx=dt)
    assert r.memory_term[-1, 0] == pytest.approx(ref, rel=1e-10)


def test_stationarity_across_windows(carma21):
    x = simulate_statespace(carma21, brownian(2 ** -5, 8020.0, 17), 20.0).values[:, 0]
    a, b = np.array_split(x, 2)
    assert b.var() == pytest.approx(a.var(), rel=0.1)
    assert abs(a.mean() - b.mean()) < 0.1 * np.sqrt(a.var())


def test_csv_roundtrip(tmp_path, carma31):
    x = simulate_statespace(carma31, brownian(2 ** -6, 60.0, 18), 10.0)
    p = tmp_path / "path.csv"
    write_path_csv(p, x, ["seed = 18"])
    y = read_path_csv(p)
    assert y.dt == x.dt and y.t0 == x.t0
    assert np.array_equal(y.values, x.values)
    assert np.array_equal(y.derivs[0], x.derivs[0])
    z = recover_noise(carma31, x)
    write_driver_csv(tmp_path / "z.csv", z)
    text = (tmp_path / "z.csv").read_text().splitlines()
    assert text[2] == "t,dZ_1,valid" and text[3].endswith(",0")
    r = predict(carma31, x, [0.0, 0.5])
    write_prediction_csv(tmp_path / "p.csv", r)
    head = [ln for ln in (tmp_path / "p.csv").read_text().splitlines() if not ln.startswith("#")][0]
    assert head == "t,pred_1,term1_1,term2_1,term3_1"
