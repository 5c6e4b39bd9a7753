import numpy as np
import pytest
from scipy.stats import multivariate_normal

from bayesgan.models import (
    BNB_PRIOR, LV_PRIOR, MODELS, TOY_PRIOR, DomainError, UniformBoxPrior, gaussian_toy_loglik,
    get_model, read_observed, simulate_boom_bust, simulate_gaussian_toy, simulate_lotka_volterra,
    summary_stats_bnb, summary_stats_gauss, summary_stats_lv, write_observed,
)
from bayesgan.rng import rng_stream


def test_prior_box():
    p = UniformBoxPrior([0.0, -1.0], [2.0, 1.0])
    assert p.logpdf([1.0, 0.0]) == -np.log(4.0)
    assert p.logpdf([3.0, 0.0]) == -np.inf
    with pytest.raises(ValueError):
        UniformBoxPrior([1.0], [1.0])


def test_priors_and_reference_theta0():
    assert np.array_equal(TOY_PRIOR.highs, [3, 4, 3, 3, 3])
    assert np.array_equal(LV_PRIOR.highs, [0.1, 1, 2, 0.1])
    assert np.array_equal(BNB_PRIOR.lows, [0, 10, 0, 0]) and np.array_equal(BNB_PRIOR.highs, [1, 80, 1, 1])
    assert np.array_equal(MODELS["gauss_toy"].theta0, [-0.7, -2.9, -1.0, -0.9, 0.6])
    assert np.array_equal(MODELS["lotka_volterra"].theta0, [0.01, 0.5, 1, 0.01])
    assert np.array_equal(MODELS["boom_bust"].theta0, [0.4, 50, 0.09, 0.05])


@pytest.mark.parametrize("name", sorted(MODELS))
def test_output_lengths_over_prior(name):
    m = get_model(name)
    rng = rng_stream(7)
    n = 1000 if name != "lotka_volterra" else 300
    for _ in range(n):
        x, _ = m.simulate(m.prior.sample(rng), rng)
        assert x.shape == (m.d_x,)
        assert np.all(np.isfinite(x))


@pytest.mark.parametrize("name", sorted(MODELS))
def test_simulators_deterministic(name):
    m = get_model(name)
    a = m.simulate(m.theta0, rng_stream(3, 1))[0]
    b = m.simulate(m.theta0, rng_stream(3, 1))[0]
    assert np.array_equal(a, b)


# ------------------------------------------------------------------ toy

def test_toy_identity_covariance():
    rng = rng_stream(0)
    xs = np.array([simulate_gaussian_toy([0, 0, 1, 1, 0], rng) for _ in range(5000)]).reshape(-1, 2)
    np.testing.assert_allclose(np.cov(xs.T), np.eye(2), atol=0.04)
    np.testing.assert_allclose(xs.mean(axis=0), 0, atol=0.03)


def test_toy_covariance_structure():
    theta = np.array([0.5, -1.0, 1.2, -0.8, 0.7])
    rng = rng_stream(1)
    xs = np.array([simulate_gaussian_toy(theta, rng) for _ in range(20000)]).reshape(-1, 2)
    s1, s2, rho = 1.2 ** 2, 0.8 ** 2, np.tanh(0.7)
    cov = np.array([[s1 ** 2, rho * s1 * s2], [rho * s1 * s2, s2 ** 2]])
    np.testing.assert_allclose(np.cov(xs.T), cov, rtol=0.05, atol=0.01)


def test_toy_out_of_box_rejected():
    with pytest.raises(DomainError):
        get_model("gauss_toy").simulate(np.array([5.0, 0, 1, 1, 0]), rng_stream(0))


def test_toy_degenerate_scale_returns_mean():
    x = simulate_gaussian_toy([1.0, 2.0, 0.0, 0.0, 0.3], rng_stream(0))
    assert np.array_equal(x, np.tile([1.0, 2.0], 4))


def test_toy_loglik_at_zero():
    assert gaussian_toy_loglik(np.array([0, 0, 1, 1, 0.0]), np.zeros(8)) == pytest.approx(-4 * np.log(2 * np.pi))
    assert -4 * np.log(2 * np.pi) == pytest.approx(-7.35151, abs=1e-5)


def test_toy_loglik_sign_symmetry_bit_exact():
    rng = rng_stream(2)
    for _ in range(200):
        th = TOY_PRIOR.sample(rng)
        x = simulate_gaussian_toy(th, rng)
        flipped = th * np.array([1, 1, -1, -1, 1])
        assert gaussian_toy_loglik(th, x) == gaussian_toy_loglik(flipped, x)


def test_toy_loglik_matches_dense_mvn():
    rng = rng_stream(3)
    for _ in range(100):
        th = TOY_PRIOR.sample(rng)
        th[2:4] = np.sign(th[2:4]) * np.maximum(np.abs(th[2:4]), 0.3)
        th[4] = np.clip(th[4], -2.5, 2.5)
        x = simulate_gaussian_toy(th, rng)
        s1, s2, rho = th[2] ** 2, th[3] ** 2, np.tanh(th[4])
        cov = np.array([[s1 ** 2, rho * s1 * s2], [rho * s1 * s2, s2 ** 2]])
        ref = multivariate_normal(th[:2], cov).logpdf(x.reshape(4, 2)).sum()
        assert gaussian_toy_loglik(th, x) == pytest.approx(ref, rel=1e-9, abs=1e-9)


def test_toy_loglik_batched_and_singular():
    x = np.arange(8.0)
    th = np.array([[0, 0, 1, 1, 0.0], [0, 0, 0, 1, 0.0]])
    ll = gaussian_toy_loglik(th, x)
    assert ll[0] == gaussian_toy_loglik(th[0], x)
    assert ll[1] == -np.inf


def test_toy_loglik_finite_on_own_draws():
    rng = rng_stream(4)
    for _ in range(200):
        th = TOY_PRIOR.sample(rng)
        assert np.isfinite(gaussian_toy_loglik(th, simulate_gaussian_toy(th, rng)))


def test_summary_gauss():
    np.testing.assert_array_equal(summary_stats_gauss(np.tile([1.0, 2.0], 4)), [1, 2, 0, 0])
    s = summary_stats_gauss(np.array([0, 0, 2, 0, 0, 2, 2, 2.0]))
    np.testing.assert_allclose(s, [1, 1, 4 / 3, 4 / 3], rtol=1e-15)
    assert summary_stats_gauss(np.zeros((7, 8))).shape == (7, 4)


# ------------------------------------------------------------------ Lotka-Volterra

def test_lv_zero_rates_constant():
    x = simulate_lotka_volterra(np.zeros(4), rng_stream(0))
    assert np.array_equal(x, np.tile([50.0, 100.0], 201))


def test_lv_extinction_is_absorbing():
    # prey die fast, no prey births: prey hits 0, then predators can only die
    x = simulate_lotka_volterra(np.array([0.0, 0.0, 0.0, 0.1]), rng_stream(1)).reshape(201, 2)
    zero = np.flatnonzero(x[:, 1] == 0)
    assert zero.size > 0
    assert np.all(x[zero[0]:, 1] == 0)


def test_lv_paths_integer_and_small_steps():
    rng = rng_stream(5)
    for _ in range(50):
        th = LV_PRIOR.sample(rng)
        x, trunc = simulate_lotka_volterra(th, rng, return_truncated=True)
        assert np.all(x >= 0) and np.all(x == np.round(x))
        assert x[0] == 50 and x[1] == 100
    x = simulate_lotka_volterra(np.array([0.01, 0.5, 1.0, 0.01]), rng_stream(2))
    assert x.shape == (402,)


def test_lv_single_event_moves():
    # grid spacing small relative to event rate: consecutive records differ by events;
    # with a single active reaction every change must be a unit step in one direction
    x = simulate_lotka_volterra(np.array([0.0, 0.0, 0.05, 0.0]), rng_stream(3)).reshape(201, 2)
    d = np.diff(x[:, 1])
    assert np.all(d >= 0) and np.all(x[:, 0] == 50)


def test_lv_truncation_flag():
    _, trunc = simulate_lotka_volterra(np.array([0.1, 0.0, 2.0, 0.0]), rng_stream(0), return_truncated=True)
    assert trunc


def test_lv_negative_rate_rejected():
    with pytest.raises(DomainError):
        simulate_lotka_volterra(np.array([-0.1, 0, 0, 0]), rng_stream(0))


def textbook_acf(v, lag):
    m = sum(v) / len(v)
    num = sum((v[t] - m) * (v[t + lag] - m) for t in range(len(v) - lag))
    den = sum((a - m) ** 2 for a in v)
    return num / den


def test_summary_lv_against_textbook():
    rng = np.random.default_rng(0)
    s = rng.poisson(40, size=402).astype(float)
    out = summary_stats_lv(s)
    pred, prey = s[0::2], s[1::2]
    assert out.shape == (9,)
    assert out[0] == pytest.approx(np.mean(pred))
    assert out[1] == pytest.approx(np.log(np.var(pred, ddof=1) + 1e-12))
    assert out[2] == pytest.approx(textbook_acf(list(pred), 1), rel=1e-12)
    assert out[3] == pytest.approx(textbook_acf(list(pred), 2), rel=1e-12)
    assert out[6] == pytest.approx(textbook_acf(list(prey), 1), rel=1e-12)
    assert out[8] == pytest.approx(np.corrcoef(pred, prey)[0, 1], rel=1e-12)


def test_summary_lv_degenerate():
    out = summary_stats_lv(np.tile([3.0, 7.0], 201))
    assert out[1] == np.log(1e-12) and out[2] == 0 and out[3] == 0 and out[8] == 0
    v = np.arange(201.0)
    out = summary_stats_lv(np.column_stack([v, v]).ravel())
    assert out[8] == pytest.approx(1.0)


# ------------------------------------------------------------------ boom bust

def test_bnb_absorbing_zero():
    # huge kappa keeps every state in the Poisson branch; r tiny, beta 0: 0 is absorbing
    rng = rng_stream(0)
    for _ in range(50):
        x = simulate_boom_bust(np.array([0.01, 1e9, 0.5, 0.0]), rng)
        zeros = np.flatnonzero(x == 0)
        if zeros.size:
            assert np.all(x[zeros[0]:] == 0)


def test_bnb_alpha_to_zero_gives_arrivals_only():
    # kappa below the start: every step crashes to Binomial(N, ~0) + Poisson(beta)
    x = simulate_boom_bust(np.array([0.5, 1e-3, 1e-12, 2.0]), rng_stream(4))
    assert x.mean() == pytest.approx(2.0, abs=0.4)


def test_bnb_output():
    x = simulate_boom_bust(np.array([0.4, 50, 0.09, 0.05]), rng_stream(1))
    assert x.shape == (250,) and np.all(x >= 0) and np.all(x == np.round(x))
    with pytest.raises(DomainError):
        simulate_boom_bust(np.array([0.4, 50, 1.5, 0.05]), rng_stream(1))


def streaming_moments(values):
    # one pass, Terriberry's update of central sums
    n = 0
    mean = m2 = m3 = m4 = 0.0
    for x in values:
        n1 = n
        n += 1
        delta = x - mean
        dn = delta / n
        dn2 = dn * dn
        term1 = delta * dn * n1
        mean += dn
        m4 += term1 * dn2 * (n * n - 3 * n + 3) + 6 * dn2 * m2 - 4 * dn * m3
        m3 += term1 * dn * (n - 2) - 3 * dn * m2
        m2 += term1
    if m2 == 0:
        return [mean, 0.0, 0.0, 0.0]
    return [mean, m2 / (n - 1), np.sqrt(n) * m3 / m2 ** 1.5, n * m4 / (m2 * m2) - 3.0]


def test_summary_bnb_against_streaming():
    rng = np.random.default_rng(3)
    for _ in range(20):
        s = rng.poisson(rng.uniform(1, 60), size=250).astype(float)
        out = summary_stats_bnb(s)
        ref = (streaming_moments(s) + streaming_moments(np.diff(s))
               + streaming_moments(s[1:] / (s[:-1] + 1)))
        np.testing.assert_allclose(out, ref, rtol=1e-10, atol=1e-12)


def test_summary_bnb_constant():
    out = summary_stats_bnb(np.full(250, 5.0))
    assert out.shape == (12,)
    np.testing.assert_array_equal(out[:4], [5, 0, 0, 0])
    np.testing.assert_array_equal(out[4:8], [0, 0, 0, 0])


def test_observed_csv_roundtrip(tmp_path):
    m = get_model("gauss_toy")
    x = simulate_gaussian_toy(m.theta0, rng_stream(0))
    write_observed(tmp_path / "x0.csv", x)
    assert np.array_equal(read_observed(tmp_path / "x0.csv", m), x)
    with pytest.raises(ValueError):
        read_observed(tmp_path / "x0.csv", get_model("boom_bust"))
