import numpy as np
import pytest

from fastdiva import (
    AnalysisError, PerformanceInputs, SourceSpec,
    theoretical_isr, crlb_isr, gg_kappa,
    rational_moments_gg, true_score_moments_gg,
    performance_inputs_from_truth, empirical_isr,
    trimmed_mean, trimmed_mean_isr_db,
    fd_wirtinger_oracle, lcmp_crosscheck,
    generate_csv_mixture, sample_gg,
)
from fastdiva.analysis import fd_gradient_jacobians


def _random_pd(rng, m):
    X = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    return X @ X.conj().T / m + np.eye(m)


def test_theoretical_isr_gaussian_score_closed_form():
    # single block, nu = rho = varphi reduces to a pure trace expression
    rng = np.random.default_rng(0)
    Cz = _random_pd(rng, 3)
    nu, rho, varphi = 1.0, 0.4, 1.0
    inputs = PerformanceInputs(C_z=Cz, sigma_sq=1.0, nu=nu, rho=rho,
                               varphi=varphi)
    got = theoretical_isr(inputs, 1000)
    A = Cz * (nu - rho) / nu
    B = Cz * (varphi - nu ** 2) / nu ** 2
    Ainv = np.linalg.inv(A)
    want = np.real(np.trace(Cz @ Ainv @ B @ Ainv.conj().T)) / 1000
    assert got == pytest.approx(want, rel=1e-12)


def test_gg_kappa_values():
    # alpha = 1 is the circular Gaussian: kappa = 1
    assert gg_kappa(1.0, "complex") == pytest.approx(1.0)
    assert gg_kappa(0.1, "complex") > 1.0
    assert gg_kappa(10.0, "complex") > 1.0


def test_rational_moments_match_monte_carlo():
    rng = np.random.default_rng(1)
    for alpha in (0.1, 2.0):
        nu, rho, varphi, xi, eta = rational_moments_gg(alpha, "complex")
        u = sample_gg(alpha, 500_000, "complex", rng)
        R = np.abs(u) ** 2
        assert nu == pytest.approx(np.mean(R / (1 + R)), abs=3e-3)
        assert rho == pytest.approx(np.mean(1 / (1 + R) ** 2), abs=3e-3)
        assert varphi == pytest.approx(np.mean(R / (1 + R) ** 2), abs=3e-3)
        assert eta == pytest.approx(-np.mean(R ** 2 / (1 + R) ** 2), abs=1e-2)
        # phase-invariant score: xi - eta - nu = 0 identically
        assert abs(xi - eta - nu) < 1e-9


def test_true_score_moments():
    nu, rho, varphi = true_score_moments_gg(0.5, "complex")
    assert nu == 1.0
    assert rho == pytest.approx(gg_kappa(0.5, "complex"))
    assert varphi == rho


def test_crlb_requires_super_gaussian():
    rng = np.random.default_rng(2)
    Cz = _random_pd(rng, 3)
    with pytest.raises(AnalysisError):
        crlb_isr(Cz, 1.0, 1.0, 1000)
    val = crlb_isr(Cz, 1.0, 3.0, 1000)
    assert val > 0


def test_trimmed_mean():
    vals = np.r_[np.ones(98), -1000.0, 1000.0]
    assert trimmed_mean(vals, 0.01) == pytest.approx(1.0)
    assert trimmed_mean(vals, 0.0) == pytest.approx(np.mean(vals))
    with pytest.raises(AnalysisError):
        trimmed_mean(vals, 0.7)
    # dB aggregation happens in the linear power domain
    db = trimmed_mean_isr_db([-10.0, -20.0], 0.0)
    assert db == pytest.approx(10 * np.log10((0.1 + 0.01) / 2))
    assert isinstance(db, float)


def test_empirical_isr_exact_separator():
    mixture, gt = generate_csv_mixture(1, 3, 4, 500, seed=3)
    rep = empirical_isr(gt.separating_rows[:, 0, :], gt, mixture)
    assert rep.isr_db.shape == (1, 1)
    assert rep.permutation[0, 0] == 0
    assert rep.isr_db[0, 0] < -200  # exact separation hits the cap region


def test_empirical_isr_resolves_permutation():
    from fastdiva import generate_c1_mixture
    mixture, gt = generate_c1_mixture(1, 3, 4, 2, 500, seed=4)
    # present the two exact separators in swapped order
    w_est = gt.separating_rows[:, ::-1, :]
    rep = empirical_isr(w_est, gt, mixture)
    assert list(rep.permutation[0]) == [1, 0]
    assert np.all(rep.isr_db < -200)


def test_fd_wirtinger_oracle_quadratic():
    # f(w) = Re[(b^T w)^2]: grad = b* (b^T w)*, H1 = b b^T, H2 = 0
    rng = np.random.default_rng(5)
    d = 3
    b = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    w = rng.standard_normal(d) + 1j * rng.standard_normal(d)

    def f(v):
        return float(np.real((b @ v) ** 2))

    grad, H1, H2 = fd_wirtinger_oracle(f, w)
    assert np.allclose(grad, np.conj(b) * np.conj(b @ w), atol=1e-6)
    assert np.allclose(H1, np.outer(b, b), atol=1e-5)
    assert np.allclose(H2, 0.0, atol=1e-5)


def test_fd_gradient_jacobians_linear_field():
    # g(w) = M w + c w*: dg/dw = M^T rows, dg*/dw = c* rows
    rng = np.random.default_rng(6)
    d = 3
    M = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    c = 0.7 - 0.2j
    w = rng.standard_normal(d) + 1j * rng.standard_normal(d)

    def g(v):
        return M @ v + c * np.conj(v)

    H1, H2 = fd_gradient_jacobians(g, w)
    assert np.allclose(H2, M.T, atol=1e-7)
    assert np.allclose(H1, np.conj(c) * np.eye(d), atol=1e-7)


def test_lcmp_crosscheck_rank_error():
    rng = np.random.default_rng(7)
    d, T = 4, 3
    C = np.stack([_random_pd(rng, d) for _ in range(T)])
    a = np.tile(rng.standard_normal(d) + 1j * rng.standard_normal(d), (T, 1))
    with pytest.raises(AnalysisError):
        lcmp_crosscheck(C, a)  # identical constraints are rank deficient
    a2 = rng.standard_normal((T, d)) + 1j * rng.standard_normal((T, d))
    w = lcmp_crosscheck(C, a2)
    # distortionless in every block: w^H a^t = 1
    for t in range(T):
        assert np.vdot(w, a2[t]) == pytest.approx(1.0, abs=1e-10)


def test_performance_inputs_from_truth_shapes():
    mixture, gt = generate_csv_mixture(2, 4, 5, 300, seed=8)
    nu, rho, varphi, _, _ = rational_moments_gg(0.1, "complex")
    inputs = performance_inputs_from_truth(gt, 1, nu, rho, varphi)
    assert inputs.C_z.shape == (4, 4, 4)
    assert inputs.sigma_sq.shape == (4,)
    # blocking matrices of the true mixing vectors yield PD backgrounds
    for t in range(4):
        evals = np.linalg.eigvalsh(inputs.C_z[t])
        assert np.all(evals > 0)
