import numpy as np
import pytest

from fastdiva import (
    BlockedMixture, CsvParameterization, MixtureError, SourceSpec,
    default_variance_profile, gg_scale, sample_gg,
    generate_csv_mixture, generate_c1_mixture, generate_c2_mixture,
    draw_c2_base_vectors, save_mixture, load_mixture,
)


def test_container_shape_validation():
    with pytest.raises(MixtureError):
        BlockedMixture(np.zeros((2, 3, 4)))
    with pytest.raises(MixtureError):
        BlockedMixture(np.zeros((1, 2, 1, 10)))  # d = 1
    with pytest.raises(MixtureError):
        BlockedMixture(np.zeros((1, 2, 3, 10)), field_kind="quaternion")
    m = BlockedMixture(np.zeros((2, 3, 4, 5)))
    assert (m.K, m.T, m.d, m.Nb, m.N) == (2, 3, 4, 5, 15)
    assert m.block(1, 2).shape == (4, 5)


def test_default_variance_profile():
    prof = default_variance_profile(5)
    assert prof.shape == (5,)
    assert np.all(prof > 0)
    expected = np.abs(np.cos(np.arange(1, 6) * np.pi / 6)) + 1 - np.sqrt(3) / 2
    assert np.allclose(prof, expected)


def test_csv_parameterization_identities():
    rng = np.random.default_rng(3)
    T, d = 3, 4
    a = rng.standard_normal((T, d)) + 1j * rng.standard_normal((T, d))
    w = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    # enforce the distortionless tie w^H a[t] = 1
    for t in range(T):
        a[t] = a[t] / np.vdot(w, a[t])
    p = CsvParameterization.from_vectors(a, w)
    for t in range(T):
        A = p.mixing_matrix(t)
        W = p.demixing_matrix(t)
        B = p.blocking_matrix(t)
        assert np.allclose(W @ A, np.eye(d), atol=1e-10)
        assert np.allclose(B @ p.mixing_vector(t), 0.0, atol=1e-12)
        assert np.allclose(A[:, 0], a[t])
        assert np.allclose(W[0], np.conj(w))
        # determinant identity of the parameterized de-mixing matrix
        det = np.abs(np.linalg.det(W)) ** 2
        assert np.isclose(det, np.abs(p.gamma[t]) ** (2 * (d - 2)), rtol=1e-8)


def test_sample_gg_unit_variance():
    rng = np.random.default_rng(0)
    for field in ("real", "complex"):
        for alpha, tol in ((0.1, 0.25), (1.0, 0.05), (10.0, 0.05)):
            # the spikier the tail, the noisier the variance estimate
            s = sample_gg(alpha, 200_000, field, rng)
            assert abs(np.mean(np.abs(s) ** 2) - 1.0) < tol
    # alpha = 1 complex is circular Gaussian: E|s|^4 = 2
    s = sample_gg(1.0, 400_000, "complex", rng)
    assert abs(np.mean(np.abs(s) ** 4) - 2.0) < 0.05
    assert gg_scale(1.0, "complex") == pytest.approx(1.0)


def test_generate_csv_mixture_recovers_soi():
    spec = SourceSpec(distribution="gg", alpha=0.1)
    mixture, gt = generate_csv_mixture(2, 4, 5, 300, spec, seed=11)
    assert mixture.data.shape == (2, 4, 5, 300)
    assert gt.r == 1
    prof = gt.extra["soi_profile"]
    for k in range(2):
        w = gt.separating_rows[k, 0]
        for t in range(4):
            # the fixed row separates the first source on every block
            s_hat = w.conj() @ mixture.data[k, t]
            assert np.allclose(s_hat, gt.sources[k, t, 0], atol=1e-8)
            # exact per-block centering and variance profile
            assert abs(gt.sources[k, t, 0].mean()) < 1e-12
            assert np.isclose(np.mean(np.abs(gt.sources[k, t, 0]) ** 2),
                              prof[t], rtol=1e-10)
            assert np.allclose(mixture.data[k, t],
                               gt.mixing[k, t] @ gt.sources[k, t])


def test_generate_csv_mixture_coupling_flag():
    spec = SourceSpec(distribution="gg", alpha=0.1)
    _, gt_c = generate_csv_mixture(2, 2, 4, 2000, spec, seed=5,
                                   couple_datasets=True)
    _, gt_u = generate_csv_mixture(2, 2, 4, 2000, spec, seed=5,
                                   couple_datasets=False)
    s_c = gt_c.sources[:, 0, 0, :]
    s_u = gt_u.sources[:, 0, 0, :]
    # coupled SOI magnitudes correlate across datasets, uncoupled do not
    def mag_corr(s):
        m = np.abs(s) ** 2
        m = m - m.mean(axis=1, keepdims=True)
        return abs(np.mean(m[0] * m[1])) / np.sqrt(np.mean(m[0] ** 2) * np.mean(m[1] ** 2))
    assert mag_corr(s_c) > 5 * mag_corr(s_u)


def test_generate_c1_mixture_constant_rows():
    spec = SourceSpec(distribution="gg", alpha=0.5)
    mixture, gt = generate_c1_mixture(1, 3, 5, 2, 200, spec, seed=2)
    assert gt.r == 2
    for j in range(2):
        w = gt.separating_rows[0, j]
        for t in range(3):
            s_hat = w.conj() @ mixture.data[0, t]
            assert np.allclose(s_hat, gt.sources[0, t, j], atol=1e-8)


def test_generate_c1_static_when_r_equals_d():
    mixture, gt = generate_c1_mixture(1, 3, 4, 4, 100, seed=7)
    for t in range(1, 3):
        assert np.allclose(gt.mixing[0, t], gt.mixing[0, 0])


def test_generate_c2_mixture_demixing_rows():
    mixture, gt = generate_c2_mixture(4, 3, 200, lam=1e-3, seed=9)
    demix = gt.extra["demixing"]
    for t in range(3):
        # every de-mixing row recovers its source on its own block
        rec = np.conj(demix[t]) @ mixture.data[0, t]
        assert np.allclose(rec, gt.sources[0, t], atol=1e-8)
    # the first row is block-constant (the CSV source of stage one)
    w1 = gt.separating_rows[0, 0]
    assert np.allclose(demix[0, 0], np.conj(w1))
    assert np.allclose(demix[1, 0], demix[0, 0])


def test_generate_c2_static_at_zero_lambda():
    mixture, gt = generate_c2_mixture(4, 3, 100, lam=0.0, seed=1)
    demix = gt.extra["demixing"]
    for t in range(1, 3):
        assert np.allclose(demix[t], demix[0], atol=1e-12)


def test_draw_c2_base_vectors_normalization():
    base = draw_c2_base_vectors(5, np.random.default_rng(4))
    assert len(base) == 5
    for m, (w, a) in zip(range(5, 0, -1), base):
        assert w.shape == (m,) and a.shape == (m,)
        assert np.isclose(np.vdot(w, a), 1.0)


@pytest.mark.parametrize("field", ["real", "complex"])
def test_save_load_roundtrip(tmp_path, field):
    mixture, _ = generate_csv_mixture(2, 2, 3, 50, seed=8, field_kind=field)
    path = tmp_path / "mix.txt"
    save_mixture(path, mixture)
    back = load_mixture(path)
    assert back.field_kind == field
    assert back.data.shape == mixture.data.shape
    assert np.array_equal(back.data, mixture.data)
