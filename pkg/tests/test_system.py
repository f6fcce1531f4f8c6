import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ampgnn.system import (LinearSystem, draw_batch, embed_matrix, embed_real, embed_vector, generate_batch,
                           make_constellation, parse_modulation, sample_channel, sigma2_for_snr, unembed_vector)


@pytest.mark.parametrize("Q", [4, 16, 64])
def test_constellation_energy_and_symmetry(Q):
    c = make_constellation(Q)
    assert np.mean(np.abs(c.complex_points) ** 2) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(c.pam_points, -c.pam_points[::-1], atol=0)
    assert c.prior.sum() == pytest.approx(1.0, abs=1e-15)
    assert c.complex_points.size == Q
    assert c.size ** 2 == Q


def test_pam_points_qpsk_and_16qam():
    np.testing.assert_allclose(make_constellation(4).pam_points, [-1 / np.sqrt(2), 1 / np.sqrt(2)], rtol=1e-15)
    s = np.sqrt(10)
    np.testing.assert_allclose(make_constellation(16).pam_points, [-3 / s, -1 / s, 1 / s, 3 / s], rtol=1e-15)


def test_complex_points_are_cartesian_product():
    c = make_constellation(16)
    expected = {complex(a, b) for a in c.pam_points for b in c.pam_points}
    assert set(c.complex_points.tolist()) == expected


def test_unsupported_order_rejected():
    with pytest.raises(ValueError, match="unsupported"):
        make_constellation(8)
    with pytest.raises(ValueError):
        parse_modulation("8psk")
    assert parse_modulation("16QAM") == 16


def test_nonuniform_prior_normalised():
    c = make_constellation(4, prior=[1, 3])
    np.testing.assert_allclose(c.prior, [0.25, 0.75])
    with pytest.raises(ValueError):
        make_constellation(4, prior=[1, 2, 3])


def test_channel_columns_have_unit_norm_on_average():
    rng = np.random.default_rng(0)
    H = sample_channel(4, 4, rng, size=100_000)
    assert np.mean(np.sum(np.abs(H) ** 2, axis=1)) == pytest.approx(1.0, rel=0.01)


def test_channel_shape_and_determinism():
    assert sample_channel(2, 1, np.random.default_rng(0)).shape == (2, 1)
    a = sample_channel(3, 3, np.random.default_rng(7))
    b = sample_channel(3, 3, np.random.default_rng(7))
    assert a.tobytes() == b.tobytes()


def test_sigma2_for_snr():
    assert sigma2_for_snr(0.0, 8, 8) == pytest.approx(1.0)
    assert sigma2_for_snr(10.0, 16, 8) == pytest.approx(0.05)
    assert sigma2_for_snr(300.0, 4, 4) < 1e-29


def test_embed_examples():
    np.testing.assert_array_equal(embed_matrix(np.array([[1j]])), [[0, -1], [1, 0]])
    H = np.array([[1.0, 2.0], [3.0, 4.0]])
    Hr = embed_matrix(H.astype(complex))
    np.testing.assert_array_equal(Hr[:2, :2], H)
    np.testing.assert_array_equal(Hr[2:, 2:], H)
    assert not Hr[:2, 2:].any() and not Hr[2:, :2].any()


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_embedding_preserves_products(M, N, seed):
    rng = np.random.default_rng(seed)
    H = rng.standard_normal((M, N)) + 1j * rng.standard_normal((M, N))
    x = rng.standard_normal(N) + 1j * rng.standard_normal(N)
    np.testing.assert_allclose(embed_matrix(H) @ embed_vector(x), embed_vector(H @ x), atol=1e-12)
    np.testing.assert_array_equal(unembed_vector(embed_vector(x)), x)


def test_linear_system_fields():
    s = LinearSystem(np.eye(2), np.array([1.0, 2.0j]), 0.4)
    H_real, y_real, s2 = embed_real(s)
    assert H_real.shape == (4, 4) and s2 == pytest.approx(0.2)
    np.testing.assert_array_equal(y_real, [1, 0, 0, 2])
    with pytest.raises(ValueError):
        LinearSystem(np.eye(2), np.ones(2), 0.0)
    with pytest.raises(ValueError):
        LinearSystem(np.eye(2), np.ones(3), 1.0)


def test_generate_batch_contract():
    samples = generate_batch(64, 4, 4, 4, 40.0, np.random.default_rng(3))
    assert len(samples) == 64
    assert len({s.system.H.tobytes() for s in samples}) == 64
    c = make_constellation(4)
    ratios = []
    for s in samples:
        np.testing.assert_array_equal(c.pam_points[s.labels], s.x_true_real)
        clean = s.system.H @ s.x_true
        ratios.append(np.linalg.norm(s.system.y - clean) / np.linalg.norm(clean))
    assert 1e-3 < np.median(ratios) < 3e-2
    again = generate_batch(64, 4, 4, 4, 40.0, np.random.default_rng(3))
    assert all(np.array_equal(a.system.y, b.system.y) for a, b in zip(samples, again))


def test_real_noise_variance_matches():
    c = make_constellation(16)
    batch, _ = draw_batch(12_500, 4, 4, c, 5.0, np.random.default_rng(9))
    noise = batch.y - np.einsum("bmn,bn->bm", batch.H, batch.x)
    assert noise.size == 100_000
    assert np.var(noise) == pytest.approx(batch.sigma2[0], rel=0.02)


def test_channel_error_is_relative_to_entry_variance():
    c = make_constellation(4)
    batch, H_seen = draw_batch(4000, 8, 4, c, 10.0, np.random.default_rng(2), channel_error_var=0.01)
    E = H_seen - batch.H
    # real embedding halves the per-entry variance: 0.01 * (1/M) / 2
    assert np.var(E[:, :8, :4]) == pytest.approx(0.01 / 8 / 2, rel=0.03)
    clean, none = draw_batch(5, 8, 4, c, 10.0, np.random.default_rng(2))
    assert none is None
