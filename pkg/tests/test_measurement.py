import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize, stats

from dmce.channel import ClusterModel, SystemConfig, devectorize_real, from_angular, generate_dataset
from dmce.channel import vectorize_real
from dmce.measurement import (GAUSSIAN_STEP_TABLE, MeasurementModel, PilotMatrix, Quantizer,
                              build_measurement, complex_to_real_operator, design_quantizer,
                              interval, make_pilots, noise_variance, observe, optimal_gaussian_step,
                              quantize, received_power, zadoff_chu)


class TestPilots:
    def test_qpsk_unit_modulus(self):
        P = make_pilots("qpsk", 16, 12, np.random.default_rng(0))
        assert P.symbols.shape == (16, 12)
        np.testing.assert_allclose(np.abs(P.symbols), 1.0, atol=1e-15)
        lattice = {complex(a, b) for a in (-1, 1) for b in (-1, 1)}
        got = {complex(np.sign(z.real), np.sign(z.imag)) for z in P.symbols.ravel()}
        assert got <= lattice

    def test_qpsk_deterministic(self):
        a = make_pilots("qpsk", 8, 8, np.random.default_rng(3)).symbols
        b = make_pilots("qpsk", 8, 8, np.random.default_rng(3)).symbols
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("n", [7, 16, 64])
    def test_zc_orthogonal(self, n):
        P = make_pilots("zc", n, n).symbols
        np.testing.assert_allclose(P.conj().T @ P, n * np.eye(n), atol=1e-10)
        np.testing.assert_allclose(np.abs(P), 1.0, atol=1e-14)

    def test_zc_too_many_pilots(self):
        with pytest.raises(ValueError, match="at most"):
            make_pilots("zc", 8, 9)

    def test_zc_root_coprime(self):
        with pytest.raises(ValueError):
            zadoff_chu(8, root=2)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            make_pilots("qpsk", 4, 0, np.random.default_rng(0))
        with pytest.raises(ValueError):
            make_pilots("qpsk", 4, 2)
        with pytest.raises(ValueError):
            make_pilots("bpsk", 4, 2, np.random.default_rng(0))


class TestOperator:
    def test_scalar_case(self):
        p = 0.6 - 0.8j
        m = build_measurement(PilotMatrix(np.array([[p]]), "qpsk"), 1)
        np.testing.assert_allclose(m.a, [[p.real, -p.imag], [p.imag, p.real]], atol=1e-15)

    def test_real_operator_matches_complex_product(self):
        rng = np.random.default_rng(1)
        A = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
        x = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        R = complex_to_real_operator(A)
        np.testing.assert_allclose(R @ np.r_[x.real, x.imag], np.r_[(A @ x).real, (A @ x).imag])

    @pytest.mark.parametrize("n_rx,n_tx,n_pilot", [(4, 16, 16), (2, 8, 4), (3, 5, 7)])
    def test_matches_complex_received_signal(self, n_rx, n_tx, n_pilot):
        rng = np.random.default_rng(n_rx * 100 + n_pilot)
        H_ad = rng.standard_normal((n_rx, n_tx)) + 1j * rng.standard_normal((n_rx, n_tx))
        P = make_pilots("qpsk", n_tx, n_pilot, rng)
        m = build_measurement(P, n_rx)
        received = from_angular(H_ad) @ P.symbols      # Y = H P
        assert np.linalg.norm(m.a @ vectorize_real(H_ad) - vectorize_real(received)) <= 1e-9
        assert m.shape == (2 * n_rx * n_pilot, 2 * n_rx * n_tx)

    def test_zc_rows_orthogonal(self):
        m = build_measurement(make_pilots("zc", 16, 16), 4)
        G = m.a @ m.a.T
        off = G - np.diag(np.diag(G))
        assert np.linalg.norm(off) <= 1e-9 * np.linalg.norm(np.diag(G))

    @pytest.mark.parametrize("n_pilot", [8, 16, 24])
    def test_svd_cache(self, n_pilot):
        m = build_measurement(make_pilots("qpsk", 16, n_pilot, np.random.default_rng(n_pilot)), 4)
        rec = (m.u * m.s) @ m.vt
        assert np.linalg.norm(rec - m.a) / np.linalg.norm(m.a) <= 1e-10
        assert np.all(m.s >= 0) and np.all(np.diff(m.s) <= 0)
        assert len(m.s) == min(m.shape)

    def test_noise_variance(self):
        assert noise_variance(30, 64) == pytest.approx(0.032)
        m = build_measurement(make_pilots("zc", 4, 4), 1).with_snr(10)
        assert m.noise_var == pytest.approx(4 / 20)
        assert isinstance(m.with_noise(0.5), MeasurementModel)


class TestObserve:
    def test_noiseless(self):
        m = build_measurement(make_pilots("qpsk", 4, 4, np.random.default_rng(0)), 2)
        h = np.random.default_rng(1).standard_normal(16)
        np.testing.assert_array_equal(observe(m, h, np.random.default_rng(2)).y, m.a @ h)

    def test_noise_variance_empirical(self):
        m = build_measurement(make_pilots("qpsk", 2, 2, np.random.default_rng(0)), 1, noise_var=0.3)
        h = np.ones(4)
        y = observe(m, np.tile(h, (25_000, 1)), np.random.default_rng(5)).y
        var = np.var(y - m.a @ h)
        assert var == pytest.approx(0.3, rel=0.02)

    def test_quantized_observation_members(self):
        m = build_measurement(make_pilots("qpsk", 4, 4, np.random.default_rng(0)), 2, noise_var=0.1)
        h = np.random.default_rng(1).standard_normal((10, 16))
        obs = observe(m, h, np.random.default_rng(2), bits=2)
        assert obs.quantized
        assert set(np.unique(obs.y)) <= set(obs.quantizer.codewords)


def _quad_mse(bits, step):
    """Quantization MSE by adaptive quadrature, cell by cell."""
    q = Quantizer(bits, step)
    low, up = q.thresholds
    total = 0.0
    for lo, hi, r in zip(low, up, q.codewords):
        total += integrate.quad(lambda z: (z - r) ** 2 * stats.norm.pdf(z), lo, hi)[0]
    return total


class TestQuantizer:
    def test_one_bit_is_sign(self):
        q = Quantizer(1, 2.0)
        np.testing.assert_array_equal(q.codewords, [-1.0, 1.0])
        z = np.array([-3.0, -1e-9, 1e-9, 5.0])
        np.testing.assert_array_equal(quantize(q, z), np.sign(z) * 1.0)

    def test_two_bit_codewords(self):
        np.testing.assert_array_equal(Quantizer(2, 1.0).codewords, [-1.5, -0.5, 0.5, 1.5])

    def test_two_bit_examples(self):
        q = Quantizer(2, 1.0)
        assert quantize(q, 0.3) == 0.5
        assert interval(q, 0.5) == (0.0, 1.0)
        assert quantize(q, -1e6) == -1.5
        assert interval(q, -1.5) == (-np.inf, -1.0)
        assert interval(q, 1.5) == (1.0, np.inf)

    @pytest.mark.parametrize("bits", [1, 2, 3, 5, 8])
    def test_cells_partition_line(self, bits):
        low, up = Quantizer(bits, 0.7).thresholds
        assert low[0] == -np.inf and up[-1] == np.inf
        np.testing.assert_array_equal(low[1:], up[:-1])
        assert np.all(up > low)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 8), st.floats(0.01, 10), st.floats(-1e4, 1e4, allow_nan=False))
    def test_interval_contains_input(self, bits, step, z):
        q = Quantizer(bits, step)
        lo, hi = interval(q, quantize(q, z))
        assert lo <= z < hi

    def test_non_codeword_rejected(self):
        with pytest.raises(ValueError, match="not a codeword"):
            interval(Quantizer(2, 1.0), 0.7)

    @pytest.mark.parametrize("bits", [1, 2, 3, 4, 5])
    def test_step_table_minimises_mse(self, bits):
        # independent oracle: quadrature MSE minimised by Brent's method
        res = optimize.minimize_scalar(lambda s: _quad_mse(bits, s), bounds=(0.01, 3.0),
                                       method="bounded", options={"xatol": 1e-9})
        assert GAUSSIAN_STEP_TABLE[bits] == pytest.approx(res.x, abs=1e-5)

    def test_table_matches_closed_form_search(self):
        for bits in (1, 4, 8):
            assert GAUSSIAN_STEP_TABLE[bits] == pytest.approx(optimal_gaussian_step(bits), abs=1e-7)

    def test_one_bit_step_value(self):
        # 1-bit optimum puts codewords at +-E|z| = +-sqrt(2/pi); the table keeps ~8 digits
        assert GAUSSIAN_STEP_TABLE[1] / 2 == pytest.approx(np.sqrt(2 / np.pi), rel=1e-7)

    def test_design(self):
        q = design_quantizer(3, 8.0)
        assert q.step == pytest.approx(2.0 * GAUSSIAN_STEP_TABLE[3])
        with pytest.raises(ValueError):
            design_quantizer(9, 1.0)
        with pytest.raises(ValueError):
            design_quantizer(2, 0.0)

    def test_received_power_per_complex_sample(self):
        y = np.full(10, 3.0)
        assert received_power(y) == pytest.approx(18.0)


def test_dataset_through_operator_has_expected_power():
    data = generate_dataset(SystemConfig(), ClusterModel(), 500, seed=4)
    m = build_measurement(make_pilots("qpsk", 16, 16, np.random.default_rng(0)), 4)
    y = data @ m.a.T
    # each received complex sample sums n_tx unit-power terms
    assert received_power(y) == pytest.approx(16.0, rel=0.1)
    assert devectorize_real(data[0], 4, 16).shape == (4, 16)
