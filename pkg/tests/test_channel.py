import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmce.channel import (ChannelSample, ClusterModel, SystemConfig, devectorize_real, dft_matrix,
                          from_angular, generate_channel, generate_dataset, image_to_vec,
                          read_dataset, sample_rng, steering_vector, to_angular, vec_to_image,
                          vectorize_real, write_dataset)


def _crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


class TestDFT:
    def test_n1_is_identity(self):
        np.testing.assert_array_equal(dft_matrix(1), [[1.0]])

    def test_n2(self):
        np.testing.assert_allclose(dft_matrix(2), np.array([[1, 1], [1, -1]]) / np.sqrt(2), atol=1e-15)

    @pytest.mark.parametrize("n", [1, 2, 3, 8, 17, 64, 255, 256])
    def test_unitary(self, n):
        F = dft_matrix(n)
        np.testing.assert_allclose(F @ F.conj().T, np.eye(n), atol=1e-12)

    def test_entries_match_definition(self):
        # independent oracle: numpy's FFT of the identity, orthonormal scaling
        np.testing.assert_allclose(dft_matrix(8), np.fft.fft(np.eye(8), norm="ortho"), atol=1e-13)

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            dft_matrix(0)


class TestViews:
    def test_angular_round_trip(self):
        H = _crandn(np.random.default_rng(0), 4, 16)
        np.testing.assert_allclose(from_angular(to_angular(H)), H, atol=1e-12)

    def test_frobenius_invariance(self):
        H = _crandn(np.random.default_rng(1), 5, 7)
        assert np.linalg.norm(to_angular(H)) == pytest.approx(np.linalg.norm(H), rel=1e-12)

    def test_broadside_concentrates_in_one_entry(self):
        H = np.outer(steering_vector(4, 0.0), steering_vector(16, 0.0).conj())
        H_ad = to_angular(H)
        mags = np.abs(H_ad)
        assert mags[0, 0] == pytest.approx(1.0, abs=1e-12)
        assert np.sum(mags ** 2) - mags[0, 0] ** 2 < 1e-20

    def test_vectorize_scalar(self):
        np.testing.assert_array_equal(vectorize_real(np.array([[2 + 3j]])), [2.0, 3.0])

    def test_vectorize_column_major(self):
        X = np.array([[1 + 1j, 2 + 2j], [3 + 3j, 4 + 4j]])
        np.testing.assert_array_equal(vectorize_real(X), [1, 3, 2, 4, 1, 3, 2, 4])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 9), st.integers(0, 2 ** 31))
    def test_vectorize_round_trip_and_isometry(self, n_rx, n_tx, seed):
        X = _crandn(np.random.default_rng(seed), n_rx, n_tx)
        v = vectorize_real(X)
        np.testing.assert_array_equal(devectorize_real(v, n_rx, n_tx), X)
        assert np.linalg.norm(v) == pytest.approx(np.linalg.norm(X), rel=1e-12)

    def test_batched_vectorize(self):
        X = _crandn(np.random.default_rng(2), 3, 2, 5)
        v = vectorize_real(X)
        assert v.shape == (3, 20)
        np.testing.assert_array_equal(v[1], vectorize_real(X[1]))

    def test_image_view_round_trip(self):
        h = np.random.default_rng(3).standard_normal((5, 2 * 4 * 16))
        img = vec_to_image(h, 4, 16)
        assert img.shape == (5, 2, 4, 16)
        np.testing.assert_array_equal(image_to_vec(img), h)
        # channel 0 is the real part of the angular matrix, channel 1 the imaginary part
        H = devectorize_real(h[0], 4, 16)
        np.testing.assert_array_equal(img[0, 0], H.real)
        np.testing.assert_array_equal(img[0, 1], H.imag)

    def test_devectorize_rejects_length(self):
        with pytest.raises(ValueError):
            devectorize_real(np.zeros(7), 2, 2)


class TestGeneration:
    def test_single_broadside_path(self):
        cfg = SystemConfig(n_tx=8, n_rx=2)
        H = np.outer(steering_vector(cfg.n_rx, 0.0), steering_vector(cfg.n_tx, 0.0).conj())
        assert np.linalg.matrix_rank(H) == 1
        np.testing.assert_allclose(np.abs(H), 1.0 / np.sqrt(cfg.n_rx * cfg.n_tx), atol=1e-15)

    def test_zero_spread_single_path_is_rank_one(self):
        cfg = SystemConfig(n_tx=8, n_rx=4)
        cm = ClusterModel(n_clusters=1, paths_per_cluster=1, angle_spread_deg=0.0)
        s = generate_channel(cfg, cm, np.random.default_rng(0))
        assert np.linalg.matrix_rank(s.spatial, tol=1e-9) == 1

    def test_views_consistent(self):
        s = generate_channel(SystemConfig(), ClusterModel(), np.random.default_rng(4))
        np.testing.assert_allclose(s.angular, to_angular(s.spatial), atol=1e-12)
        np.testing.assert_allclose(devectorize_real(s.real_vec, 4, 16), s.angular, atol=1e-12)

    def test_deterministic(self):
        a = generate_channel(SystemConfig(), ClusterModel(), sample_rng(9, 3))
        b = generate_channel(SystemConfig(), ClusterModel(), sample_rng(9, 3))
        assert a.spatial.tobytes() == b.spatial.tobytes()

    def test_power_normalisation(self):
        data = generate_dataset(SystemConfig(), ClusterModel(n_clusters=3), 10_000, seed=1)
        power = np.mean(data ** 2) * 2   # |h_ij|^2 = Re^2 + Im^2
        assert 0.95 <= power <= 1.05

    def test_splits_disjoint(self):
        tr = generate_dataset(SystemConfig(), ClusterModel(), 5, split="train", seed=0)
        te = generate_dataset(SystemConfig(), ClusterModel(), 5, split="test", seed=0)
        assert not np.any(np.all(np.isclose(tr[:, None], te[None]), axis=-1))

    def test_angular_compressible(self):
        data = generate_dataset(SystemConfig(), ClusterModel(), 200, seed=2)
        energy = np.sort(data ** 2, axis=1)[:, ::-1]
        top = energy[:, : data.shape[1] // 4].sum(1) / energy.sum(1)
        assert np.mean(top) > 0.6

    def test_cluster_model_validation(self):
        with pytest.raises(ValueError):
            ClusterModel(n_clusters=0)
        with pytest.raises(ValueError):
            ClusterModel(n_clusters=2, gain_profile=(1.0, -0.5))
        assert sum(ClusterModel(gain_profile=(2.0, 1.0, 1.0)).gain_profile) == pytest.approx(1.0)

    def test_system_config_validation(self):
        with pytest.raises(ValueError):
            SystemConfig(n_pilot=0)
        assert SystemConfig(n_tx=16, n_pilot=8).pilot_density == 0.5

    def test_from_spatial(self):
        H = _crandn(np.random.default_rng(5), 2, 3)
        s = ChannelSample.from_spatial(H)
        assert s.real_vec.shape == (12,)


class TestDatasetFile:
    def test_round_trip_and_header(self, tmp_path):
        data = np.random.default_rng(0).standard_normal((7, 2 * 2 * 3))
        path = tmp_path / "d.dmce"
        write_dataset(path, data, 2, 3)
        raw = path.read_bytes()
        assert raw[:8] == b"DMCE0001"
        assert np.frombuffer(raw[8:24], dtype="<u4").tolist() == [2, 3, 7, 0]
        assert len(raw) == 24 + 7 * 12 * 4
        back, n_rx, n_tx = read_dataset(path)
        assert (n_rx, n_tx) == (2, 3)
        np.testing.assert_array_equal(back, data.astype(np.float32))

    def test_bit_identical(self, tmp_path):
        cfg, cm = SystemConfig(), ClusterModel()
        for name in ("a", "b"):
            write_dataset(tmp_path / name, generate_dataset(cfg, cm, 20, seed=3), 4, 16)
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x"
        p.write_bytes(b"NOTMAGIC" + bytes(16))
        with pytest.raises(ValueError, match="magic"):
            read_dataset(p)

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "t"
        write_dataset(p, np.zeros((3, 4)), 1, 2)
        p.write_bytes(p.read_bytes()[:-4])
        with pytest.raises(ValueError, match="payload"):
            read_dataset(p)

    def test_missing_file_has_path(self, tmp_path):
        with pytest.raises(OSError, match="nope"):
            read_dataset(tmp_path / "nope")
