import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpi_smr.recon import ReconParams, assemble, effective_lambda, kaczmarz, reconstruct_phantom
from mpi_smr.volume import ConcentrationImage, Measurement, SystemMatrix


def complex_matrix(rng, m, n):
    return rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))


def raw(**kw):
    return ReconParams(enforce_real_nonneg=False, **kw)


class TestAssemble:
    def _sm(self):
        data = np.arange(2 * 8, dtype=float).reshape(2, 2, 2, 2) + 1j
        return SystemMatrix(data, [10.0, 20.0], [1.0, 5.0])

    def test_two_component_case(self):
        sm = self._sm()
        m = Measurement([1 + 0j, 2 + 0j], [10.0, 20.0])
        a, rhs, kept = assemble(sm, m, 3.0)
        np.testing.assert_array_equal(kept, [1])
        np.testing.assert_array_equal(a, sm.data[1].reshape(1, -1))
        np.testing.assert_array_equal(rhs, [2])

    def test_threshold_zero_keeps_all(self):
        sm = self._sm()
        a, rhs, kept = assemble(sm, Measurement([1, 2], [10.0, 20.0]), 0.0)
        assert a.shape == (2, 8) and rhs.size == 2

    def test_frequency_mismatch(self):
        with pytest.raises(ValueError, match="frequency"):
            assemble(self._sm(), Measurement([1, 2], [10.0, 21.0]), 0.0)
        with pytest.raises(ValueError, match="frequency"):
            assemble(self._sm(), Measurement([1], [10.0]), 0.0)


class TestKaczmarz:
    def test_identity_single_sweep(self):
        rhs = np.array([1 + 2j, -3, 0.5j, 4])
        c = kaczmarz(np.eye(4), rhs, raw(lambda_rel=0.0, iterations=1))
        np.testing.assert_allclose(c, rhs, atol=1e-15)

    @pytest.mark.parametrize("seed", range(3))
    def test_square_system_matches_direct_solve(self, seed):
        rng = np.random.default_rng(seed)
        a = complex_matrix(rng, 6, 6) + 6 * np.eye(6)
        x = complex_matrix(rng, 6, 1).ravel()
        c = kaczmarz(a, a @ x, raw(lambda_rel=0.0, iterations=200))
        np.testing.assert_allclose(c, np.linalg.solve(a, a @ x), atol=1e-6)

    @pytest.mark.parametrize("seed", range(3))
    def test_regularised_matches_normal_equations(self, seed):
        rng = np.random.default_rng(seed)
        a = complex_matrix(rng, 8, 4)
        u = complex_matrix(rng, 8, 1).ravel()
        rp = raw(lambda_rel=0.1, iterations=500)
        lam = effective_lambda(a, rp.lambda_rel)
        direct = np.linalg.solve(a.conj().T @ a + lam * np.eye(4), a.conj().T @ u)
        np.testing.assert_allclose(kaczmarz(a, u, rp), direct, atol=1e-4)

    def test_effective_lambda_uses_mean_row_energy(self):
        a = np.array([[3.0, 4.0], [0.0, 1.0]])
        assert effective_lambda(a, 0.5) == pytest.approx(0.5 * (25 + 1) / 2)

    def test_residual_non_increasing(self):
        rng = np.random.default_rng(5)
        a = complex_matrix(rng, 6, 6) + 5 * np.eye(6)
        u = a @ complex_matrix(rng, 6, 1).ravel()
        res = [np.linalg.norm(a @ kaczmarz(a, u, raw(lambda_rel=0.0, iterations=s)) - u) for s in range(1, 30)]
        assert np.all(np.diff(res) <= 1e-12 * res[0])

    def test_row_scaling_invariance(self):
        rng = np.random.default_rng(6)
        a = complex_matrix(rng, 5, 5) + 5 * np.eye(5)
        u = a @ complex_matrix(rng, 5, 1).ravel()
        scale = np.array([1.0, -3.0, 0.2j, 7.0, 1 + 1j])
        rp = raw(lambda_rel=0.0, iterations=400)
        np.testing.assert_allclose(kaczmarz(a * scale[:, None], u * scale, rp), kaczmarz(a, u, rp), atol=1e-6)

    def test_zero_rows_skipped(self, caplog):
        a = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 2.0]])
        with caplog.at_level("INFO"):
            c = kaczmarz(a, np.array([1.0, 5.0, 4.0]), raw(lambda_rel=0.0, iterations=1))
        np.testing.assert_allclose(c, [1.0, 2.0])
        assert "zero-norm" in caplog.text

    def test_shuffled_order_reaches_same_solution(self):
        rng = np.random.default_rng(8)
        a = complex_matrix(rng, 6, 6) + 6 * np.eye(6)
        u = a @ complex_matrix(rng, 6, 1).ravel()
        c = kaczmarz(a, u, raw(lambda_rel=0.0, iterations=300, shuffle=True, seed=3))
        np.testing.assert_allclose(c, np.linalg.solve(a, u), atol=1e-6)

    def test_empty_system(self):
        with pytest.raises(ValueError):
            kaczmarz(np.zeros((0, 3)), np.zeros(0))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31))
    def test_output_real_nonnegative(self, m, n, seed):
        rng = np.random.default_rng(seed)
        c = kaczmarz(complex_matrix(rng, m, n), complex_matrix(rng, m, 1).ravel())
        assert not np.iscomplexobj(c) and np.all(c >= 0)


class TestReconstructPhantom:
    def _system(self, seed=0, k=120, dims=(4, 4, 4)):
        rng = np.random.default_rng(seed)
        data = rng.standard_normal((k,) + dims) + 1j * rng.standard_normal((k,) + dims)
        return SystemMatrix(data, np.arange(k, dtype=float), np.full(k, 10.0))

    def test_zero_measurement_gives_zero_image(self):
        sm = self._system()
        img = reconstruct_phantom(sm, Measurement(np.zeros(len(sm)), sm.frequencies), variant="net")
        assert not np.any(img.values) and img.meta["variant"] == "net"

    def test_forward_model_roundtrip_finds_support(self):
        sm = self._system()
        truth = np.zeros(sm.dims)
        truth[1, 2, 1] = 1.0
        truth[3, 0, 2] = 0.5
        m = Measurement(sm.as_matrix() @ truth.ravel(), sm.frequencies)
        img = reconstruct_phantom(sm, m, ReconParams(lambda_rel=1e-3, iterations=30))
        assert isinstance(img, ConcentrationImage)
        top2 = set(np.argsort(img.values.ravel())[-2:])
        assert top2 == set(np.flatnonzero(truth))
        np.testing.assert_allclose(img.values, truth, atol=0.05)

    def test_params_validated(self):
        with pytest.raises(ValueError):
            ReconParams(iterations=0)
        with pytest.raises(ValueError):
            ReconParams(lambda_rel=-1)
