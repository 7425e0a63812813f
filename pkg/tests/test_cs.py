import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpi_smr.cs import (
    CsParams,
    cs_param_sweep,
    dct3,
    idct3,
    normalize_measurement,
    recover_cs,
    soft_threshold,
    split_bregman,
)
from mpi_smr.metrics import nrmse_batch
from mpi_smr.sampling import poisson_pattern, regular_pattern
from mpi_smr.volume import ComplexVolume, SystemMatrix


def naive_dct_matrix(n):
    """Orthonormal DCT-II basis written out from its definition."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    m[0] /= np.sqrt(2.0)
    return m


def naive_dct3(v):
    """Direct O(N^2) sum over all voxel/coefficient pairs."""
    mats = [naive_dct_matrix(n) for n in v.shape]
    full = np.einsum("ai,bj,ck->abcijk", *mats).reshape(v.size, v.size)
    return (full @ v.ravel()).reshape(v.shape)


def sparse_signal(seed, dims=(8, 8, 8), n_coef=3):
    rng = np.random.default_rng(seed)
    coef = np.zeros(dims, complex)
    idx = rng.choice(int(np.prod(dims)), n_coef, replace=False)
    coef.ravel()[idx] = rng.standard_normal(n_coef) + 1j * rng.standard_normal(n_coef)
    return idct3(coef), coef


def rel_err(a, b):
    return np.sqrt(np.mean(np.abs(a - b) ** 2)) / np.abs(b).max()


class TestDct:
    def test_constant_volume_has_only_dc(self):
        n, c = 5, 2.5
        coef = dct3(np.full((n, n, n), c))
        assert coef[0, 0, 0] == pytest.approx(c * n**1.5, abs=1e-12)
        coef[0, 0, 0] = 0
        assert np.abs(coef).max() < 1e-12

    def test_matches_naive_sum(self):
        rng = np.random.default_rng(3)
        v = rng.standard_normal((4, 4, 4)) + 1j * rng.standard_normal((4, 4, 4))
        np.testing.assert_allclose(dct3(v), naive_dct3(v), atol=1e-10)

    def test_nonuniform_dims_match_naive_sum(self):
        rng = np.random.default_rng(4)
        v = rng.standard_normal((3, 4, 5))
        np.testing.assert_allclose(dct3(v), naive_dct3(v), atol=1e-10)

    def test_volume_wrapper(self):
        v = ComplexVolume(np.arange(27.0).reshape(3, 3, 3))
        out = idct3(dct3(v))
        assert isinstance(out, ComplexVolume)
        np.testing.assert_allclose(out.data, v.data, atol=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31))
    def test_inverse_and_parseval(self, nz, ny, nx, seed):
        rng = np.random.default_rng(seed)
        v = rng.standard_normal((nz, ny, nx)) + 1j * rng.standard_normal((nz, ny, nx))
        coef = dct3(v)
        assert np.linalg.norm(coef) == pytest.approx(np.linalg.norm(v), rel=1e-10)
        np.testing.assert_allclose(idct3(coef), v, atol=1e-10)


class TestNormalize:
    def test_peak_maps_to_one(self):
        y = np.array([1 + 1j, -3j, 0.5])
        yn, s = normalize_measurement(y)
        assert s == pytest.approx(3.0)
        assert np.abs(yn).max() == pytest.approx(1.0)

    def test_zero_vector(self):
        yn, s = normalize_measurement(np.zeros(4, complex))
        assert s == 1.0 and not np.any(yn)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            normalize_measurement(np.zeros(0))

    def test_scale_equivariance(self):
        s_true, _ = sparse_signal(11)
        p = poisson_pattern((8, 8, 8), 256, 11)
        y = s_true.ravel()[p.indices] * 37.0
        # both solves run to convergence so only the scaling differs
        cp = CsParams(outer_iters=200, tol=1e-11)
        direct = split_bregman(y, p, cp).data
        yn, scale = normalize_measurement(y)
        via = split_bregman(yn, p, cp).data * scale
        assert rel_err(via, direct) < 1e-6


class TestSoftThreshold:
    def test_keeps_phase_shrinks_magnitude(self):
        z = np.array([3 * np.exp(0.7j), 0.5j, 0])
        out = soft_threshold(z, 1.0)
        assert out[0] == pytest.approx(2 * np.exp(0.7j))
        assert out[1] == 0 and out[2] == 0


class TestSplitBregman:
    def test_full_sampling_returns_data(self):
        rng = np.random.default_rng(0)
        v = rng.standard_normal((4, 4, 4)) + 1j * rng.standard_normal((4, 4, 4))
        p = regular_pattern((4, 4, 4), 1)
        out, info = split_bregman(v.ravel(), p, return_info=True)
        np.testing.assert_array_equal(out.data, v)
        assert info.converged and info.outer_iterations == 1

    def test_zero_measurement_flagged(self):
        p = poisson_pattern((6, 6, 6), 50, 0)
        out, info = split_bregman(np.zeros(p.count), p, return_info=True)
        assert info.zero_input and not np.any(out.data)

    def test_length_mismatch(self):
        p = poisson_pattern((6, 6, 6), 50, 0)
        with pytest.raises(ValueError):
            split_bregman(np.ones(p.count + 1), p)

    @pytest.mark.parametrize("seed", range(5))
    def test_sparse_exact_recovery(self, seed):
        s_true, coef = sparse_signal(seed)
        p = poisson_pattern((8, 8, 8), 256, seed)
        yn, scale = normalize_measurement(s_true.ravel()[p.indices])
        out, info = split_bregman(yn, p, return_info=True)
        rec = out.data * scale
        assert info.converged and info.residual <= 1e-6
        assert rel_err(rec, s_true) <= 1e-3
        # recovered signal is no less sparse than the truth
        assert np.abs(dct3(rec)).sum() <= np.abs(coef).sum() * (1 + 1e-3)

    def test_residual_moving_average_decreases(self):
        s_true, _ = sparse_signal(21, dims=(10, 10, 10), n_coef=12)
        p = poisson_pattern((10, 10, 10), 300, 21)
        yn, _ = normalize_measurement(s_true.ravel()[p.indices])
        _, info = split_bregman(yn, p, CsParams(tol=1e-12, outer_iters=40), return_info=True)
        h = np.asarray(info.residual_history)
        ma = np.convolve(h, np.ones(5) / 5, mode="valid")
        assert np.all(np.diff(ma) <= 1e-12)

    @settings(max_examples=10, deadline=None)
    @given(st.floats(0, 2 * np.pi), st.integers(0, 1000))
    def test_global_phase_equivariance(self, theta, seed):
        s_true, _ = sparse_signal(seed)
        p = poisson_pattern((8, 8, 8), 256, seed % 7)
        yn, _ = normalize_measurement(s_true.ravel()[p.indices])
        base = split_bregman(yn, p).data
        rot = split_bregman(np.exp(1j * theta) * yn, p).data
        assert rel_err(rot, np.exp(1j * theta) * base) < 1e-6


def _smooth_matrix(k=4, dims=(8, 8, 8)):
    z, y, x = np.meshgrid(*[np.linspace(0, 1, n) for n in dims], indexing="ij")
    data = np.stack([np.cos(np.pi * (j + 1) * x) * np.exp(1j * np.pi * j * y) * (1 + z) for j in range(k)])
    return SystemMatrix(data, np.arange(k) * 1e3, np.full(k, 10.0))


class TestRecovery:
    def test_recover_cs_beats_zero_filling(self):
        sm = _smooth_matrix()
        p = poisson_pattern(sm.dims, sm.n_voxels // 4, 1)
        rec, rows = recover_cs(sm, p)
        zf = np.zeros_like(sm.data)
        zf.reshape(len(sm), -1)[:, p.indices] = sm.as_matrix()[:, p.indices]
        assert nrmse_batch(rec.data, sm.data).mean() < 0.5 * nrmse_batch(zf, sm.data).mean()
        assert len(rows) == len(sm) and rec.meta["recovered_by"] == "cs"

    def test_jobs_do_not_change_result(self):
        sm = _smooth_matrix(3)
        p = poisson_pattern(sm.dims, 128, 2)
        a, _ = recover_cs(sm, p, jobs=1)
        b, _ = recover_cs(sm, p, jobs=3)
        np.testing.assert_array_equal(a.data, b.data)

    def test_sweep_single_point(self):
        sm = _smooth_matrix(2)
        p = poisson_pattern(sm.dims, 128, 2)
        cp = CsParams(mu=5)
        best, table = cs_param_sweep(sm, p, [cp])
        assert best == cp and len(table) == 1

    def test_sweep_prefers_converged_point(self):
        sm = _smooth_matrix(2)
        p = poisson_pattern(sm.dims, 128, 2)
        failing = CsParams(outer_iters=1, inner_iters=1, tol=1e-12)
        ok = CsParams(tol=1.0)
        best, table = cs_param_sweep(sm, p, [failing, ok])
        assert best == ok
        assert table[0]["converged_fraction"] == 0.0 and table[1]["converged_fraction"] == 1.0

    def test_params_validated(self):
        with pytest.raises(ValueError):
            CsParams(mu=0)
        with pytest.raises(ValueError):
            CsParams(outer_iters=0)
