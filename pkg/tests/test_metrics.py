import math

import numpy as np
import pytest
from skimage.metrics import structural_similarity

from mpi_smr.metrics import (
    component_report,
    format_table,
    image_metrics,
    nrmse,
    nrmse_batch,
    psnr,
    read_csv,
    ssim3d,
    table_summary,
    write_csv,
    write_table_json,
)
from mpi_smr.volume import ConcentrationImage, SystemMatrix


class TestNrmse:
    def test_identical(self):
        x = np.random.default_rng(0).standard_normal((3, 3, 3))
        assert nrmse(x, x) == 0

    def test_constant_offset(self):
        ref = np.zeros((4, 4, 4))
        ref[0, 0, 0] = 1.0
        assert nrmse(ref + 0.2, ref) == pytest.approx(0.2)

    def test_hand_formula(self):
        rng = np.random.default_rng(1)
        e = rng.standard_normal(10) + 1j * rng.standard_normal(10)
        r = rng.standard_normal(10) + 1j * rng.standard_normal(10)
        manual = math.sqrt(sum(abs(a - b) ** 2 for a, b in zip(e, r)) / 10) / max(abs(v) for v in r)
        assert nrmse(e, r) == pytest.approx(manual, rel=1e-12)

    def test_normalizers(self):
        ref = np.array([1.0, 3.0, 5.0])
        est = ref + 1.0
        assert nrmse(est, ref, "max") == pytest.approx(1 / 5)
        assert nrmse(est, ref, "range") == pytest.approx(1 / 4)
        assert nrmse(est, ref, "rms") == pytest.approx(1 / math.sqrt(35 / 3))
        with pytest.raises(ValueError):
            nrmse(est, ref, "mean")

    def test_scale_invariance(self):
        rng = np.random.default_rng(2)
        e, r = rng.standard_normal(20), rng.standard_normal(20)
        assert nrmse(7.5 * e, 7.5 * r) == pytest.approx(nrmse(e, r))

    def test_zero_reference(self):
        with pytest.raises(ValueError):
            nrmse(np.ones(3), np.zeros(3))

    def test_batch_matches_single(self):
        rng = np.random.default_rng(3)
        e, r = rng.standard_normal((4, 2, 2, 2)), rng.standard_normal((4, 2, 2, 2))
        np.testing.assert_allclose(nrmse_batch(e, r), [nrmse(a, b) for a, b in zip(e, r)])


class TestPsnr:
    def test_identical_is_inf(self):
        x = np.ones((2, 2, 2))
        assert psnr(x, x) == math.inf

    def test_zero_db(self):
        ref = np.zeros((2, 2, 2))
        ref[0, 0, 0] = 2.0
        assert psnr(ref + 2.0, ref) == pytest.approx(0.0)

    def test_monotone_in_noise(self):
        rng = np.random.default_rng(4)
        ref = rng.random((8, 8, 8))
        noise = rng.standard_normal((8, 8, 8))
        values = [psnr(ref + s * noise, ref) for s in (0.01, 0.05, 0.2)]
        assert values[0] > values[1] > values[2]


class TestSsim:
    def test_identical(self):
        x = np.random.default_rng(5).random((9, 9, 9))
        assert ssim3d(x, x) == pytest.approx(1.0)

    def test_inverted_binary(self):
        rng = np.random.default_rng(6)
        ref = (rng.random((8, 8, 8)) > 0.5).astype(float)
        assert ssim3d(1 - ref, ref) < 0.1

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_skimage(self, seed):
        rng = np.random.default_rng(seed)
        ref = rng.random((12, 11, 10))
        est = ref + 0.1 * rng.standard_normal(ref.shape)
        dr = float(np.abs(ref).max())
        expected = structural_similarity(est, ref, win_size=7, data_range=dr, use_sample_covariance=False,
                                         gaussian_weights=False)
        assert ssim3d(est, ref) == pytest.approx(expected, abs=1e-10)

    def test_slice_mode_matches_skimage(self):
        rng = np.random.default_rng(9)
        ref = rng.random((3, 10, 10))
        est = ref + 0.1 * rng.standard_normal(ref.shape)
        dr = float(ref.max())
        expected = np.mean([structural_similarity(est[z], ref[z], win_size=7, data_range=dr,
                                                  use_sample_covariance=False) for z in range(3)])
        assert ssim3d(est, ref, mode="slice") == pytest.approx(expected, abs=1e-10)

    def test_window_shrinks_for_small_volumes(self, caplog):
        rng = np.random.default_rng(7)
        x = rng.random((4, 5, 6))
        with caplog.at_level("INFO"):
            value = ssim3d(x + 0.01, x)
        assert -1 <= value <= 1 and "smaller than SSIM window" in caplog.text

    def test_range(self):
        rng = np.random.default_rng(8)
        for _ in range(5):
            a, b = rng.standard_normal((8, 8, 8)), rng.standard_normal((8, 8, 8))
            assert -1 <= ssim3d(a, b) <= 1


class TestReports:
    def _sm(self, data):
        return SystemMatrix(data, [1.0, 2.0], [3.0, 4.0])

    def test_component_report_truth(self):
        data = np.random.default_rng(0).standard_normal((2, 2, 2, 2)) + 0j
        rows = component_report(self._sm(data), self._sm(data))
        assert [r["nrmse"] for r in rows] == [0.0, 0.0, 0.0]
        assert rows[-1]["k"] == "mean"

    def test_component_report_two_components(self):
        truth = np.zeros((2, 2, 2, 2), complex)
        truth[0, 0, 0, 0] = 2.0
        truth[1, 0, 0, 0] = 1.0
        est = truth.copy()
        est[0] += 0.5
        rows = component_report(self._sm(est), self._sm(truth))
        assert rows[0]["nrmse"] == pytest.approx(0.25)
        assert rows[1]["nrmse"] == 0.0
        assert rows[2]["nrmse"] == pytest.approx(0.125)
        assert rows[0]["frequency"] == 1.0 and rows[0]["snr"] == 3.0

    def test_component_report_mismatch(self):
        a = self._sm(np.ones((2, 2, 2, 2)))
        b = SystemMatrix(np.ones((1, 2, 2, 2)), [1.0], [1.0])
        with pytest.raises(ValueError):
            component_report(a, b)

    def test_csv_roundtrip_keeps_full_precision(self, tmp_path):
        rows = [{"k": 0, "nrmse": 0.1 + 1e-17 * 3}, {"k": 1, "nrmse": 1 / 3}]
        back = read_csv(write_csv(rows, tmp_path / "m.csv"))
        assert float(back[1]["nrmse"]) == 1 / 3

    def test_table_layout(self, tmp_path):
        rows = []
        for method, base in (("SMRnet 8x", 0.1), ("CS 8x", 0.2)):
            for i, phantom in enumerate(("shape", "resolution", "concentration")):
                for metric, v in (("NRMSE", base + i), ("SSIM", 0.9), ("PSNR", 30.0 + i)):
                    rows.append({"method": method, "phantom": phantom, "metric": metric, "value": v})
        table = table_summary(rows)
        assert table["SMRnet 8x"]["Avg."]["NRMSE"] == pytest.approx(1.1)
        text = format_table(table)
        lines = text.splitlines()
        assert len(lines) == 3 and lines[0].startswith("method\tshape:NRMSE")
        assert "Avg.:PSNR" in lines[0]
        assert write_table_json(table, tmp_path / "t.json").exists()

    def test_image_metrics(self):
        ref = ConcentrationImage(np.random.default_rng(1).random((8, 8, 8)))
        rows = image_metrics(ref, ref, "shape")
        values = {r.metric: r.value for r in rows}
        assert values["NRMSE"] == 0 and values["SSIM"] == pytest.approx(1) and values["PSNR"] == math.inf
