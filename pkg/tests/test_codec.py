import colorsys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpi_smr.codec import (
    RgbVolume,
    decode,
    decode_array,
    encode,
    encode_array,
    export_png_slices,
    hue_to_rgb,
    rgb_to_hue,
)
from mpi_smr.volume import ComplexVolume


def vol(values):
    return ComplexVolume(np.asarray(values, dtype=complex).reshape(1, 1, -1))


class TestEncode:
    def test_phase_zero_is_red(self):
        r = encode(vol([1.0]))
        np.testing.assert_allclose(r.data[:, 0, 0, 0], [1, 0, 0])

    def test_zero_is_black(self):
        r = encode(vol([0.0, 1.0]))
        np.testing.assert_allclose(r.data[:, 0, 0, 0], [0, 0, 0])

    def test_quarter_turn(self):
        r = encode(vol([1j]))
        np.testing.assert_allclose(r.data[:, 0, 0, 0], [0.5, 1, 0], atol=1e-15)

    def test_all_zero_flagged(self):
        r = encode(vol([0, 0]))
        assert r.zero_volume and r.amp_scale == 1.0 and not np.any(r.data)

    def test_hue_formula_matches_colorsys(self):
        hues = np.linspace(0, 359.9, 97)
        ours = hue_to_rgb(hues)
        ref = np.array([colorsys.hsv_to_rgb(h / 360, 1, 1) for h in hues]).T
        np.testing.assert_allclose(ours, ref, atol=1e-12)

    def test_inverse_hue_matches_colorsys(self):
        rng = np.random.default_rng(0)
        rgb = rng.random((3, 200))
        ref = np.array([colorsys.rgb_to_hsv(*c)[0] * 360 for c in rgb.T])
        np.testing.assert_allclose(rgb_to_hue(rgb), ref, atol=1e-9)

    def test_rgb_volume_range_checked(self):
        with pytest.raises(ValueError):
            RgbVolume(np.full((3, 1, 1, 1), 1.5), 1.0)
        with pytest.raises(ValueError):
            RgbVolume(np.zeros((3, 1, 1, 1)), 0.0)

    def test_leading_axes(self):
        data = np.ones((5, 2, 2, 2)) * 1j
        rgb, amp = encode_array(data)
        assert rgb.shape == (5, 3, 2, 2, 2) and amp == 1.0
        np.testing.assert_allclose(decode_array(rgb, amp), data, atol=1e-12)


class TestDecode:
    def test_black_decodes_to_zero(self):
        assert decode(np.zeros((3, 1, 1, 1)), 3.0).data[0, 0, 0] == 0

    def test_red_with_scale(self):
        out = decode(np.array([1.0, 0, 0]).reshape(3, 1, 1, 1), 2.5)
        assert out.data[0, 0, 0] == pytest.approx(2.5 + 0j)

    def test_raw_requires_scale(self):
        with pytest.raises(ValueError):
            decode(np.zeros((3, 1, 1, 1)))

    def test_roundtrip_ten_thousand(self):
        rng = np.random.default_rng(42)
        z = (rng.standard_normal(10_000) + 1j * rng.standard_normal(10_000)) * 10 ** rng.uniform(-3, 3, 10_000)
        v = ComplexVolume(z.reshape(10, 10, 100))
        back = decode(encode(v)).data
        rel = np.abs(back - v.data) / np.abs(v.data)
        assert rel.max() <= 1e-6

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=6, max_size=60).filter(lambda a: len(a) % 3 == 0))
    def test_total_on_arbitrary_input(self, vals):
        rgb = np.asarray(vals).reshape(3, 1, 1, -1)
        out = decode(rgb, 1.7).data
        assert np.all(np.isfinite(out)) and np.abs(out).max() <= 1.7 + 1e-12


class TestEquivariance:
    @settings(max_examples=40, deadline=None)
    @given(st.floats(-np.pi, np.pi), st.integers(0, 2**31))
    def test_phase_rotation_rotates_hue(self, theta, seed):
        rng = np.random.default_rng(seed)
        z = rng.standard_normal(20) + 1j * rng.standard_normal(20)
        a, b = encode(vol(z)), encode(vol(np.exp(1j * theta) * z))
        np.testing.assert_allclose(a.data.max(axis=0), b.data.max(axis=0), atol=1e-12)
        ha = rgb_to_hue(a.data / a.data.max(axis=0))
        hb = rgb_to_hue(b.data / b.data.max(axis=0))
        diff = np.mod(hb - ha - np.degrees(theta) + 180, 360) - 180
        assert np.abs(diff).max() < 1e-9

    @settings(max_examples=40, deadline=None)
    @given(st.floats(1e-3, 1e3), st.integers(0, 2**31))
    def test_amplitude_linearity(self, alpha, seed):
        rng = np.random.default_rng(seed)
        z = rng.standard_normal(20) + 1j * rng.standard_normal(20)
        a, b = encode(vol(z)), encode(vol(alpha * z))
        np.testing.assert_allclose(b.data, a.data, atol=1e-12)
        assert b.amp_scale == pytest.approx(alpha * a.amp_scale, rel=1e-12)


def test_png_export(tmp_path):
    r = encode(ComplexVolume(np.exp(1j * np.linspace(0, 6, 27)).reshape(3, 3, 3)))
    paths = export_png_slices(r, tmp_path)
    assert len(paths) == 3 and all(p.exists() for p in paths)
