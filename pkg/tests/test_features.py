"""Descriptors: texture energies, mel cepstra, PCA reduction."""

import math

import numpy as np
import pytest

from camosig.encode import ImageGrid, ScaleMeta, WavClip, signal_to_audio, signal_to_image
from camosig.features import (
    GistParams,
    MfccParams,
    gist_descriptor,
    mfcc_descriptor,
    mfcc_frames,
    pca_fit,
    pca_reconstruct,
    pca_transform,
    read_descriptors_csv,
    resize_image,
    write_descriptors_csv,
)


def raw_image(pixels, bit_depth=8):
    pixels = np.asarray(pixels)
    side = pixels.shape[0]
    meta = ScaleMeta(
        original_len=side * side,
        padded_len=side * side,
        v_min=0.0,
        v_max=255.0,
        degenerate=False,
        bit_depth=bit_depth,
    )
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    return ImageGrid(side=side, pixels=pixels.astype(dtype), meta=meta)


class TestResize:
    def test_4_to_256(self):
        img = signal_to_image(np.arange(14.0))
        big = resize_image(img, 256)
        assert big.side == 256
        assert big.pixels.shape == (256, 256)

    def test_own_side_identity(self):
        img = signal_to_image(np.arange(14.0))
        same = resize_image(img, 4)
        np.testing.assert_array_equal(same.pixels, img.pixels)

    def test_constant_stays_constant(self):
        img = raw_image(np.full((3, 3), 42))
        big = resize_image(img, 17)
        assert np.all(big.pixels == 42)

    def test_downsize_rejected(self):
        img = raw_image(np.zeros((4, 4)))
        with pytest.raises(ValueError):
            resize_image(img, 3)

    def test_corners_preserved(self):
        px = np.array([[0, 100], [200, 50]])
        big = resize_image(raw_image(px), 9)
        assert big.pixels[0, 0] == 0
        assert big.pixels[0, -1] == 100
        assert big.pixels[-1, 0] == 200
        assert big.pixels[-1, -1] == 50


class TestGist:
    def test_length_512_on_resized(self):
        img = signal_to_image(np.arange(14.0))
        d = gist_descriptor(img, GistParams(resize_to=256, grid=4))
        assert d.shape == (512,)

    def test_length_288_grid3(self):
        img = signal_to_image(np.arange(6.0))
        assert img.side == 3
        d = gist_descriptor(img, GistParams(grid=3))
        assert d.shape == (288,)

    def test_length_law(self):
        img = signal_to_image(np.arange(14.0))
        for grid, scales, orients in [(2, 3, 4), (4, 4, 8), (1, 2, 2)]:
            p = GistParams(grid=grid, scales=scales, orientations=orients)
            assert gist_descriptor(img, p).shape == (grid * grid * scales * orients,)

    def test_uniform_image_is_zero(self):
        img = raw_image(np.full((8, 8), 123))
        d = gist_descriptor(img, GistParams(grid=2))
        assert np.max(np.abs(d)) < 1e-6

    def test_vertical_stripes_select_orientation_zero(self):
        side = 64
        xs = np.arange(side)
        stripes = ((np.sin(2 * np.pi * xs * 8 / side) > 0) * 255)[None, :].repeat(side, 0)
        p = GistParams(grid=4)
        d = gist_descriptor(raw_image(stripes), p)
        per_orientation = d.reshape(p.scales, p.orientations, -1).sum(axis=(0, 2))
        assert int(np.argmax(per_orientation)) == 0

    def test_horizontal_stripes_select_perpendicular(self):
        side = 64
        ys = np.arange(side)
        stripes = ((np.sin(2 * np.pi * ys * 8 / side) > 0) * 255)[:, None].repeat(side, 1)
        p = GistParams(grid=4)
        d = gist_descriptor(raw_image(stripes), p)
        per_orientation = d.reshape(p.scales, p.orientations, -1).sum(axis=(0, 2))
        assert int(np.argmax(per_orientation)) == p.orientations // 2

    def test_grid_larger_than_side_rejected(self):
        img = signal_to_image(np.arange(6.0))  # 3x3
        with pytest.raises(ValueError):
            gist_descriptor(img, GistParams(grid=4))

    def test_single_pixel_directs_to_resize(self):
        img = raw_image(np.array([[7]]))
        with pytest.raises(ValueError, match="resize"):
            gist_descriptor(img, GistParams(grid=1))

    def test_deterministic(self):
        img = signal_to_image(np.linspace(-2, 7, 14))
        a = gist_descriptor(img, GistParams(grid=4))
        b = gist_descriptor(img, GistParams(grid=4))
        np.testing.assert_array_equal(a, b)


def silence_clip(seconds=1.0, rate=8000):
    meta = ScaleMeta(
        original_len=14,
        padded_len=16,
        v_min=0.0,
        v_max=0.0,
        degenerate=True,
        bit_depth=16,
        dwell_ms=25.0,
        sample_rate=rate,
    )
    return WavClip(rate, np.zeros(int(seconds * rate), dtype=np.int16), meta)


class TestMfcc:
    def test_length_20(self):
        clip = signal_to_audio(np.arange(14.0), target_duration_s=9.0)
        d = mfcc_descriptor(clip)
        assert d.shape == (20,)

    def test_silence_closed_form(self):
        p = MfccParams()
        d = mfcc_descriptor(silence_clip(), p)
        expected_c0 = math.sqrt(p.n_mels) * math.log(p.log_floor)
        assert d[0] == pytest.approx(expected_c0, abs=1e-9)
        assert np.max(np.abs(d[1:])) < 1e-9

    def test_deterministic(self):
        clip = signal_to_audio(np.linspace(0, 5, 8), target_duration_s=4.0)
        np.testing.assert_array_equal(mfcc_descriptor(clip), mfcc_descriptor(clip))

    def test_empty_clip_rejected(self):
        with pytest.raises(ValueError):
            mfcc_descriptor(silence_clip(seconds=0.0))

    def test_too_short_clip_rejected(self):
        with pytest.raises(ValueError):
            mfcc_descriptor(silence_clip(seconds=0.01))

    def test_coefficient_count_cap(self):
        with pytest.raises(ValueError):
            MfccParams(n_mels=10, n_coeffs=20)

    def test_prepended_silence_frame_shifts_mean_little(self):
        """Aggregation stability: one frame of silence moves the mean by at
        most two frames' worth of the per-frame deviation envelope."""
        p = MfccParams(frame_ms=25.0, hop_ms=12.5)  # frame = 2 hops, aligned
        clip = signal_to_audio(np.linspace(-3, 6, 14), target_duration_s=9.0)
        frame_len = int(round(clip.sample_rate * p.frame_ms / 1000.0))
        padded = WavClip(
            clip.sample_rate,
            np.concatenate([np.zeros(frame_len, dtype=np.int16), clip.samples]),
            clip.meta,
        )
        base = mfcc_descriptor(clip, p)
        shifted = mfcc_descriptor(padded, p)
        frames = mfcc_frames(padded, p)
        n = frames.shape[0]
        deviation = np.max(np.abs(frames - frames.mean(axis=0)))
        assert np.max(np.abs(shifted - base)) <= 2.0 * deviation / (n - 2) + 1e-12


class TestPca:
    def test_rank_one_line(self):
        t = np.linspace(-1, 1, 20)
        data = np.stack([t, 2 * t], axis=1)
        model = pca_fit(data, 1)
        np.testing.assert_allclose(model.explained_variance_ratio, [1.0], atol=1e-12)

    def test_isotropic_cloud_splits_evenly(self):
        rng = np.random.default_rng(0)
        data = rng.normal(size=(4000, 2))
        model = pca_fit(data, 2)
        np.testing.assert_allclose(model.explained_variance_ratio, [0.5, 0.5], atol=0.05)

    def test_k30_orthonormal(self):
        rng = np.random.default_rng(1)
        data = rng.normal(size=(100, 64))
        model = pca_fit(data, 30)
        assert model.components.shape == (30, 64)
        np.testing.assert_allclose(
            model.components @ model.components.T, np.eye(30), atol=1e-8
        )
        ratios = model.explained_variance_ratio
        assert np.all(np.diff(ratios) <= 1e-12)
        assert ratios.sum() <= 1.0 + 1e-12

    def test_mean_maps_to_zero(self):
        rng = np.random.default_rng(2)
        data = rng.normal(size=(30, 5))
        model = pca_fit(data, 3)
        np.testing.assert_allclose(pca_transform(model, model.mean), np.zeros(3), atol=1e-12)

    def test_component_maps_to_unit_vector(self):
        rng = np.random.default_rng(3)
        data = rng.normal(size=(30, 5))
        model = pca_fit(data, 3)
        out = pca_transform(model, model.mean + model.components[0])
        np.testing.assert_allclose(out, [1.0, 0.0, 0.0], atol=1e-10)

    def test_transformed_variances_match_eigenvalues(self):
        rng = np.random.default_rng(4)
        data = rng.normal(size=(200, 6)) * np.array([5, 3, 2, 1, 0.5, 0.1])
        model = pca_fit(data, 4)
        proj = pca_transform(model, data)
        emp = proj.var(axis=0, ddof=1)
        np.testing.assert_allclose(emp, model.explained_variance, rtol=1e-6)

    def test_full_rank_reconstruction(self):
        rng = np.random.default_rng(5)
        data = rng.normal(size=(50, 8))
        model = pca_fit(data, 8)
        rec = pca_reconstruct(model, pca_transform(model, data))
        assert np.max(np.abs(rec - data)) < 1e-8

    def test_sign_convention(self):
        rng = np.random.default_rng(6)
        data = rng.normal(size=(40, 6))
        model = pca_fit(data, 4)
        for row in model.components:
            assert row[np.argmax(np.abs(row))] > 0

    def test_zero_variance_rejected(self):
        with pytest.raises(ValueError):
            pca_fit(np.ones((10, 3)), 1)

    def test_bad_k_rejected(self):
        rng = np.random.default_rng(7)
        data = rng.normal(size=(5, 3))
        with pytest.raises(ValueError):
            pca_fit(data, 5)

    def test_dimension_mismatch_rejected(self):
        rng = np.random.default_rng(8)
        model = pca_fit(rng.normal(size=(10, 4)), 2)
        with pytest.raises(ValueError):
            pca_transform(model, np.zeros(5))


class TestDescriptorCsv:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(9)
        vectors = rng.normal(size=(6, 4))
        labels = np.array([0, 1, 1, 0, 1, 0])
        path = tmp_path / "d.csv"
        write_descriptors_csv(path, vectors, labels)
        v2, l2 = read_descriptors_csv(path)
        np.testing.assert_array_equal(v2, vectors)
        np.testing.assert_array_equal(l2, labels)
