import json

import numpy as np
import pytest

from splatedit.errors import InputError, LocalizationFailedError, StageError
from splatedit.localize import (
    LocalizationConfig, Mask2D, Mask3D, bilinear_resize, inverse_render_masks,
    load_mask2d, load_mask3d, locate_2d, relevance_from_noise, save_mask2d,
    save_mask3d, select_frontal, smooth_and_threshold,
)
from splatedit.oracles import MockNoisePredictor
from splatedit.scene import GaussianCloud

from conftest import make_camera, random_cloud


def gaussian_kernel_1d(sigma, truncate=3.0):
    r = int(truncate * sigma + 0.5)
    x = np.arange(-r, r + 1)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


class TestRelevance:
    def test_identical_tensors_zero_grid(self):
        t = np.random.default_rng(0).normal(size=(4, 6, 6))
        assert not relevance_from_noise(t, t).any()

    def test_single_cell_difference_is_two_over_channels(self):
        c = 4
        a = np.zeros((c, 5, 5))
        b = a.copy()
        b[1, 2, 3] += 2.0
        raw = np.mean(np.abs(a - b), axis=0)
        assert raw[2, 3] == pytest.approx(2.0 / c)
        rel = relevance_from_noise(a, b)
        assert rel[2, 3] == pytest.approx(1.0)  # sole peak normalizes to 1
        assert np.count_nonzero(rel) == 1

    def test_matches_reference_computation(self, rng):
        a = rng.normal(size=(4, 8, 8))
        b = rng.normal(size=(4, 8, 8))
        ref = np.mean(np.abs(a - b), axis=0)
        ref = (ref - ref.min()) / (ref.max() - ref.min())
        assert np.allclose(relevance_from_noise(a, b), ref)

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            relevance_from_noise(np.zeros((4, 4, 4)), np.zeros((4, 4, 5)))

    def test_channel_permutation_equivariance(self, rng):
        a = rng.normal(size=(4, 6, 6))
        b = rng.normal(size=(4, 6, 6))
        perm = [2, 0, 3, 1]
        assert np.allclose(relevance_from_noise(a, b),
                           relevance_from_noise(a[perm], b[perm]))

    def test_upsampling_to_image_resolution(self):
        a = np.zeros((1, 2, 2))
        b = np.array([[[0.0, 1.0], [2.0, 3.0]]])
        rel = relevance_from_noise(a, b, out_shape=(3, 3))
        # corner-aligned bilinear of [[0,1],[2,3]] then minmax
        expected = np.array([[0.0, 0.5, 1.0], [1.0, 1.5, 2.0], [2.0, 2.5, 3.0]]) / 3.0
        assert np.allclose(rel, expected)


class TestBilinearResize:
    def test_identity_when_same_shape(self, rng):
        g = rng.normal(size=(5, 7))
        assert np.array_equal(bilinear_resize(g, (5, 7)), g)

    def test_corners_preserved(self, rng):
        g = rng.normal(size=(4, 4))
        up = bilinear_resize(g, (9, 9))
        assert up[0, 0] == pytest.approx(g[0, 0])
        assert up[-1, -1] == pytest.approx(g[-1, -1])
        assert up[0, -1] == pytest.approx(g[0, -1])


class TestSmoothAndThreshold:
    def test_gamma_zero_all_one(self, rng):
        rel = rng.uniform(0, 1, (8, 8))
        cfg = LocalizationConfig(gamma=0.0)
        assert smooth_and_threshold(rel, cfg).values.all()

    def test_gamma_zero_all_one_even_on_zero_relevance(self):
        cfg = LocalizationConfig(gamma=0.0)
        assert smooth_and_threshold(np.zeros((6, 6)), cfg).values.all()

    def test_gamma_one_keeps_saturated_interior(self):
        rel = np.zeros((20, 20))
        rel[5:15, 5:15] = 1.0
        cfg = LocalizationConfig(gamma=1.0, filter_sigma=1.0)
        mask = smooth_and_threshold(rel, cfg).values
        assert mask[10, 10]
        assert not mask[0, 0]
        assert mask.sum() < 100  # strictly inside the saturated block

    def test_single_hot_pixel_diluted_below_threshold(self):
        rel = np.zeros((25, 25))
        rel[12, 12] = 1.0
        cfg = LocalizationConfig(gamma=0.6, filter_sigma=2.0)
        mask = smooth_and_threshold(rel, cfg).values
        assert not mask.any()
        # independent check with an explicit separable kernel
        k = gaussian_kernel_1d(2.0)
        peak = k.max() ** 2  # blurred center value of a unit impulse
        assert peak < 0.6

    def test_blur_matches_explicit_kernel(self):
        rel = np.zeros((25, 25))
        rel[12, 12] = 1.0
        cfg = LocalizationConfig(gamma=0.0, filter_sigma=2.0)
        mask2d = smooth_and_threshold(rel, cfg)
        from scipy.ndimage import gaussian_filter
        blurred = gaussian_filter(rel, 2.0, truncate=3.0, mode="reflect")
        k = gaussian_kernel_1d(2.0)
        expected = np.outer(k, k)  # impulse response away from borders
        r = len(k) // 2
        assert np.allclose(blurred[12 - r:12 + r + 1, 12 - r:12 + r + 1], expected,
                           atol=1e-12)

    def test_monotone_in_gamma(self, rng):
        for _ in range(10):
            rel = rng.uniform(0, 1, (12, 12))
            lo = smooth_and_threshold(rel, LocalizationConfig(gamma=0.3)).values
            hi = smooth_and_threshold(rel, LocalizationConfig(gamma=0.7)).values
            assert not np.any(hi & ~lo)  # hi is a subset of lo

    def test_no_blur_when_sigma_zero(self, rng):
        rel = rng.uniform(0, 1, (6, 6))
        cfg = LocalizationConfig(gamma=0.5, filter_sigma=0.0)
        assert np.array_equal(smooth_and_threshold(rel, cfg).values, rel >= 0.5)


class TestLocate2D:
    def test_equal_predictions_empty_mask(self):
        oracle = MockNoisePredictor(region=np.zeros((4, 4), dtype=bool), amplitude=0.0)
        image = np.zeros((32, 32, 3))
        mask = locate_2d(image, "repaint it", oracle, LocalizationConfig())
        assert not mask.values.any()

    def test_blob_recovered_at_default_gamma(self):
        region = np.zeros((8, 8), dtype=bool)
        region[2:6, 2:6] = True
        oracle = MockNoisePredictor(region=region, amplitude=5.0)
        image = np.zeros((64, 64, 3))
        cfg = LocalizationConfig(filter_sigma=1.0)
        mask = locate_2d(image, "add a hat", oracle, cfg, view_index=3)
        assert mask.view_index == 3
        assert mask.values[32, 32]          # blob center (latent cell 4 -> px 32)
        assert not mask.values[0, 0]
        assert not mask.values[63, 63]

    def test_defaults_match_training_recipe(self):
        cfg = LocalizationConfig()
        assert cfg.tau == 600
        assert cfg.gamma == pytest.approx(0.6)

    def test_oracle_failure_carries_view_index(self):
        class Broken:
            def predict_noise(self, *a):
                raise RuntimeError("backend down")

        with pytest.raises(StageError) as err:
            locate_2d(np.zeros((16, 16, 3)), "x", Broken(), LocalizationConfig(),
                      view_index=7)
        assert err.value.view_index == 7


class TestInverseRenderMasks:
    def test_fully_masked_gaussian_scores_one(self, rng):
        cam = make_camera()
        cloud = random_cloud(rng, 3)
        masks = [Mask2D(np.ones((16, 16), dtype=bool), view_index=0)]
        m3 = inverse_render_masks(cloud, [cam], masks, LocalizationConfig())
        visible = m3.vote_weights > 0
        assert m3.values[visible].all()

    def test_uncovered_gaussian_scores_zero(self, rng):
        cam = make_camera()
        cloud = random_cloud(rng, 3)
        masks = [Mask2D(np.zeros((16, 16), dtype=bool), view_index=0)]
        m3 = inverse_render_masks(cloud, [cam], masks, LocalizationConfig())
        assert not m3.values.any()

    def test_half_vote_below_default_threshold(self):
        # one Gaussian, two identical views, one fully masked and one empty:
        # score 0.5 < 0.6 -> excluded
        cloud = GaussianCloud([[0, 0, 0]], [[1, 0, 0, 0]], [[0.3] * 3], [0.8],
                              [[1, 0, 0]])
        cam = make_camera()
        masks = [Mask2D(np.ones((16, 16), dtype=bool), view_index=0),
                 Mask2D(np.zeros((16, 16), dtype=bool), view_index=1)]
        m3 = inverse_render_masks(cloud, [cam, cam], masks, LocalizationConfig())
        assert not m3.values[0]

    def test_invisible_gaussian_convention_zero(self):
        cloud = GaussianCloud([[0, 0, -100]], [[1, 0, 0, 0]], [[0.1] * 3], [0.8],
                              [[1, 0, 0]])  # behind the camera
        cam = make_camera(position=(0, 0, -4))
        masks = [Mask2D(np.ones((16, 16), dtype=bool), view_index=0)]
        m3 = inverse_render_masks(cloud, [cam], masks, LocalizationConfig())
        assert not m3.values[0]
        assert m3.vote_weights[0] == 0


class TestSelectFrontal:
    def make_mask(self, count, idx=0):
        v = np.zeros((4, 4), dtype=bool)
        v.reshape(-1)[:count] = True
        return Mask2D(v, view_index=idx)

    def test_argmax(self):
        masks = [self.make_mask(5), self.make_mask(12), self.make_mask(3)]
        assert select_frontal(masks) == 1

    def test_single_view(self):
        assert select_frontal([self.make_mask(2)]) == 0

    def test_tie_breaks_low(self):
        assert select_frontal([self.make_mask(7), self.make_mask(7)]) == 0

    def test_all_empty_raises(self):
        with pytest.raises(LocalizationFailedError):
            select_frontal([self.make_mask(0), self.make_mask(0)])


class TestPersistence:
    def test_mask2d_roundtrip(self, tmp_path, rng):
        values = rng.uniform(0, 1, (10, 12)) > 0.5
        mask = Mask2D(values, view_index=4)
        p = tmp_path / "mask.png"
        save_mask2d(mask, p, LocalizationConfig())
        back = load_mask2d(p)
        assert np.array_equal(back.values, values)
        assert back.view_index == 4
        sidecar = json.loads((tmp_path / "mask.json").read_text())
        assert sidecar["gamma"] == pytest.approx(0.6)
        assert sidecar["tau"] == 600

    def test_mask3d_roundtrip(self, tmp_path, rng):
        values = rng.uniform(0, 1, 33) > 0.4
        m = Mask3D(values, np.zeros(33))
        p = tmp_path / "mask3d.bin"
        save_mask3d(m, p)
        back = load_mask3d(p)
        assert np.array_equal(back.values, values)
