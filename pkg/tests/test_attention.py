import math

import numpy as np
import pytest

from pepsi import engine as en
from pepsi.attention import (attention_weights, cam_forward, cosine_scores,
                             split_patches, truncated_distance_scores)
from pepsi.engine import ContractError, Tensor
from pepsi.masks import gen_square_mask

from oracles import cam_oracle


class TestSplitPatches:
    def test_zero_mask_all_background(self, rng):
        feat = rng.normal(size=(4, 5, 5))
        fg, bg = split_patches(feat, np.zeros((5, 5), np.uint8))
        assert fg.patches.shape[0] == 0
        assert bg.patches.shape[0] == 25

    def test_single_hole_pixel_counts(self, rng):
        feat = rng.normal(size=(2, 4, 4))
        mask = np.zeros((4, 4), np.uint8)
        mask[1, 2] = 1
        fg, bg = split_patches(feat, mask)
        assert fg.patches.shape[0] == 1
        assert bg.patches.shape[0] == 15
        assert tuple(fg.coords[0]) == (1, 2)

    def test_constant_map_identical_patches(self):
        feat = np.full((3, 4, 4), 0.7)
        fg, bg = split_patches(feat, gen_square_mask(4, 4, (1, 1, 2, 2)))
        assert np.allclose(bg.patches, bg.patches[0])
        assert np.allclose(fg.patches, bg.patches[0])

    def test_empty_background_raises(self, rng):
        feat = rng.normal(size=(2, 3, 3))
        with pytest.raises(ContractError):
            split_patches(feat, np.ones((3, 3), np.uint8))


class TestCosineScores:
    def test_self_similarity_is_one(self, rng):
        b = rng.normal(size=(5, 8))
        s = cosine_scores(b[2], b)
        assert s[2] == pytest.approx(1.0)
        assert np.all(s <= 1.0 + 1e-12) and np.all(s >= -1.0 - 1e-12)

    def test_orthogonal_is_zero(self):
        f = np.array([1.0, 0.0, 0.0])
        b = np.array([[0.0, 1.0, 0.0]])
        assert cosine_scores(f, b)[0] == pytest.approx(0.0)

    def test_magnitude_blindness(self):
        # the scale invariance that motivates the euclidean variant
        s = cosine_scores(np.array([2.0, 0.0]), np.array([[1.0, 0.0]]))
        assert s[0] == pytest.approx(1.0)

    def test_zero_norm_patch_scores_zero(self):
        s = cosine_scores(np.zeros(4), np.ones((3, 4)))
        assert np.array_equal(s, np.zeros(3))
        s2 = cosine_scores(np.ones(4), np.vstack([np.zeros(4), np.ones(4)]))
        assert s2[0] == pytest.approx(0.0)


class TestTruncatedDistanceScores:
    def test_two_patch_fixture(self):
        # d = (0, 2), mean 1, population std 1 -> (tanh 1, tanh -1)
        s = truncated_distance_scores(np.array([1.0, 0.0]),
                                      np.array([[1.0, 0.0], [-1.0, 0.0]]))
        assert s[0] == pytest.approx(math.tanh(1.0), abs=1e-12)
        assert s[1] == pytest.approx(-math.tanh(1.0), abs=1e-12)

    def test_equidistant_gives_uniform_zero(self):
        f = np.zeros(2)
        b = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
        s = truncated_distance_scores(f, b)
        assert np.allclose(s, 0.0)
        w = attention_weights(s, 10.0)
        assert np.allclose(w, 1.0 / 3.0)

    def test_translation_invariance(self, rng):
        f = rng.normal(size=6)
        b = rng.normal(size=(4, 6))
        c = rng.normal(size=6)
        assert np.allclose(truncated_distance_scores(f, b),
                           truncated_distance_scores(f + c, b + c[None, :]),
                           atol=1e-12)

    def test_values_strictly_inside_unit_interval(self, rng):
        for _ in range(10):
            s = truncated_distance_scores(rng.normal(size=5),
                                          rng.normal(size=(7, 5)))
            assert np.all(s > -1.0) and np.all(s < 1.0)

    def test_mean_distance_maps_to_zero(self):
        f = np.zeros(1)
        b = np.array([[1.0], [2.0], [3.0]])  # d = (1,2,3), mean 2
        s = truncated_distance_scores(f, b)
        assert s[1] == pytest.approx(0.0, abs=1e-12)

    def test_sensitive_to_foreground_rescaling(self):
        # with three distinct distances, standardization no longer hides the
        # magnitude: scaling f changes the scores (unlike cosine mode)
        b = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
        s1 = truncated_distance_scores(np.array([1.0, 0.0]), b)
        s2 = truncated_distance_scores(np.array([2.0, 0.0]), b)
        assert np.abs(s1 - s2).max() > 1e-3
        c1 = cosine_scores(np.array([1.0, 0.0]), b)
        c2 = cosine_scores(np.array([2.0, 0.0]), b)
        assert np.abs(c1 - c2).max() < 1e-12


class TestAttentionWeights:
    def test_uniform_scores(self):
        assert np.allclose(attention_weights(np.zeros(4), 10.0), 0.25)

    def test_concentration(self):
        w = attention_weights(np.array([1.0, 0.0]), 10.0)
        assert w[0] == pytest.approx(np.exp(10) / (np.exp(10) + 1), abs=1e-9)

    def test_shift_invariance(self, rng):
        s = rng.normal(size=6)
        assert np.allclose(attention_weights(s, 5.0),
                           attention_weights(s + 3.3, 5.0), atol=1e-12)

    def test_empty_raises(self):
        with pytest.raises(ContractError):
            attention_weights(np.zeros(0), 10.0)


class TestCamForward:
    def test_zero_mask_is_identity(self, rng):
        feat = Tensor(rng.normal(size=(2, 4, 6, 6)))
        out = cam_forward(feat, np.zeros((6, 6), np.uint8))
        assert np.array_equal(out.data, feat.data)

    def test_identity_on_background_positions(self, rng):
        feat = rng.normal(size=(1, 4, 8, 8))
        mask = gen_square_mask(8, 8, (2, 3, 3, 2))
        for mode in ("cosine", "euclidean"):
            out = cam_forward(Tensor(feat), mask, mode=mode)
            bg = mask == 0
            assert np.array_equal(out.data[0][:, bg], feat[0][:, bg])

    def test_exact_background_twin_dominates_reconstruction(self, rng):
        # one background patch identical to the foreground patch, the rest
        # clustered far away: softmax at lam=10 puts >0.999 on the twin and
        # the reconstructed patch lands within 1e-3 of it
        f = rng.normal(size=18)
        off = np.zeros(18)
        off[0] = 1.0  # scores only see the distance distribution's shape
        bg = np.vstack([f[None, :], np.tile(f + off, (60, 1))])
        scores = truncated_distance_scores(f, bg)
        w = attention_weights(scores, 10.0)
        assert w[0] > 0.999
        rec = w @ bg
        assert np.abs(rec - f).max() < 1e-3

    @pytest.mark.parametrize("mode", ["cosine", "euclidean"])
    def test_matches_bruteforce_oracle_random_holes(self, rng, mode):
        for _ in range(8):
            feat = rng.normal(size=(1, 4, 8, 8))
            mask = gen_square_mask(
                8, 8, (int(rng.integers(0, 6)), int(rng.integers(0, 6)), 3, 2))
            got = cam_forward(Tensor(feat), mask, mode=mode, lam=10.0)
            want = cam_oracle(feat[0], mask, mode, 10.0)
            assert np.abs(got.data[0] - want).max() < 1e-5

    @pytest.mark.parametrize("mode", ["cosine", "euclidean"])
    @pytest.mark.parametrize("size", [4, 6, 8])
    def test_matches_oracle_every_small_hole_placement(self, rng, mode, size):
        feat = rng.normal(size=(1, 3, size, size))
        placements = [(y, x, 1, 1) for y in range(size) for x in range(size)]
        placements += [(y, x, 2, 2) for y in range(size - 1)
                       for x in range(size - 1)
                       if (y, x, 2, 2) != (0, 0, size, size)]
        for box in placements:
            mask = gen_square_mask(size, size, box)
            if mask.all():
                continue
            got = cam_forward(Tensor(feat), mask, mode=mode, lam=10.0)
            want = cam_oracle(feat[0], mask, mode, 10.0)
            assert np.abs(got.data[0] - want).max() < 1e-5, f"box {box}"

    def test_per_item_masks(self, rng):
        feat = rng.normal(size=(2, 3, 6, 6))
        masks = np.stack([gen_square_mask(6, 6, (1, 1, 2, 2)),
                          np.zeros((6, 6), np.uint8)])
        out = cam_forward(Tensor(feat), masks, mode="euclidean")
        assert np.array_equal(out.data[1], feat[1])
        want0 = cam_oracle(feat[0], masks[0], "euclidean", 10.0)
        assert np.abs(out.data[0] - want0).max() < 1e-5

    def test_full_mask_raises(self, rng):
        feat = Tensor(rng.normal(size=(1, 2, 4, 4)))
        with pytest.raises(ContractError):
            cam_forward(feat, np.ones((4, 4), np.uint8))

    def test_weights_form_probability_vector(self, rng):
        # computed on the graph: softmax rows of the score matrix
        from pepsi.attention import _cam_scores
        fg = Tensor(rng.normal(size=(3, 18)))
        bg = Tensor(rng.normal(size=(10, 18)))
        for mode in ("cosine", "euclidean"):
            w = en.softmax(10.0 * _cam_scores(fg, bg, mode), axis=1)
            assert np.all(w.data >= 0)
            assert np.allclose(w.data.sum(axis=1), 1.0, atol=1e-6)
