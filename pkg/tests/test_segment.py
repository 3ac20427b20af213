"""Patch-to-pixel segmentation mechanics and the label-map artifact."""

from __future__ import annotations

import numpy as np
import pytest

from ccmine.errors import FormatError, MissingEmbeddingError, ValidationError
from ccmine.segment import (
    BOTTOM,
    FeatureMap,
    PromptSet,
    SegMap,
    apply_cc_mask,
    bilinear_resize,
    build_prompt_set,
    nearest_resize,
    patch_logits,
    remap_cc_to_background,
    segment_pixels,
    sigmoid,
    sigmoid_score_field,
    sigmoid_threshold_segment,
    upsample_and_argmax,
)

from conftest import make_scene_features


def prompt_set(labels, cc_mask, axes):
    vectors = np.eye(3)[list(axes)]
    return PromptSet(labels, vectors, cc_mask)


class TestFeatureMap:
    def test_shape_and_unit(self):
        fm = FeatureMap(np.full((2, 3, 4), 0.5))
        assert (fm.h, fm.w, fm.d) == (2, 3, 4)
        assert np.allclose(np.linalg.norm(fm.unit, axis=2), 1.0)

    def test_rejects_zero_patch(self):
        grid = np.ones((2, 2, 3))
        grid[1, 1] = 0.0
        with pytest.raises(ValidationError):
            FeatureMap(grid)

    def test_rejects_non_finite(self):
        grid = np.ones((2, 2, 3))
        grid[0, 0, 0] = np.nan
        with pytest.raises(ValidationError):
            FeatureMap(grid)

    def test_rejects_wrong_rank(self):
        with pytest.raises(ValidationError):
            FeatureMap(np.ones((2, 3)))

    def test_roundtrip_byte_identical(self, tmp_path):
        fm = make_scene_features()
        path = tmp_path / "img.feat"
        fm.save(path)
        first = path.read_bytes()
        FeatureMap.load(path).save(path)
        assert path.read_bytes() == first

    def test_loads_rejects_bad_magic(self):
        with pytest.raises(FormatError):
            FeatureMap.loads(b"NOTFEAT" + b"\x00" * 20)

    def test_loads_rejects_size_mismatch(self):
        data = make_scene_features().dumps()
        with pytest.raises(FormatError):
            FeatureMap.loads(data[:-4])


class TestPromptSet:
    def test_duplicate_labels_rejected(self):
        with pytest.raises(ValidationError):
            prompt_set(["a", "a"], [False, True], [0, 1])

    def test_all_cc_rejected(self):
        with pytest.raises(ValidationError):
            prompt_set(["a", "b"], [True, True], [0, 1])

    def test_mask_length_mismatch(self):
        with pytest.raises(ValidationError):
            prompt_set(["a", "b"], [False], [0, 1])

    def test_build_from_table(self, toy_embeddings):
        prompts = build_prompt_set(["boat", "background"], [False, True], toy_embeddings)
        assert prompts.labels == ["boat", "background"]
        assert np.allclose(np.linalg.norm(prompts.vectors, axis=1), 1.0)

    def test_missing_embedding_names_concept(self, toy_embeddings):
        with pytest.raises(MissingEmbeddingError, match="zeppelin"):
            build_prompt_set(["zeppelin"], [False], toy_embeddings)


class TestResize:
    def test_bilinear_known_values(self):
        # 1x2 -> 1x4 with half-pixel centers: fractions 0, 1/4, 3/4, 1
        grid = np.array([[1.0, 0.0]])
        out = bilinear_resize(grid, 1, 4)
        assert np.allclose(out, [[1.0, 0.75, 0.25, 0.0]])

    def test_bilinear_identity_same_size(self):
        rng = np.random.default_rng(5)
        grid = rng.normal(size=(3, 4, 2))
        assert np.array_equal(bilinear_resize(grid, 3, 4), grid)

    def test_bilinear_border_clamped(self):
        grid = np.array([[2.0, 4.0]])
        out = bilinear_resize(grid, 1, 8)
        assert out[0, 0] == 2.0
        assert out[0, -1] == 4.0
        assert np.all(out >= 2.0) and np.all(out <= 4.0)

    def test_bilinear_channels_independent(self):
        rng = np.random.default_rng(6)
        grid = rng.normal(size=(2, 2, 3))
        whole = bilinear_resize(grid, 5, 7)
        for c in range(3):
            assert np.array_equal(whole[:, :, c], bilinear_resize(grid[:, :, c], 5, 7))

    def test_nearest_blocks(self):
        grid = np.array([[1, 2], [3, 4]])
        out = nearest_resize(grid, 4, 4)
        assert np.array_equal(
            out,
            [
                [1, 1, 2, 2],
                [1, 1, 2, 2],
                [3, 3, 4, 4],
                [3, 3, 4, 4],
            ],
        )

    def test_bad_output_size(self):
        with pytest.raises(ValidationError):
            bilinear_resize(np.ones((2, 2)), 0, 4)
        with pytest.raises(ValidationError):
            nearest_resize(np.ones((2, 2)), 2, 0)


class TestSegmentation:
    def test_argmax_after_upsample_known(self):
        # the 0.75/0.25 crossover decides labels away from patch centers
        logits = np.zeros((1, 2, 2))
        logits[0, 0, 0] = 1.0
        logits[0, 1, 1] = 1.0
        labels = upsample_and_argmax(logits, 1, 4)
        assert labels.tolist() == [[0, 0, 1, 1]]

    def test_tie_goes_to_lowest_index(self):
        logits = np.zeros((1, 1, 3))
        labels = upsample_and_argmax(logits, 2, 2)
        assert np.all(labels == 0)

    def test_single_prompt_claims_everything(self):
        fm = make_scene_features()
        prompts = prompt_set(["boat"], [False], [0])
        pixmap = segment_pixels(fm, prompts, 8, 8)
        assert pixmap.shape == (8, 8)
        assert np.all(pixmap == 0)

    def test_labels_mode_matches_patch_argmax(self):
        fm = make_scene_features()
        prompts = prompt_set(["boat", "water", "background"], [False, False, False], [0, 1, 2])
        pixmap = segment_pixels(fm, prompts, 4, 4, upsample="labels")
        patch = patch_logits(fm, prompts).argmax(axis=2)
        assert np.array_equal(pixmap, patch)

    def test_bad_upsample_mode(self):
        fm = make_scene_features()
        prompts = prompt_set(["boat"], [False], [0])
        with pytest.raises(ValidationError):
            segment_pixels(fm, prompts, 4, 4, upsample="nearest")

    def test_dimension_mismatch(self):
        fm = FeatureMap(np.ones((2, 2, 4)))
        prompts = prompt_set(["boat"], [False], [0])
        with pytest.raises(ValidationError):
            patch_logits(fm, prompts)

    def test_argmax_invariant_to_scale_and_shift(self):
        rng = np.random.default_rng(7)
        fm = FeatureMap(rng.normal(size=(3, 5, 4)))
        vectors = rng.normal(size=(4, 4))
        prompts = PromptSet(["a", "b", "c", "q"], vectors, [False] * 4)
        logits = patch_logits(fm, prompts)
        base = upsample_and_argmax(logits, 9, 15)
        scaled = upsample_and_argmax(2.0 * logits + 0.25, 9, 15)
        assert np.array_equal(base, scaled)


class TestCCMask:
    def test_cc_pixels_erased(self):
        prompts = prompt_set(["boat", "background"], [False, True], [0, 2])
        pixmap = np.array([[0, 1], [1, 0]])
        masked = apply_cc_mask(pixmap, prompts)
        assert masked.tolist() == [[0, BOTTOM], [BOTTOM, 0]]

    def test_non_cc_pixels_untouched(self):
        prompts = prompt_set(["boat", "water", "background"], [False, False, True], [0, 1, 2])
        pixmap = np.array([[0, 1, 2]])
        masked = apply_cc_mask(pixmap, prompts)
        assert masked.tolist() == [[0, 1, BOTTOM]]

    def test_remap_to_background(self):
        prompts = prompt_set(
            ["background", "boat", "dock"], [False, False, True], [2, 0, 1]
        )
        pixmap = np.array([[1, 2, 0]])
        remapped = remap_cc_to_background(pixmap, prompts)
        assert remapped.tolist() == [[1, 0, 0]]

    def test_remap_requires_background_prompt(self):
        prompts = prompt_set(["boat", "dock"], [False, True], [0, 1])
        with pytest.raises(ValidationError, match="background"):
            remap_cc_to_background(np.zeros((1, 1), dtype=int), prompts)

    def test_remap_rejects_cc_background(self):
        prompts = prompt_set(["boat", "background"], [False, True], [0, 2])
        with pytest.raises(ValidationError):
            remap_cc_to_background(np.zeros((1, 1), dtype=int), prompts)


class TestSigmoid:
    def test_zero_is_half(self):
        assert sigmoid(0.0) == 0.5

    def test_monotone(self):
        xs = np.linspace(-1, 1, 9)
        ys = sigmoid(xs)
        assert np.all(np.diff(ys) > 0)

    def test_score_field_range(self):
        fm = make_scene_features()
        field = sigmoid_score_field(fm, np.array([1.0, 0.0, 0.0]), 8, 8)
        assert field.shape == (8, 8)
        assert np.all((field > 0.0) & (field < 1.0))

    def test_threshold_is_strict(self):
        fm = FeatureMap([[[0.0, 1.0, 0.0]]])
        # cosine to the query is exactly 0, so the score is exactly 0.5
        mask = sigmoid_threshold_segment(fm, np.array([1.0, 0.0, 0.0]), 1, 1, 0.5)
        assert not mask[0, 0]

    def test_zero_query_rejected(self):
        fm = make_scene_features()
        with pytest.raises(ValidationError):
            sigmoid_score_field(fm, np.zeros(3), 4, 4)


class TestSegMap:
    def test_roundtrip_with_bottom(self, tmp_path):
        labels = np.array([[0, 1], [BOTTOM, 0]])
        seg = SegMap(labels, {0: "boat", 1: "water"})
        path = tmp_path / "out.seg"
        seg.save(path)
        loaded = SegMap.load(path)
        assert np.array_equal(loaded.labels, labels)
        assert loaded.label_names == {0: "boat", 1: "water"}

    def test_sidecar_written(self, tmp_path):
        seg = SegMap(np.zeros((1, 1), dtype=int), {0: "boat"})
        path = tmp_path / "out.seg"
        seg.save(path)
        assert (tmp_path / "out.seg.json").exists()

    def test_missing_sidecar_rejected(self, tmp_path):
        seg = SegMap(np.zeros((1, 1), dtype=int), {0: "boat"})
        path = tmp_path / "out.seg"
        seg.save(path)
        (tmp_path / "out.seg.json").unlink()
        with pytest.raises(FormatError, match="sidecar"):
            SegMap.load(path)

    def test_unnamed_index_rejected(self):
        with pytest.raises(ValidationError):
            SegMap(np.array([[3]]), {0: "boat"})

    def test_index_out_of_format_range(self):
        with pytest.raises(ValidationError):
            SegMap(np.array([[0]]), {0: "boat", 0xFFFF: "too big"})

    def test_bottom_is_transparent(self):
        seg = SegMap(np.array([[BOTTOM]]), {})
        data = seg.dumps()
        assert data[-2:] == b"\xff\xff"
