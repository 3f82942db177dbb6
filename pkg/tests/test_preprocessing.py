import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from signfusion.errors import EmptyImage, EmptyInput, NotFitted
from signfusion.preprocessing import (AugmentParams, MinMaxScaler, apply_minmax, augment_image, draw_augment,
                                      fit_minmax, impute_nan, preprocess_image)

maybe_nan = st.one_of(st.just(np.nan), st.floats(-1e6, 1e6))


class TestImpute:
    def test_example(self):
        out = impute_nan([[np.nan, 2], [3, np.nan]])
        np.testing.assert_array_equal(out, [[0, 2], [3, 0]])

    def test_finite_identity_and_nan_row(self):
        m = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(impute_nan(m), m)
        np.testing.assert_array_equal(impute_nan(np.full((1, 4), np.nan)), np.zeros((1, 4)))

    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=maybe_nan))
    def test_idempotent(self, m):
        once = impute_nan(m)
        np.testing.assert_array_equal(impute_nan(once), once)
        assert not np.isnan(once).any()


class TestMinMax:
    def test_column_examples(self):
        s = fit_minmax(np.array([[0.0, 7.0], [5.0, 7.0], [10.0, 7.0]]))
        np.testing.assert_array_equal(s.feat_min, [0, 7])
        np.testing.assert_array_equal(s.feat_max, [10, 7])
        np.testing.assert_array_equal(apply_minmax(s, [[5.0, 7.0]]), [[0.5, 0.0]])
        np.testing.assert_allclose(apply_minmax(s, [[12.0, 3.0]]), [[1.2, 0.0]])

    def test_extrema_match_linear_scan(self, rng):
        m = rng.normal(size=(40, 9))
        s = fit_minmax(m)
        for j in range(9):
            lo = hi = m[0, j]
            for i in range(1, 40):
                lo = min(lo, m[i, j])
                hi = max(hi, m[i, j])
            assert s.feat_min[j] == lo and s.feat_max[j] == hi

    def test_errors(self):
        with pytest.raises(EmptyInput):
            fit_minmax(np.zeros((0, 362)))
        with pytest.raises(NotFitted):
            MinMaxScaler().transform(np.zeros(362))

    def test_accepts_repetition_stack(self, rng):
        reps = rng.normal(size=(4, 73, 5))
        s = fit_minmax(reps)
        np.testing.assert_array_equal(s.feat_min, reps.reshape(-1, 5).min(axis=0))

    def test_json_roundtrip(self, tmp_path, rng):
        s = fit_minmax(rng.normal(size=(10, 362)))
        s.save(tmp_path / "scaler.json")
        t = MinMaxScaler.load(tmp_path / "scaler.json")
        np.testing.assert_array_equal(t.feat_min, s.feat_min)
        np.testing.assert_array_equal(t.feat_max, s.feat_max)
        import json
        doc = json.loads((tmp_path / "scaler.json").read_text())
        assert set(doc) == {"min", "max"} and len(doc["min"]) == 362

    @given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 5)),
                  elements=st.floats(-1e3, 1e3)))
    def test_order_preserved_per_column(self, m):
        out = fit_minmax(m).transform(m)
        for j in range(m.shape[1]):
            order = np.argsort(m[:, j], kind="stable")
            assert np.all(np.diff(out[order, j]) >= 0)


class TestImage:
    def test_constant_images(self):
        np.testing.assert_array_equal(preprocess_image(np.full((224, 224, 3), 255, np.uint8)), 1.0)
        out = preprocess_image(np.zeros((31, 57, 3), np.uint8))
        assert out.shape == (224, 224, 3) and not out.any()

    def test_checkerboard_against_bilinear_formula(self):
        raw = np.zeros((2, 2, 3), np.uint8)
        raw[0, 1] = raw[1, 0] = 255
        out = preprocess_image(raw, size=4)
        src = raw[..., 0].astype(float) / 255

        def sample(i, j):
            # half-pixel centres, clamped to the grid
            y = min(max((i + 0.5) * 2 / 4 - 0.5, 0.0), 1.0)
            x = min(max((j + 0.5) * 2 / 4 - 0.5, 0.0), 1.0)
            return (src[0, 0] * (1 - y) * (1 - x) + src[0, 1] * (1 - y) * x
                    + src[1, 0] * y * (1 - x) + src[1, 1] * y * x)

        expected = np.array([[sample(i, j) for j in range(4)] for i in range(4)])
        np.testing.assert_allclose(out[..., 0], expected, atol=1e-15)
        assert out[0, 0, 0] == 0.0 and out[0, 3, 0] == 1.0 and out[3, 0, 0] == 1.0 and out[3, 3, 0] == 0.0
        interior = out[1:3, 1:3, 0]
        assert np.all((interior > 0) & (interior < 1))

    def test_empty(self):
        with pytest.raises(EmptyImage):
            preprocess_image(np.zeros((0, 4, 3), np.uint8))

    @given(arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12), st.just(3))),
           st.integers(1, 16))
    def test_range(self, raw, size):
        out = preprocess_image(raw, size)
        assert out.shape == (size, size, 3)
        assert out.min() >= 0 and out.max() <= 1


class TestAugment:
    def test_identity_draws(self, rng):
        img = rng.random((16, 16, 3))
        np.testing.assert_array_equal(augment_image(img, 0.0, 1.0, 1.0), img)

    def test_contrast_fixed_point_and_clamp(self):
        half = np.full((4, 4, 3), 0.5)
        np.testing.assert_array_equal(augment_image(half, 0.0, 1.0, 1.7), half)
        assert augment_image(np.full((2, 2, 3), 0.9), 0.0, 1.0, 2.0)[0, 0, 0] == 1.0

    def test_range_and_shape(self, rng):
        p = AugmentParams(rotation_max_deg=30, zoom_range=(0.5, 1.5), contrast_range=(0.2, 3.0))
        img = rng.random((12, 12, 3))
        for _ in range(20):
            out = augment_image(img, *draw_augment(p, rng))
            assert out.shape == img.shape
            assert out.min() >= 0 and out.max() <= 1

    def test_draws_inside_ranges(self, rng):
        p = AugmentParams()
        for _ in range(100):
            a, z, c = draw_augment(p, rng)
            assert -15 <= a <= 15 and 0.9 <= z <= 1.1 and 0.8 <= c <= 1.2

    def test_zero_fill_after_rotation(self):
        img = np.ones((9, 9, 3))
        out = augment_image(img, 45.0, 1.0, 1.0)
        assert out[0, 0, 0] == 0.0 and out[4, 4, 0] == pytest.approx(1.0)

    def test_params_validation(self):
        with pytest.raises(ValueError):
            AugmentParams(zoom_range=(1.1, 1.2))
        with pytest.raises(ValueError):
            AugmentParams(rotation_max_deg=-1)
