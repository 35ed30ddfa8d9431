import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pragref.colorspace import (
    Color,
    Condition,
    ConditionThresholds,
    ciede2000,
    ciede2000_lab,
    classify_condition,
    fourier_features,
    fourier_features_array,
    hsv_to_rgb,
    rgb_to_hsv,
    sample_context,
    sample_contexts,
    srgb_to_lab,
)
from pragref.errors import PerceptibilityViolation, SamplingBudgetExceeded

# Published CIEDE2000 verification pairs (Sharma, Wu & Dalal): Lab1, Lab2, dE00.
SHARMA_PAIRS = [
    ((50.0000, 2.6772, -79.7751), (50.0000, 0.0000, -82.7485), 2.0425),
    ((50.0000, 3.1571, -77.2803), (50.0000, 0.0000, -82.7485), 2.8615),
    ((50.0000, 2.8361, -74.0200), (50.0000, 0.0000, -82.7485), 3.4412),
    ((50.0000, -1.3802, -84.2814), (50.0000, 0.0000, -82.7485), 1.0000),
    ((50.0000, -1.1848, -84.8006), (50.0000, 0.0000, -82.7485), 1.0000),
    ((50.0000, -0.9009, -85.5211), (50.0000, 0.0000, -82.7485), 1.0000),
    ((50.0000, 0.0000, 0.0000), (50.0000, -1.0000, 2.0000), 2.3669),
    ((50.0000, -1.0000, 2.0000), (50.0000, 0.0000, 0.0000), 2.3669),
    ((50.0000, 2.4900, -0.0010), (50.0000, -2.4900, 0.0009), 7.1792),
    ((50.0000, 2.4900, -0.0010), (50.0000, -2.4900, 0.0010), 7.1792),
    ((50.0000, 2.4900, -0.0010), (50.0000, -2.4900, 0.0011), 7.2195),
    ((50.0000, 2.4900, -0.0010), (50.0000, -2.4900, 0.0012), 7.2195),
    ((50.0000, -0.0010, 2.4900), (50.0000, 0.0010, -2.4900), 4.8045),
    ((50.0000, -0.0010, 2.4900), (50.0000, 0.0011, -2.4900), 4.7461),
    ((50.0000, -0.0010, 2.4900), (50.0000, 0.0012, -2.4900), 4.7461),
    ((50.0000, 2.5000, 0.0000), (50.0000, 0.0000, -2.5000), 4.3065),
    ((50.0000, 2.5000, 0.0000), (73.0000, 25.0000, -18.0000), 27.1492),
    ((50.0000, 2.5000, 0.0000), (61.0000, -5.0000, 29.0000), 22.8977),
    ((50.0000, 2.5000, 0.0000), (56.0000, -27.0000, -3.0000), 31.9030),
    ((50.0000, 2.5000, 0.0000), (58.0000, 24.0000, 15.0000), 19.4535),
    ((50.0000, 2.5000, 0.0000), (50.0000, 3.1736, 0.5854), 1.0000),
    ((50.0000, 2.5000, 0.0000), (50.0000, 3.2972, 0.0000), 1.0000),
    ((50.0000, 2.5000, 0.0000), (50.0000, 1.8634, 0.5757), 1.0000),
    ((50.0000, 2.5000, 0.0000), (50.0000, 3.2592, 0.3350), 1.0000),
    ((60.2574, -34.0099, 36.2677), (60.4626, -34.1751, 39.4387), 1.2644),
    ((63.0109, -31.0961, -5.8663), (62.8187, -29.7946, -4.0864), 1.2630),
    ((61.2901, 3.7196, -5.3901), (61.4292, 2.2480, -4.9620), 1.8731),
    ((35.0831, -44.1164, 3.7933), (35.0232, -40.0716, 1.5901), 1.8645),
    ((22.7233, 20.0904, -46.6940), (23.0331, 14.9730, -42.5619), 2.0373),
    ((36.4612, 47.8580, 18.3852), (36.2715, 50.5065, 21.2231), 1.4146),
    ((90.8027, -2.0831, 1.4410), (91.1528, -1.6435, 0.0447), 1.4441),
    ((90.9257, -0.5406, -0.9208), (88.6381, -0.8985, -0.7239), 1.5381),
    ((6.7747, -0.2908, -2.4247), (5.8714, -0.0985, -2.2286), 0.6377),
    ((2.0776, 0.0795, -1.1350), (0.9033, -0.0636, -0.5514), 0.9082),
]

unit = st.floats(0.0, 1.0, allow_nan=False)


class TestHsv:
    def test_black(self):
        hsv = rgb_to_hsv(Color(0, 0, 0))
        assert (hsv.h, hsv.s, hsv.v) == (0.0, 0.0, 0.0)

    def test_pure_red(self):
        hsv = rgb_to_hsv(Color(1, 0, 0))
        assert (hsv.h, hsv.s, hsv.v) == (0.0, 1.0, 1.0)

    def test_hand_computed_point(self):
        # max=b=0.75, min=0.25, delta=0.5: h=60*(4+(r-g)/delta)=210, s=2/3, v=0.75
        hsv = rgb_to_hsv(Color(0.25, 0.5, 0.75))
        assert hsv.h == pytest.approx(210.0, abs=1e-12)
        assert hsv.s == pytest.approx(2.0 / 3.0, abs=1e-12)
        assert hsv.v == pytest.approx(0.75, abs=1e-12)

    @given(unit, unit, unit)
    @settings(max_examples=200, deadline=None)
    def test_round_trip(self, r, g, b):
        c = Color(r, g, b)
        hsv = rgb_to_hsv(c)
        back = hsv_to_rgb(hsv.h, hsv.s, hsv.v)
        assert abs(back.r - r) < 1e-9
        assert abs(back.g - g) < 1e-9
        assert abs(back.b - b) < 1e-9
        assert 0.0 <= hsv.h < 360.0
        assert 0.0 <= hsv.s <= 1.0
        assert 0.0 <= hsv.v <= 1.0

    def test_channel_validation(self):
        with pytest.raises(ValueError):
            Color(1.2, 0, 0)


class TestCiede2000:
    def test_identity(self):
        c = Color(0.3, 0.7, 0.2)
        assert ciede2000(c, c) == 0.0

    @pytest.mark.parametrize("lab1,lab2,expected", SHARMA_PAIRS)
    def test_published_pairs(self, lab1, lab2, expected):
        got = float(ciede2000_lab(np.array(lab1), np.array(lab2)))
        assert got == pytest.approx(expected, abs=1e-4)

    def test_symmetry_and_nonnegativity(self):
        rng = np.random.default_rng(0)
        a = rng.random((1000, 3))
        b = rng.random((1000, 3))
        lab_a, lab_b = srgb_to_lab(a), srgb_to_lab(b)
        d_ab = ciede2000_lab(lab_a, lab_b)
        d_ba = ciede2000_lab(lab_b, lab_a)
        assert np.allclose(d_ab, d_ba, atol=1e-12)
        assert np.all(d_ab >= 0)

    def test_zero_iff_identical_lab(self):
        lab = srgb_to_lab(np.array([0.2, 0.4, 0.9]))
        assert float(ciede2000_lab(lab, lab)) == 0.0


class TestFourierFeatures:
    def test_zero_phase(self):
        f = fourier_features(Color(0, 0, 0))
        assert f.shape == (54,)
        assert np.allclose(f[:27], 1.0)
        assert np.allclose(f[27:], 0.0)

    def test_half_period(self):
        # triple (1,0,0) at rgb (0.5,0.5,0.5): phase pi -> cos=-1, sin~0
        f = fourier_features(Color(0.5, 0.5, 0.5))
        i = 9  # lexicographic index of (1,0,0)
        assert f[i] == pytest.approx(-1.0, abs=1e-12)
        assert f[27 + i] == pytest.approx(0.0, abs=1e-12)

    def test_hand_evaluated_triple(self):
        # (j,k,l)=(1,2,1) on (0.2,0.4,0.8): phase = 2*pi*1.8
        f = fourier_features(Color(0.2, 0.4, 0.8))
        i = 9 + 2 * 3 + 1  # index of (1,2,1)
        assert f[i] == pytest.approx(math.cos(2 * math.pi * 1.8), abs=1e-12)
        assert f[27 + i] == pytest.approx(math.sin(2 * math.pi * 1.8), abs=1e-12)

    @given(unit, unit, unit)
    @settings(max_examples=100, deadline=None)
    def test_range_and_periodicity(self, r, g, b):
        f = fourier_features(Color(r, g, b))
        assert np.all(np.abs(f) <= 1.0 + 1e-12)
        shifted = fourier_features_array(np.array([(r + 1.0) % 1.0, g, b]))
        assert np.allclose(f, shifted, atol=1e-9)


def _triple_at_lab_distances(seed, lo, hi, tries=20000):
    """Find a random color triple whose pairwise dE00 all fall in (lo, hi]."""
    rng = np.random.default_rng(seed)
    for _ in range(tries):
        cols = tuple(Color(*rng.random(3)) for _ in range(3))
        d = [ciede2000(cols[0], cols[1]), ciede2000(cols[0], cols[2]),
             ciede2000(cols[1], cols[2])]
        if all(lo < x <= hi for x in d):
            return cols
    raise AssertionError("no triple found")


class TestClassifyCondition:
    def test_far_from_measured_distances(self):
        # fixed triple whose pairwise distances are all far above theta
        cols = (Color(1, 0, 0), Color(0, 1, 0), Color(0, 0, 1))
        d = [ciede2000(cols[0], cols[1]), ciede2000(cols[0], cols[2]),
             ciede2000(cols[1], cols[2])]
        assert min(d) > 20
        for t in range(3):
            assert classify_condition(cols, t) is Condition.FAR

    def test_split_one_near_one_far(self):
        base = Color(0.2, 0.4, 0.6)
        near = Color(0.2, 0.48, 0.66)     # small perturbation
        far = Color(0.9, 0.1, 0.1)
        d_near = ciede2000(base, near)
        assert 5 < d_near <= 20
        assert ciede2000(base, far) > 20 and ciede2000(near, far) > 20
        assert classify_condition((base, near, far), 0) is Condition.SPLIT

    def test_close_by_definition(self):
        cols = _triple_at_lab_distances(seed=3, lo=5, hi=20)
        for t in range(3):
            assert classify_condition(cols, t) is Condition.CLOSE

    def test_distractor_swap_invariance(self):
        rng = np.random.default_rng(11)
        found = 0
        while found < 50:
            cols = tuple(Color(*rng.random(3)) for _ in range(3))
            try:
                lab = classify_condition(cols, 0)
            except PerceptibilityViolation:
                continue
            swapped = (cols[0], cols[2], cols[1])
            assert classify_condition(swapped, 0) is lab
            found += 1

    def test_epsilon_violation(self):
        a = Color(0.5, 0.5, 0.5)
        b = Color(0.5, 0.5, 0.505)
        assert ciede2000(a, b) < 5
        with pytest.raises(PerceptibilityViolation):
            classify_condition((a, b, Color(1, 0, 0)), 0)


class TestSampleContext:
    @pytest.mark.parametrize("cond", list(Condition))
    def test_postcondition(self, cond):
        rng = np.random.default_rng(5)
        for _ in range(25):
            colors, target = sample_context(cond, rng=rng)
            assert classify_condition(colors, target) is cond

    def test_resampling_property(self):
        # 10^4-sample re-classification check, batched for speed
        th = ConditionThresholds()
        rng = np.random.default_rng(7)
        for cond in Condition:
            cols, targets = sample_contexts(cond, 10_000 // 3, rng)
            for i in range(0, len(cols), 997):  # spot re-check via scalar path
                triple = tuple(Color(*cols[i, j]) for j in range(3))
                assert classify_condition(triple, int(targets[i]), th) is cond

    def test_budget_exceeded(self):
        rng = np.random.default_rng(0)
        with pytest.raises(SamplingBudgetExceeded):
            sample_context(Condition.CLOSE, rng=rng, max_attempts=3)

    def test_far_channel_mean_symmetry(self):
        rng = np.random.default_rng(13)
        cols, _ = sample_contexts(Condition.FAR, 100_000 // 3, rng)
        mean = cols.mean()
        assert abs(mean - 0.5) < 0.02
