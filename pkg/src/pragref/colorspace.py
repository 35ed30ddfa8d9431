"""Color representations, perceptual distance, and condition-constrained context sampling.

Colors live in normalized sRGB. Perceptual distance is CIEDE2000 over CIE Lab
(sRGB, D65 white point). Referent feature vectors are a 54-dimensional
trigonometric expansion of the RGB coordinates. Reference-game contexts are
three colors plus a target index, labeled far/split/close by pairwise distance
against a threshold.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import PerceptibilityViolation, SamplingBudgetExceeded

FOURIER_DIM = 54

# Frequency triples (j, k, l) in {0,1,2}^3, lexicographic. Shape (27, 3).
_FREQS = np.array([(j, k, l) for j in range(3) for k in range(3) for l in range(3)],
                  dtype=np.float64)

# sRGB -> XYZ (D65) matrix and white point.
_SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_D65 = np.array([0.95047, 1.0, 1.08883])


@dataclass(frozen=True)
class Color:
    """A referent: normalized RGB channels, each in [0, 1]."""

    r: float
    g: float
    b: float

    def __post_init__(self):
        for name in ("r", "g", "b"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"channel {name}={v!r} outside [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.g, self.b], dtype=np.float64)


@dataclass(frozen=True)
class HsvColor:
    """Hexcone HSV: hue in degrees [0, 360), saturation and value in [0, 1]."""

    h: float
    s: float
    v: float


class Condition(enum.Enum):
    """Context difficulty class, keyed to pairwise CIEDE2000 distances."""

    FAR = "far"
    SPLIT = "split"
    CLOSE = "close"

    @classmethod
    def from_label(cls, label: str) -> "Condition":
        return cls(label.lower())


@dataclass(frozen=True)
class ConditionThresholds:
    """Distance threshold theta and perceptibility floor epsilon, in dE00 units."""

    theta_dist: float = 20.0
    epsilon: float = 5.0

    def __post_init__(self):
        if not (0 < self.epsilon < self.theta_dist):
            raise ValueError("require 0 < epsilon < theta_dist")


def rgb_to_hsv(c: Color) -> HsvColor:
    """Standard hexcone conversion; hue of grayscale colors is defined as 0."""
    mx = max(c.r, c.g, c.b)
    mn = min(c.r, c.g, c.b)
    delta = mx - mn
    if delta == 0.0:
        h = 0.0
    elif mx == c.r:
        h = 60.0 * (((c.g - c.b) / delta) % 6.0)
    elif mx == c.g:
        h = 60.0 * ((c.b - c.r) / delta + 2.0)
    else:
        h = 60.0 * ((c.r - c.g) / delta + 4.0)
    s = 0.0 if mx == 0.0 else delta / mx
    return HsvColor(h % 360.0, s, mx)


def hsv_to_rgb(h: float, s: float, v: float) -> Color:
    """Inverse hexcone conversion."""
    r, g, b = _hsv_to_rgb_arrays(np.array([h]), np.array([s]), np.array([v]))
    return Color(float(r[0]), float(g[0]), float(b[0]))


def _hsv_to_rgb_arrays(h: np.ndarray, s: np.ndarray, v: np.ndarray):
    """Vectorized hexcone inverse; h in degrees, s and v in [0, 1]."""
    h6 = (np.asarray(h, dtype=np.float64) % 360.0) / 60.0
    i = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return r, g, b


def srgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """Convert normalized sRGB (..., 3) to CIE Lab under D65.

    Uses the standard sRGB transfer curve and the CIE 1976 Lab cube-root
    encoding with the linear segment for small ratios.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    linear = np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _SRGB_TO_XYZ.T
    ratio = xyz / _D65
    eps = (6.0 / 29.0) ** 3
    f = np.where(ratio > eps, np.cbrt(ratio), ratio / (3.0 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def ciede2000_lab(lab1: np.ndarray, lab2: np.ndarray) -> np.ndarray:
    """CIEDE2000 color difference between Lab coordinates (..., 3).

    Implements the published formula including the hue-rotation and
    compensation branch rules; hue handling follows the piecewise mean/
    difference definitions (degrees), with the degenerate C1'*C2' == 0 case
    mapped to zero hue difference and summed mean hue.
    """
    lab1 = np.asarray(lab1, dtype=np.float64)
    lab2 = np.asarray(lab2, dtype=np.float64)
    L1, a1, b1 = lab1[..., 0], lab1[..., 1], lab1[..., 2]
    L2, a2, b2 = lab2[..., 0], lab2[..., 1], lab2[..., 2]

    C1 = np.hypot(a1, b1)
    C2 = np.hypot(a2, b2)
    C_bar = (C1 + C2) / 2.0
    c7 = C_bar ** 7
    G = 0.5 * (1.0 - np.sqrt(c7 / (c7 + 25.0 ** 7)))
    a1p = (1.0 + G) * a1
    a2p = (1.0 + G) * a2
    C1p = np.hypot(a1p, b1)
    C2p = np.hypot(a2p, b2)

    h1p = np.degrees(np.arctan2(b1, a1p)) % 360.0
    h2p = np.degrees(np.arctan2(b2, a2p)) % 360.0
    h1p = np.where(C1p == 0.0, 0.0, h1p)
    h2p = np.where(C2p == 0.0, 0.0, h2p)

    dLp = L2 - L1
    dCp = C2p - C1p

    degenerate = (C1p * C2p) == 0.0
    dh = h2p - h1p
    dh = np.where(dh > 180.0, dh - 360.0, dh)
    dh = np.where(dh < -180.0, dh + 360.0, dh)
    dh = np.where(degenerate, 0.0, dh)
    dHp = 2.0 * np.sqrt(C1p * C2p) * np.sin(np.radians(dh) / 2.0)

    Lp_bar = (L1 + L2) / 2.0
    Cp_bar = (C1p + C2p) / 2.0

    hsum = h1p + h2p
    habs = np.abs(h1p - h2p)
    hp_bar = np.where(habs <= 180.0, hsum / 2.0,
                      np.where(hsum < 360.0, (hsum + 360.0) / 2.0, (hsum - 360.0) / 2.0))
    hp_bar = np.where(degenerate, hsum, hp_bar)

    T = (1.0
         - 0.17 * np.cos(np.radians(hp_bar - 30.0))
         + 0.24 * np.cos(np.radians(2.0 * hp_bar))
         + 0.32 * np.cos(np.radians(3.0 * hp_bar + 6.0))
         - 0.20 * np.cos(np.radians(4.0 * hp_bar - 63.0)))
    d_theta = 30.0 * np.exp(-(((hp_bar - 275.0) / 25.0) ** 2))
    cp7 = Cp_bar ** 7
    RC = 2.0 * np.sqrt(cp7 / (cp7 + 25.0 ** 7))
    SL = 1.0 + 0.015 * (Lp_bar - 50.0) ** 2 / np.sqrt(20.0 + (Lp_bar - 50.0) ** 2)
    SC = 1.0 + 0.045 * Cp_bar
    SH = 1.0 + 0.015 * Cp_bar * T
    RT = -np.sin(np.radians(2.0 * d_theta)) * RC

    tL = dLp / SL
    tC = dCp / SC
    tH = dHp / SH
    return np.sqrt(tL ** 2 + tC ** 2 + tH ** 2 + RT * tC * tH)


def ciede2000(a: Color, b: Color) -> float:
    """CIEDE2000 distance between two colors (sRGB -> Lab -> dE00)."""
    return float(ciede2000_lab(srgb_to_lab(a.as_array()), srgb_to_lab(b.as_array())))


def fourier_features(c: Color) -> np.ndarray:
    """Trigonometric feature vector of a color: 27 cosines then 27 sines.

    For each frequency triple (j,k,l) in {0,1,2}^3 (lexicographic), the phase
    is 2*pi*(j*r + k*g + l*b). Every entry lies in [-1, 1]; features are
    1-periodic per channel.
    """
    return fourier_features_array(c.as_array().reshape(1, 3))[0]


def fourier_features_array(rgb: np.ndarray) -> np.ndarray:
    """Vectorized feature transform: (..., 3) RGB -> (..., 54)."""
    rgb = np.asarray(rgb, dtype=np.float64)
    phase = 2.0 * np.pi * (rgb @ _FREQS.T)
    return np.concatenate([np.cos(phase), np.sin(phase)], axis=-1)


def _pairwise_distances(colors: tuple[Color, Color, Color]) -> np.ndarray:
    lab = srgb_to_lab(np.stack([c.as_array() for c in colors]))
    idx = np.array([(0, 1), (0, 2), (1, 2)])
    return ciede2000_lab(lab[idx[:, 0]], lab[idx[:, 1]])


def classify_condition(colors: tuple[Color, Color, Color], target_index: int,
                       th: ConditionThresholds = ConditionThresholds()) -> Condition:
    """Label a context far/split/close by its pairwise CIEDE2000 distances.

    Far: all three pairwise distances exceed theta. Close: all three within
    theta. Split: everything else -- characterized by the gap pattern between
    the target and its two distractors (one within theta, one beyond).

    Raises PerceptibilityViolation if any pair is closer than epsilon.
    """
    if target_index not in (0, 1, 2):
        raise ValueError(f"target_index must be 0, 1 or 2, got {target_index}")
    d01, d02, d12 = _pairwise_distances(colors)
    dists = np.array([d01, d02, d12])
    if np.any(dists < th.epsilon):
        raise PerceptibilityViolation(
            f"pairwise distance {dists.min():.3f} below epsilon={th.epsilon}")
    if np.all(dists > th.theta_dist):
        return Condition.FAR
    if np.all(dists <= th.theta_dist):
        return Condition.CLOSE
    return Condition.SPLIT


def _classify_batch(dists: np.ndarray, th: ConditionThresholds) -> np.ndarray:
    """Vectorized condition labels for (n, 3) pairwise-distance rows.

    Returns integer codes 0=far, 1=split, 2=close; rows violating epsilon get
    code -1 so callers can reject them.
    """
    far = np.all(dists > th.theta_dist, axis=1)
    close = np.all(dists <= th.theta_dist, axis=1)
    codes = np.ones(len(dists), dtype=int)
    codes[far] = 0
    codes[close] = 2
    codes[np.any(dists < th.epsilon, axis=1)] = -1
    return codes


_CONDITION_CODES = {Condition.FAR: 0, Condition.SPLIT: 1, Condition.CLOSE: 2}


def sample_contexts(cond: Condition, n: int, rng: np.random.Generator,
                    th: ConditionThresholds = ConditionThresholds(),
                    max_attempts: int = 10 ** 6) -> tuple[np.ndarray, np.ndarray]:
    """Rejection-sample n contexts of one condition.

    Returns (colors, targets): colors has shape (n, 3, 3) with rows uniform
    over the RGB cube, targets shape (n,). Target indices are drawn uniformly
    before the accept/reject test. Raises SamplingBudgetExceeded if the total
    attempt budget (max_attempts per requested context) runs out.
    """
    want = _CONDITION_CODES[cond]
    out_colors = np.empty((n, 3, 3))
    out_targets = np.empty(n, dtype=int)
    got = 0
    attempts = 0
    budget = max_attempts * n
    batch = max(256, min(65536, 4 * n))
    pair_idx = np.array([(0, 1), (0, 2), (1, 2)])
    while got < n:
        if attempts >= budget:
            raise SamplingBudgetExceeded(
                f"no {cond.value} context accepted in {attempts} attempts")
        m = min(batch, budget - attempts)
        cand = rng.random((m, 3, 3))
        targets = rng.integers(0, 3, size=m)
        attempts += m
        lab = srgb_to_lab(cand)
        dists = ciede2000_lab(lab[:, pair_idx[:, 0], :], lab[:, pair_idx[:, 1], :])
        ok = _classify_batch(dists, th) == want
        take = min(int(ok.sum()), n - got)
        if take:
            sel = np.flatnonzero(ok)[:take]
            out_colors[got:got + take] = cand[sel]
            out_targets[got:got + take] = targets[sel]
            got += take
    return out_colors, out_targets


def sample_context(cond: Condition, th: ConditionThresholds = ConditionThresholds(),
                   rng: np.random.Generator | None = None,
                   max_attempts: int = 10 ** 6) -> tuple[tuple[Color, Color, Color], int]:
    """Draw one context whose classification matches `cond`.

    Colors are uniform over the RGB cube, resampled until the requested label
    holds and all pairs clear the perceptibility floor.
    """
    if rng is None:
        rng = np.random.default_rng()
    colors, targets = sample_contexts(cond, 1, rng, th, max_attempts)
    triple = tuple(Color(*colors[0, i]) for i in range(3))
    return triple, int(targets[0])
