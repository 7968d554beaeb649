"""PEAQ basic-version ear model, reduced to the two 2f-model features.

Only the FFT ear model path needed for the Average Distorted Block (ADB)
and AvgModDiff1 model output variables is implemented.  Constants follow
ITU-R BS.1387-1 and P. Kabal's examination of it (TSP Lab report, 2002).

The legacy data-boundary rule drops frames before the first and after the
last point where the reference is active.  With :attr:`BoundaryMode.DISABLED`
(the default here) every frame is kept, so passages with a silent reference
still contribute distortion evidence.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .audio import AudioBuffer
from .exceptions import AlignmentError, FormatError


class BoundaryMode(enum.Enum):
    ENABLED = "enabled"
    DISABLED = "disabled"

    @classmethod
    def parse(cls, value) -> "BoundaryMode":
        if isinstance(value, cls):
            return value
        if isinstance(value, bool):
            return cls.ENABLED if value else cls.DISABLED
        value = str(value).lower()
        if value in ("on", "enabled", "true", "legacy"):
            return cls.ENABLED
        if value in ("off", "disabled", "false"):
            return cls.DISABLED
        raise ValueError(f"unknown boundary mode {value!r}")


@dataclass(frozen=True)
class EarModelConfig:
    sample_rate: int = 48_000
    frame_length: int = 2048
    hop: int = 1024
    playback_level_db: float = 92.0
    # level calibration tone (Hz) for playback_level_db at digital full scale
    calibration_hz: float = 1019.5
    # data boundary: sum of |x| over `boundary_window` samples, 16-bit scale
    boundary_threshold: float = 200.0
    boundary_window: int = 5
    modulation_delay_s: float = 0.5

    def __post_init__(self):
        if self.frame_length != 2 * self.hop:
            raise ValueError("frame_length must be twice the hop")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


DEFAULT_CONFIG = EarModelConfig()


@dataclass(frozen=True)
class FeaturePair:
    adb: float
    avg_mod_diff_1: float
    frames_used: int
    frames_total: int
    mode: BoundaryMode = BoundaryMode.DISABLED

    def __post_init__(self):
        if not (math.isfinite(self.adb) and math.isfinite(self.avg_mod_diff_1)):
            raise ValueError("features must be finite")
        if not 0 <= self.frames_used <= self.frames_total:
            raise ValueError("frames_used must lie in [0, frames_total]")

    def as_record(self, item_id=None) -> dict:
        rec = {
            "adb": self.adb,
            "avg_mod_diff_1": self.avg_mod_diff_1,
            "frames_used": self.frames_used,
            "frames_total": self.frames_total,
            "mode": self.mode.value,
        }
        if item_id is not None:
            rec = {"item_id": item_id, **rec}
        return rec


# Critical band lower edges and centres (Hz), basic version, 1/4 Bark steps.
# The upper edge of band i is the lower edge of band i + 1 (18 kHz for the
# last), which also removes the typos in the upper-edge column of the table.
_BAND_LOWER = np.array([
    80.000, 103.445, 127.023, 150.762, 174.694, 198.849, 223.257, 247.950,
    272.959, 298.317, 324.055, 350.207, 376.805, 403.884, 431.478, 459.622,
    488.353, 517.707, 547.721, 578.434, 609.885, 642.114, 675.161, 709.071,
    743.884, 779.647, 816.404, 854.203, 893.091, 933.119, 974.336, 1016.797,
    1060.555, 1105.666, 1152.187, 1200.178, 1249.700, 1300.816, 1353.592,
    1408.094, 1464.392, 1522.559, 1582.668, 1644.795, 1709.021, 1775.427,
    1844.098, 1915.121, 1988.587, 2064.590, 2143.227, 2224.597, 2308.806,
    2395.959, 2486.169, 2579.551, 2676.223, 2776.309, 2879.937, 2987.238,
    3098.350, 3213.415, 3332.579, 3455.993, 3583.817, 3716.212, 3853.817,
    3995.399, 4142.547, 4294.979, 4452.890, 4616.482, 4785.962, 4961.548,
    5143.463, 5331.939, 5527.217, 5729.545, 5939.183, 6156.396, 6381.463,
    6614.671, 6856.316, 7106.708, 7366.166, 7635.020, 7913.614, 8202.302,
    8501.454, 8811.450, 9132.688, 9465.574, 9810.536, 10168.013, 10538.460,
    10922.351, 11320.175, 11732.438, 12159.670, 12602.412, 13061.229,
    13536.710, 14029.458, 14540.103, 15069.295, 15617.710, 16186.049,
    16775.035, 17385.420,
])
_BAND_CENTRE = np.array([
    91.708, 115.216, 138.870, 162.702, 186.742, 211.019, 235.566, 260.413,
    285.593, 311.136, 337.077, 363.448, 390.282, 417.614, 445.479, 473.912,
    502.950, 532.629, 562.988, 594.065, 625.899, 658.533, 692.006, 726.362,
    761.644, 797.898, 835.170, 873.508, 912.959, 953.576, 995.408, 1038.511,
    1082.938, 1128.746, 1175.995, 1224.744, 1275.055, 1326.992, 1380.623,
    1436.014, 1493.237, 1552.366, 1613.474, 1676.641, 1741.946, 1809.474,
    1879.310, 1951.543, 2026.266, 2103.573, 2183.564, 2266.340, 2352.008,
    2440.675, 2532.456, 2627.468, 2725.832, 2827.672, 2933.120, 3042.309,
    3155.379, 3272.475, 3393.745, 3519.344, 3649.432, 3784.176, 3923.748,
    4068.324, 4218.090, 4373.237, 4533.963, 4700.473, 4872.978, 5051.700,
    5236.866, 5428.712, 5627.484, 5833.434, 6046.825, 6267.931, 6497.031,
    6734.420, 6980.399, 7235.284, 7499.397, 7773.077, 8056.673, 8350.547,
    8655.072, 8970.639, 9297.648, 9636.520, 9987.683, 10351.586, 10728.695,
    11119.490, 11524.470, 11944.149, 12379.066, 12829.775, 13294.850,
    13780.887, 14282.503, 14802.338, 15341.057, 15899.345, 16477.914,
    17077.504, 17690.045,
])
_BAND_UPPER = np.append(_BAND_LOWER[1:], 18000.0)
BAND_COUNT = _BAND_CENTRE.size
BARK_STEP = 0.25
_GROUP_FLOOR = 1e-12

# detection probability: step-size polynomial and slope constants
_STEP_POLY = (-0.198719, 0.0550197, -0.00102438, 5.05622e-6, 9.01033e-11)
_STEP_D1, _STEP_D2, _STEP_G = 5.95072, 6.39468, 1.71332


def band_edges():
    """Return ``(lower, centre, upper)`` band frequencies in Hz."""
    return _BAND_LOWER.copy(), _BAND_CENTRE.copy(), _BAND_UPPER.copy()


def _time_constants(tau_100: float, tau_min: float, frame_rate: float) -> np.ndarray:
    tau = tau_min + (100.0 / _BAND_CENTRE) * (tau_100 - tau_min)
    return np.exp(-1.0 / (frame_rate * tau))


def internal_noise() -> np.ndarray:
    """Internal ear noise energy per band."""
    return 10.0 ** (0.1456 * (_BAND_CENTRE / 1000.0) ** -0.8)


class _EarModel:
    """Precomputed tables for one :class:`EarModelConfig`."""

    def __init__(self, config: EarModelConfig):
        self.config = config
        n = config.frame_length
        fs = config.sample_rate

        hann = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / (n - 1)))
        self.window = self._gain(config) * hann

        freqs = np.arange(n // 2 + 1) * fs / n
        f_khz = freqs[1:] / 1000.0
        weight_db = (
            -2.184 * f_khz**-0.8
            + 6.5 * np.exp(-0.6 * (f_khz - 3.3) ** 2)
            - 0.001 * f_khz**3.6
        )
        self.ear_weight = np.concatenate([[0.0], 10.0 ** (weight_db / 10.0)])

        df = fs / n
        k = np.arange(n // 2 + 1)[:, None]
        overlap = np.minimum(_BAND_UPPER[None, :], (k + 0.5) * df) - np.maximum(
            _BAND_LOWER[None, :], (k - 0.5) * df
        )
        self.grouping = np.maximum(overlap / df, 0.0)

        self.noise = internal_noise()

        idx = np.arange(BAND_COUNT)
        diff = idx[None, :] - idx[:, None]  # [source, target] = target - source
        a_lower = 10.0 ** (-2.7 * BARK_STEP * 0.4)
        self._lower_matrix = np.where(diff <= 0, a_lower ** -np.minimum(diff, 0), 0.0)
        self._upper_dist = np.where(diff > 0, diff, 0).astype(np.float64)
        self._upper_mask = diff > 0
        self.spread_norm = self._spread_raw(np.ones((1, BAND_COUNT)))[0]

        rate = config.frame_rate
        self.smear_coef = _time_constants(0.030, 0.008, rate)
        self.mod_coef = _time_constants(0.050, 0.008, rate)

    @staticmethod
    def _gain(config: EarModelConfig) -> float:
        n = config.frame_length
        w = n - 1
        fc = config.calibration_hz / config.sample_rate
        df = 1.0 / n
        k = math.floor(fc / df)
        dfw = min((k + 1) * df - fc, fc - k * df) * w
        peak = 1.0 if dfw == 0 else math.sin(math.pi * dfw) / (math.pi * dfw * (1 - dfw**2))
        return 10.0 ** (config.playback_level_db / 20.0) / (peak * w / 4.0)

    def _spread_raw(self, energy: np.ndarray) -> np.ndarray:
        dz = BARK_STEP
        nc = BAND_COUNT
        a_lower = 10.0 ** (2.7 * dz)
        a_upper_c = 10.0 ** ((-2.4 - 23.0 / _BAND_CENTRE) * dz)
        a_upper = a_upper_c[None, :] * energy ** (0.2 * dz)
        m = np.arange(nc)
        g_lower = (1.0 - a_lower ** -(m + 1.0)) / (1.0 - 1.0 / a_lower)
        g_upper = (1.0 - a_upper ** (nc - m)[None, :]) / (1.0 - a_upper)
        spread_in = (energy / (g_lower[None, :] + g_upper - 1.0)) ** 0.4

        out = spread_in @ self._lower_matrix
        log_a = 0.4 * np.log(a_upper)
        for lo in range(0, energy.shape[0], 128):
            block = slice(lo, lo + 128)
            upper = np.exp(log_a[block, :, None] * self._upper_dist[None]) * self._upper_mask[None]
            out[block] += np.einsum("fl,fli->fi", spread_in[block], upper)
        return out**2.5

    def spread(self, energy: np.ndarray) -> np.ndarray:
        """Level-dependent frequency spreading of band energies ``(frames, bands)``."""
        return self._spread_raw(energy) / self.spread_norm


@lru_cache(maxsize=8)
def _model(config: EarModelConfig) -> _EarModel:
    return _EarModel(config)


def frame_count(n: int, config: EarModelConfig = DEFAULT_CONFIG) -> int:
    if n <= config.frame_length:
        return 1
    return (n - config.frame_length) // config.hop + 1


def _as_mono(signal) -> np.ndarray:
    if isinstance(signal, AudioBuffer):
        if signal.channel_count != 1:
            raise FormatError("expected a mono buffer")
        return signal.samples[0]
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise FormatError("expected a 1-D signal")
    return x


def frame_and_transform(signal, config: EarModelConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Hann-windowed, level-calibrated DFT of every frame.

    Returns a complex array of shape ``(frames, frame_length // 2 + 1)``.
    Inputs shorter than one frame are zero-padded to a single frame.
    """
    x = _as_mono(signal)
    n = config.frame_length
    if x.size < n:
        x = np.pad(x, (0, n - x.size))
    frames = np.lib.stride_tricks.sliding_window_view(x, n)[:: config.hop]
    return np.fft.rfft(frames * _model(config).window, axis=1)


@dataclass(frozen=True)
class Excitation:
    """Excitation patterns per frame and band.

    ``smeared`` includes time-domain spreading and feeds the detection
    probability; ``unsmeared`` feeds the modulation processing.
    """

    smeared: np.ndarray
    unsmeared: np.ndarray


def excitation_patterns(spectra: np.ndarray, config: EarModelConfig = DEFAULT_CONFIG) -> Excitation:
    """Outer/middle ear weighting, band grouping, spreading and time smearing."""
    model = _model(config)
    power = np.abs(spectra) ** 2 * model.ear_weight
    pitch = np.maximum(power @ model.grouping, _GROUP_FLOOR) + model.noise
    unsmeared = model.spread(pitch)
    smeared = np.empty_like(unsmeared)
    a = model.smear_coef
    state = np.zeros(BAND_COUNT)
    for i, frame in enumerate(unsmeared):
        state = a * state + (1.0 - a) * frame
        smeared[i] = np.maximum(state, frame)
    return Excitation(smeared, unsmeared)


def noise_floor(config: EarModelConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Excitation of a silent frame: the spread internal noise."""
    model = _model(config)
    return model.spread((_GROUP_FLOOR + model.noise)[None, :])[0]


def modulation_patterns(unsmeared: np.ndarray, config: EarModelConfig = DEFAULT_CONFIG):
    """Modulation per frame and band from the loudness envelope derivative.

    Returns:
        (modulation, mean_loudness): both of shape ``(frames, bands)``.
    """
    model = _model(config)
    a = model.mod_coef
    rate = config.frame_rate
    loud = unsmeared**0.3
    mod = np.empty_like(loud)
    avg = np.empty_like(loud)
    deriv = np.zeros(BAND_COUNT)
    mean = np.zeros(BAND_COUNT)
    prev = np.zeros(BAND_COUNT)
    for i, cur in enumerate(loud):
        deriv = a * deriv + (1.0 - a) * rate * np.abs(cur - prev)
        mean = a * mean + (1.0 - a) * cur
        prev = cur
        mod[i] = deriv / (1.0 + mean / 0.3)
        avg[i] = mean
    return mod, avg


def detection_probability(ref_excitation: np.ndarray, test_excitation: np.ndarray):
    """Per-frame detection probability and distortion step count.

    Returns:
        (p, q): arrays of shape ``(frames,)``.
    """
    ref_db = 10.0 * np.log10(ref_excitation)
    test_db = 10.0 * np.log10(test_excitation)
    err = ref_db - test_db
    louder_ref = err > 0
    level = np.where(louder_ref, 0.3 * ref_db + 0.7 * test_db, test_db)
    slope = np.where(louder_ref, 4.0, 6.0)
    c0, c1, c2, c3, c4 = _STEP_POLY
    with np.errstate(divide="ignore", over="ignore", under="ignore"):
        poly = c0 + level * (c1 + level * (c2 + level * (c3 + level * c4)))
        step = np.where(
            level > 0, _STEP_D1 * (_STEP_D2 / np.maximum(level, 1e-30)) ** _STEP_G + poly, 1e30
        )
        pc = 1.0 - 0.5 ** ((err / step) ** slope)
    qc = np.abs(np.trunc(err)) / step
    p = 1.0 - np.prod(1.0 - pc, axis=1)
    q = qc.sum(axis=1)
    return p, q


def average_distorted_block(p: np.ndarray, q: np.ndarray) -> float:
    distorted = p > 0.5
    count = int(distorted.sum())
    if count == 0:
        return 0.0
    total = float(q[distorted].sum())
    if total > 0:
        return math.log10(total / count)
    return -0.5


def _modulation_difference(mod_ref, mod_test, avg_ref):
    """Per-frame modulation difference (offset 1) and its temporal weight."""
    num = np.abs(mod_test - mod_ref)
    diff = (100.0 / BAND_COUNT) * np.sum(num / (1.0 + mod_ref), axis=1)
    noise = internal_noise() ** 0.3
    weight = np.sum(avg_ref / (avg_ref + 100.0 * noise), axis=1)
    return diff, weight


def data_boundary(reference, config: EarModelConfig = DEFAULT_CONFIG):
    """First and last sample index where the reference is active, or ``None``.

    Activity means the absolute sum over ``boundary_window`` consecutive
    samples exceeds ``boundary_threshold`` in 16-bit integer units.
    """
    x = np.abs(_as_mono(reference)) * 32768.0
    w = config.boundary_window
    if x.size < w:
        return None
    sums = np.convolve(x, np.ones(w), mode="valid")
    active = np.flatnonzero(sums > config.boundary_threshold)
    if active.size == 0:
        return None
    return int(active[0]), int(active[-1] + w - 1)


def _frame_range(reference, total: int, mode: BoundaryMode, config: EarModelConfig):
    if mode is BoundaryMode.DISABLED:
        return 0, total
    bounds = data_boundary(reference, config)
    if bounds is None:
        return 0, 0
    start, end = bounds
    first = min(start // config.hop, total - 1)
    last = min(end // config.hop, total - 1)
    return first, last + 1


def compute_features(
    reference,
    probe,
    mode=BoundaryMode.DISABLED,
    config: EarModelConfig = DEFAULT_CONFIG,
) -> FeaturePair:
    """ADB and AvgModDiff1 for one mono reference/probe pair.

    Raises:
        AlignmentError: lengths differ.
        FormatError: empty input or non-mono buffers.
    """
    mode = BoundaryMode.parse(mode)
    ref = _as_mono(reference)
    test = _as_mono(probe)
    if ref.size != test.size:
        raise AlignmentError(f"reference has {ref.size} samples, probe has {test.size}")
    if ref.size == 0:
        raise FormatError("zero-length input")

    total = frame_count(ref.size, config)
    first, stop = _frame_range(ref, total, mode, config)
    used = stop - first
    if used == 0:
        return FeaturePair(0.0, 0.0, 0, total, mode)

    span = slice(first * config.hop, (stop - 1) * config.hop + config.frame_length)
    exc_ref = excitation_patterns(frame_and_transform(ref[span], config), config)
    exc_test = excitation_patterns(frame_and_transform(test[span], config), config)

    p, q = detection_probability(exc_ref.smeared, exc_test.smeared)
    adb = average_distorted_block(p, q)

    mod_ref, avg_ref = modulation_patterns(exc_ref.unsmeared, config)
    mod_test, _ = modulation_patterns(exc_test.unsmeared, config)
    diff, weight = _modulation_difference(mod_ref, mod_test, avg_ref)
    delay = math.ceil(config.modulation_delay_s * config.frame_rate)
    wsum = weight[delay:].sum()
    amd1 = float(np.sum(weight[delay:] * diff[delay:]) / wsum) if wsum > 0 else 0.0
    return FeaturePair(float(adb), amd1, used, total, mode)


class PeaqFeatureExtractor(TransformerMixin, BaseEstimator):
    """Transformer from (reference, probe) pairs to ``[adb, avg_mod_diff_1]``.

    ``X`` has shape ``(n_pairs, 2, n_samples)`` with the reference in slot 0.
    """

    def __init__(self, boundary="disabled", playback_level_db=92.0):
        self.boundary = boundary
        self.playback_level_db = playback_level_db

    def fit(self, X, y=None):
        self._check(X)
        self.n_features_in_ = 2
        return self

    def _check(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3 or X.shape[1] != 2:
            raise FormatError("X must have shape (n_pairs, 2, n_samples)")
        return X

    def transform(self, X):
        X = self._check(X)
        config = EarModelConfig(playback_level_db=self.playback_level_db)
        out = np.empty((X.shape[0], 2))
        for i, (ref, test) in enumerate(X):
            f = compute_features(ref, test, self.boundary, config)
            out[i] = f.adb, f.avg_mod_diff_1
        return out

    def get_feature_names_out(self, input_features=None):
        return np.array(["adb", "avg_mod_diff_1"], dtype=object)
