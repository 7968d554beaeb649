import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qcremix.exceptions import AlignmentError, FormatError
from qcremix.peaq import (
    BAND_COUNT,
    DEFAULT_CONFIG,
    _model,
    BoundaryMode,
    EarModelConfig,
    FeaturePair,
    PeaqFeatureExtractor,
    average_distorted_block,
    band_edges,
    compute_features,
    data_boundary,
    excitation_patterns,
    frame_and_transform,
    frame_count,
    modulation_patterns,
    noise_floor,
)

from .conftest import sine, white_noise_at_snr


class TestConfig:
    def test_frame_is_twice_hop(self):
        with pytest.raises(ValueError):
            EarModelConfig(frame_length=2048, hop=512)

    def test_digest_changes_with_level(self):
        assert EarModelConfig().digest() != EarModelConfig(playback_level_db=80).digest()

    def test_band_table(self):
        lower, centre, upper = band_edges()
        assert BAND_COUNT == 109
        assert np.all(lower < centre) and np.all(centre < upper)
        np.testing.assert_array_equal(upper[:-1], lower[1:])
        assert lower[0] == 80.0 and upper[-1] == 18000.0


class TestFraming:
    def test_single_frame(self):
        assert frame_and_transform(np.zeros(2048)).shape == (1, 1025)

    @pytest.mark.parametrize("n", [2048, 3072, 4096, 192_000])
    def test_frame_count(self, n):
        assert frame_and_transform(np.zeros(n)).shape[0] == (n - 2048) // 1024 + 1 == frame_count(n)

    def test_dc_peaks_at_bin_zero(self):
        mag = np.abs(frame_and_transform(np.ones(2048)))[0]
        assert np.argmax(mag) == 0
        # symmetric Hann: main lobe covers bins 0-1, sidelobes stay below -60 dB
        assert np.all(mag[2:] < 1e-3 * mag[0])

    def test_1khz_peak_bin(self):
        mag = np.abs(frame_and_transform(sine(1000.0, 0.1)))
        assert np.all(np.argmax(mag, axis=1) == round(1000 * 2048 / 48000)) and round(1000 * 2048 / 48000) == 43


class TestExcitation:
    def test_silence_gives_noise_floor(self):
        exc = excitation_patterns(frame_and_transform(np.zeros(8192)))
        np.testing.assert_allclose(exc.unsmeared, np.broadcast_to(noise_floor(), exc.unsmeared.shape), rtol=1e-12)
        np.testing.assert_allclose(exc.smeared, exc.unsmeared, rtol=1e-12)

    def test_louder_input_raises_every_band(self):
        x = np.random.default_rng(0).standard_normal(8192) * 0.05
        quiet = excitation_patterns(frame_and_transform(x)).smeared
        loud = excitation_patterns(frame_and_transform(2 * x)).smeared
        assert np.all(loud > quiet)

    @pytest.mark.parametrize("freq", [250.0, 1000.0, 4000.0])
    def test_tone_maximum_in_its_band(self, freq):
        lower, _, upper = band_edges()
        band = int(np.flatnonzero((lower <= freq) & (freq < upper))[0])
        spectra = frame_and_transform(sine(freq, 0.2, 0.5))
        grouped = (np.abs(spectra) ** 2 * _model(DEFAULT_CONFIG).ear_weight) @ _model(DEFAULT_CONFIG).grouping
        assert np.all(np.argmax(grouped, axis=1) == band)
        # the upward spreading slope is shallower, so the peak may move up one band
        exc = excitation_patterns(spectra).unsmeared
        assert np.all(np.isin(np.argmax(exc, axis=1) - band, (0, 1)))
        assert np.argmax(exc.mean(axis=0)) - band in (0, 1)


class TestModulation:
    def test_stationary_settles_to_zero(self):
        flat = np.full((400, BAND_COUNT), 1e4)
        mod, _ = modulation_patterns(flat)
        assert np.all(mod >= 0)
        assert np.max(mod[-1]) < 1e-6

    def _am_tone(self, depth):
        t = np.arange(48000) / 48000
        return 0.3 * (1 + depth * np.sin(2 * np.pi * 4 * t)) * np.sin(2 * np.pi * 1000 * t)

    def test_am_tone_modulated_in_carrier_band(self):
        lower, _, upper = band_edges()
        band = int(np.flatnonzero((lower <= 1000) & (1000 < upper))[0])
        exc = excitation_patterns(frame_and_transform(self._am_tone(0.5))).unsmeared
        mod, _ = modulation_patterns(exc)
        assert mod[20:, band].mean() > 0

    def test_deeper_modulation_measures_higher(self):
        lower, _, upper = band_edges()
        band = int(np.flatnonzero((lower <= 1000) & (1000 < upper))[0])
        levels = []
        for depth in (0.25, 0.5, 1.0):
            exc = excitation_patterns(frame_and_transform(self._am_tone(depth))).unsmeared
            levels.append(modulation_patterns(exc)[0][20:, band].mean())
        assert levels[0] < levels[1] < levels[2]


class TestAverageDistortedBlock:
    def test_no_distorted_frames(self):
        assert average_distorted_block(np.array([0.1, 0.5]), np.array([3.0, 4.0])) == 0.0

    def test_zero_steps(self):
        assert average_distorted_block(np.array([0.9]), np.array([0.0])) == -0.5

    def test_log_of_mean_steps(self):
        p = np.array([0.9, 0.2, 0.6])
        q = np.array([10.0, 50.0, 30.0])
        assert average_distorted_block(p, q) == pytest.approx(np.log10(40.0 / 2))


class TestComputeFeatures:
    def test_identical_signals(self, speech_4s):
        f = compute_features(speech_4s, speech_4s)
        assert f.adb == 0.0
        assert f.avg_mod_diff_1 <= 1e-6
        assert f.frames_used == f.frames_total

    def test_silent_reference_enabled_vs_disabled(self):
        ref = np.zeros(96_000)
        probe = np.random.default_rng(0).standard_normal(96_000) * 0.1
        on = compute_features(ref, probe, BoundaryMode.ENABLED)
        off = compute_features(ref, probe, BoundaryMode.DISABLED)
        assert (on.adb, on.avg_mod_diff_1, on.frames_used) == (0.0, 0.0, 0)
        assert off.avg_mod_diff_1 > on.avg_mod_diff_1
        assert off.frames_used == off.frames_total

    def test_half_silent_reference(self, speech_4s):
        ref = speech_4s.copy()
        ref[: ref.size // 2] = 0.0
        probe = ref + white_noise_at_snr(speech_4s, 20, 1) * 0.5
        on = compute_features(ref, probe, "on")
        off = compute_features(ref, probe, "off")
        assert on.frames_used < on.frames_total
        assert off.adb >= on.adb
        assert off.avg_mod_diff_1 > on.avg_mod_diff_1

    def test_deterministic(self, speech_4s):
        probe = speech_4s + white_noise_at_snr(speech_4s, 10, 3)
        a = compute_features(speech_4s, probe)
        b = compute_features(speech_4s, probe)
        assert a == b

    def test_length_mismatch(self):
        with pytest.raises(AlignmentError):
            compute_features(np.zeros(4096), np.zeros(4097))

    def test_empty(self):
        with pytest.raises(FormatError):
            compute_features(np.zeros(0), np.zeros(0))

    @pytest.mark.parametrize("seed", range(5))
    def test_snr_ladder_monotone(self, seed):
        from qcremix.datagen.synthetic import synthetic_speech

        ref = synthetic_speech(4.0, seed=100 + seed)
        amd = [compute_features(ref, ref + white_noise_at_snr(ref, snr, seed)).avg_mod_diff_1
               for snr in (40, 20, 10, 0)]
        assert all(b >= a for a, b in zip(amd, amd[1:]))

    def test_record(self):
        rec = FeaturePair(0.1, 2.0, 3, 4).as_record("x")
        assert rec == {"item_id": "x", "adb": 0.1, "avg_mod_diff_1": 2.0, "frames_used": 3,
                       "frames_total": 4, "mode": "disabled"}

    def test_frames_used_bounds(self):
        with pytest.raises(ValueError):
            FeaturePair(0.0, 0.0, 5, 4)


class TestDataBoundary:
    def test_silence(self):
        assert data_boundary(np.zeros(1000)) is None

    def test_threshold_in_int16_units(self):
        x = np.zeros(1000)
        x[500:505] = 41 / 32768  # five samples summing to 205 > 200
        assert data_boundary(x) == (500, 504)
        x[500:505] = 40 / 32768  # exactly 200 is not above the threshold
        assert data_boundary(x) is None


class TestBoundaryModeParse:
    @pytest.mark.parametrize("value, mode", [("on", BoundaryMode.ENABLED), ("off", BoundaryMode.DISABLED),
                                             (True, BoundaryMode.ENABLED), ("disabled", BoundaryMode.DISABLED)])
    def test_parse(self, value, mode):
        assert BoundaryMode.parse(value) is mode

    def test_bad(self):
        with pytest.raises(ValueError):
            BoundaryMode.parse("sometimes")


class TestExtractor:
    def test_transform_shape(self, speech_4s):
        x = speech_4s[:48000]
        X = np.stack([np.stack([x, x]), np.stack([x, x + 0.01])])
        feats = PeaqFeatureExtractor().fit(X).transform(X)
        assert feats.shape == (2, 2)
        assert feats[0, 0] == 0.0
        assert feats[1, 1] > feats[0, 1]

    def test_bad_shape(self):
        with pytest.raises(FormatError):
            PeaqFeatureExtractor().fit(np.zeros((2, 3, 10)))

    def test_get_params(self):
        assert PeaqFeatureExtractor(boundary="on").get_params()["boundary"] == "on"


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 0.5))
def test_features_finite_for_noise(seed, level):
    rng = np.random.default_rng(seed)
    ref = rng.standard_normal(12_288) * level
    probe = ref + rng.standard_normal(12_288) * level * 0.3
    f = compute_features(ref, probe)
    assert np.isfinite(f.adb) and f.avg_mod_diff_1 >= 0
