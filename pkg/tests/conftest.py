import numpy as np
import pytest

from qcremix.audio import SAMPLE_RATE, AudioBuffer, save_wav
from qcremix.datagen.synthetic import synthetic_background, synthetic_speech


@pytest.fixture(scope="session")
def speech_4s():
    return synthetic_speech(4.0, seed=11)


@pytest.fixture(scope="session")
def background_4s():
    return synthetic_background(4.0, seed=12)


def white_noise_at_snr(reference, snr_db, seed):
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(reference.size)
    p_ref = np.mean(reference**2)
    return noise * np.sqrt(p_ref / (np.mean(noise**2) * 10 ** (snr_db / 10)))


@pytest.fixture
def stems_dir(tmp_path):
    """Two speech stems (one long enough for two clips) and one background."""
    root = tmp_path / "stems"
    (root / "speech").mkdir(parents=True)
    (root / "background").mkdir()
    save_wav(AudioBuffer(synthetic_speech(8.2, seed=1)), root / "speech" / "a.wav", 16)
    save_wav(AudioBuffer(synthetic_speech(4.0, seed=2)), root / "speech" / "b.wav", 16)
    save_wav(AudioBuffer(synthetic_background(5.0, seed=3)), root / "background" / "m.wav", 16)
    return root


def sine(freq, seconds=1.0, amp=1.0, fs=SAMPLE_RATE):
    t = np.arange(int(round(seconds * fs))) / fs
    return amp * np.sin(2 * np.pi * freq * t)
