"""Artificial separation distortions and the mixing primitives.

Every function maps a signal to a signal of the same length.  Arguments may
be 1-D arrays or :class:`~qcremix.audio.AudioBuffer` objects; buffers are
processed channel by channel and returned as buffers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from ..audio import SAMPLE_RATE, AudioBuffer
from ..exceptions import AlignmentError, FormatError

STFT_LENGTH = 1024
STFT_HOP = 512

KINDS = ("musical_noise", "lowpass", "clipping", "tf_blur", "background_readdition")

# (low, high) per parameter; the low/high end nearest transparency is where
# the distortion just becomes audible.  Tune by listening.
RANDOM_RANGES = {
    "musical_noise": {"strength": (0.05, 0.5)},
    "lowpass": {"cutoff_hz": (3000.0, 16000.0)},
    "clipping": {"fraction": (0.4, 1.0)},
    "tf_blur": {"time_ms": (11.0, 40.0), "freq_hz": (47.0, 250.0)},
    "background_readdition": {"atten_db": (-45.0, -45.0)},
}

FIXED_PARAMS = {
    "musical_noise": {"strength": 0.9},
    "lowpass": {"cutoff_hz": 1000.0, "order": 3},
    "clipping": {"fraction": 0.5},
    "tf_blur": {"time_ms": 50.0, "freq_hz": 500.0},
}


def _per_channel(func):
    def wrapper(x, *args, **kwargs):
        if isinstance(x, AudioBuffer):
            chans = [func(ch, *args, fs=x.sample_rate, **kwargs) for ch in x.samples]
            return AudioBuffer(np.stack(chans), x.sample_rate)
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise FormatError("expected a 1-D signal or an AudioBuffer")
        return func(x, *args, **kwargs)

    wrapper.__name__ = func.__name__
    wrapper.__doc__ = func.__doc__
    return wrapper


def _stft(x, fs):
    _, _, z = sps.stft(x, fs, window="hann", nperseg=STFT_LENGTH, noverlap=STFT_LENGTH - STFT_HOP)
    return z


def _istft(z, fs, n):
    _, y = sps.istft(z, fs, window="hann", nperseg=STFT_LENGTH, noverlap=STFT_LENGTH - STFT_HOP)
    y = y[:n]
    if y.size < n:
        y = np.pad(y, (0, n - y.size))
    return y


@_per_channel
def musical_noise(x, strength=0.9, seed=0, fs=SAMPLE_RATE):
    """Random spectral gating: each STFT bin is zeroed with probability ``strength``.

    The surviving isolated bins give the warbling "musical noise" left by
    spectral-subtraction style separators.
    """
    if not 0.0 <= strength <= 1.0:
        raise ValueError("strength must lie in [0, 1]")
    if strength == 0.0 or x.size == 0:
        return x.copy()
    z = _stft(x, fs)
    keep = np.random.default_rng(seed).random(z.shape) >= strength
    return _istft(z * keep, fs, x.size)


@_per_channel
def lowpass_butterworth(x, order=3, cutoff_hz=1000.0, fs=SAMPLE_RATE):
    """Causal Butterworth low-pass."""
    if not 0 < cutoff_hz < fs / 2:
        raise ValueError("cutoff must lie strictly between 0 and Nyquist")
    sos = sps.butter(int(order), cutoff_hz, btype="lowpass", fs=fs, output="sos")
    return sps.sosfilt(sos, x)


@_per_channel
def clip(x, fraction=0.5, fs=SAMPLE_RATE):
    """Hard-limit at ``fraction`` of the signal's peak magnitude."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    peak = np.max(np.abs(x)) if x.size else 0.0
    if peak == 0.0 or fraction == 1.0:
        return x.copy()
    limit = fraction * peak
    return np.clip(x, -limit, limit)


def _tile_mean(mag, bins, frames):
    f_edges = np.arange(0, mag.shape[0], bins)
    t_edges = np.arange(0, mag.shape[1], frames)
    sums = np.add.reduceat(np.add.reduceat(mag, f_edges, axis=0), t_edges, axis=1)
    counts = np.outer(
        np.diff(np.append(f_edges, mag.shape[0])), np.diff(np.append(t_edges, mag.shape[1]))
    )
    means = sums / counts
    return np.repeat(np.repeat(means, np.diff(np.append(f_edges, mag.shape[0])), axis=0),
                     np.diff(np.append(t_edges, mag.shape[1])), axis=1)


def tile_shape(time_ms, freq_hz, fs=SAMPLE_RATE):
    """STFT frames and bins covered by one ``time_ms`` x ``freq_hz`` tile."""
    frames = max(1, int(round(time_ms / 1000.0 * fs / STFT_HOP)))
    bins = max(1, int(round(freq_hz / (fs / STFT_LENGTH))))
    return frames, bins


@_per_channel
def reduce_tf_resolution(x, time_ms=50.0, freq_hz=500.0, fs=SAMPLE_RATE):
    """Average STFT magnitudes over time-frequency tiles, keeping the phase."""
    if x.size == 0:
        return x.copy()
    frames, bins = tile_shape(time_ms, freq_hz, fs)
    z = _stft(x, fs)
    if frames == 1 and bins == 1:
        return _istft(z, fs, x.size)
    mag = _tile_mean(np.abs(z), bins, frames)
    return _istft(mag * np.exp(1j * np.angle(z)), fs, x.size)


@dataclass(frozen=True)
class DistortionSpec:
    kind: str
    params: dict = field(default_factory=dict)
    randomized: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distortion kind {self.kind!r}")

    def as_record(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "randomized": self.randomized}


def randomize_distortion(kind, seed, ranges=None) -> DistortionSpec:
    """Draw parameters uniformly from the configured range of ``kind``."""
    ranges = (ranges or RANDOM_RANGES)[kind]
    rng = np.random.default_rng(seed)
    params = {name: float(rng.uniform(lo, hi)) for name, (lo, hi) in sorted(ranges.items())}
    if kind == "lowpass":
        params["order"] = 3
    return DistortionSpec(kind, params, randomized=True)


def apply_distortion(spec: DistortionSpec, x, seed=0):
    """Apply a speech-only distortion described by ``spec``."""
    p = spec.params
    if spec.kind == "musical_noise":
        return musical_noise(x, p.get("strength", 0.9), seed=seed)
    if spec.kind == "lowpass":
        return lowpass_butterworth(x, p.get("order", 3), p.get("cutoff_hz", 1000.0))
    if spec.kind == "clipping":
        return clip(x, p.get("fraction", 0.5))
    if spec.kind == "tf_blur":
        return reduce_tf_resolution(x, p.get("time_ms", 50.0), p.get("freq_hz", 500.0))
    raise ValueError(f"{spec.kind} is not a signal distortion")


def _samples(x):
    return x.samples if isinstance(x, AudioBuffer) else np.atleast_2d(np.asarray(x, dtype=np.float64))


def _like(template, data):
    if isinstance(template, AudioBuffer):
        return AudioBuffer(data, template.sample_rate)
    return data[0] if np.ndim(template) == 1 else data


def active_power(speech, background, threshold_db=-50.0, frame=1024):
    """Mean power of both signals over frames where ``speech`` is active.

    A frame is active when the speech RMS (over all channels) exceeds
    ``threshold_db`` dBFS.
    """
    s = _samples(speech)
    b = _samples(background)
    n = s.shape[1]
    n_frames = max(1, math.ceil(n / frame))
    pad = n_frames * frame - n
    sp = np.pad(s, ((0, 0), (0, pad))).reshape(s.shape[0], n_frames, frame)
    bp = np.pad(b, ((0, 0), (0, pad))).reshape(b.shape[0], n_frames, frame)
    lengths = np.full(n_frames, frame)
    lengths[-1] = frame - pad
    s_energy = (sp**2).sum(axis=(0, 2))
    rms = np.sqrt(s_energy / (lengths * s.shape[0]))
    active = rms > 10 ** (threshold_db / 20)
    count = lengths[active].sum() * s.shape[0]
    if count == 0:
        return 0.0, 0.0
    return s_energy[active].sum() / count, (bp**2).sum(axis=(0, 2))[active].sum() / count


def mix_at_snr(speech, background, snr_db, threshold_db=-50.0):
    """Scale ``background`` to ``snr_db`` below the active speech and add.

    Returns:
        (mixture, scaled_background) in the input's type.

    Raises:
        FormatError: the speech is silent (SNR undefined) or the background is.
    """
    s = _samples(speech)
    b = _samples(background)
    if s.shape != b.shape:
        raise AlignmentError(f"speech {s.shape} and background {b.shape} differ")
    ps, pb = active_power(s, b, threshold_db)
    if ps == 0.0:
        raise FormatError("speech is silent; SNR is undefined")
    if pb == 0.0:
        raise FormatError("background is silent over the active speech")
    scaled = b * math.sqrt(ps / (pb * 10 ** (snr_db / 10)))
    return _like(speech, s + scaled), _like(background, scaled)


def remix_components(target, background, atten_db):
    """``target + 10**(atten_db/20) * background``; ``-inf`` returns the target."""
    t = _samples(target)
    b = _samples(background)
    if t.shape != b.shape:
        raise AlignmentError(f"target {t.shape} and background {b.shape} differ")
    if atten_db == -math.inf:
        return _like(target, t.copy())
    return _like(target, t + 10 ** (atten_db / 20) * b)


@_per_channel
def _separate(mix, speech, background, error, seed, fs=SAMPLE_RATE):
    zs = _stft(speech, fs)
    zb = _stft(background, fs)
    zx = _stft(mix, fs)
    ps, pb = np.abs(zs) ** 2, np.abs(zb) ** 2
    mask = ps / np.maximum(ps + pb, 1e-20)
    logit = np.log(np.clip(mask, 1e-6, 1 - 1e-6) / np.clip(1 - mask, 1e-6, 1))
    noisy = logit + np.random.default_rng(seed).normal(0.0, error, size=mask.shape)
    return _istft(zx / (1.0 + np.exp(-noisy)), fs, mix.size)


def simulate_separation(speech, background, error=1.0, seed=0):
    """Imperfect ratio-mask separation of ``speech + background``.

    The oracle ratio mask is perturbed in the logit domain with Gaussian
    noise of standard deviation ``error``, which produces both background
    leakage and target distortion.  Returns the estimated target.
    """
    s = _samples(speech)
    b = _samples(background)
    chans = [_separate(x, sc, bc, error, seed + i) for i, (x, sc, bc) in enumerate(zip(s + b, s, b))]
    return _like(speech, np.stack(chans))


def augment_phase_invert(X, y):
    """Append a sign-inverted copy of every example with the same label.

    Originals come first, inversions second, so a batch of 64 becomes 128.
    """
    X = np.asarray(X)
    y = np.asarray(y)
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y disagree on the number of examples")
    return np.concatenate([X, -X]), np.concatenate([y, y])
