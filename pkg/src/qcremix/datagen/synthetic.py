"""Fully synthetic speech-like and background stems.

These stand in for recorded dialogue and music/effects stems when none are
supplied.  Speech is a train of voiced syllables (harmonic source shaped by
three formants, with pitch glides) plus occasional fricative bursts and
pauses; backgrounds are chord sequences with percussive hits, or coloured
noise with a slow level drift.
"""

from __future__ import annotations

import numpy as np
from scipy import signal as sps

from ..audio import SAMPLE_RATE


def _rms_normalise(x, level_db):
    rms = np.sqrt(np.mean(x**2))
    if rms == 0:
        return x
    return x * (10 ** (level_db / 20) / rms)


def _formant_gain(freqs, formants, bandwidths):
    gain = np.zeros_like(freqs)
    for f, bw in zip(formants, bandwidths):
        gain += np.exp(-0.5 * ((freqs - f) / bw) ** 2)
    return gain + 0.02


def synthetic_speech(duration, seed=0, fs=SAMPLE_RATE, level_db=-23.0):
    """Speech-like test signal of ``duration`` seconds."""
    rng = np.random.default_rng(seed)
    n = int(round(duration * fs))
    out = np.zeros(n)
    base_f0 = rng.uniform(95, 230)
    pos = int(rng.uniform(0.0, 0.15) * fs)
    while pos < n:
        if rng.random() < 0.15:
            pos += int(rng.uniform(0.15, 0.45) * fs)
            continue
        length = int(rng.uniform(0.09, 0.32) * fs)
        length = min(length, n - pos)
        if length < 64:
            break
        t = np.arange(length) / fs
        f0 = base_f0 * rng.uniform(0.85, 1.2) * (1 + rng.uniform(-0.15, 0.15) * t / max(t[-1], 1e-3))
        phase = 2 * np.pi * np.cumsum(f0) / fs
        formants = (rng.uniform(300, 850), rng.uniform(900, 2400), rng.uniform(2400, 3500))
        bws = (80.0, 120.0, 180.0)
        n_harm = int(7000 // (base_f0 * 1.2))
        k = np.arange(1, n_harm + 1)
        amps = _formant_gain(k * base_f0, formants, bws) / k**0.6
        syl = np.sin(np.outer(phase, k)) @ amps
        if rng.random() < 0.35:
            burst = rng.standard_normal(length)
            sos = sps.butter(4, rng.uniform(2500, 5000), "highpass", fs=fs, output="sos")
            syl = syl + 0.4 * np.std(syl) * sps.sosfilt(sos, burst)
        env = np.sin(np.pi * np.arange(length) / length) ** 1.5
        out[pos : pos + length] += syl * env * rng.uniform(0.5, 1.0)
        pos += length + int(rng.uniform(0.0, 0.08) * fs)
    return _rms_normalise(out, level_db)


def synthetic_music(duration, seed=0, fs=SAMPLE_RATE, level_db=-23.0):
    """Chord sequence with decaying notes and noise-burst percussion."""
    rng = np.random.default_rng(seed)
    n = int(round(duration * fs))
    out = np.zeros(n)
    pos = 0
    while pos < n:
        length = min(int(rng.uniform(0.4, 1.6) * fs), n - pos)
        t = np.arange(length) / fs
        root = 110 * 2 ** (rng.integers(0, 24) / 12)
        for step in rng.choice([0, 3, 4, 7, 10, 12], size=3, replace=False):
            f = root * 2 ** (step / 12)
            k = np.arange(1, int(min(12000 / f, 20)) + 1)
            tone = np.sin(2 * np.pi * f * np.outer(t, k) + rng.uniform(0, 2 * np.pi, k.size)) @ (0.7**k)
            out[pos : pos + length] += tone * np.exp(-t * rng.uniform(0.5, 3.0))
        pos += length
    hits = rng.uniform(0, duration, size=int(duration * rng.uniform(1, 4)))
    for h in hits:
        start = int(h * fs)
        length = min(int(0.12 * fs), n - start)
        if length <= 0:
            continue
        out[start : start + length] += (
            rng.standard_normal(length) * np.exp(-np.arange(length) / (0.02 * fs)) * 2.0
        )
    return _rms_normalise(out, level_db)


def synthetic_noise(duration, seed=0, fs=SAMPLE_RATE, level_db=-23.0, colour=1.0):
    """Power-law noise (``colour`` = 1 for pink) with a slow level drift."""
    rng = np.random.default_rng(seed)
    n = int(round(duration * fs))
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1 / fs)
    f[0] = f[1]
    x = np.fft.irfft(spec / f ** (colour / 2), n)
    drift = 1 + 0.5 * np.sin(2 * np.pi * rng.uniform(0.1, 0.5) * np.arange(n) / fs + rng.uniform(0, 6.3))
    return _rms_normalise(x * drift, level_db)


def synthetic_background(duration, seed=0, fs=SAMPLE_RATE, level_db=-23.0):
    """Music or noise, chosen by ``seed``."""
    if np.random.default_rng(seed).random() < 0.6:
        return synthetic_music(duration, seed, fs, level_db)
    return synthetic_noise(duration, seed, fs, level_db, colour=np.random.default_rng(seed + 1).uniform(0.5, 1.5))
