"""The 2f-model: two PEAQ features mapped to a 0..100 quality score.

The regression constants live in a coefficient file so they can be revised
without code changes.  ``QCREMIX_2F_COEFFICIENTS`` overrides the packaged
default path.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .audio import SCORING_HOP, SEGMENT_LENGTH, AudioBuffer, check_aligned, segment_array
from .exceptions import FormatError, MissingFileError, SampleRateError
from .peaq import DEFAULT_CONFIG, BoundaryMode, EarModelConfig, FeaturePair, compute_features

COEFFICIENTS_ENV = "QCREMIX_2F_COEFFICIENTS"
_REQUIRED = (
    "modulation_amplitude",
    "modulation_slope",
    "modulation_offset",
    "adb_weight",
    "offset",
)


@dataclass(frozen=True)
class TwoFCoefficients:
    modulation_amplitude: float
    modulation_slope: float
    modulation_offset: float
    adb_weight: float
    offset: float
    score_min: float = 0.0
    score_max: float = 100.0
    version: str = "1"
    source: str = ""

    def __post_init__(self):
        if not self.score_min < self.score_max:
            raise ValueError("score_min must be below score_max")

    @property
    def max_score(self) -> float:
        """Score of a distortion-free pair (both features zero)."""
        return map_features(FeaturePair(0.0, 0.0, 0, 0), self)


def default_coefficients_path() -> Path:
    env = os.environ.get(COEFFICIENTS_ENV)
    if env:
        return Path(env)
    return Path(str(resources.files("qcremix") / "data" / "twof_coefficients.ini"))


def load_coefficients(path=None) -> TwoFCoefficients:
    """Read a coefficient file (INI, one ``name = value`` per line under ``[2f]``).

    Raises:
        MissingFileError: the file does not exist.
        FormatError: a required coefficient is absent or not a number.
    """
    path = Path(path) if path is not None else default_coefficients_path()
    if not path.is_file():
        raise MissingFileError(f"coefficient file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if "2f" not in parser:
        raise FormatError(f"{path}: missing [2f] section")
    sec = parser["2f"]
    missing = [k for k in _REQUIRED if k not in sec]
    if missing:
        raise FormatError(f"{path}: missing coefficients {', '.join(missing)}")
    try:
        values = {k: float(sec[k]) for k in _REQUIRED}
        bounds = {k: float(sec.get(k, d)) for k, d in (("score_min", 0), ("score_max", 100))}
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return TwoFCoefficients(**values, **bounds, version=sec.get("version", "1"), source=str(path))


def map_features(features: FeaturePair, coeffs: TwoFCoefficients) -> float:
    """2f score of one feature pair, clamped to the score range."""
    raw = _raw_score(features.adb, features.avg_mod_diff_1, coeffs)
    return float(np.clip(raw, coeffs.score_min, coeffs.score_max))


def _raw_score(adb, amd1, c: TwoFCoefficients):
    adb = np.asarray(adb, dtype=np.float64)
    amd1 = np.asarray(amd1, dtype=np.float64)
    if not (np.all(np.isfinite(adb)) and np.all(np.isfinite(amd1))):
        raise FormatError("features must be finite")
    shaped = c.modulation_slope * amd1 + c.modulation_offset
    return c.modulation_amplitude / (1.0 + shaped**2) + c.adb_weight * adb + c.offset


class SegmentScore(NamedTuple):
    channel: int
    offset: int
    value: float


@dataclass(frozen=True)
class QualityScore:
    """Item-level quality with its per-segment and per-channel breakdown."""

    value: float
    per_segment: tuple = ()
    per_channel: tuple = ()
    extra: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_segments(cls, segments, extra=None) -> "QualityScore":
        segments = tuple(SegmentScore(*s) for s in segments)
        if not segments:
            raise ValueError("no segment scores")
        channels = sorted({s.channel for s in segments})
        per_channel = tuple(
            float(np.mean([s.value for s in segments if s.channel == ch])) for ch in channels
        )
        return cls(float(np.mean(per_channel)), segments, per_channel, dict(extra or {}))

    def as_record(self, item_id=None) -> dict:
        rec = {
            "value": self.value,
            "per_channel": list(self.per_channel),
            "per_segment": [s._asdict() for s in self.per_segment],
        }
        rec.update(self.extra)
        if item_id is not None:
            rec = {"item_id": item_id, **rec}
        return rec


def score_item(
    reference: AudioBuffer,
    probe: AudioBuffer,
    mode=BoundaryMode.DISABLED,
    coeffs: TwoFCoefficients | None = None,
    config: EarModelConfig = DEFAULT_CONFIG,
    hop: int = SCORING_HOP,
) -> QualityScore:
    """Score ``probe`` against ``reference`` over 4 s chunks with 50 % overlap.

    Each channel is cut into 192,000-sample segments (hop 96,000 by default),
    every segment is mapped to a 2f score, and the item value is the mean of
    the per-channel means.
    """
    mode = BoundaryMode.parse(mode)
    coeffs = coeffs or load_coefficients()
    check_aligned(reference, probe)
    if reference.sample_rate != config.sample_rate:
        raise SampleRateError(f"expected {config.sample_rate} Hz, got {reference.sample_rate} Hz")
    if reference.n_samples == 0:
        raise FormatError("zero-length input")
    rows = []
    for ch in range(reference.channel_count):
        ref_seg = segment_array(reference.channel(ch), SEGMENT_LENGTH, hop)
        test_seg = segment_array(probe.channel(ch), SEGMENT_LENGTH, hop)
        for off, r, t in zip(ref_seg.offsets, ref_seg.segments, test_seg.segments):
            rows.append((ch, off, map_features(compute_features(r, t, mode, config), coeffs)))
    return QualityScore.from_segments(
        rows,
        extra={"mode": mode.value, "playback_level_db": config.playback_level_db},
    )


class TwoFModel(RegressorMixin, BaseEstimator):
    """Fixed (non-trainable) regressor from ``[adb, avg_mod_diff_1]`` to the 2f score.

    ``fit`` only loads the coefficients; it exists so the model can sit at
    the end of a :class:`sklearn.pipeline.Pipeline` behind
    :class:`~qcremix.peaq.PeaqFeatureExtractor`.
    """

    def __init__(self, coefficients_path=None):
        self.coefficients_path = coefficients_path

    def fit(self, X=None, y=None):
        self.coefficients_ = load_coefficients(self.coefficients_path)
        self.n_features_in_ = 2
        return self

    def predict(self, X):
        if not hasattr(self, "coefficients_"):
            self.fit()
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != 2:
            raise FormatError("X must have shape (n, 2): adb, avg_mod_diff_1")
        c = self.coefficients_
        return np.clip(_raw_score(X[:, 0], X[:, 1], c), c.score_min, c.score_max)
