"""Quality-driven background attenuation for dialogue remixing.

A predicted quality ``q_hat`` of the separated dialogue selects the
background attenuation ``g`` (dB) through a clamped linear mapping; the
output is ``y = s_hat + gamma * (x - s_hat)`` with ``gamma = 10**(-g/20)``.
Better separation quality allows stronger attenuation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .audio import AudioBuffer, check_aligned
from .exceptions import DegenerateDataError

G_MIN_DB = 4.0
G_MAX_DB = 26.0

PRESETS = {
    "initial": (0.71, -22.28),
    "refined": (0.45, -12.67),
}

# Offsets (dB) added on top of the mapping; 0 is the default operating point.
K_PRESETS = {"minus6": -6.0, "zero": 0.0, "plus6": 6.0, "plus12": 12.0}


@dataclass(frozen=True)
class GainMapping:
    """``g = clamp(slope * q_hat + intercept + k, g_min, g_max)``.

    ``clamp=False`` exists for identity checks only; production paths
    always clamp.
    """

    slope: float
    intercept: float
    k: float = 0.0
    g_min: float = G_MIN_DB
    g_max: float = G_MAX_DB
    preset: str | None = None
    clamp: bool = True

    def __post_init__(self):
        if self.g_min > self.g_max:
            raise ValueError("g_min must not exceed g_max")

    @classmethod
    def from_preset(cls, name="refined", k=0.0, **kwargs) -> "GainMapping":
        if name not in PRESETS:
            raise ValueError(f"unknown mapping preset {name!r}; choose from {sorted(PRESETS)}")
        slope, intercept = PRESETS[name]
        return cls(slope, intercept, float(k), preset=name, **kwargs)

    def with_k(self, k) -> "GainMapping":
        return replace(self, k=float(k))

    def raw_gain(self, q_hat):
        return self.slope * np.asarray(q_hat, dtype=np.float64) + self.intercept + self.k

    def gain(self, q_hat):
        g = self.raw_gain(q_hat)
        return np.clip(g, self.g_min, self.g_max) if self.clamp else g

    def as_record(self) -> dict:
        return {"preset": self.preset, "slope": self.slope, "intercept": self.intercept,
                "k": self.k, "g_min": self.g_min, "g_max": self.g_max}


@dataclass(frozen=True)
class RemixPlan:
    q_hat: float
    g_db: float
    gamma: float
    mapping: GainMapping | None = None

    @classmethod
    def from_gain(cls, g_db, q_hat=float("nan"), mapping=None) -> "RemixPlan":
        return cls(float(q_hat), float(g_db), float(10.0 ** (-g_db / 20.0)), mapping)

    def as_record(self) -> dict:
        rec = {"q_hat": self.q_hat, "g_db": self.g_db, "gamma": self.gamma}
        if self.mapping is not None:
            rec.update(preset=self.mapping.preset, k=self.mapping.k)
        return rec


def map_gain(q_hat, mapping: GainMapping | None = None) -> RemixPlan:
    """Turn a quality estimate into a remix plan.

    Raises:
        ValueError: ``q_hat`` outside ``[0, 100]`` or not finite.
    """
    mapping = mapping or GainMapping.from_preset("refined")
    q = float(q_hat)
    if not 0.0 <= q <= 100.0:
        raise ValueError(f"q_hat must lie in [0, 100], got {q_hat}")
    return RemixPlan.from_gain(float(mapping.gain(q)), q, mapping)


def apply_remix(x: AudioBuffer, s_hat: AudioBuffer, plan: RemixPlan) -> AudioBuffer:
    """``y = s_hat + gamma * (x - s_hat)`` per channel.

    With ``gamma == 1`` the mixture is returned unchanged.

    Raises:
        AlignmentError: rate, length or channel count differ.
    """
    check_aligned(x, s_hat)
    if plan.gamma == 1.0:
        return AudioBuffer(x.samples, x.sample_rate)
    b_hat = x.samples - s_hat.samples
    return AudioBuffer(s_hat.samples + plan.gamma * b_hat, x.sample_rate)


def fit_mapping(q_hat, gains, g_min=G_MIN_DB, g_max=G_MAX_DB) -> GainMapping:
    """Least-squares line through ``(q_hat, gain)`` observations.

    Raises:
        DegenerateDataError: fewer than two distinct ``q_hat`` values.
    """
    q = np.asarray(q_hat, dtype=np.float64).ravel()
    g = np.asarray(gains, dtype=np.float64).ravel()
    if q.shape != g.shape:
        raise ValueError("q_hat and gains differ in length")
    if q.size < 2 or np.ptp(q) == 0.0:
        raise DegenerateDataError("need at least two distinct q_hat values to fit a mapping")
    qc = q - q.mean()
    slope = float(np.dot(qc, g - g.mean()) / np.dot(qc, qc))
    intercept = float(g.mean() - slope * q.mean())
    return GainMapping(slope, intercept, g_min=g_min, g_max=g_max, preset="fitted")


class GainMapper(RegressorMixin, BaseEstimator):
    """Estimator wrapper around the quality-to-gain mapping.

    ``fit`` learns slope/intercept by least squares; an unfitted mapper can
    also be initialised from a preset with :meth:`from_preset`.
    """

    def __init__(self, k=0.0, g_min=G_MIN_DB, g_max=G_MAX_DB):
        self.k = k
        self.g_min = g_min
        self.g_max = g_max

    @classmethod
    def from_preset(cls, name="refined", k=0.0):
        mapper = cls(k=k)
        mapper.mapping_ = GainMapping.from_preset(name, k)
        return mapper

    def fit(self, X, y):
        q = np.asarray(X, dtype=np.float64).reshape(len(y), -1)[:, 0]
        base = fit_mapping(q, y, self.g_min, self.g_max)
        self.mapping_ = base.with_k(self.k)
        self.coef_ = np.array([base.slope])
        self.intercept_ = base.intercept
        return self

    def predict(self, X):
        check_is_fitted(self, "mapping_")
        q = np.asarray(X, dtype=np.float64).reshape(np.shape(X)[0], -1)[:, 0]
        return self.mapping_.gain(q)
