"""Synthetic stems, separation-style distortions and labelled corpora."""

from .corpus import CorpusConfig, build_corpus, load_corpus_config, read_manifest
from .distortions import (
    DistortionSpec,
    apply_distortion,
    augment_phase_invert,
    mix_at_snr,
    randomize_distortion,
    remix_components,
    simulate_separation,
)
from .synthetic import synthetic_background, synthetic_speech

__all__ = [
    "CorpusConfig",
    "DistortionSpec",
    "apply_distortion",
    "augment_phase_invert",
    "build_corpus",
    "load_corpus_config",
    "mix_at_snr",
    "randomize_distortion",
    "read_manifest",
    "remix_components",
    "simulate_separation",
    "synthetic_background",
    "synthetic_speech",
]
