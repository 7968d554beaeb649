"""Quality-controlled dialogue remixing.

Scores separated dialogue with a two-feature perceptual model, learns
waveform networks that predict that score, and turns the prediction into
a background attenuation for remixing.
"""

__version__ = "0.1.0"

from .audio import AudioBuffer, load_wav, save_wav
from .peaq import BoundaryMode, FeaturePair, compute_features
from .twof import QualityScore, score_item

__all__ = [
    "AudioBuffer",
    "BoundaryMode",
    "FeaturePair",
    "QualityScore",
    "__version__",
    "compute_features",
    "load_wav",
    "save_wav",
    "score_item",
]
