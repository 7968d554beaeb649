"""Learned surrogates of the 2f score and their chunked prediction.

Three input arrangements are supported:

* intrusive: probe plus the clean target as reference (2 channels)
* non-intrusive: probe plus the input mixture as reference (2 channels)
* reference-free: probe alone (1 channel)

Channel 0 is always the probe.  Raw amplitudes are used as they are; no
level alignment between probe and reference is done.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .audio import SCORING_HOP, SEGMENT_LENGTH, AudioBuffer, check_aligned, load_wav, segment_array
from .exceptions import AlignmentError, ConfigMismatchError, EmptyDatasetError, FormatError
from .nn.checkpoint import file_digest, load_checkpoint, save_checkpoint
from .nn.network import Network, NetworkConfig
from .nn.train import ArrayDataset, train
from .twof import QualityScore


@dataclass(frozen=True)
class EstimatorVariant:
    kind: str
    input_channels: int
    reference_role: str | None
    short: str

    @property
    def name(self) -> str:
        return f"{self.short}DNN2f"

    @classmethod
    def parse(cls, value) -> "EstimatorVariant":
        """Accept a variant, ``i``/``n``/``r``, the kind, or the model name."""
        if isinstance(value, EstimatorVariant):
            return value
        key = str(value).strip().lower()
        for v in VARIANTS:
            if key in (v.short, v.kind, v.name.lower(), v.kind.replace("_", "-")):
                return v
        raise ValueError(f"unknown estimator variant {value!r}; use i, n or r")

    def manifest_reference(self, row):
        """Path of the reference input for a manifest row, or None."""
        if self.reference_role is None:
            return None
        return row[self.reference_role]


INTRUSIVE = EstimatorVariant("intrusive", 2, "reference", "i")
NON_INTRUSIVE = EstimatorVariant("non_intrusive", 2, "mixture", "n")
REFERENCE_FREE = EstimatorVariant("reference_free", 1, None, "r")
VARIANTS = (INTRUSIVE, NON_INTRUSIVE, REFERENCE_FREE)


def _mono(x, what):
    if isinstance(x, AudioBuffer):
        if x.channel_count != 1:
            raise FormatError(f"{what} must be a single channel")
        return x.samples[0]
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2 and x.shape[0] == 1:
        x = x[0]
    if x.ndim != 1:
        raise FormatError(f"{what} must be a single channel")
    return x


def assemble_input(variant, probe, reference=None, length=SEGMENT_LENGTH) -> np.ndarray:
    """Stack a probe segment and its reference into a ``(channels, length)`` array.

    Raises:
        ValueError: a reference is given to the reference-free variant, or
            missing for the others.
        AlignmentError: a segment is not ``length`` samples long.
    """
    variant = EstimatorVariant.parse(variant)
    rows = [_mono(probe, "probe")]
    if variant.reference_role is None:
        if reference is not None:
            raise ValueError(f"{variant.name} takes no reference signal")
    else:
        if reference is None:
            raise ValueError(f"{variant.name} requires a {variant.reference_role} reference")
        rows.append(_mono(reference, "reference"))
    for r in rows:
        if r.shape[0] != length:
            raise AlignmentError(f"segments must have {length} samples, got {r.shape[0]}")
    return np.stack(rows).astype(np.float32)


def _resolve_network(model) -> Network:
    if isinstance(model, Network):
        return model
    if isinstance(model, DNN2fRegressor):
        check_is_fitted(model, "network_")
        return model.network_
    return load_checkpoint(model)


def check_variant(network: Network, variant: EstimatorVariant):
    if network.config.input_channels != variant.input_channels:
        raise ConfigMismatchError(
            f"checkpoint expects {network.config.input_channels} input channel(s); "
            f"{variant.name} supplies {variant.input_channels}"
        )


def predict_quality(model, variant, probe: AudioBuffer, reference: AudioBuffer | None = None,
                    hop=SCORING_HOP) -> QualityScore:
    """Chunked prediction for one item.

    Every channel is cut into 4 s segments at ``hop``; each (probe,
    reference) segment pair is scored in inference mode.  The item value is
    the mean over channels of the per-channel segment means.

    Args:
        model: a :class:`Network`, a fitted :class:`DNN2fRegressor` or a
            checkpoint path.

    Raises:
        ConfigMismatchError: the network's input channels disagree with the variant.
        AlignmentError: probe and reference differ in rate, length or channels.
    """
    variant = EstimatorVariant.parse(variant)
    network = _resolve_network(model)
    check_variant(network, variant)
    length = network.config.input_length
    if variant.reference_role is None and reference is not None:
        raise ValueError(f"{variant.name} takes no reference signal")
    if variant.reference_role is not None:
        if reference is None:
            raise ValueError(f"{variant.name} requires a {variant.reference_role} reference")
        check_aligned(probe, reference)
    if probe.n_samples == 0:
        raise FormatError("zero-length probe")
    rows = []
    for ch in range(probe.channel_count):
        p_seg = segment_array(probe.channel(ch), length, hop)
        r_seg = segment_array(reference.channel(ch), length, hop) if reference is not None else None
        batch = np.stack([
            assemble_input(variant, p_seg.segments[i], None if r_seg is None else r_seg.segments[i], length)
            for i in range(len(p_seg))
        ])
        values = network.predict(batch)
        rows += [(ch, off, float(v)) for off, v in zip(p_seg.offsets, values)]
    return QualityScore.from_segments(rows, extra={"variant": variant.name})


def _fit_length(x, length):
    if x.shape[0] >= length:
        return x[:length]
    return np.pad(x, (0, length - x.shape[0]))


class ManifestDataset:
    """Lazily loaded training examples described by corpus manifest rows.

    Each file is read once and kept as float32; rows sharing a file (for
    instance the silence items or a common mixture) share the array.
    """

    def __init__(self, rows, variant, length=SEGMENT_LENGTH):
        self.rows = list(rows)
        self.variant = EstimatorVariant.parse(variant)
        self.length = length
        self.y = np.array([float(r["label"]) for r in self.rows])
        self._cache = {}

    def __len__(self):
        return len(self.rows)

    def _load(self, path):
        if path not in self._cache:
            buf = load_wav(path)
            mono = buf.samples.mean(axis=0) if buf.channel_count > 1 else buf.samples[0]
            self._cache[path] = _fit_length(mono, self.length).astype(np.float32)
        return self._cache[path]

    def example(self, i):
        row = self.rows[i]
        ref_path = self.variant.manifest_reference(row)
        probe = self._load(row["probe"])
        ref = self._load(ref_path) if ref_path else None
        return assemble_input(self.variant, probe, ref, self.length)

    def batch(self, indices):
        return np.stack([self.example(i) for i in indices]), self.y[np.asarray(indices)]

    def arrays(self):
        return self.batch(np.arange(len(self)))


def split_by_source(rows, valid_fraction=0.2, seed=0):
    """Partition manifest rows so that no source item spans both parts.

    Silence rows always go to the training part.
    """
    sources = sorted({r["source_item"] for r in rows if r.get("source_item") != "silence"})
    if len(sources) < 2:
        raise EmptyDatasetError("need at least two source items to split")
    rng = np.random.default_rng(seed)
    n_valid = min(len(sources) - 1, max(1, int(round(valid_fraction * len(sources)))))
    valid = set(rng.permutation(sources)[:n_valid].tolist())
    train_rows = [r for r in rows if r.get("source_item") not in valid]
    valid_rows = [r for r in rows if r.get("source_item") in valid]
    return train_rows, valid_rows


class DNN2fRegressor(RegressorMixin, BaseEstimator):
    """Estimator that learns to predict 2f scores from raw waveforms.

    ``X`` has shape ``(n, channels, length)`` with the probe in channel 0.

    Args:
        variant: ``"i"``, ``"n"`` or ``"r"``.
        network: dict of :class:`NetworkConfig` overrides (e.g. reduced widths).
        epochs, batch_size, learning_rate: training schedule; each drawn
            batch is doubled by phase inversion.
        random_state: seed for initialization, shuffling and dropout.
    """

    def __init__(self, variant="n", network=None, epochs=50, batch_size=64,
                 learning_rate=0.1, patience=5, random_state=0):
        self.variant = variant
        self.network = network
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.patience = patience
        self.random_state = random_state

    def _config(self):
        variant = EstimatorVariant.parse(self.variant)
        return NetworkConfig(input_channels=variant.input_channels, **(self.network or {}))

    def _dataset(self, X, y):
        if hasattr(X, "batch") and y is None:
            return X
        X = np.asarray(X, dtype=np.float32)
        if X.ndim != 3:
            raise ValueError(f"X must be (n, channels, length), got shape {X.shape}")
        return ArrayDataset(X, y)

    def fit(self, X, y=None, eval_set=None, log_path=None):
        """Train from arrays (or a dataset object with ``batch``).

        Args:
            eval_set: optional ``(X_valid, y_valid)`` or dataset used for
                best-epoch selection and learning-rate decay.
        """
        config = self._config()
        train_set = self._dataset(X, y)
        if len(train_set) == 0:
            raise EmptyDatasetError("no training examples")
        valid_set = None
        if eval_set is not None:
            valid_set = eval_set if hasattr(eval_set, "batch") else self._dataset(*eval_set)
        result = train(config, train_set, valid_set, epochs=self.epochs, batch_size=self.batch_size,
                       seed=self.random_state, lr=self.learning_rate, patience=self.patience,
                       log_path=log_path)
        self.network_ = result.network
        self.history_ = result.records
        self.best_epoch_ = result.best_epoch
        self.optimizer_ = result.optimizer
        self.scheduler_ = result.scheduler
        return self

    def predict(self, X):
        check_is_fitted(self, "network_")
        X = np.asarray(X, dtype=np.float32)
        return self.network_.predict(X).astype(np.float64)

    def predict_item(self, probe: AudioBuffer, reference: AudioBuffer | None = None) -> QualityScore:
        return predict_quality(self, self.variant, probe, reference)

    def save(self, path):
        check_is_fitted(self, "network_")
        return save_checkpoint(self.network_, path, getattr(self, "optimizer_", None),
                               getattr(self, "scheduler_", None),
                               extra={"variant": EstimatorVariant.parse(self.variant).name})

    @classmethod
    def from_checkpoint(cls, path, variant="n"):
        """Load a trained network; the variant must match its input channels."""
        variant = EstimatorVariant.parse(variant)
        net = load_checkpoint(path)
        check_variant(net, variant)
        est = cls(variant=variant.short)
        est.network_ = net
        est.checkpoint_digest_ = file_digest(Path(path))
        return est


def checkpoint_id(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]
