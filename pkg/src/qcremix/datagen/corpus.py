"""Labelled training corpus from speech/background stems.

Layout of a stems directory::

    stems/speech/*.wav        clean dialogue
    stems/background/*.wav    music and effects

Speech file ``i`` (sorted by name) is paired with background file
``i % n_backgrounds``.  Each pair is cut into clip-length items; every item
yields a ladder of probes that are labelled with the 2f-model against the
clean speech.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from ..audio import SAMPLE_RATE, AudioBuffer, downmix_mono, load_wav, save_wav
from ..exceptions import EmptyDatasetError, FormatError, MissingFileError
from ..peaq import BoundaryMode
from ..twof import TwoFCoefficients, load_coefficients, score_item
from .distortions import (
    FIXED_PARAMS,
    RANDOM_RANGES,
    DistortionSpec,
    apply_distortion,
    mix_at_snr,
    randomize_distortion,
    remix_components,
    simulate_separation,
)

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
META_NAME = "manifest.meta.json"
_NEG_INF = -math.inf


@dataclass(frozen=True)
class CorpusConfig:
    clip_seconds: float = 4.0
    snr_range: tuple = (-10.0, 10.0)
    separation_ladder_db: tuple = (_NEG_INF, -40.0, -14.0)
    clean_ladder_db: tuple = (_NEG_INF, -35.0, -20.0, 0.0)
    fixed_distortions: tuple = ("musical_noise", "lowpass", "clipping", "tf_blur")
    random_kinds: tuple = ("musical_noise", "lowpass", "clipping", "tf_blur")
    random_per_kind: int = 1
    random_readdition_db: float = -45.0
    separation_error: tuple = (0.5, 2.0)
    silence_seconds: float = 1800.0
    active_threshold_db: float = -50.0

    @property
    def clip_samples(self) -> int:
        return int(round(self.clip_seconds * SAMPLE_RATE))

    def variants(self) -> list:
        """Probe variant names produced for every item, in manifest order."""
        names = [f"clean{_db_tag(a)}" for a in self.clean_ladder_db]
        names += [f"sep{_db_tag(a)}" for a in self.separation_ladder_db]
        names += [f"fixed-{k}" for k in self.fixed_distortions]
        names += [f"random-{k}-{j}" for k in self.random_kinds for j in range(self.random_per_kind)]
        return names

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: (list(map(_enc_db, v)) if isinstance(v, tuple) else v) for k, v in d.items()}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def _db_tag(a) -> str:
    return "_-inf" if a == _NEG_INF else f"_{a:g}"


def _enc_db(v):
    if isinstance(v, float) and math.isinf(v):
        return "-inf" if v < 0 else "inf"
    return v


def _parse_list(text, cast=float):
    return tuple(cast(v.strip()) for v in text.split(",") if v.strip())


def load_corpus_config(path=None, **overrides) -> CorpusConfig:
    """Read a ``[corpus]`` key-value file; keyword overrides win over file values."""
    cfg = CorpusConfig()
    values = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise MissingFileError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        parser.read(path)
        sec = parser["corpus"] if "corpus" in parser else {}
        for key, text in dict(sec).items():
            if key not in CorpusConfig.__dataclass_fields__:
                raise FormatError(f"{path}: unknown corpus key {key!r}")
            current = getattr(cfg, key)
            if isinstance(current, tuple):
                cast = str if current and isinstance(current[0], str) else float
                values[key] = _parse_list(text, cast)
            elif isinstance(current, int) and not isinstance(current, bool):
                values[key] = int(text)
            else:
                values[key] = float(text)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return replace(cfg, **values)


def item_seed(seed: int, item_id: str) -> int:
    """Per-item seed, independent of processing order."""
    digest = hashlib.sha256(f"{seed}:{item_id}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def _list_wavs(folder: Path):
    return sorted(p for p in folder.glob("*.wav") if p.is_file())


def _load_mono(path):
    buf = downmix_mono(load_wav(path))
    if buf.sample_rate != SAMPLE_RATE:
        raise FormatError(f"{path}: expected {SAMPLE_RATE} Hz, got {buf.sample_rate}")
    return buf.samples[0]


def source_items(stems_dir, config: CorpusConfig):
    """Yield ``(item_id, speech_clip, background_clip)`` for every clip."""
    stems_dir = Path(stems_dir)
    speech_files = _list_wavs(stems_dir / "speech")
    bg_files = _list_wavs(stems_dir / "background")
    if not speech_files or not bg_files:
        raise EmptyDatasetError(f"{stems_dir}: need .wav files in speech/ and background/")
    length = config.clip_samples
    for i, sp in enumerate(speech_files):
        s = _load_mono(sp)
        b = _load_mono(bg_files[i % len(bg_files)])
        if s.size == 0 or b.size == 0:
            continue
        b = np.resize(b, s.size)
        n_clips = s.size // length
        if n_clips == 0:
            s = np.pad(s, (0, length - s.size))
            b = np.pad(b, (0, length - b.size))
            n_clips = 1
        for k in range(n_clips):
            cut = slice(k * length, (k + 1) * length)
            yield f"{sp.stem}-{k:03d}", s[cut], b[cut]


def _probes(item_rng, speech, background, mixture, config: CorpusConfig, seed):
    """Yield ``(variant, probe, provenance)`` for one item."""
    for a in config.clean_ladder_db:
        yield f"clean{_db_tag(a)}", remix_components(speech, background, a), {
            "atten_db": _enc_db(a), "distortion": None}

    error = float(item_rng.uniform(*config.separation_error))
    s_hat = simulate_separation(speech, background, error, seed=seed)
    b_hat = mixture - s_hat
    for a in config.separation_ladder_db:
        yield f"sep{_db_tag(a)}", remix_components(s_hat, b_hat, a), {
            "atten_db": _enc_db(a), "distortion": {"kind": "separation", "params": {"mask_error": error}}}

    for kind in config.fixed_distortions:
        spec = DistortionSpec(kind, dict(FIXED_PARAMS[kind]))
        yield f"fixed-{kind}", apply_distortion(spec, speech, seed=seed), {
            "atten_db": "-inf", "distortion": spec.as_record()}

    for kind in config.random_kinds:
        for j in range(config.random_per_kind):
            spec = randomize_distortion(kind, int(item_rng.integers(2**31)), RANDOM_RANGES)
            s_d = apply_distortion(spec, speech, seed=seed + j)
            probe = remix_components(s_d, mixture - s_d, config.random_readdition_db)
            yield f"random-{kind}-{j}", probe, {
                "atten_db": config.random_readdition_db, "distortion": spec.as_record()}


def _write(path: Path, x):
    path.parent.mkdir(parents=True, exist_ok=True)
    save_wav(AudioBuffer(x), path, "float32")


def _as_f32(x):
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def append_silence(rows, duration_s, out_dir, clip_seconds=4.0, coeffs=None):
    """Add all-zero items totalling ``duration_s`` seconds.

    Full-length clips share one file; a shorter remainder gets its own.
    Labels come from the 2f pipeline like any other item.
    """
    out_dir = Path(out_dir)
    coeffs = coeffs or load_coefficients()
    clip = int(round(clip_seconds * SAMPLE_RATE))
    total = int(round(duration_s * SAMPLE_RATE))
    lengths = [clip] * (total // clip) + ([total % clip] if total % clip else [])
    rows = list(rows)
    labels = {}
    for k, n in enumerate(lengths):
        name = "silence.wav" if n == clip else f"silence_{n}.wav"
        path = out_dir / "items" / name
        if n not in labels:
            _write(path, np.zeros(n))
            zero = AudioBuffer(np.zeros(n))
            labels[n] = score_item(zero, zero, BoundaryMode.DISABLED, coeffs).value
        rel = str(path.relative_to(out_dir))
        rows.append({
            "item_id": f"silence-{k:05d}", "source_item": "silence", "variant": "silence",
            "probe": rel, "reference": rel, "mixture": rel, "label": labels[n],
            "duration_s": n / SAMPLE_RATE, "snr_db": None, "atten_db": None,
            "distortion": None, "seed": None,
        })
    return rows


def build_corpus(stems_dir, out_dir, config: CorpusConfig | None = None, seed=0,
                 coeffs: TwoFCoefficients | None = None):
    """Generate, label and write the corpus; returns the manifest path.

    Raises:
        EmptyDatasetError: no usable stems.
    """
    config = config or CorpusConfig()
    coeffs = coeffs or load_coefficients()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for item_id, speech, background in source_items(stems_dir, config):
        iseed = item_seed(seed, item_id)
        rng = np.random.default_rng(iseed)
        snr = float(rng.uniform(*config.snr_range))
        try:
            mixture, bg = mix_at_snr(speech, background, snr, config.active_threshold_db)
        except FormatError as exc:
            log.info("skipping %s: %s", item_id, exc)
            continue
        speech, bg, mixture = _as_f32(speech), _as_f32(bg), _as_f32(mixture)
        item_dir = out_dir / "items" / item_id
        _write(item_dir / "reference.wav", speech)
        _write(item_dir / "mixture.wav", mixture)
        reference = AudioBuffer(speech)
        for variant, probe, prov in _probes(rng, speech, bg, mixture, config, iseed):
            probe = _as_f32(probe)
            path = item_dir / f"{variant}.wav"
            _write(path, probe)
            label = score_item(reference, AudioBuffer(probe), BoundaryMode.DISABLED, coeffs).value
            rows.append({
                "item_id": f"{item_id}/{variant}", "source_item": item_id, "variant": variant,
                "probe": str(path.relative_to(out_dir)),
                "reference": str((item_dir / "reference.wav").relative_to(out_dir)),
                "mixture": str((item_dir / "mixture.wav").relative_to(out_dir)),
                "label": label, "duration_s": probe.size / SAMPLE_RATE, "snr_db": snr,
                "seed": iseed, **prov,
            })
    if not rows:
        raise EmptyDatasetError(f"{stems_dir}: no usable items")
    if config.silence_seconds > 0:
        rows = append_silence(rows, config.silence_seconds, out_dir, config.clip_seconds, coeffs)

    manifest = out_dir / MANIFEST_NAME
    write_manifest(manifest, rows)
    meta = {"seed": seed, "config": config.to_dict(), "config_hash": config.digest(),
            "coefficients_version": coeffs.version, "rows": len(rows)}
    (out_dir / META_NAME).write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    return manifest


def write_manifest(path, rows):
    with open(path, "w") as fh:
        for row in sorted(rows, key=lambda r: r["item_id"]):
            fh.write(json.dumps(row, sort_keys=True, allow_nan=False) + "\n")


def read_manifest(path):
    """Rows of a manifest with file paths resolved against its directory."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"manifest not found: {path}")
    base = path.parent
    rows = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        for key in ("probe", "reference", "mixture"):
            if row.get(key):
                row[key] = str(base / row[key])
        rows.append(row)
    return rows
