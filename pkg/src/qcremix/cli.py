"""Command line front end.

Subcommands: ``features``, ``score-2f``, ``synth``, ``train``, ``predict``,
``remix`` and ``eval``.  Every run prints a human-readable table and writes
JSON-lines records (with the resolved configuration hash and seed) to the
``--report`` file.

Exit codes: 0 success, 2 I/O error, 3 format/alignment error, 4 checkpoint
mismatch, 5 empty dataset, 6 join failure, 64 usage error.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .audio import AudioBuffer, load_wav, save_wav, segment_array, SEGMENT_LENGTH, SCORING_HOP
from .exceptions import EmptyDatasetError, FormatError, MissingFileError, QCRemixError
from .peaq import BoundaryMode, compute_features

EXIT_USAGE = 64

# Flag defaults; a --config file may override them and explicit flags win.
DEFAULTS = {
    "boundary": "off",
    "coefficients": None,
    "seed": 0,
    "variant": "n",
    "epochs": 50,
    "batch": 64,
    "lr": 0.1,
    "patience": 5,
    "valid_fraction": 0.2,
    "preset": "refined",
    "k": "0",
    "bit_depth": "float32",
    "silence_seconds": None,
    "front_filters": None,
    "block_filters": None,
    "dense_units": None,
}


class UsageError(QCRemixError):
    exit_code = EXIT_USAGE


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _resolve(args, section_names):
    """Fill unset flags from the config file, then from :data:`DEFAULTS`."""
    file_values = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise MissingFileError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        parser.read(path)
        for name in section_names:
            if name in parser:
                file_values.update({k.replace("-", "_"): v for k, v in parser[name].items()})
    for key, default in DEFAULTS.items():
        if hasattr(args, key) and getattr(args, key) is None:
            value = file_values.get(key, default)
            if value is not None and default is not None and not isinstance(default, str):
                value = type(default)(value)
            setattr(args, key, value)
    return args


def _run_header(args, exclude=("func", "report", "config")):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in exclude}
    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in cfg.items()}
    digest = hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()[:16]
    return {"record": "header", "command": args.command, "version": __version__,
            "config_hash": digest, "seed": getattr(args, "seed", None), "config": cfg}


def _emit(args, records, table):
    print(table)
    report = getattr(args, "report", None)
    if report:
        with open(report, "w") as fh:
            fh.write(json.dumps(_run_header(args), sort_keys=True, default=str) + "\n")
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True, default=str) + "\n")


def _table(header, rows):
    rows = [[str(c) for c in r] for r in rows]
    widths = [max([len(h)] + [len(r[i]) for r in rows]) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join(lines)


def _fmt(v, digits=3):
    return f"{v:.{digits}f}"


# --- subcommands ---------------------------------------------------------------


def cmd_features(args):
    ref, probe = load_wav(args.reference), load_wav(args.probe)
    from .audio import check_aligned

    check_aligned(ref, probe)
    mode = BoundaryMode.parse(args.boundary)
    records = []
    for ch in range(ref.channel_count):
        rs = segment_array(ref.channel(ch), SEGMENT_LENGTH, SCORING_HOP)
        ps = segment_array(probe.channel(ch), SEGMENT_LENGTH, SCORING_HOP)
        for off, r, p in zip(rs.offsets, rs.segments, ps.segments):
            records.append({"channel": ch, "offset": off, **compute_features(r, p, mode).as_record()})
    rows = [(r["channel"], r["offset"], _fmt(r["adb"], 4), _fmt(r["avg_mod_diff_1"], 4), r["frames_used"])
            for r in records]
    _emit(args, records, _table(("ch", "offset", "ADB", "AvgModDiff1", "frames"), rows))
    return 0


def cmd_score_2f(args):
    from .twof import load_coefficients, score_item

    coeffs = load_coefficients(args.coefficients)
    ref, probe = load_wav(args.reference), load_wav(args.probe)
    score = score_item(ref, probe, BoundaryMode.parse(args.boundary), coeffs)
    rec = score.as_record(args.item_id or Path(args.probe).stem)
    rows = [(s.channel, s.offset, _fmt(s.value)) for s in score.per_segment]
    table = _table(("ch", "offset", "score"), rows) + f"\nscore {_fmt(score.value)} (boundary {args.boundary})"
    _emit(args, [rec], table)
    return 0


def cmd_synth(args):
    from .datagen.corpus import build_corpus, load_corpus_config, read_manifest

    config = load_corpus_config(args.config, silence_seconds=args.silence_seconds)
    manifest = build_corpus(args.stems, args.out, config, seed=args.seed)
    rows = read_manifest(manifest)
    labels = np.array([r["label"] for r in rows])
    table = _table(("manifest", "rows", "label min", "label mean", "label max"),
                   [(manifest, len(rows), _fmt(labels.min()), _fmt(labels.mean()), _fmt(labels.max()))])
    _emit(args, [{"manifest": str(manifest), "rows": len(rows), "config_hash": config.digest()}], table)
    return 0


def _network_overrides(args):
    out = {}
    if args.front_filters:
        out["front_filters"] = int(args.front_filters)
    if args.block_filters:
        out["block_filters"] = int(args.block_filters)
    if args.dense_units:
        out["dense_units"] = tuple(int(u) for u in str(args.dense_units).split(","))
    return out


def _manifest_rows(path):
    from .datagen.corpus import read_manifest

    rows = read_manifest(path)
    if not rows:
        raise EmptyDatasetError(f"{path}: manifest has no rows")
    return rows


def cmd_train(args):
    from .estimators import EstimatorVariant, ManifestDataset, split_by_source
    from .nn.network import NetworkConfig
    from .nn.train import train

    variant = EstimatorVariant.parse(args.variant)
    rows = _manifest_rows(args.manifest)
    if args.valid:
        train_rows, valid_rows = rows, _manifest_rows(args.valid)
    else:
        train_rows, valid_rows = split_by_source(rows, args.valid_fraction, args.seed)
    config = NetworkConfig(input_channels=variant.input_channels, **_network_overrides(args))
    log_path = args.log or str(args.out) + ".log.jsonl"
    result = train(config, ManifestDataset(train_rows, variant), ManifestDataset(valid_rows, variant),
                   epochs=args.epochs, batch_size=args.batch, seed=args.seed, lr=args.lr,
                   patience=args.patience, log_path=log_path, checkpoint_path=args.out)
    rows = [(r.epoch, _fmt(r.train_loss), _fmt(r.valid_loss), f"{r.lr:g}") for r in result.records]
    table = _table(("epoch", "train MSE", "valid MSE", "lr"), rows)
    table += f"\nbest epoch {result.best_epoch}; checkpoint {args.out}"
    recs = [{"checkpoint": str(args.out), "best_epoch": result.best_epoch, "variant": variant.name,
             "network": config.to_dict(), "train_items": len(train_rows), "valid_items": len(valid_rows)}]
    _emit(args, recs, table)
    return 0


def _predict_records(args, net, variant):
    from .estimators import predict_quality

    if args.manifest:
        rows = _manifest_rows(args.manifest)
        for row in rows:
            probe = load_wav(row["probe"])
            ref_path = variant.manifest_reference(row)
            ref = load_wav(ref_path) if ref_path else None
            score = predict_quality(net, variant, probe, ref)
            yield row["item_id"], score
        return
    if args.probe is None:
        raise UsageError("predict needs a probe file or --manifest")
    probe = load_wav(args.probe)
    ref = load_wav(args.reference) if args.reference else None
    yield args.item_id or Path(args.probe).stem, predict_quality(net, variant, probe, ref)


def cmd_predict(args):
    from .estimators import EstimatorVariant, check_variant
    from .nn.checkpoint import file_digest, load_checkpoint

    variant = EstimatorVariant.parse(args.variant)
    if variant.reference_role is None and args.reference:
        raise UsageError(f"{variant.name} takes no reference; drop the reference argument")
    if variant.reference_role is not None and args.probe and not args.reference:
        raise UsageError(f"{variant.name} needs a {variant.reference_role} reference file")
    net = load_checkpoint(args.checkpoint)
    check_variant(net, variant)
    ck = file_digest(args.checkpoint)[:16]
    records, rows = [], []
    for item_id, score in _predict_records(args, net, variant):
        rec = {"item_id": item_id, "variant": variant.name, "q_hat": score.value,
               "per_segment": [s.value for s in score.per_segment], "checkpoint": ck}
        records.append(rec)
        rows.append((item_id, _fmt(score.value), " ".join(_fmt(s.value, 2) for s in score.per_segment)))
    _emit(args, records, _table(("item", "q_hat", "segments"), rows))
    return 0


def _parse_k(value):
    from .remix import K_PRESETS

    if str(value) in K_PRESETS:
        return K_PRESETS[str(value)]
    try:
        return float(value)
    except ValueError:
        raise UsageError(f"--k must be a number or one of {sorted(K_PRESETS)}") from None


def cmd_remix(args):
    from .audio import check_aligned
    from .estimators import NON_INTRUSIVE, predict_quality
    from .remix import GainMapping, apply_remix, map_gain

    x, s_hat = load_wav(args.mixture), load_wav(args.separated)
    check_aligned(x, s_hat)
    if args.q_hat is not None:
        q_hat = float(args.q_hat)
    elif args.checkpoint:
        q_hat = predict_quality(args.checkpoint, NON_INTRUSIVE, s_hat, x).value
    else:
        raise UsageError("remix needs --checkpoint (or --q-hat)")
    mapping = GainMapping.from_preset(args.preset, _parse_k(args.k))
    plan = map_gain(q_hat, mapping)
    y = apply_remix(x, s_hat, plan)
    bit_depth = args.bit_depth if args.bit_depth == "float32" else int(args.bit_depth)
    save_wav(y, args.out, bit_depth)
    rec = {"item_id": Path(args.mixture).stem, **plan.as_record(), "output": str(args.out)}
    table = _table(("item", "q_hat", "preset", "k", "g [dB]", "gamma"),
                   [(rec["item_id"], _fmt(q_hat), args.preset, mapping.k, _fmt(plan.g_db), _fmt(plan.gamma, 5))])
    _emit(args, [rec], table)
    return 0


def cmd_eval(args):
    from .evaluation import evaluate_run, format_table

    preds = [r for r in _read_jsonl(args.predictions) if r.get("record") != "header"]
    refs = [r for r in _read_jsonl(args.references) if r.get("record") != "header"]
    rows = evaluate_run(preds, refs)
    _emit(args, [r.as_record() for r in rows], format_table(rows))
    return 0


def _read_jsonl(path):
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"no such file: {path}")
    try:
        return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not JSON lines ({exc})") from exc


# --- parser ---------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="qcremix", description="Separation quality scoring, prediction and remixing.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, report_default=None):
        sp.add_argument("--config", help="key-value config file; flags win over its values")
        sp.add_argument("--report", default=report_default, help="JSON-lines report file")
        sp.add_argument("--seed", type=int, default=None)

    sp = sub.add_parser("features", help="per-segment ADB and AvgModDiff1")
    sp.add_argument("reference")
    sp.add_argument("probe")
    sp.add_argument("--boundary", choices=("on", "off"), default=None)
    common(sp)
    sp.set_defaults(func=cmd_features)

    sp = sub.add_parser("score-2f", help="2f quality score of a probe against a reference")
    sp.add_argument("reference")
    sp.add_argument("probe")
    sp.add_argument("--boundary", choices=("on", "off"), default=None)
    sp.add_argument("--coefficients", default=None, help="coefficient file (default: env or packaged)")
    sp.add_argument("--item-id", default=None)
    common(sp)
    sp.set_defaults(func=cmd_score_2f)

    sp = sub.add_parser("synth", help="build a labelled corpus from stems")
    sp.add_argument("stems", help="directory with speech/ and background/ subdirectories")
    sp.add_argument("out", help="output directory")
    sp.add_argument("--silence-seconds", type=float, default=None)
    common(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train a quality network from a manifest")
    sp.add_argument("manifest")
    sp.add_argument("--valid", default=None, help="validation manifest (default: split by source item)")
    sp.add_argument("--valid-fraction", type=float, default=None)
    sp.add_argument("-v", "--variant", choices=("i", "n", "r"), default=None)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--batch", type=int, default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--patience", type=int, default=None)
    sp.add_argument("--front-filters", type=int, default=None)
    sp.add_argument("--block-filters", type=int, default=None)
    sp.add_argument("--dense-units", default=None, help="comma-separated hidden widths")
    sp.add_argument("--log", default=None, help="per-epoch JSON-lines log (default: <out>.log.jsonl)")
    sp.add_argument("--out", required=True, help="checkpoint path")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("predict", help="predict quality with a trained checkpoint")
    sp.add_argument("checkpoint")
    sp.add_argument("probe", nargs="?")
    sp.add_argument("reference", nargs="?")
    sp.add_argument("-v", "--variant", choices=("i", "n", "r"), default=None)
    sp.add_argument("--manifest", default=None, help="predict every row of a corpus manifest")
    sp.add_argument("--item-id", default=None)
    common(sp)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("remix", help="quality-driven background attenuation")
    sp.add_argument("mixture")
    sp.add_argument("separated")
    sp.add_argument("--checkpoint", default=None, help="non-intrusive quality network")
    sp.add_argument("--q-hat", type=float, default=None, help="use this quality instead of predicting")
    sp.add_argument("--preset", choices=("initial", "refined"), default=None)
    sp.add_argument("--k", default=None, help="offset in dB or minus6|zero|plus6|plus12")
    sp.add_argument("--bit-depth", choices=("16", "24", "32", "float32"), default=None)
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_remix)

    sp = sub.add_parser("eval", help="agreement statistics between predictions and references")
    sp.add_argument("predictions")
    sp.add_argument("references")
    common(sp)
    sp.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        _resolve(args, ("general", args.command))
        return args.func(args)
    except QCRemixError as exc:
        print(f"qcremix {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"qcremix {args.command}: {exc}", file=sys.stderr)
        return FormatError.exit_code


if __name__ == "__main__":
    sys.exit(main())
