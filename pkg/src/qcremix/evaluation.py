"""Agreement statistics between predicted and reference quality scores."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DegenerateDataError, EmptyDatasetError, JoinError, MissingFileError


def _pair(pred, ref):
    p = np.asarray(pred, dtype=np.float64).ravel()
    r = np.asarray(ref, dtype=np.float64).ravel()
    if p.shape != r.shape:
        raise ValueError(f"length mismatch: {p.size} predictions, {r.size} references")
    if p.size < 2:
        raise DegenerateDataError("need at least two score pairs")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(r))):
        raise DegenerateDataError("scores must be finite")
    return p, r


def pearson(pred, ref) -> float:
    """Product-moment correlation.

    Raises:
        DegenerateDataError: either sequence is constant.
    """
    p, r = _pair(pred, ref)
    pc, rc = p - p.mean(), r - r.mean()
    sp, sr = np.dot(pc, pc), np.dot(rc, rc)
    if sp == 0.0 or sr == 0.0:
        raise DegenerateDataError("correlation undefined for a constant sequence")
    return float(np.clip(np.dot(pc, rc) / math.sqrt(sp * sr), -1.0, 1.0))


def regression_slope(pred, ref) -> float:
    """Least-squares slope of ``pred`` regressed on ``ref``."""
    p, r = _pair(pred, ref)
    rc = r - r.mean()
    srr = np.dot(rc, rc)
    if srr == 0.0:
        raise DegenerateDataError("slope undefined for constant reference scores")
    return float(np.dot(rc, p - p.mean()) / srr)


def mae(pred, ref) -> float:
    p, r = _pair(pred, ref)
    return float(np.mean(np.abs(p - r)))


def rmse(pred, ref) -> float:
    p, r = _pair(pred, ref)
    return float(math.sqrt(np.mean((p - r) ** 2)))


def fisher_z_aggregate(correlations) -> float:
    """Average correlations in the arctanh domain and map back.

    Raises:
        ValueError: empty input or any ``|rho| >= 1``.
    """
    rho = np.asarray(correlations, dtype=np.float64).ravel()
    if rho.size == 0:
        raise ValueError("no correlations to aggregate")
    if np.any(np.abs(rho) >= 1.0) or not np.all(np.isfinite(rho)):
        raise ValueError("correlations must lie strictly inside (-1, 1)")
    return float(np.tanh(np.mean(np.arctanh(rho))))


@dataclass(frozen=True)
class AgreementRow:
    variant: str
    split: str
    n: int
    pearson: float
    slope: float
    mae: float
    rmse: float

    def as_record(self) -> dict:
        return {"variant": self.variant, "split": self.split, "n": self.n, "pearson": self.pearson,
                "slope": self.slope, "mae": self.mae, "rmse": self.rmse}


def agreement(pred, ref, variant="", split="") -> AgreementRow:
    p, r = _pair(pred, ref)
    return AgreementRow(variant, split, p.size, pearson(p, r), regression_slope(p, r), mae(p, r), rmse(p, r))


def _read_records(source):
    if isinstance(source, (str, Path)):
        path = Path(source)
        if not path.is_file():
            raise MissingFileError(f"no such file: {path}")
        return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    return list(source)


def _score(row, keys):
    for k in keys:
        if k in row and row[k] is not None:
            return float(row[k])
    raise KeyError(f"record for {row.get('item_id')!r} has none of {keys}")


def _aggregate_correlation(rhos):
    """Fisher-z mean that tolerates perfect correlations of one sign."""
    rhos = np.asarray(rhos, dtype=np.float64)
    saturated = np.abs(rhos) >= 1.0
    if not saturated.any():
        return fisher_z_aggregate(rhos)
    signs = np.unique(np.sign(rhos[saturated]))
    return float(signs[0]) if signs.size == 1 else float("nan")


def evaluate_run(predictions, references, aggregate_name="fisher_z"):
    """Join predictions with reference scores and compute per-group statistics.

    Args:
        predictions: JSON-lines path or iterable of dicts with ``item_id``,
            ``q_hat`` (or ``value``), and optional ``variant`` / ``split``.
        references: JSON-lines path or iterable of dicts with ``item_id``
            and ``label`` (or ``value``); an optional ``split`` there takes
            precedence.

    Returns:
        List of :class:`AgreementRow`, one per (variant, split), followed
        for every variant with at least two splits by an aggregate row whose
        correlation is the Fisher-z mean and whose other columns are pooled
        over the splits.

    Raises:
        JoinError: prediction ids missing from the references, or vice versa.
        EmptyDatasetError: no predictions.
    """
    preds = _read_records(predictions)
    refs = _read_records(references)
    if not preds:
        raise EmptyDatasetError("no predictions to evaluate")
    ref_by_id = {r["item_id"]: r for r in refs}
    pred_ids = {p["item_id"] for p in preds}
    missing = sorted(pred_ids - ref_by_id.keys()) + sorted(ref_by_id.keys() - pred_ids)
    if missing:
        raise JoinError(missing)

    groups = defaultdict(lambda: ([], []))
    for p in preds:
        ref = ref_by_id[p["item_id"]]
        split = ref.get("split") or p.get("split") or "all"
        pv, rv = groups[(p.get("variant") or "", split)]
        pv.append(_score(p, ("q_hat", "value")))
        rv.append(_score(ref, ("label", "value")))

    rows = [agreement(pv, rv, variant, split) for (variant, split), (pv, rv) in sorted(groups.items())]
    by_variant = defaultdict(list)
    for row in rows:
        by_variant[row.variant].append(row)
    for variant, vrows in sorted(by_variant.items()):
        if len(vrows) < 2:
            continue
        pv = [v for (var, _), (p, _) in sorted(groups.items()) if var == variant for v in p]
        rv = [v for (var, _), (_, r) in sorted(groups.items()) if var == variant for v in r]
        pooled = agreement(pv, rv)
        rows.append(AgreementRow(variant, aggregate_name, pooled.n,
                                 _aggregate_correlation([r.pearson for r in vrows]),
                                 pooled.slope, pooled.mae, pooled.rmse))
    return rows


def format_table(rows) -> str:
    """Aligned text table of agreement rows."""
    header = ("variant", "split", "n", "pearson", "slope", "MAE", "RMSE")
    body = [(r.variant or "-", r.split, str(r.n), f"{r.pearson:.4f}", f"{r.slope:.4f}",
             f"{r.mae:.3f}", f"{r.rmse:.3f}") for r in rows]
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(b, widths)) for b in body]
    return "\n".join(lines)
