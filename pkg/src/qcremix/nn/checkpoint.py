"""Versioned binary checkpoint container.

Layout::

    magic "DNN2FCKP" | u32 version | u32 header length | JSON header
    | raw little-endian tensor blobs in header order | sha256 of all preceding bytes

The header lists every tensor (name, dtype, shape), the network config and
its hash, the seed, the initialization scheme and optimizer/scheduler
state.  The checksum is verified before anything is parsed.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from pathlib import Path

import numpy as np

from ..exceptions import AudioIOError, ChecksumError, CheckpointError, MissingFileError, VersionMismatchError
from .network import Network, NetworkConfig, build_network
from .optim import Adadelta, PlateauScheduler

MAGIC = b"DNN2FCKP"
VERSION = 1
INIT_SCHEME = "he_uniform/output_bias_50"


def _json_safe(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def save_checkpoint(network: Network, path, optimizer: Adadelta | None = None,
                    scheduler: PlateauScheduler | None = None, extra=None) -> str:
    """Write ``network`` (and optional optimizer state); returns the file's sha256."""
    tensors = [("net." + k, v) for k, v in network.state_arrays().items()]
    if optimizer is not None:
        tensors += [("opt." + k, v) for k, v in optimizer.state_arrays().items()]
    header = {
        "config": network.config.to_dict(),
        "config_hash": network.config.digest(),
        "seed": network.seed,
        "init": INIT_SCHEME,
        "tensors": [[name, np.asarray(v).dtype.str, list(np.shape(v))] for name, v in tensors],
        "optimizer": optimizer.hyper() if optimizer is not None else None,
        "scheduler": {k: _json_safe(v) for k, v in scheduler.state().items()} if scheduler else None,
        "extra": extra or {},
    }
    head = json.dumps(header, sort_keys=True).encode()
    body = bytearray(MAGIC + struct.pack("<II", VERSION, len(head)) + head)
    for _, v in tensors:
        body += np.ascontiguousarray(v).astype(np.asarray(v).dtype.newbyteorder("<")).tobytes()
    digest = hashlib.sha256(body).digest()
    try:
        Path(path).write_bytes(bytes(body) + digest)
    except OSError as exc:
        raise AudioIOError(f"cannot write checkpoint {path}: {exc}") from exc
    return hashlib.sha256(bytes(body) + digest).hexdigest()


def read_checkpoint(path):
    """Verify and decode a checkpoint into ``(header, {name: array})``.

    Raises:
        MissingFileError: no such file.
        ChecksumError: truncated or corrupted content.
        VersionMismatchError: unknown magic or container version.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < len(MAGIC) + 8 + 32:
        raise ChecksumError(f"{path}: file too short to be a checkpoint")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"{path}: checksum mismatch (corrupted or truncated)")
    if body[: len(MAGIC)] != MAGIC:
        raise VersionMismatchError(f"{path}: not a network checkpoint")
    version, head_len = struct.unpack("<II", body[len(MAGIC) : len(MAGIC) + 8])
    if version != VERSION:
        raise VersionMismatchError(f"{path}: checkpoint version {version}, expected {VERSION}")
    pos = len(MAGIC) + 8
    header = json.loads(body[pos : pos + head_len])
    pos += head_len
    arrays = {}
    for name, dtype, shape in header["tensors"]:
        dt = np.dtype(dtype)
        n = int(np.prod(shape)) * dt.itemsize
        arrays[name] = np.frombuffer(body[pos : pos + n], dtype=dt).reshape(shape).copy()
        pos += n
    if pos != len(body):
        raise CheckpointError(f"{path}: trailing bytes after tensor data")
    return header, arrays


def load_checkpoint(path, with_optimizer=False):
    """Rebuild the network (and optionally optimizer and scheduler) from ``path``."""
    header, arrays = read_checkpoint(path)
    config = NetworkConfig.from_dict(header["config"])
    if config.digest() != header["config_hash"]:
        raise CheckpointError(f"{path}: config hash does not match its config")
    net_arrays = {k[4:]: v for k, v in arrays.items() if k.startswith("net.")}
    dtype = net_arrays["input.norm.gamma"].dtype
    net = build_network(config, header["seed"], dtype=dtype)
    net.load_state_arrays(net_arrays)
    if not with_optimizer:
        return net
    opt = None
    if header["optimizer"] is not None:
        h = header["optimizer"]
        opt = Adadelta(h["lr"], h["rho"], h["eps"])
        opt.steps = h["steps"]
        opt.load_state_arrays({k[4:]: v for k, v in arrays.items() if k.startswith("opt.")})
    sched = None
    if header["scheduler"] is not None:
        s = dict(header["scheduler"])
        s["best"] = float(s["best"])
        sched = PlateauScheduler(**s)
    return net, opt, sched


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
