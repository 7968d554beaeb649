"""Mini-batch training with phase-inversion augmentation and best-epoch selection."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass

import numpy as np

from ..datagen.distortions import augment_phase_invert
from ..exceptions import EmptyDatasetError
from .checkpoint import save_checkpoint
from .network import Network, NetworkConfig, build_network, mse_loss
from .optim import Adadelta, PlateauScheduler

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainRecord:
    epoch: int
    train_loss: float
    valid_loss: float
    lr: float

    def __post_init__(self):
        if self.train_loss < 0 or self.valid_loss < 0:
            raise ValueError("losses are non-negative")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


class ArrayDataset:
    """In-memory examples ``X`` of shape ``(n, channels, length)`` with targets ``y``."""

    def __init__(self, X, y):
        self.X = np.asarray(X)
        self.y = np.asarray(y, dtype=np.float64)
        if self.X.ndim != 3 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X must be (n, channels, length) with one target per example")

    def __len__(self):
        return self.X.shape[0]

    def batch(self, indices):
        return self.X[indices], self.y[indices]


@dataclass
class TrainResult:
    network: Network
    records: list
    best_epoch: int
    optimizer: Adadelta
    scheduler: PlateauScheduler


def _to_channels_last(X, dtype):
    return np.ascontiguousarray(np.asarray(X).transpose(0, 2, 1), dtype=dtype)


def evaluate_loss(network: Network, dataset, batch_size=64) -> float:
    """Mean squared error over ``dataset`` in inference mode."""
    dtype = network.layers[0].params["gamma"].dtype
    total = 0.0
    for start in range(0, len(dataset), batch_size):
        X, y = dataset.batch(np.arange(start, min(start + batch_size, len(dataset))))
        pred = network.forward(_to_channels_last(X, dtype))[:, 0].astype(np.float64)
        total += float(np.sum((pred - y) ** 2))
    return total / len(dataset)


def train_step(network: Network, optimizer: Adadelta, X, y, augment=True) -> float:
    """One forward/backward/update on a batch; returns the batch loss."""
    if augment:
        X, y = augment_phase_invert(X, y)
    dtype = network.layers[0].params["gamma"].dtype
    network.zero_grad()
    pred = network.forward(_to_channels_last(X, dtype), train=True)
    loss, grad = mse_loss(pred, y)
    network.backward(grad.astype(dtype))
    params = {name: layer.params[k] for name, layer, k in network.parameters()}
    grads = {name: layer.grads[k] for name, layer, k in network.parameters()}
    optimizer.step(params, grads)
    return loss


def train(config, train_set, valid_set=None, epochs=50, batch_size=64, seed=0, lr=0.1,
          rho=0.95, eps=1e-6, patience=5, factor=0.5, augment=True,
          log_path=None, checkpoint_path=None, stop_below=None, callback=None) -> TrainResult:
    """Fit a network to ``train_set`` and keep the epoch with the lowest validation loss.

    Args:
        config: a :class:`NetworkConfig`, or an already built :class:`Network`
            to continue from.
        train_set, valid_set: objects with ``len()`` and ``batch(indices)``
            returning ``(X (B, channels, length), y (B,))``.  Without a
            validation set the training loss drives selection and decay.
        batch_size: examples drawn per step before phase-inversion doubling.
        log_path: optional JSON-lines file receiving one record per epoch.
        checkpoint_path: optional file receiving the best checkpoint.
        stop_below: end training early once the selection loss drops below it.
        callback: optional ``callback(record, network)`` run after every epoch,
            before the best state is chosen.

    Raises:
        EmptyDatasetError: either dataset has no examples.
    """
    if len(train_set) == 0:
        raise EmptyDatasetError("training set is empty")
    if valid_set is not None and len(valid_set) == 0:
        raise EmptyDatasetError("validation set is empty")
    network = config if isinstance(config, Network) else build_network(config, seed)
    network.reseed_dropout(seed)
    optimizer = Adadelta(lr, rho, eps)
    scheduler = PlateauScheduler(patience=patience, factor=factor)
    records = []
    best = (np.inf, 0, None)
    log_fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(1, epochs + 1):
            order = np.random.default_rng([seed, epoch]).permutation(len(train_set))
            lr_used = optimizer.lr
            total, count = 0.0, 0
            for start in range(0, len(order), batch_size):
                idx = np.sort(order[start : start + batch_size])
                X, y = train_set.batch(idx)
                loss = train_step(network, optimizer, X, y, augment)
                total += loss * len(idx)
                count += len(idx)
            train_loss = total / count
            valid_loss = evaluate_loss(network, valid_set) if valid_set is not None else train_loss
            rec = TrainRecord(epoch, train_loss, valid_loss, lr_used)
            records.append(rec)
            if log_fh:
                log_fh.write(rec.to_json() + "\n")
                log_fh.flush()
            log.info("epoch %d train %.4f valid %.4f lr %.4g", epoch, train_loss, valid_loss, lr_used)
            if callback is not None:
                callback(rec, network)
            if valid_loss < best[0]:
                state = {k: v.copy() for k, v in network.state_arrays().items()}
                best = (valid_loss, epoch, state)
            scheduler.step(valid_loss, optimizer)
            if stop_below is not None and valid_loss < stop_below:
                break
    finally:
        if log_fh:
            log_fh.close()
    network.load_state_arrays(best[2])
    if checkpoint_path:
        save_checkpoint(network, checkpoint_path, optimizer, scheduler,
                        extra={"best_epoch": best[1], "best_valid_loss": best[0], "epochs": epochs})
    return TrainResult(network, records, best[1], optimizer, scheduler)
