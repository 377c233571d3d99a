"""Ground-motion splits, batched training with early stopping, and evaluation."""

from __future__ import annotations

import copy
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DataError, TrainingDivergence
from .features import INTENSITY, MAX_FRAMES, normalize_kind
from .neural import (DENSE_UNITS, DROPOUT, GRU_UNITS, Architecture, NadamState, backward,
                     forward, init_params, mae_loss, nadam_step, predict)

AMPLIFY = 10.0
DEFAULT_LR = 2.0e-3
INTENSITY_LR = 1.0e-6


@dataclass
class FeatureSet:
    """Features, labels and grouping ids for a set of events.

    ``X`` is ``(N, T, 16)`` with ``mask`` ``(N, T)`` for MFB/MFCC, or
    ``(N, n_features)`` with ``mask=None`` for intensity vectors. ``drift``
    holds drift ratios as fractions.
    """

    kind: str
    X: np.ndarray
    drift: np.ndarray
    gm_ids: np.ndarray
    event_ids: list
    mask: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.event_ids)
        if not (self.X.shape[0] == self.drift.size == self.gm_ids.size == n):
            raise DataError("feature set arrays disagree in length")

    def __len__(self):
        return len(self.event_ids)

    @property
    def target(self) -> np.ndarray:
        """Amplified drift (fraction x 10) used as the regression target."""
        return self.drift * AMPLIFY

    def subset(self, idx) -> "FeatureSet":
        idx = np.asarray(idx, dtype=int)
        return FeatureSet(kind=self.kind, X=self.X[idx], drift=self.drift[idx],
                          gm_ids=self.gm_ids[idx], event_ids=[self.event_ids[i] for i in idx],
                          mask=None if self.mask is None else self.mask[idx])

    def select_gms(self, gm_ids) -> "FeatureSet":
        keep = np.isin(self.gm_ids, np.asarray(sorted(gm_ids)))
        return self.subset(np.flatnonzero(keep))


@dataclass(frozen=True)
class SplitPlan:
    train_gm_ids: tuple
    val_gm_ids: tuple
    test_gm_ids: tuple
    seed: int

    def __post_init__(self):
        self.check()

    def check(self):
        tr, va, te = map(set, (self.train_gm_ids, self.val_gm_ids, self.test_gm_ids))
        if tr & va or tr & te or va & te:
            raise DataError("ground-motion ids leak across splits")

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["train_gm_ids"]), tuple(d["val_gm_ids"]), tuple(d["test_gm_ids"]),
                   int(d["seed"]))


def split_by_ground_motion(gm_ids, train_frac: float = 0.8, val_frac: float = 0.1,
                           seed: int = 0) -> SplitPlan:
    """Random partition of ground motions (not realizations).

    ``round(train_frac * n)`` ground motions form the training pool and the
    rest are held out for testing. ``floor(val_frac * pool)`` of the pool (at
    least one) become validation.
    """
    universe = np.unique(np.asarray(gm_ids))
    n = universe.size
    if n < 3:
        raise DataError(f"need at least 3 distinct ground motions, got {n}")
    n_pool = int(round(train_frac * n))
    n_val = max(1, int(math.floor(val_frac * n_pool)))
    if n_pool >= n or n_pool - n_val < 1:
        raise DataError(f"{n} ground motions cannot populate train, validation and test splits")
    order = np.random.default_rng(seed).permutation(universe)
    pool, test = order[:n_pool], order[n_pool:]
    val, train = pool[:n_val], pool[n_val:]
    as_tuple = lambda a: tuple(sorted(int(v) for v in a))
    return SplitPlan(as_tuple(train), as_tuple(val), as_tuple(test), int(seed))


@dataclass
class TrainConfig:
    feature_kind: str = "MFB"
    batch_size: int = 1200
    lr: float | None = None
    patience: int = 10
    max_epochs: int = 200
    seed: int = 0
    min_delta: float = 0.0

    def __post_init__(self):
        self.feature_kind = normalize_kind(self.feature_kind)
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr is not None and not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")

    @property
    def learning_rate(self) -> float:
        if self.lr is not None:
            return self.lr
        return INTENSITY_LR if self.feature_kind == INTENSITY else DEFAULT_LR


def architecture_for(kind: str, n_features: int, gru_units=GRU_UNITS, dense_units=DENSE_UNITS,
                     dropout=DROPOUT) -> Architecture:
    """Full temporal network for MFB/MFCC; bottleneck only for intensity vectors."""
    if normalize_kind(kind) == INTENSITY:
        gru_units = ()
    return Architecture(n_features=n_features, gru_units=tuple(gru_units),
                        dense_units=tuple(dense_units), dropout=dropout)


class EarlyStopping:
    """Track the best validation loss and stop after ``patience`` stale epochs."""

    def __init__(self, patience: int, min_delta: float = 0.0):
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.best_epoch = -1
        self.best_state = None
        self.wait = 0

    def update(self, epoch: int, loss: float, state=None) -> bool:
        """Record one epoch; returns ``True`` when training should stop."""
        if loss < self.best - self.min_delta:
            self.best, self.best_epoch, self.wait = loss, epoch, 0
            self.best_state = copy.deepcopy(state)
            return False
        self.wait += 1
        return self.wait >= self.patience


@dataclass
class History:
    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    def append(self, epoch, train_mae, val_mae):
        self.epochs.append({"epoch": epoch, "train_mae": train_mae, "val_mae": val_mae})

    @property
    def val_mae(self):
        return [e["val_mae"] for e in self.epochs]


def _batch(data: FeatureSet, idx):
    return data.X[idx], (None if data.mask is None else data.mask[idx])


def train(train_set: FeatureSet, val_set: FeatureSet, config: TrainConfig,
          arch: Architecture | None = None, params=None, log=None):
    """Fit the regressor with Nadam on batch-mean MAE and early stopping.

    Each epoch visits the training set once in a seeded shuffled order.
    Returns the parameters from the epoch with the lowest validation MAE
    together with the per-epoch history (MAE in amplified units).

    Raises:
        TrainingDivergence: on any non-finite value; ``last_good`` holds the
            best parameters seen so far (the initial ones before epoch 1).
    """
    if normalize_kind(train_set.kind) != config.feature_kind:
        raise ConfigError(f"dataset holds {train_set.kind} features but config expects {config.feature_kind}")
    if len(train_set) == 0 or len(val_set) == 0:
        raise DataError("training and validation sets must be non-empty")
    if arch is None:
        arch = architecture_for(config.feature_kind, train_set.X.shape[-1])
    rng = np.random.default_rng(config.seed)
    if params is None:
        params = init_params(arch, int(rng.integers(2**63)))
    state = NadamState.fresh(params)
    stopper = EarlyStopping(config.patience, config.min_delta)
    history = History()
    y_train, y_val = train_set.target, val_set.target
    last_good = copy.deepcopy(params)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train_set))
        batch_losses, batch_sizes = [], []
        try:
            for lo in range(0, order.size, config.batch_size):
                idx = np.sort(order[lo: lo + config.batch_size])
                xb, mb = _batch(train_set, idx)
                y_hat, trace = forward(params, arch, xb, mb, train=True, rng=rng)
                batch_losses.append(mae_loss(y_hat, y_train[idx]))
                batch_sizes.append(idx.size)
                grads = backward(params, arch, trace, y_train[idx])
                nadam_step(params, grads, state, lr=config.learning_rate)
            val_pred = predict(params, arch, val_set.X, val_set.mask)
        except TrainingDivergence as exc:
            exc.last_good = stopper.best_state if stopper.best_state is not None else last_good
            raise
        train_mae = float(np.average(batch_losses, weights=batch_sizes))
        val_mae = mae_loss(val_pred, y_val)
        if not (math.isfinite(train_mae) and math.isfinite(val_mae)):
            raise TrainingDivergence(f"non-finite loss at epoch {epoch}", last_good=stopper.best_state)
        history.append(epoch, train_mae, val_mae)
        if log:
            log(f"[{config.feature_kind}] epoch {epoch:4d}  train {train_mae:.5f}  val {val_mae:.5f}")
        if stopper.update(epoch, val_mae, params):
            history.stopped_early = True
            break
    history.best_epoch = stopper.best_epoch
    return stopper.best_state, history


def fit_until(data: FeatureSet, arch: Architecture, target_mae: float, max_epochs: int,
              lr: float = DEFAULT_LR, seed: int = 0, batch_size: int | None = None):
    """Train on ``data`` until its eval-mode MAE drops below ``target_mae``.

    Used for capacity checks; returns ``(params, epochs_used, final_mae)``.
    """
    rng = np.random.default_rng(seed)
    params = init_params(arch, int(rng.integers(2**63)))
    state = NadamState.fresh(params)
    y = data.target
    batch_size = batch_size or len(data)
    mae = mae_loss(predict(params, arch, data.X, data.mask), y)
    for epoch in range(1, max_epochs + 1):
        order = rng.permutation(len(data))
        for lo in range(0, order.size, batch_size):
            idx = np.sort(order[lo: lo + batch_size])
            xb, mb = _batch(data, idx)
            y_hat, trace = forward(params, arch, xb, mb, train=True, rng=rng)
            nadam_step(params, backward(params, arch, trace, y[idx]), state, lr=lr)
        mae = mae_loss(predict(params, arch, data.X, data.mask), y)
        if mae < target_mae:
            return params, epoch, mae
    return params, max_epochs, mae


@dataclass
class EvalReport:
    """Test-set metrics in percent-drift units."""

    kind: str
    mae_percent: float
    truth_percent: np.ndarray
    pred_percent: np.ndarray
    abs_error_percent: np.ndarray
    poly_coeffs: np.ndarray
    event_ids: list
    amplified_mae: float
    runtime_s: float = 0.0

    @property
    def n(self) -> int:
        return self.truth_percent.size

    def to_dict(self) -> dict:
        return {"feature_kind": self.kind, "test_mae_percent": self.mae_percent,
                "test_mae_amplified": self.amplified_mae, "n_test": self.n,
                "poly_degree": self.poly_coeffs.size - 1,
                "poly_coeffs_high_to_low": [float(c) for c in self.poly_coeffs]}


def evaluate_predictions(kind: str, y_hat_amplified, test_set: FeatureSet, degree: int = 3,
                         runtime_s: float = 0.0) -> EvalReport:
    """Build the report from amplified predictions (drift fraction x 10)."""
    if len(test_set) == 0:
        raise DataError("cannot evaluate on an empty test set")
    y_hat = np.asarray(y_hat_amplified, dtype=float)
    truth = test_set.drift * 100.0
    pred = y_hat / AMPLIFY * 100.0
    err = np.abs(pred - truth)
    mae_pct = float(np.mean(err))
    amp_mae = mae_loss(y_hat, test_set.target)
    # percent = amplified / 10 * 100
    if not math.isclose(amp_mae * AMPLIFY, mae_pct, rel_tol=1e-9, abs_tol=1e-12):
        raise AssertionError(f"unit conversion mismatch: {amp_mae * AMPLIFY} vs {mae_pct}")
    deg = min(degree, max(len(test_set) - 1, 0))
    coeffs = np.polyfit(truth, err, deg) if len(test_set) > 1 else np.array([mae_pct])
    return EvalReport(kind=normalize_kind(kind), mae_percent=mae_pct, truth_percent=truth,
                      pred_percent=pred, abs_error_percent=err, poly_coeffs=np.asarray(coeffs),
                      event_ids=list(test_set.event_ids), amplified_mae=amp_mae,
                      runtime_s=runtime_s)


def evaluate(params, arch: Architecture, test_set: FeatureSet, degree: int = 3) -> EvalReport:
    """Eval-mode predictions on ``test_set`` and the resulting report."""
    if len(test_set) == 0:
        raise DataError("cannot evaluate on an empty test set")
    t0 = time.perf_counter()
    y_hat = predict(params, arch, test_set.X, test_set.mask)
    return evaluate_predictions(test_set.kind, y_hat, test_set, degree,
                                runtime_s=time.perf_counter() - t0)


def pad_batch(values_list, max_frames: int = MAX_FRAMES):
    """Stack variable-length ``(n_w, F)`` rows into padded ``(N, max_frames, F)`` plus mask."""
    n_feat = values_list[0].shape[1]
    X = np.zeros((len(values_list), max_frames, n_feat))
    mask = np.zeros((len(values_list), max_frames), dtype=bool)
    for i, v in enumerate(values_list):
        if v.shape[0] > max_frames:
            raise DataError(f"{v.shape[0]} frames exceed the {max_frames}-frame cap")
        X[i, : v.shape[0]] = v
        mask[i, : v.shape[0]] = True
    return X, mask
