"""Batching, Adam with decoupled weight decay, and the training loop."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, NamedTuple

import numpy as np

from ..errors import ConfigError, NonFiniteLoss, SequenceTooLong, VokitError
from ..geometry import Pose, r6_to_rotmat, rotmat_to_6d
from .model import KeypointBatch, RegressorParams, forward, loss_and_grad


@dataclass(frozen=True)
class Normalizer:
    """Maps pixel coordinates of a ``width`` x ``height`` image onto [-1, 1]."""

    width: float
    height: float

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ConfigError(f"image size must be positive, got {self.width}x{self.height}")
        object.__setattr__(self, "width", float(self.width))
        object.__setattr__(self, "height", float(self.height))

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        return np.column_stack([(2.0 * pts[:, 0] + 1.0) / self.width - 1.0, (2.0 * pts[:, 1] + 1.0) / self.height - 1.0])

    def to_dict(self):
        return {"width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["width"]), float(d["height"]))


def canonical_order(matches) -> np.ndarray:
    """Token order: descending confidence, ties by ``(x0, y0)``."""
    return np.lexsort((matches.kpts0[:, 1], matches.kpts0[:, 0], -matches.confidence))


def tokens_from_matches(matches, normalizer: Normalizer) -> np.ndarray:
    order = canonical_order(matches)
    return np.column_stack([normalizer(matches.kpts0[order]), normalizer(matches.kpts1[order])])


def build_batch(matchsets, normalizer: Normalizer, targets=None, max_len=None, truncate=False) -> KeypointBatch:
    """Pad a list of match sets into one batch.

    ``targets`` are camera-to-camera relative poses (one per match set) whose
    translation and 6D rotation become the regression targets.
    """
    seqs = [tokens_from_matches(m, normalizer) for m in matchsets]
    if max_len is not None:
        longest = max(len(s) for s in seqs)
        if longest > max_len:
            if not truncate:
                raise SequenceTooLong(f"{longest} matches exceed max_seq_len {max_len}")
            seqs = [s[:max_len] for s in seqs]
    n = max(len(s) for s in seqs)
    tokens = np.zeros((len(seqs), n, 4))
    mask = np.zeros((len(seqs), n), dtype=bool)
    for i, s in enumerate(seqs):
        tokens[i, : len(s)] = s
        mask[i, : len(s)] = True
    t = r6 = None
    if targets is not None:
        targets = list(targets)
        if len(targets) != len(seqs):
            raise VokitError(f"{len(targets)} targets for {len(seqs)} match sets")
        t = np.array([p.translation for p in targets])
        r6 = np.array([rotmat_to_6d(p.rotation) for p in targets])
    return KeypointBatch(tokens, mask, t, r6)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    steps: int = 28000
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    beta: float = 100.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.steps < 0:
            raise ConfigError("batch_size must be >= 1 and steps >= 0")
        if self.learning_rate < 0 or self.weight_decay < 0 or self.beta < 0:
            raise ConfigError("learning_rate, weight_decay and beta must be non-negative")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            raise ConfigError("Adam coefficients out of range")

    def to_dict(self):
        return asdict(self)


@dataclass
class AdamState:
    step: int
    m: dict
    v: dict

    @classmethod
    def zeros(cls, params: RegressorParams) -> AdamState:
        return cls(0, {k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def adamw_update(params: RegressorParams, grads: dict, state: AdamState, cfg: TrainConfig) -> None:
    """In-place AdamW step; decay multiplies the weights before the Adam update."""
    state.step += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    lr = cfg.learning_rate
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if cfg.weight_decay:
            p *= 1.0 - lr * cfg.weight_decay
        p -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)


class StepRecord(NamedTuple):
    step: int
    total_loss: float
    l_trans: float
    l_rot: float


def batch_indices(n: int, batch_size: int, step: int, seed: int) -> np.ndarray:
    """Sample indices for ``step``; reshuffled every epoch from ``(seed, epoch)``.

    A pure function of its arguments, so training can resume at any step.
    """
    bs = min(batch_size, n)
    per_epoch = n // bs
    epoch, k = divmod(step, per_epoch)
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    return np.sort(perm[k * bs : (k + 1) * bs])


def _dropout_seed(seed: int, step: int) -> int:
    return int(np.random.SeedSequence([seed, step, 0xD0]).generate_state(1)[0])


class TrainResult(NamedTuple):
    params: RegressorParams
    optimizer: AdamState
    history: list


def train(
    params: RegressorParams,
    dataset: KeypointBatch,
    config: TrainConfig,
    optimizer: AdamState = None,
    on_step: Callable[[StepRecord], bool | None] = None,
) -> TrainResult:
    """Optimise ``params`` on ``dataset`` for ``config.steps`` steps.

    Training continues from ``optimizer.step`` when a saved optimizer state is
    passed, which makes a resumed run bitwise identical to an uninterrupted
    one. ``on_step`` receives each record; returning True stops early.
    The input ``params`` are not modified.
    """
    if len(dataset) == 0:
        raise VokitError("empty dataset")
    params = params.copy()
    if optimizer is None:
        optimizer = AdamState.zeros(params)
    else:
        optimizer = AdamState(optimizer.step, {k: v.copy() for k, v in optimizer.m.items()}, {k: v.copy() for k, v in optimizer.v.items()})
    history = []
    start = optimizer.step
    for step in range(start, start + config.steps):
        batch = dataset.take(batch_indices(len(dataset), config.batch_size, step, config.seed))
        with np.errstate(invalid="ignore", over="ignore"):  # reported below as NonFiniteLoss
            losses, grads = loss_and_grad(params, batch, config.beta, train_mode=True, dropout_seed=_dropout_seed(config.seed, step))
        if not np.isfinite(losses.total):
            raise NonFiniteLoss(step, losses.total)
        adamw_update(params, grads, optimizer, config)
        rec = StepRecord(step, losses.total, losses.translation, losses.rotation)
        history.append(rec)
        if on_step is not None and on_step(rec):
            break
    return TrainResult(params, optimizer, history)


def evaluate(params: RegressorParams, dataset: KeypointBatch, beta=100.0):
    """Eval-mode loss terms over the whole dataset."""
    from .model import pose_loss

    out = forward(params, dataset)
    return pose_loss(out.translation, out.rotation6d, dataset.gt_translation, dataset.gt_rotation6d, beta)


def predict_relative_pose(params: RegressorParams, matches, normalizer: Normalizer, truncate=True) -> Pose:
    """Relative pose of camera 1 expressed in camera 0 (the step chained by
    :func:`vokit.trajectory.accumulate`)."""
    if len(matches) < 1:
        raise VokitError("need at least one match")
    batch = build_batch([matches], normalizer, max_len=params.config.max_seq_len, truncate=truncate)
    out = forward(params, batch)
    return Pose(r6_to_rotmat(out.rotation6d[0]), out.translation[0])
