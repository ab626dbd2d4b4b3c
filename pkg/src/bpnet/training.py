"""Loss, Adam optimizer, learning-rate schedule, self-supervised
pretraining, and the k-fold training driver.

A training run owns its ParameterSet exclusively; distinct folds share
nothing mutable and may run in parallel if a caller wants to.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import dataset as ds
from . import network as net
from .autodiff import Tensor
from .errors import UsageError

__all__ = [
    "OptimizerState",
    "SslPlan",
    "TrainPlan",
    "FoldReport",
    "mae_loss",
    "adam_step",
    "lr_at",
    "train_network",
    "pretrain_ssl",
    "finetune",
    "train_kfold",
]

log = logging.getLogger("bpnet.training")


def mae_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error over all elements; subgradient at zero is zero."""
    return ad.mean(ad.abs(ad.sub(pred, target)))


@dataclass
class OptimizerState:
    """Adam accumulators keyed like the parameters they track."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_scales: dict[str, float] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: OptimizerState) -> None:
    """One bias-corrected Adam update in place; frozen parameters untouched."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for name, p in params.items():
        if not p.requires_grad:
            continue
        if p.grad is None:
            raise UsageError(f"parameter {name!r} is trainable but has no gradient")
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        lr = state.lr * state.lr_scales.get(name, 1.0)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass(frozen=True)
class SslPlan:
    pretrain_epochs: int = 50
    freeze_epochs: int = 25
    finetune_lr_scale: float = 0.1


@dataclass(frozen=True)
class TrainPlan:
    epochs: int = 300
    lr_init: float = 1e-4
    lr_drop_every: int = 100
    lr_drop_factor: float = 10.0
    batch_size: int = 8
    folds: int = 10
    ssl: SslPlan = SslPlan()

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.folds < 2:
            raise UsageError("epochs must be >= 1 and folds >= 2")
        if self.lr_init <= 0 or self.lr_drop_factor <= 0 or self.lr_drop_every < 1:
            raise UsageError("learning-rate schedule parameters must be positive")
        if self.batch_size < 1:
            raise UsageError("batch_size must be >= 1")


def lr_at(epoch: int, plan: TrainPlan) -> float:
    """Step schedule: drop by the configured factor every ``lr_drop_every``."""
    if not 0 <= epoch < plan.epochs:
        raise UsageError(f"epoch {epoch} outside 0..{plan.epochs - 1}")
    return plan.lr_init / plan.lr_drop_factor ** (epoch // plan.lr_drop_every)


@dataclass
class FoldReport:
    fold: int
    final_train_loss: float
    val_mae_norm: float
    val_mae_mmhg: float
    wall_time_s: float


def _batch_tensor(episodes: list[ds.Episode], which: str) -> Tensor:
    data = np.stack([getattr(e, which) for e in episodes])[:, None, :]
    return Tensor(data)


def _epoch_pass(
    p: net.ParameterSet,
    config: net.NetworkConfig,
    episodes: list[ds.Episode],
    target: str,
    state: OptimizerState,
    batch_size: int,
    rng: np.random.Generator,
    encoder_eval: bool,
) -> float:
    order = rng.permutation(len(episodes))
    losses = []
    for start in range(0, len(order), batch_size):
        batch = [episodes[i] for i in order[start : start + batch_size]]
        x = _batch_tensor(batch, "ppg")
        y = _batch_tensor(batch, target)
        pred = net.apply_network(p, config, x, train=True, encoder_eval=encoder_eval)
        loss = mae_loss(pred, y)
        p.zero_grads()
        ad.backward(loss)
        adam_step(p.params, state)
        losses.append(float(loss.data))
    return float(np.mean(losses))


def _validation_mae(
    p: net.ParameterSet, config: net.NetworkConfig, episodes: list[ds.Episode]
) -> float:
    if not episodes:
        return float("nan")
    x = _batch_tensor(episodes, "ppg")
    y = _batch_tensor(episodes, "abp")
    pred = net.apply_network(p, config, x, train=False)
    return float(np.mean(np.abs(pred.data - y.data)))


def train_network(
    p: net.ParameterSet,
    config: net.NetworkConfig,
    episodes: list[ds.Episode],
    plan: TrainPlan,
    rng: np.random.Generator,
    target: str = "abp",
    epochs: int | None = None,
    epoch_offset: int = 0,
    state: OptimizerState | None = None,
    encoder_eval: bool = False,
    lr_scales: dict[str, float] | None = None,
    val_episodes: list[ds.Episode] | None = None,
    log_sink=None,
) -> tuple[float, OptimizerState]:
    """Train in place for ``epochs`` (default: the plan's), returning the
    last epoch's mean batch loss and the optimizer state.

    ``log_sink`` receives one tab-separated line per epoch:
    epoch, learning rate, train loss, validation MAE (blank when no
    validation episodes were given). ``epoch_offset`` keeps the learning-rate
    schedule aligned across multi-phase runs.
    """
    if not episodes:
        raise UsageError("cannot train on an empty episode list")
    if state is None:
        state = OptimizerState(lr=plan.lr_init)
    if lr_scales is not None:
        state.lr_scales = lr_scales
    n_epochs = plan.epochs if epochs is None else epochs
    last = float("nan")
    for epoch in range(n_epochs):
        sched_epoch = min(epoch_offset + epoch, plan.epochs - 1)
        state.lr = lr_at(sched_epoch, plan)
        last = _epoch_pass(
            p, config, episodes, target, state, plan.batch_size, rng, encoder_eval
        )
        if log_sink is not None:
            val = ""
            if val_episodes:
                val = f"{_validation_mae(p, config, val_episodes):.6f}"
            log_sink.write(f"{epoch_offset + epoch}\t{state.lr:.6g}\t{last:.6f}\t{val}\n")
    return last, state


def pretrain_ssl(
    config: net.NetworkConfig,
    data: ds.EpisodeSet,
    plan: TrainPlan,
    seed: int,
    log_sink=None,
) -> net.ParameterSet:
    """Self-supervised stage: reconstruct the PPG input from itself, then tag
    the encoder (ensemble, stem, contraction blocks) for later freezing."""
    if len(data) == 0:
        raise UsageError("cannot pretrain on an empty set")
    _, p = net.build_bpnet(config, seed)
    rng = np.random.default_rng([seed, 1])
    train_network(
        p,
        config,
        list(data.episodes),
        plan,
        rng,
        target="ppg",
        epochs=plan.ssl.pretrain_epochs,
        log_sink=log_sink,
    )
    p.encoder_tags = net.encoder_parameter_names(config)
    return p


def finetune(
    pretrained: net.ParameterSet,
    config: net.NetworkConfig,
    data: ds.EpisodeSet,
    plan: TrainPlan,
    seed: int,
    log_sink=None,
) -> net.ParameterSet:
    """Two-phase fine-tuning on the PPG -> ABP task.

    Phase 1 freezes the tagged encoder (weights and batch-norm stats) for
    ``plan.ssl.freeze_epochs``; phase 2 unfreezes it with a scaled learning
    rate for the remaining epochs.
    """
    if not pretrained.encoder_tags:
        raise UsageError("parameter set has no encoder tags; run pretraining first")
    missing = pretrained.encoder_tags - set(pretrained.params)
    if missing:
        raise UsageError(f"encoder tags reference unknown parameters: {sorted(missing)}")
    p = pretrained.copy()
    episodes = list(data.episodes)
    rng = np.random.default_rng([seed, 2])

    for name in p.encoder_tags:
        p.params[name].freeze()
    freeze_epochs = min(plan.ssl.freeze_epochs, plan.epochs)
    _, state = train_network(
        p, config, episodes, plan, rng, epochs=freeze_epochs,
        encoder_eval=True, log_sink=log_sink,
    )

    for name in p.encoder_tags:
        p.params[name].unfreeze()
    remaining = plan.epochs - freeze_epochs
    if remaining > 0:
        scales = {name: plan.ssl.finetune_lr_scale for name in p.encoder_tags}
        train_network(
            p, config, episodes, plan, rng, epochs=remaining,
            epoch_offset=freeze_epochs, state=state, lr_scales=scales,
            log_sink=log_sink,
        )
    return p


def train_kfold(
    data: ds.EpisodeSet,
    config: net.NetworkConfig,
    plan: TrainPlan,
    seed: int,
    ssl: bool = False,
    log_sink=None,
) -> tuple[net.ParameterSet, ds.NormalizationSpec, list[FoldReport]]:
    """Train one network per contiguous fold and keep the best by validation
    MAE (ties toward the lowest fold index).

    Every fold starts from the identical seed-derived initialization; batch
    shuffling streams differ per fold. Normalization is fitted on each fold's
    training indices only; the winning fold's spec is returned alongside its
    parameters.
    """
    folds = ds.split_folds(data, plan.folds)
    reports: list[FoldReport] = []
    best: tuple[net.ParameterSet, ds.NormalizationSpec] | None = None
    best_mae = float("inf")
    for fold_idx, (train_idx, val_idx) in enumerate(folds):
        t0 = time.perf_counter()
        train_set = data.subset(train_idx)
        spec = ds.fit_normalization(train_set)
        norm_train = ds.EpisodeSet(
            [ds.normalize_episode(e, spec) for e in train_set.episodes]
        )
        norm_val = [ds.normalize_episode(data.episodes[i], spec) for i in val_idx]

        if log_sink is not None:
            log_sink.write(f"# fold {fold_idx}\n")
        if ssl:
            p = pretrain_ssl(config, norm_train, plan, seed, log_sink=log_sink)
            p = finetune(p, config, norm_train, plan, seed, log_sink=log_sink)
            final_loss = float("nan")
        else:
            _, p = net.build_bpnet(config, seed)
            rng = np.random.default_rng([seed, 3, fold_idx])
            final_loss, _ = train_network(
                p, config, norm_train.episodes, plan, rng,
                val_episodes=norm_val, log_sink=log_sink,
            )
        val_mae = _validation_mae(p, config, norm_val)
        wall = time.perf_counter() - t0
        reports.append(
            FoldReport(
                fold=fold_idx,
                final_train_loss=final_loss,
                val_mae_norm=val_mae,
                val_mae_mmhg=val_mae * spec.abp_std,
                wall_time_s=wall,
            )
        )
        log.info(
            "fold %d: train loss %.4f, val MAE %.4f (%.2f mmHg), %.1fs",
            fold_idx, final_loss, val_mae, val_mae * spec.abp_std, wall,
        )
        if val_mae < best_mae:
            best = (p, spec)
            best_mae = val_mae
    assert best is not None
    return best[0], best[1], reports
