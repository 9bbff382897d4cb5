"""Fine-tuning of a transformer backbone with a binary head on enriched sentences.

The regime: decoupled-weight-decay Adam (epsilon 1e-8), linear warm-up over
the first 10% of total steps then linear decay to zero, up to 20 epochs,
early stopping with patience 5 on validation F1, and restoration of the
best-epoch checkpoint before returning. One training run owns its model;
run distinct configurations in separate processes.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from torch import nn
from torch.nn import functional as F
from torch.optim.lr_scheduler import LambdaLR

from .aggregation import PredictionRecord
from .backbones import build_encoder
from .encoding import BatchPlan, collate, derive_epoch_seed, iterate_batches
from .errors import TrainingDivergedError
from .evaluation import compute_metrics

logger = logging.getLogger(__name__)

LEARNING_RATE_GRID = (2e-5, 5e-6, 2e-6, 1e-6)

EVAL_BATCH_SIZE = 64


@dataclass(frozen=True)
class TrainConfig:
    """Fine-tuning hyperparameters. Defaults follow the reference regime;
    any override is recorded in the run manifest."""

    backbone_id: str = "mini"
    learning_rate: float = 2e-5
    max_epochs: int = 20
    warmup_fraction: float = 0.10
    patience: int = 5
    adam_epsilon: float = 1e-8
    max_len: int = 256
    batch_size: int = 16
    seed: int = 0
    weight_decay: float = 0.01
    grad_clip: float = 1.0


@dataclass
class TrainHistory:
    """Per-epoch trace of a training run."""

    train_loss: list[float] = field(default_factory=list)
    val_f1: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    stop_reason: str = ""
    best_epoch: int = 0
    warmup_steps: int = 0
    total_steps: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


@dataclass
class TrainedModel:
    """A trained network with its configuration and best-checkpoint metadata."""

    network: nn.Module
    config: TrainConfig
    best_epoch: int
    best_val_f1: float
    kind: str = "sentence"  # or "mil"
    extra: dict = field(default_factory=dict)

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        torch.save(self.network.state_dict(), directory / "weights.pt")
        meta = {
            "config": asdict(self.config),
            "best_epoch": self.best_epoch,
            "best_val_f1": self.best_val_f1,
            "kind": self.kind,
            "extra": self.extra,
        }
        (directory / "config.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, directory: str | Path) -> "TrainedModel":
        directory = Path(directory)
        meta = json.loads((directory / "config.json").read_text(encoding="utf-8"))
        config = TrainConfig(**meta["config"])
        if meta["kind"] == "sentence":
            network = build_sentence_net(config.backbone_id)
        else:
            from .mil import build_mil_net  # circular at import time otherwise

            network = build_mil_net(config.backbone_id,
                                    meta["extra"].get("attention_dim", 128))
        state = torch.load(directory / "weights.pt", map_location="cpu",
                           weights_only=True)
        network.load_state_dict(state)
        return cls(network=network, config=config, best_epoch=meta["best_epoch"],
                   best_val_f1=meta["best_val_f1"], kind=meta["kind"],
                   extra=meta.get("extra", {}))


class SentenceNet(nn.Module):
    """Backbone encoder plus a single linear layer over the first-token
    representation, two outputs."""

    def __init__(self, encoder: nn.Module):
        super().__init__()
        self.encoder = encoder
        self.head = nn.Linear(encoder.hidden_size, 2)

    def forward(self, input_ids, attention_mask):
        return self.head(self.encoder(input_ids, attention_mask))


def build_sentence_net(backbone_id: str) -> SentenceNet:
    return SentenceNet(build_encoder(backbone_id))


def linear_warmup_decay(total_steps: int, warmup_steps: int):
    """Multiplier s/w while s <= w, then (T-s)/(T-w) decaying to zero at T."""
    if warmup_steps >= total_steps:
        raise ValueError(f"warmup ({warmup_steps}) must be below total ({total_steps})")

    def multiplier(step: int) -> float:
        if step <= warmup_steps and warmup_steps > 0:
            return step / warmup_steps
        return max(0.0, (total_steps - step) / (total_steps - warmup_steps))

    return multiplier


def schedule_steps(n_train: int, config: TrainConfig) -> tuple[int, int]:
    """(total_steps, warmup_steps) for the full planned horizon."""
    steps_per_epoch = math.ceil(n_train / config.batch_size)
    total = steps_per_epoch * config.max_epochs
    return total, math.floor(config.warmup_fraction * total)


def make_optimizer(network: nn.Module, config: TrainConfig) -> torch.optim.AdamW:
    """AdamW with weight decay on everything except biases and norm layers."""
    decay, no_decay = [], []
    for name, param in network.named_parameters():
        if not param.requires_grad:
            continue
        if name.endswith("bias") or "norm" in name.lower():
            no_decay.append(param)
        else:
            decay.append(param)
    return torch.optim.AdamW(
        [
            {"params": decay, "weight_decay": config.weight_decay},
            {"params": no_decay, "weight_decay": 0.0},
        ],
        lr=config.learning_rate,
        eps=config.adam_epsilon,
    )


class EarlyStopper:
    """Strict-improvement tracker: stop after ``patience`` consecutive
    non-improving epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -float("inf")
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, value: float, epoch: int) -> bool:
        """Record an epoch's score; returns True when it improved."""
        if value > self.best:
            self.best = value
            self.best_epoch = epoch
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


def _device() -> str:
    return "cuda" if torch.cuda.is_available() else "cpu"


def _predict_probs(network: nn.Module, sequences, device: str) -> np.ndarray:
    """(n, 2) softmax confidences, deterministic at inference."""
    network.eval()
    plan = BatchPlan(batch_size=EVAL_BATCH_SIZE)
    probs = []
    with torch.no_grad():
        for batch in iterate_batches(sequences, plan, "eval"):
            tensors = collate(batch, device=device)
            logits = network(tensors["input_ids"], tensors["attention_mask"])
            probs.append(F.softmax(logits, dim=-1).cpu().numpy())
    return np.concatenate(probs, axis=0)


def _val_f1(network: nn.Module, val, device: str) -> float:
    probs = _predict_probs(network, val, device)
    pairs = [(1 if p[1] >= p[0] else 0, s.label) for p, s in zip(probs, val)]
    return compute_metrics(pairs, "sentence").f1


def _check_val_classes(val) -> None:
    labels = {s.label for s in val}
    if len(labels) < 2:
        warnings.warn("validation set contains a single class; F1 is degenerate",
                      stacklevel=3)


def fine_tune(train, val, config: TrainConfig,
              on_epoch_end=None) -> tuple[TrainedModel, TrainHistory]:
    """Train the sentence classifier, restoring the best-validation-F1 epoch.

    ``on_epoch_end(epoch, network, val_f1)`` is called after each epoch's
    validation pass, before any early-stopping decision.
    """
    if not train or not val:
        raise ValueError("train and val must both be non-empty")
    _check_val_classes(val)

    device = _device()
    torch.manual_seed(config.seed)
    network = build_sentence_net(config.backbone_id).to(device)

    optimizer = make_optimizer(network, config)
    total_steps, warmup_steps = schedule_steps(len(train), config)
    scheduler = LambdaLR(optimizer, linear_warmup_decay(total_steps, warmup_steps))

    history = TrainHistory(warmup_steps=warmup_steps, total_steps=total_steps)
    stopper = EarlyStopper(config.patience)
    plan = BatchPlan(batch_size=config.batch_size)
    best_state = None
    best_f1 = 0.0

    for epoch in range(1, config.max_epochs + 1):
        network.train()
        epoch_losses = []
        last_lr = optimizer.param_groups[0]["lr"]
        for batch in iterate_batches(train, plan, "train",
                                     derive_epoch_seed(config.seed, epoch)):
            tensors = collate(batch, device=device)
            logits = network(tensors["input_ids"], tensors["attention_mask"])
            loss = F.cross_entropy(logits, tensors["labels"])
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} "
                    f"(lr={config.learning_rate}, backbone={config.backbone_id})"
                )
            optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(network.parameters(), config.grad_clip)
            last_lr = optimizer.param_groups[0]["lr"]
            optimizer.step()
            scheduler.step()
            epoch_losses.append(loss.item())

        val_f1 = _val_f1(network, val, device)
        history.train_loss.append(float(np.mean(epoch_losses)))
        history.val_f1.append(val_f1)
        history.lr.append(last_lr)

        if stopper.update(val_f1, epoch):
            best_f1 = val_f1
            best_state = {k: v.detach().clone() for k, v in network.state_dict().items()}
        if on_epoch_end is not None:
            on_epoch_end(epoch, network, val_f1)
        if stopper.should_stop:
            history.stop_reason = "early_stop"
            break
    else:
        history.stop_reason = "max_epochs"

    history.best_epoch = stopper.best_epoch
    network.load_state_dict(best_state)
    logger.info("fine-tune done: best epoch %d, val F1 %.4f, stopped by %s",
                stopper.best_epoch, best_f1, history.stop_reason)
    model = TrainedModel(network=network, config=config,
                         best_epoch=stopper.best_epoch, best_val_f1=best_f1)
    return model, history


def select_learning_rate(train, val, grid) -> TrainConfig:
    """Pick the grid member with the highest validation F1, ties toward the
    smaller learning rate; diverging candidates are eliminated."""
    candidates = sorted(grid, key=lambda c: c.learning_rate)
    if not candidates:
        raise ValueError("learning-rate grid is empty")
    best_config = None
    best_f1 = -float("inf")
    last_error = None
    for config in candidates:
        try:
            _, history = fine_tune(train, val, config)
        except TrainingDivergedError as exc:
            logger.warning("lr %.2g diverged: %s", config.learning_rate, exc)
            last_error = exc
            continue
        f1 = max(history.val_f1)
        if f1 > best_f1:
            best_f1 = f1
            best_config = config
    if best_config is None:
        raise last_error
    logger.info("selected lr %.2g (val F1 %.4f)", best_config.learning_rate, best_f1)
    return best_config


def predict_sentences(model: TrainedModel, sequences) -> list[PredictionRecord]:
    """Normalized class confidences per sentence, label by argmax (tie -> positive)."""
    if not sequences:
        return []
    probs = _predict_probs(model.network, sequences, _device())
    records = []
    for p, seq in zip(probs, sequences):
        p_neg, p_pos = float(p[0]), float(p[1])
        records.append(PredictionRecord(
            study_id=seq.origin[0],
            sentence_index=seq.origin[1],
            p_positive=p_pos,
            p_negative=p_neg,
            predicted_label=1 if p_pos >= p_neg else 0,
        ))
    return records


class SentenceClassifier(BaseEstimator, ClassifierMixin):
    """sklearn-style face of :func:`fine_tune`: ``fit(train, val)`` then
    ``predict`` / ``predict_proba`` on encoded sequences."""

    def __init__(self, backbone_id: str = "mini", learning_rate: float = 2e-5,
                 max_epochs: int = 20, warmup_fraction: float = 0.10,
                 patience: int = 5, adam_epsilon: float = 1e-8,
                 max_len: int = 256, batch_size: int = 16, seed: int = 0,
                 weight_decay: float = 0.01, grad_clip: float = 1.0):
        self.backbone_id = backbone_id
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.warmup_fraction = warmup_fraction
        self.patience = patience
        self.adam_epsilon = adam_epsilon
        self.max_len = max_len
        self.batch_size = batch_size
        self.seed = seed
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip

    def _config(self) -> TrainConfig:
        return TrainConfig(**self.get_params())

    def fit(self, train, val):
        self.model_, self.history_ = fine_tune(train, val, self._config())
        self.best_epoch_ = self.model_.best_epoch
        self.best_val_f1_ = self.model_.best_val_f1
        return self

    def predict_proba(self, sequences) -> np.ndarray:
        return _predict_probs(self.model_.network, sequences, _device())

    def predict(self, sequences) -> np.ndarray:
        probs = self.predict_proba(sequences)
        return (probs[:, 1] >= probs[:, 0]).astype(int)

    def predict_records(self, sequences) -> list[PredictionRecord]:
        return predict_sentences(self.model_, sequences)
