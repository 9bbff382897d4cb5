"""Multiple instance learning: each abstract is a bag of enriched sentences,
pooled into one study-level prediction by tanh-scored softmax attention.

Scores are e_i = w^T tanh(V h_i); weights a = softmax(e); the bag embedding
z = sum_i a_i h_i feeds the same linear head as the sentence classifier. The
encoder is fine-tuned end to end, with gradient flowing through every
instance of a bag. Early stopping watches bag-level validation F1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from torch import nn
from torch.nn import functional as F
from torch.optim.lr_scheduler import LambdaLR

from .backbones import build_encoder
from .classifier import (
    EarlyStopper,
    TrainConfig,
    TrainedModel,
    TrainHistory,
    _check_val_classes,
    _device,
    linear_warmup_decay,
    make_optimizer,
)
from .encoding import EncodedSequence, collate, derive_epoch_seed
from .errors import TrainingDivergedError
from .evaluation import compute_metrics

logger = logging.getLogger(__name__)

DEFAULT_ATTENTION_DIM = 128
DEFAULT_INSTANCES_PER_STEP = 16  # mirrors the sentence batch scale
MAX_BAG_SIZE = 64


@dataclass(frozen=True)
class Bag:
    """All enriched sentences of one study, carrying the study label."""

    study_id: str
    instances: tuple[EncodedSequence, ...]
    label: int


@dataclass(frozen=True)
class AttentionPoolParams:
    """Pooling parameters: V is (d_att, d_h), w has length d_att."""

    V: torch.Tensor
    w: torch.Tensor


@dataclass(frozen=True)
class BagPrediction:
    study_id: str
    p_positive: float
    p_negative: float
    predicted_label: int
    attention_weights: tuple[float, ...]


def make_bags(sequences, max_bag_size: int = MAX_BAG_SIZE) -> list[Bag]:
    """Group encoded sentences into per-study bags, ordered by study_id.

    Bags larger than ``max_bag_size`` are truncated to their leading
    sentences, with a warning.
    """
    grouped: dict[str, list[EncodedSequence]] = {}
    for seq in sequences:
        grouped.setdefault(seq.origin[0], []).append(seq)
    bags = []
    for study_id in sorted(grouped):
        instances = sorted(grouped[study_id], key=lambda s: s.origin[1])
        if len(instances) > max_bag_size:
            logger.warning("bag %s truncated from %d to %d instances",
                           study_id, len(instances), max_bag_size)
            instances = instances[:max_bag_size]
        labels = {s.label for s in instances}
        if len(labels) != 1:
            raise ValueError(f"bag {study_id!r} mixes labels {sorted(labels)}")
        bags.append(Bag(study_id=study_id, instances=tuple(instances),
                        label=instances[0].label))
    return bags


def attention_pool(H: torch.Tensor,
                   params: AttentionPoolParams) -> tuple[torch.Tensor, torch.Tensor]:
    """Pool instance embeddings H (n, d_h) into (z, a).

    z is the attention-weighted sum of rows of H; a are the softmax weights
    (non-negative, summing to 1; softmax is computed max-subtracted).
    """
    if H.dim() != 2 or H.size(0) < 1:
        raise ValueError(f"H must be (n, d_h) with n >= 1, got {tuple(H.shape)}")
    if params.V.size(1) != H.size(1) or params.w.size(0) != params.V.size(0):
        raise ValueError(
            f"shape mismatch: H {tuple(H.shape)}, V {tuple(params.V.shape)}, "
            f"w {tuple(params.w.shape)}"
        )
    scores = torch.tanh(H @ params.V.T) @ params.w
    weights = torch.softmax(scores, dim=0)
    z = weights @ H
    return z, weights


class MilNet(nn.Module):
    """Encoder, attention pooling, and a two-output linear head."""

    def __init__(self, encoder: nn.Module, attention_dim: int = DEFAULT_ATTENTION_DIM):
        super().__init__()
        self.encoder = encoder
        self.attention_dim = attention_dim
        self.attn_V = nn.Linear(encoder.hidden_size, attention_dim, bias=False)
        self.attn_w = nn.Linear(attention_dim, 1, bias=False)
        self.head = nn.Linear(encoder.hidden_size, 2)

    def pool_params(self) -> AttentionPoolParams:
        return AttentionPoolParams(V=self.attn_V.weight, w=self.attn_w.weight.squeeze(0))

    def embed(self, input_ids: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        return self.encoder(input_ids, attention_mask)

    def forward(self, input_ids: torch.Tensor, attention_mask: torch.Tensor,
                instance_mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Batched bags: input_ids (B, n, L), instance_mask (B, n) marking
        real instances. Returns logits (B, 2) and attention weights (B, n)."""
        B, n, L = input_ids.shape
        h = self.encoder(input_ids.reshape(B * n, L),
                         attention_mask.reshape(B * n, L)).reshape(B, n, -1)
        scores = self.attn_w(torch.tanh(self.attn_V(h))).squeeze(-1)
        scores = scores.masked_fill(instance_mask == 0, float("-inf"))
        weights = torch.softmax(scores, dim=1)
        z = torch.einsum("bn,bnd->bd", weights, h)
        return self.head(z), weights


def build_mil_net(backbone_id: str, attention_dim: int = DEFAULT_ATTENTION_DIM) -> MilNet:
    return MilNet(build_encoder(backbone_id), attention_dim)


def embed_instances(model: TrainedModel, bag: Bag) -> torch.Tensor:
    """Instance representations H (n, d_h) for one bag, deterministic at inference."""
    network = model.network
    network.eval()
    device = next(network.parameters()).device
    tensors = collate(list(bag.instances), device=str(device))
    with torch.no_grad():
        return network.embed(tensors["input_ids"], tensors["attention_mask"])


def mil_predict(model: TrainedModel, bag: Bag) -> BagPrediction:
    """Study-level confidences for one bag, with its attention weights."""
    network = model.network
    H = embed_instances(model, bag)
    with torch.no_grad():
        z, weights = attention_pool(H, network.pool_params())
        probs = F.softmax(network.head(z), dim=-1)
    p_neg, p_pos = float(probs[0]), float(probs[1])
    return BagPrediction(
        study_id=bag.study_id,
        p_positive=p_pos,
        p_negative=p_neg,
        predicted_label=1 if p_pos >= p_neg else 0,
        attention_weights=tuple(float(a) for a in weights),
    )


def _collate_bags(bags: list[Bag], device: str) -> dict[str, torch.Tensor]:
    """Pad bags to a common instance count; padded slots repeat the bag's
    first instance and are excluded from pooling by the instance mask."""
    n_max = max(len(b.instances) for b in bags)
    ids, masks, inst_mask, labels = [], [], [], []
    for bag in bags:
        rows = list(bag.instances) + [bag.instances[0]] * (n_max - len(bag.instances))
        ids.append([r.token_ids for r in rows])
        masks.append([r.attention_mask for r in rows])
        inst_mask.append([1] * len(bag.instances) + [0] * (n_max - len(bag.instances)))
        labels.append(bag.label)
    return {
        "input_ids": torch.tensor(ids, dtype=torch.long, device=device),
        "attention_mask": torch.tensor(masks, dtype=torch.long, device=device),
        "instance_mask": torch.tensor(inst_mask, dtype=torch.long, device=device),
        "labels": torch.tensor(labels, dtype=torch.long, device=device),
    }


def _bags_per_step(bags, instances_per_step: int) -> int:
    mean_size = sum(len(b.instances) for b in bags) / len(bags)
    return max(1, round(instances_per_step / mean_size))


def _bag_val_f1(network: MilNet, val_bags, config: TrainConfig) -> float:
    model = TrainedModel(network=network, config=config, best_epoch=0,
                         best_val_f1=0.0, kind="mil")
    pairs = [(mil_predict(model, bag).predicted_label, bag.label) for bag in val_bags]
    return compute_metrics(pairs, "bag").f1


def mil_train(bags, val_bags, config: TrainConfig,
              attention_dim: int = DEFAULT_ATTENTION_DIM,
              instances_per_step: int = DEFAULT_INSTANCES_PER_STEP,
              on_epoch_end=None) -> tuple[TrainedModel, TrainHistory]:
    """Train the bag classifier end to end; same optimizer/schedule/patience
    regime as the sentence path, early stopping on bag-level validation F1."""
    if not bags or not val_bags:
        raise ValueError("train and validation bags must both be non-empty")
    _check_val_classes(val_bags)

    device = _device()
    torch.manual_seed(config.seed)
    network = build_mil_net(config.backbone_id, attention_dim).to(device)

    optimizer = make_optimizer(network, config)
    batch_bags = _bags_per_step(bags, instances_per_step)
    steps_per_epoch = math.ceil(len(bags) / batch_bags)
    total_steps = steps_per_epoch * config.max_epochs
    warmup_steps = math.floor(config.warmup_fraction * total_steps)
    scheduler = LambdaLR(optimizer, linear_warmup_decay(total_steps, warmup_steps))

    history = TrainHistory(warmup_steps=warmup_steps, total_steps=total_steps)
    stopper = EarlyStopper(config.patience)
    best_state = None
    best_f1 = 0.0

    for epoch in range(1, config.max_epochs + 1):
        network.train()
        epoch_losses = []
        last_lr = optimizer.param_groups[0]["lr"]
        order = np.random.default_rng(derive_epoch_seed(config.seed, epoch))
        shuffled = [bags[i] for i in order.permutation(len(bags))]
        for start in range(0, len(shuffled), batch_bags):
            tensors = _collate_bags(shuffled[start:start + batch_bags], device)
            logits, _ = network(tensors["input_ids"], tensors["attention_mask"],
                                tensors["instance_mask"])
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

        val_f1 = _bag_val_f1(network, val_bags, config)
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
    logger.info("MIL training done: best epoch %d, bag F1 %.4f, stopped by %s",
                stopper.best_epoch, best_f1, history.stop_reason)
    model = TrainedModel(network=network, config=config,
                         best_epoch=stopper.best_epoch, best_val_f1=best_f1,
                         kind="mil", extra={"attention_dim": attention_dim})
    return model, history


class MilClassifier(BaseEstimator, ClassifierMixin):
    """sklearn-style face of :func:`mil_train`: ``fit(bags, val_bags)`` then
    ``predict`` / ``predict_proba`` on bags."""

    def __init__(self, backbone_id: str = "mini", learning_rate: float = 2e-5,
                 max_epochs: int = 20, warmup_fraction: float = 0.10,
                 patience: int = 5, adam_epsilon: float = 1e-8,
                 max_len: int = 256, batch_size: int = 16, seed: int = 0,
                 weight_decay: float = 0.01, grad_clip: float = 1.0,
                 attention_dim: int = DEFAULT_ATTENTION_DIM,
                 instances_per_step: int = DEFAULT_INSTANCES_PER_STEP):
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
        self.attention_dim = attention_dim
        self.instances_per_step = instances_per_step

    def _config(self) -> TrainConfig:
        params = self.get_params()
        params.pop("attention_dim")
        params.pop("instances_per_step")
        return TrainConfig(**params)

    def fit(self, bags, val_bags):
        self.model_, self.history_ = mil_train(
            bags, val_bags, self._config(),
            attention_dim=self.attention_dim,
            instances_per_step=self.instances_per_step,
        )
        self.best_epoch_ = self.model_.best_epoch
        self.best_val_f1_ = self.model_.best_val_f1
        return self

    def predict_bags(self, bags) -> list[BagPrediction]:
        return [mil_predict(self.model_, bag) for bag in bags]

    def predict_proba(self, bags) -> np.ndarray:
        preds = self.predict_bags(bags)
        return np.array([[p.p_negative, p.p_positive] for p in preds])

    def predict(self, bags) -> np.ndarray:
        return np.array([p.predicted_label for p in self.predict_bags(bags)])
