"""Fixed-length encoding of enriched sentences and batched iteration.

Every sequence is padded or head-truncated to exactly ``max_len`` token ids
with a matching attention mask (1 on real tokens, 0 on the padding suffix).
Training batches are a fresh permutation each epoch, derived from the run
seed; evaluation batches keep input order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterator

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin

from .backbones import build_tokenizer

DEFAULT_MAX_LEN = 256
DEFAULT_BATCH_SIZE = 16


@dataclass(frozen=True)
class EncodedSequence:
    """One tokenized sentence, exactly ``max_len`` ids + mask, with its weak
    label and (study_id, sentence_index) origin."""

    token_ids: tuple[int, ...]
    attention_mask: tuple[int, ...]
    label: int
    origin: tuple[str, int]


@dataclass(frozen=True)
class BatchPlan:
    """Batching semantics: fixed size, randomized order for training and
    sequential order for evaluation."""

    batch_size: int = DEFAULT_BATCH_SIZE


def encode(sentences, tokenizer_id: str, max_len: int = DEFAULT_MAX_LEN,
           tokenizer=None) -> list[EncodedSequence]:
    """Encode enriched sentences with the backbone-compatible tokenizer.

    Pass ``tokenizer`` to reuse an already-built instance (pretrained
    tokenizers are expensive to construct).
    """
    tok = tokenizer if tokenizer is not None else build_tokenizer(tokenizer_id)
    encoded = []
    for sentence in sentences:
        ids, mask = tok.encode_fixed(sentence.enriched_text, max_len)
        encoded.append(EncodedSequence(
            token_ids=tuple(ids),
            attention_mask=tuple(mask),
            label=sentence.inherited_label,
            origin=(sentence.study_id, sentence.sentence_index),
        ))
    return encoded


def derive_epoch_seed(run_seed: int, epoch: int) -> int:
    """Stable per-epoch seed so runs are reproducible yet epochs differ."""
    digest = hashlib.sha256(f"{run_seed}:{epoch}".encode("ascii")).digest()
    return int.from_bytes(digest[:8], "big")


def iterate_batches(sequences, plan: BatchPlan, regime: str,
                    epoch_seed: int = 0) -> Iterator[list[EncodedSequence]]:
    """Yield batches covering every sequence exactly once.

    ``train`` yields a permutation determined by ``epoch_seed``; ``eval``
    yields input order. The final batch may be smaller than ``plan.batch_size``.
    """
    if not sequences:
        raise ValueError("no sequences to batch")
    if regime == "train":
        order = np.random.default_rng(epoch_seed).permutation(len(sequences))
        items = [sequences[i] for i in order]
    elif regime == "eval":
        items = list(sequences)
    else:
        raise ValueError(f"unknown regime {regime!r} (expected 'train' or 'eval')")
    for start in range(0, len(items), plan.batch_size):
        yield items[start:start + plan.batch_size]


def collate(batch, device: str = "cpu") -> dict[str, torch.Tensor]:
    """Stack a batch of EncodedSequence into model-ready tensors."""
    return {
        "input_ids": torch.tensor([s.token_ids for s in batch], dtype=torch.long,
                                  device=device),
        "attention_mask": torch.tensor([s.attention_mask for s in batch],
                                       dtype=torch.long, device=device),
        "labels": torch.tensor([s.label for s in batch], dtype=torch.long,
                               device=device),
    }


class SequenceEncoder(BaseEstimator, TransformerMixin):
    """Estimator-style wrapper around :func:`encode` for pipeline composition."""

    def __init__(self, tokenizer_id: str = "mini", max_len: int = DEFAULT_MAX_LEN):
        self.tokenizer_id = tokenizer_id
        self.max_len = max_len

    def fit(self, sentences=None, y=None):
        self.tokenizer_ = build_tokenizer(self.tokenizer_id)
        return self

    def transform(self, sentences) -> list[EncodedSequence]:
        if not hasattr(self, "tokenizer_"):
            self.fit()
        return encode(sentences, self.tokenizer_id, self.max_len,
                      tokenizer=self.tokenizer_)
