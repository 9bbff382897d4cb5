"""Backbone and tokenizer bindings.

``mini`` is a built-in 2-layer randomly initialized encoder with a hashing
word tokenizer, used for tests and smoke runs without downloads. The
published pretrained ids (``bert``, ``scibert``, ``biobert``) resolve to
checkpoint names through a registry file, never hard-coded; they require the
``transformers`` package and fetched weights.

Set EQ5D_SCREEN_BACKBONES to point at an alternative registry JSON and
EQ5D_SCREEN_CHECKPOINT_DIR to control where pretrained weights are cached.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import torch
from torch import nn

from .errors import ConfigurationError

MINI_BACKBONE_ID = "mini"
MINI_VOCAB_SIZE = 4096
MINI_HIDDEN_SIZE = 64
MINI_LAYERS = 2
MINI_MAX_POSITIONS = 512

PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
SEP_ID = 3
_N_RESERVED = 4

_TOKEN_PATTERN = re.compile(r"\w+|[^\w\s]")


def backbone_registry() -> dict[str, str]:
    """Backbone id -> published checkpoint name."""
    override = os.environ.get("EQ5D_SCREEN_BACKBONES")
    if override:
        return json.loads(Path(override).read_text(encoding="utf-8"))
    text = resources.files("eq5d_screen.data").joinpath("backbones.json").read_text("utf-8")
    return json.loads(text)


def known_backbones() -> list[str]:
    return sorted([MINI_BACKBONE_ID, *backbone_registry()])


class HashTokenizer:
    """Deterministic word-level tokenizer: ids come from a stable hash of the
    lowercased token, so no fitted vocabulary is needed."""

    pad_token_id = PAD_ID
    n_special = 2  # CLS prefix + SEP suffix

    def __init__(self, vocab_size: int = MINI_VOCAB_SIZE):
        self.vocab_size = vocab_size

    def _token_id(self, token: str) -> int:
        digest = hashlib.sha1(token.lower().encode("utf-8")).digest()
        bucket = int.from_bytes(digest[:8], "big") % (self.vocab_size - _N_RESERVED)
        return _N_RESERVED + bucket

    def encode_fixed(self, text: str, max_len: int) -> tuple[list[int], list[int]]:
        """Return (token_ids, attention_mask), both exactly ``max_len`` long.
        Overlong inputs keep their leading tokens."""
        body = [self._token_id(t) for t in _TOKEN_PATTERN.findall(text)]
        body = body[: max_len - self.n_special]
        ids = [CLS_ID, *body, SEP_ID]
        mask = [1] * len(ids)
        pad = max_len - len(ids)
        return ids + [PAD_ID] * pad, mask + [0] * pad


class HFTokenizer:
    """Wrapper over a published pretrained tokenizer."""

    def __init__(self, checkpoint: str):
        try:
            from transformers import AutoTokenizer
        except ImportError as exc:
            raise ConfigurationError(
                f"tokenizer for {checkpoint!r} needs the 'transformers' package"
            ) from exc
        cache = os.environ.get("EQ5D_SCREEN_CHECKPOINT_DIR")
        try:
            self._tok = AutoTokenizer.from_pretrained(checkpoint, cache_dir=cache)
        except OSError as exc:
            raise ConfigurationError(
                f"tokenizer checkpoint {checkpoint!r} unavailable; fetch it or "
                "point EQ5D_SCREEN_CHECKPOINT_DIR at a populated cache"
            ) from exc
        self.pad_token_id = self._tok.pad_token_id

    def encode_fixed(self, text: str, max_len: int) -> tuple[list[int], list[int]]:
        out = self._tok(
            text,
            max_length=max_len,
            truncation=True,  # keeps leading tokens
            padding="max_length",
        )
        return list(out["input_ids"]), list(out["attention_mask"])


class MiniEncoder(nn.Module):
    """Two-layer transformer encoder over hashed token ids; the sentence
    representation is the first-token output."""

    def __init__(self, vocab_size: int = MINI_VOCAB_SIZE,
                 hidden_size: int = MINI_HIDDEN_SIZE, num_layers: int = MINI_LAYERS):
        super().__init__()
        self.hidden_size = hidden_size
        self.token_embedding = nn.Embedding(vocab_size, hidden_size, padding_idx=PAD_ID)
        self.position_embedding = nn.Embedding(MINI_MAX_POSITIONS, hidden_size)
        layer = nn.TransformerEncoderLayer(
            d_model=hidden_size, nhead=4, dim_feedforward=2 * hidden_size,
            dropout=0.1, batch_first=True,
        )
        # the nested-tensor fast path is nondeterministic and still prototype
        self.encoder = nn.TransformerEncoder(layer, num_layers=num_layers,
                                             enable_nested_tensor=False)

    def forward(self, input_ids: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        positions = torch.arange(input_ids.size(1), device=input_ids.device)
        x = self.token_embedding(input_ids) + self.position_embedding(positions)
        padding_mask = attention_mask == 0
        x = self.encoder(x, src_key_padding_mask=padding_mask)
        return x[:, 0]


class HFEncoder(nn.Module):
    """Pretrained transformers encoder; first-token output as representation."""

    def __init__(self, checkpoint: str):
        super().__init__()
        try:
            from transformers import AutoModel
        except ImportError as exc:
            raise ConfigurationError(
                f"backbone {checkpoint!r} needs the 'transformers' package"
            ) from exc
        cache = os.environ.get("EQ5D_SCREEN_CHECKPOINT_DIR")
        try:
            self.model = AutoModel.from_pretrained(checkpoint, cache_dir=cache)
        except OSError as exc:
            raise ConfigurationError(
                f"backbone weights {checkpoint!r} unavailable; fetch them or "
                "point EQ5D_SCREEN_CHECKPOINT_DIR at a populated cache"
            ) from exc
        self.hidden_size = self.model.config.hidden_size

    def forward(self, input_ids: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        out = self.model(input_ids=input_ids, attention_mask=attention_mask)
        return out.last_hidden_state[:, 0]


@dataclass
class BackboneBinding:
    backbone_id: str
    checkpoint: str | None  # None for the built-in mini encoder


def resolve_backbone(backbone_id: str) -> BackboneBinding:
    if backbone_id == MINI_BACKBONE_ID:
        return BackboneBinding(backbone_id, None)
    registry = backbone_registry()
    if backbone_id not in registry:
        raise ConfigurationError(
            f"unknown backbone {backbone_id!r}; known: {known_backbones()}"
        )
    return BackboneBinding(backbone_id, registry[backbone_id])


def build_tokenizer(backbone_id: str):
    binding = resolve_backbone(backbone_id)
    if binding.checkpoint is None:
        return HashTokenizer()
    return HFTokenizer(binding.checkpoint)


def build_encoder(backbone_id: str) -> nn.Module:
    binding = resolve_backbone(backbone_id)
    if binding.checkpoint is None:
        return MiniEncoder()
    return HFEncoder(binding.checkpoint)
