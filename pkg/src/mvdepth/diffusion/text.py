"""Hashed-vocabulary prompt encoder.

Whitespace tokens are hashed (crc32) into a fixed vocabulary; id 0 is
padding. Embeddings are a seeded lookup table; the pooled vector is the mean
over non-padding tokens.
"""

from __future__ import annotations

import re
import zlib
from dataclasses import dataclass

import torch
from torch import nn

VOCAB_SIZE = 1024
MAX_PROMPT_LEN = 16


@dataclass(frozen=True)
class TextPrompt:
    token_ids: tuple[int, ...]
    seed: int = 0

    def __post_init__(self):
        if len(self.token_ids) > MAX_PROMPT_LEN:
            raise ValueError(f"prompt longer than {MAX_PROMPT_LEN} tokens")
        if any(not 0 <= i < VOCAB_SIZE for i in self.token_ids):
            raise ValueError("token id outside the vocabulary")

    def padded(self) -> list[int]:
        return list(self.token_ids) + [0] * (MAX_PROMPT_LEN - len(self.token_ids))


def tokenize(text: str, seed: int = 0) -> TextPrompt:
    words = re.findall(r"[a-z0-9]+", text.lower())[:MAX_PROMPT_LEN]
    ids = tuple(1 + zlib.crc32(w.encode()) % (VOCAB_SIZE - 1) for w in words)
    return TextPrompt(ids, seed)


def prompt_batch(prompts: list[TextPrompt]) -> torch.Tensor:
    return torch.tensor([p.padded() for p in prompts], dtype=torch.long)


class TextEncoder(nn.Module):
    def __init__(self, dim: int, seed: int = 0):
        super().__init__()
        self.embed = nn.Embedding(VOCAB_SIZE, dim, padding_idx=0)
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            self.embed.weight.copy_(torch.randn(VOCAB_SIZE, dim, generator=gen))
            self.embed.weight[0].zero_()

    def forward(self, ids: torch.Tensor):
        """Returns (tokens (B, L, D), key mask (B, L), pooled (B, D))."""
        tokens = self.embed(ids)
        mask = ids > 0
        mask[:, 0] = True  # an all-padding prompt still has one (zero) key
        count = mask.sum(-1, keepdim=True).clamp(min=1).to(tokens.dtype)
        pooled = (tokens * mask.unsqueeze(-1).to(tokens.dtype)).sum(1) / count
        return tokens, mask, pooled
