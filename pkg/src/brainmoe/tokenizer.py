"""Channel-wise temporal conv tokenizer with temporal and regional embeddings.

Every channel is convolved independently through a cascade of strided 1-D
convolutions (valid padding, GELU between stages), yielding P temporal
patches of width d per channel.  A learnable temporal embedding (indexed by
patch position, shared across channels) and a learnable regional embedding
(indexed by the channel's brain region) are added to each token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .synth import Recording


@dataclass(frozen=True)
class TokenizerConfig:
    """Conv cascade shape: parallel tuples of filters/kernels/strides."""

    filters: tuple[int, ...] = (8, 16, 16, 32, 64)
    kernels: tuple[int, ...] = (15, 7, 5, 3, 3)
    strides: tuple[int, ...] = (7, 4, 3, 2, 2)

    def __post_init__(self):
        if not (len(self.filters) == len(self.kernels) == len(self.strides)):
            raise ValueError("filters, kernels, strides must have equal lengths")
        if len(self.filters) == 0:
            raise ValueError("need at least one conv stage")
        if any(k < 1 for k in self.kernels) or any(s < 1 for s in self.strides):
            raise ValueError("kernels and strides must be positive")

    @property
    def embed_dim(self) -> int:
        return self.filters[-1]

    def output_length(self, num_samples: int) -> int:
        """Patch count P for an input of ``num_samples``; raises if too short."""
        length = num_samples
        for k, s in zip(self.kernels, self.strides):
            length = (length - k) // s + 1
            if length < 1:
                raise ValueError(
                    f"input of {num_samples} samples is below the cascade minimum "
                    f"{self.min_input_length()}"
                )
        return length

    def min_input_length(self) -> int:
        """Smallest input length that yields at least one patch."""
        length = 1
        for k, s in zip(reversed(self.kernels), reversed(self.strides)):
            length = (length - 1) * s + k
        return length

    def patch_window(self) -> int:
        """Composed hop in samples: one patch advances by this many samples."""
        return int(np.prod(self.strides))


@dataclass
class TokenGrid:
    """[P x C] grid of d-dim tokens plus region indices and a mask plane."""

    tokens: torch.Tensor  # [P, C, d]
    region_index: np.ndarray  # [C]
    mask: np.ndarray  # [P, C] bool, True = masked

    def __post_init__(self):
        if self.tokens.ndim != 3:
            raise ValueError("tokens must be [P, C, d]")
        p, c, _ = self.tokens.shape
        self.region_index = np.asarray(self.region_index, dtype=np.int64)
        if self.region_index.shape != (c,):
            raise ValueError("region_index must have one entry per channel")
        if self.mask is None:
            self.mask = np.zeros((p, c), dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != (p, c):
            raise ValueError("mask must be [P, C]")
        if not torch.isfinite(self.tokens).all():
            raise ValueError("tokens contain NaN or Inf")

    @property
    def num_patches(self) -> int:
        return int(self.tokens.shape[0])

    @property
    def num_channels(self) -> int:
        return int(self.tokens.shape[1])


class Tokenizer(nn.Module):
    """Conv cascade plus temporal/regional embedding tables.

    Args:
        config: conv cascade shape; final filter count is the embed width d.
        num_regions: size of the regional embedding vocabulary.
        max_patches: capacity of the temporal embedding table.
    """

    def __init__(self, config: TokenizerConfig, num_regions: int, max_patches: int = 16):
        super().__init__()
        self.config = config
        self.num_regions = num_regions
        self.max_patches = max_patches
        convs = []
        in_ch = 1
        for out_ch, kernel, stride in zip(config.filters, config.kernels, config.strides):
            convs.append(nn.Conv1d(in_ch, out_ch, kernel_size=kernel, stride=stride))
            in_ch = out_ch
        self.convs = nn.ModuleList(convs)
        self.act = nn.GELU()
        self.temporal_emb = nn.Parameter(torch.empty(max_patches, config.embed_dim))
        self.region_emb = nn.Parameter(torch.empty(num_regions, config.embed_dim))
        self.reset_parameters()

    def reset_parameters(self):
        for conv in self.convs:
            fan_in = conv.in_channels * conv.kernel_size[0]
            bound = 1.0 / math.sqrt(fan_in)
            nn.init.uniform_(conv.weight, -bound, bound)
            nn.init.uniform_(conv.bias, -bound, bound)
        nn.init.normal_(self.temporal_emb, std=0.02)
        nn.init.normal_(self.region_emb, std=0.02)

    def content(self, x: torch.Tensor) -> torch.Tensor:
        """Conv the raw signal into content embeddings.

        Args:
            x: [B, T, C] samples.

        Returns:
            [B, P, C, d] content tokens (no positional information yet).
        """
        if x.ndim != 3:
            raise ValueError("expected [B, T, C] input")
        b, t, c = x.shape
        self.config.output_length(t)  # fail fast with the minimum reported
        h = x.permute(0, 2, 1).reshape(b * c, 1, t)
        for i, conv in enumerate(self.convs):
            if i > 0:
                h = self.act(h)
            h = conv(h)
        p = h.shape[-1]
        return h.reshape(b, c, self.config.embed_dim, p).permute(0, 3, 1, 2)

    def embed(self, content: torch.Tensor, region_index: torch.Tensor) -> torch.Tensor:
        """Add temporal and regional embeddings to content tokens.

        Args:
            content: [B, P, C, d] tokens.
            region_index: [C] region of each channel.

        Returns:
            [B, P, C, d] final tokens: content + temporal + regional.
        """
        p = content.shape[1]
        if p > self.max_patches:
            raise ValueError(
                f"{p} patches exceed the temporal embedding capacity {self.max_patches}"
            )
        if int(region_index.max()) >= self.num_regions:
            raise ValueError("region index out of range for the embedding table")
        temporal = self.temporal_emb[:p].unsqueeze(1)  # [P, 1, d]
        regional = self.region_emb[region_index]  # [C, d]
        return content + temporal + regional

    def forward(self, x: torch.Tensor, region_index: torch.Tensor) -> torch.Tensor:
        return self.embed(self.content(x), region_index)


def tokenize(rec: Recording, tokenizer: Tokenizer) -> TokenGrid:
    """Tokenize one preprocessed recording into a TokenGrid."""
    region_index = rec.region_map.channel_to_region
    dtype = tokenizer.temporal_emb.dtype
    x = torch.from_numpy(np.ascontiguousarray(rec.samples)).to(dtype).unsqueeze(0)
    with torch.no_grad():
        tokens = tokenizer(x, torch.from_numpy(region_index))[0]
    return TokenGrid(tokens=tokens, region_index=region_index, mask=None)
