"""Masked-autoencoding pretraining of subject-specific dense models.

The pretraining model shares the decoder backbone (tokenizer, attention,
norms) but replaces the expert mixture with a single dense FFN and carries no
CLS bank.  Masked token-columns are chosen region by region; masked content
embeddings are replaced by one learnable mask token before the positional
and regional embeddings are added.  A reconstructor and prediction head map
each masked token's final hidden state to one-sided spectrum parameters
(amplitude plus a sin/cos phase pair); the loss is the mean squared error
between the original and decoded time-domain samples of the masked patches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .model import ModelConfig
from .masking import sample_region_mask
from .spectral import decode_spectrum_torch
from .synth import Recording
from .tokenizer import Tokenizer
from .transformer import Block, FeedForward


class Autoencoder(nn.Module):
    """Dense-FFN backbone with a spectral reconstruction pathway."""

    def __init__(self, config: ModelConfig, num_regions: int, head_hidden: int = 256):
        super().__init__()
        self.config = config
        self.num_regions = num_regions
        self.patch_window = config.tokenizer.patch_window()
        self.num_bins = self.patch_window // 2 + 1

        self.tokenizer = Tokenizer(
            config.tokenizer, num_regions=num_regions, max_patches=config.max_patches
        )
        self.blocks = nn.ModuleList(
            Block(
                dim=config.hidden,
                num_heads=config.heads,
                mlp_hidden=config.mlp_hidden,
                ffn_mode="dense",
            )
            for _ in range(config.blocks)
        )
        self.final_norm = nn.LayerNorm(config.hidden)
        self.mask_token = nn.Parameter(torch.empty(config.hidden))
        nn.init.normal_(self.mask_token, std=0.02)
        # Table-driven reconstruction pathway: 2-layer reconstructor back to
        # token width, then a 2-layer head onto (amplitude, sin, cos) bins.
        self.reconstructor = FeedForward(config.hidden, head_hidden, out_dim=config.hidden)
        self.prediction_head = FeedForward(
            config.hidden, head_hidden, out_dim=3 * self.num_bins
        )
        with torch.no_grad():
            # Start amplitudes near zero (softplus(-4) ~ 0.018) so the initial
            # reconstruction is close to silence rather than a large spike.
            self.prediction_head.fc2.bias[: self.num_bins] -= 4.0

    def encode(self, x: torch.Tensor, region_index: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Hidden states [B, P, C, d]; masked grid cells carry the mask token."""
        content = self.tokenizer.content(x)
        b, p, c, d = content.shape
        content = torch.where(mask.unsqueeze(-1), self.mask_token.expand(b, p, c, d), content)
        tokens = self.tokenizer.embed(content, region_index)
        seq = tokens.reshape(b, p * c, d)
        for block in self.blocks:
            seq, _, _ = block(
                seq,
                num_cls=0,
                num_patches=p,
                num_channels=c,
                region_index=region_index,
                num_regions=self.num_regions,
            )
        return self.final_norm(seq).reshape(b, p, c, d)

    def predict_spectrum(self, hidden: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Map hidden states to (amplitude, phase_sin, phase_cos), each [..., bins].

        Amplitude passes through softplus so every prediction is a valid
        nonnegative magnitude.
        """
        raw = self.prediction_head(self.reconstructor(hidden))
        amplitude, phase_sin, phase_cos = raw.split(self.num_bins, dim=-1)
        return nn.functional.softplus(amplitude), phase_sin, phase_cos

    def reconstruct(self, hidden: torch.Tensor) -> torch.Tensor:
        """Decode hidden states to time-domain patches [..., patch_window]."""
        amplitude, phase_sin, phase_cos = self.predict_spectrum(hidden)
        return decode_spectrum_torch(amplitude, phase_sin, phase_cos, self.patch_window)


def patch_targets(x: torch.Tensor, num_patches: int, window: int) -> torch.Tensor:
    """Time-domain targets [B, P, C, window]: patch p covers samples
    [p*window, (p+1)*window) of each channel."""
    b, t, c = x.shape
    if num_patches * window > t:
        raise ValueError("patch windows exceed the signal length")
    trimmed = x[:, : num_patches * window].reshape(b, num_patches, window, c)
    return trimmed.permute(0, 1, 3, 2)


def rmae_loss(
    model: Autoencoder,
    x: torch.Tensor,
    region_index: torch.Tensor,
    mask: torch.Tensor,
    spectral_aux_weight: float = 0.0,
) -> torch.Tensor:
    """Reconstruction loss over masked patches only.

    Args:
        model: the dense autoencoder.
        x: [B, T, C] preprocessed samples.
        region_index: [C] channel regions.
        mask: [B, P, C] booleans; must mask at least one token.
        spectral_aux_weight: optional extra penalty on (amplitude, phase pair)
            prediction error in spectral space; 0 disables it.
    """
    if not bool(mask.any()):
        raise ValueError("mask selects no tokens; masking nothing is an error")
    hidden = model.encode(x, region_index, mask)
    num_patches = hidden.shape[1]
    targets = patch_targets(x, num_patches, model.patch_window)

    idx = mask.nonzero(as_tuple=True)
    masked_hidden = hidden[idx]  # [K, d]
    recon = model.reconstruct(masked_hidden)  # [K, window]
    loss = ((recon - targets[idx]) ** 2).mean()

    if spectral_aux_weight > 0.0:
        amplitude, phase_sin, phase_cos = model.predict_spectrum(masked_hidden)
        spectrum = torch.fft.rfft(targets[idx], dim=-1)
        amp_t = spectrum.abs() / model.patch_window
        angle = torch.angle(spectrum)
        norm = torch.sqrt(phase_sin**2 + phase_cos**2).clamp_min(1e-12)
        aux = (
            ((amplitude - amp_t) ** 2).mean()
            + ((phase_sin / norm - torch.sin(angle)) ** 2).mean()
            + ((phase_cos / norm - torch.cos(angle)) ** 2).mean()
        )
        loss = loss + spectral_aux_weight * aux
    return loss


@dataclass
class PretrainConfig:
    """Optimization settings for one subject's pretraining run."""

    mask_ratio: float = 0.2
    mask_ratio_mode: str = "fixed"  # or "uniform"
    mask_ratio_range: tuple[float, float] = (0.1, 0.9)
    epochs: int = 50
    batch_size: int = 32
    head_hidden: int = 256
    lr: float = 5e-5
    betas: tuple[float, float] = (0.9, 0.95)
    weight_decay: float = 0.05
    spectral_aux_weight: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.mask_ratio_mode not in ("fixed", "uniform"):
            raise ValueError(f"unknown mask_ratio_mode {self.mask_ratio_mode!r}")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError("mask_ratio must lie in (0, 1)")


def rmae_step(
    model: Autoencoder,
    batch: torch.Tensor,
    region_index: torch.Tensor,
    cfg: PretrainConfig,
    optimizer: torch.optim.Optimizer,
    rng: np.random.Generator,
) -> float:
    """One optimization step; returns the scalar loss."""
    num_patches = model.config.tokenizer.output_length(batch.shape[1])
    regions = region_index.numpy() if isinstance(region_index, torch.Tensor) else region_index
    if cfg.mask_ratio_mode == "uniform":
        ratio = float(rng.uniform(*cfg.mask_ratio_range))
    else:
        ratio = cfg.mask_ratio
    masks = np.stack(
        [
            sample_region_mask(regions, num_patches, ratio, rng).masked
            for _ in range(batch.shape[0])
        ]
    )
    mask = torch.from_numpy(masks)
    optimizer.zero_grad()
    loss = rmae_loss(
        model,
        batch,
        torch.as_tensor(regions),
        mask,
        spectral_aux_weight=cfg.spectral_aux_weight,
    )
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def pretrain_subject(
    recordings: list[Recording],
    model_cfg: ModelConfig,
    cfg: PretrainConfig,
    dtype: torch.dtype = torch.float32,
) -> tuple[Autoencoder, list[float]]:
    """Pretrain one subject's dense model on all of their recordings.

    Returns the trained model and the per-epoch mean loss curve.
    """
    if not recordings:
        raise ValueError("no recordings supplied")
    subject_ids = {r.subject_id for r in recordings}
    if len(subject_ids) != 1:
        raise ValueError(f"expected one subject, got {sorted(subject_ids)}")
    region_map = recordings[0].region_map

    torch.manual_seed(cfg.seed)
    model = Autoencoder(
        model_cfg, num_regions=region_map.num_regions, head_hidden=cfg.head_hidden
    ).to(dtype)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay
    )
    schedule = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=cfg.epochs)

    data = torch.from_numpy(np.stack([r.samples for r in recordings])).to(dtype)
    region_index = torch.from_numpy(region_map.channel_to_region)
    rng = np.random.default_rng(cfg.seed)

    curve = []
    n = data.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            batch = data[order[start : start + cfg.batch_size]]
            losses.append(rmae_step(model, batch, region_index, cfg, optimizer, rng))
        schedule.step()
        curve.append(float(np.mean(losses)))
    return model, curve
