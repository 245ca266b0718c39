"""Full multi-subject, multi-task decoder assembly.

Pipeline: conv tokenizer -> CLS attach -> transformer stack (expert-mixture
or dense FFN stage) -> final norm -> CLS detach/reassemble -> per-task heads.
The dense/no-CLS configurations of the same backbone serve the pretraining
model and the ablation variants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .aggregation import ClsBank, TaskHeads, attach_cls, detach_cls
from .tokenizer import Tokenizer, TokenizerConfig
from .transformer import Block, RouterDecision


@dataclass
class ModelConfig:
    """Architecture settings shared by all model variants."""

    hidden: int = 64
    blocks: int = 4
    heads: int = 8
    mlp_hidden: int = 128
    n_experts: int = 21
    top_k: int = 2
    cls_width: int = 4  # J
    cls_ffn_hidden: int | None = None  # defaults to cls_width * mlp_hidden
    max_patches: int = 16
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)

    def __post_init__(self):
        if isinstance(self.tokenizer, dict):
            self.tokenizer = TokenizerConfig(**self.tokenizer)
        if self.tokenizer.embed_dim != self.hidden:
            raise ValueError(
                f"tokenizer output width {self.tokenizer.embed_dim} must equal "
                f"hidden size {self.hidden}"
            )
        if self.cls_ffn_hidden is None:
            self.cls_ffn_hidden = self.cls_width * self.mlp_hidden


@dataclass
class ModelOutput:
    """Forward results: per-task logits plus routing telemetry."""

    logits: dict[int, torch.Tensor]
    aux_loss: torch.Tensor
    decisions: list[RouterDecision | None]
    cls_final: torch.Tensor
    local_final: torch.Tensor


class Decoder(nn.Module):
    """Multi-task classifier over region-labeled recordings.

    Args:
        config: architecture settings.
        num_regions: regional embedding vocabulary size.
        task_classes: task_id -> number of classes.
        moe: mixture-of-experts FFN stage when True, single dense FFN when
            False (the component-ablation baseline).
        task_cls: task-disentangled wide CLS bank when True, one narrow
            shared CLS token when False.
    """

    def __init__(
        self,
        config: ModelConfig,
        num_regions: int,
        task_classes: dict[int, int],
        moe: bool = True,
        task_cls: bool = True,
    ):
        super().__init__()
        self.config = config
        self.num_regions = num_regions
        self.task_classes = dict(task_classes)
        self.moe = moe
        self.task_cls = task_cls

        self.tokenizer = Tokenizer(
            config.tokenizer, num_regions=num_regions, max_patches=config.max_patches
        )
        self.blocks = nn.ModuleList(
            Block(
                dim=config.hidden,
                num_heads=config.heads,
                mlp_hidden=config.mlp_hidden,
                ffn_mode="moe" if moe else "dense",
                n_experts=config.n_experts,
                top_k=config.top_k,
            )
            for _ in range(config.blocks)
        )
        self.final_norm = nn.LayerNorm(config.hidden)

        if task_cls:
            num_slots, width = len(task_classes), config.cls_width
            ffn_hidden = config.cls_ffn_hidden
        else:
            num_slots, width = 1, 1
            ffn_hidden = config.mlp_hidden
        self.cls_bank = ClsBank(
            num_slots=num_slots,
            width_multiplier=width,
            dim=config.hidden,
            ffn_hidden=ffn_hidden,
        )
        self.heads = TaskHeads(self.task_classes, in_width=width * config.hidden)

    def _diagnostic_mask(self, num_cls: int, num_local: int, device) -> torch.Tensor:
        """Block-diagonal attention mask isolating CLS from local tokens."""
        s = num_cls + num_local
        mask = torch.zeros(s, s, dtype=torch.bool, device=device)
        mask[:num_cls, :num_cls] = True
        mask[num_cls:, num_cls:] = True
        return mask

    def forward(
        self,
        x: torch.Tensor,
        region_index: torch.Tensor,
        isolate_cls: bool = False,
    ) -> ModelOutput:
        """Classify a batch of same-shape recordings.

        Args:
            x: [B, T, C] preprocessed samples.
            region_index: [C] region of each channel.
            isolate_cls: diagnostic mode; block-diagonal attention that stops
                all CLS <-> local information flow.
        """
        tokens = self.tokenizer(x, region_index)  # [B, P, C, d]
        b, p, c, d = tokens.shape
        seq = attach_cls(tokens.reshape(b, p * c, d), self.cls_bank)
        return self._run_stack(seq, p, c, region_index, isolate_cls)

    def _run_stack(
        self,
        seq: torch.Tensor,
        num_patches: int,
        num_channels: int,
        region_index: torch.Tensor,
        isolate_cls: bool = False,
    ) -> ModelOutput:
        num_cls = self.cls_bank.num_sub_tokens
        attn_mask = None
        if isolate_cls:
            attn_mask = self._diagnostic_mask(
                num_cls, num_patches * num_channels, seq.device
            )
        decisions: list[RouterDecision | None] = []
        aux_terms = []
        for block in self.blocks:
            seq, decision, aux = block(
                seq,
                num_cls=num_cls,
                num_patches=num_patches,
                num_channels=num_channels,
                region_index=region_index,
                num_regions=self.num_regions,
                cls_ffn=self.cls_bank.shared_ffn,
                cls_width=self.cls_bank.width_multiplier,
                attn_mask=attn_mask,
            )
            decisions.append(decision)
            aux_terms.append(aux)
        seq = self.final_norm(seq)
        cls_final, local_final = detach_cls(
            seq, self.cls_bank.num_slots, self.cls_bank.width_multiplier
        )
        logits = self.heads(cls_final)
        aux_loss = torch.stack(aux_terms).mean()
        return ModelOutput(
            logits=logits,
            aux_loss=aux_loss,
            decisions=decisions,
            cls_final=cls_final,
            local_final=local_final,
        )


def build_decoder(
    config: ModelConfig,
    num_regions: int,
    task_classes: dict[int, int],
    moe: bool = True,
    task_cls: bool = True,
    seed: int | None = None,
    dtype: torch.dtype = torch.float32,
) -> Decoder:
    """Construct a decoder with seeded initialization and a fixed dtype."""
    if seed is not None:
        torch.manual_seed(seed)
    model = Decoder(
        config, num_regions=num_regions, task_classes=task_classes, moe=moe, task_cls=task_cls
    )
    return model.to(dtype)


def count_parameters(model: nn.Module, prefix: str = "") -> int:
    """Total scalar parameters, optionally restricted to a name prefix."""
    return sum(
        int(np.prod(p.shape))
        for name, p in model.named_parameters()
        if name.startswith(prefix)
    )
