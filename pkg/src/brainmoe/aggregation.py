"""Task-disentangled aggregation: wide per-task CLS tokens and task heads.

Each task owns one learnable CLS vector of width J*d.  Before attention the
vector splits into J sub-tokens of width d, which are prepended to the local
token sequence (task 0 first); after each block's attention the sub-tokens
are reassembled to width J*d and processed by a single FFN shared by all CLS
tokens (and reused at every layer).  Lightweight per-task affine heads map
the final reassembled CLS vectors to class logits.
"""

from __future__ import annotations

import torch
from torch import nn

from .transformer import FeedForward


class ClsBank(nn.Module):
    """Bank of task-specific wide CLS tokens plus their shared FFN.

    Args:
        num_slots: number of CLS vectors (one per task; 1 in the degenerate
            single-CLS configuration used by aggregation-free variants).
        width_multiplier: J, the width of each CLS vector in units of d.
        dim: local token width d.
        ffn_hidden: hidden width of the shared CLS FFN (operates on J*d).
    """

    def __init__(self, num_slots: int, width_multiplier: int, dim: int, ffn_hidden: int):
        super().__init__()
        if num_slots < 1 or width_multiplier < 1:
            raise ValueError("num_slots and width_multiplier must be >= 1")
        self.num_slots = num_slots
        self.width_multiplier = width_multiplier
        self.dim = dim
        self.cls_tokens = nn.Parameter(torch.empty(num_slots, width_multiplier * dim))
        self.shared_ffn = FeedForward(width_multiplier * dim, ffn_hidden)
        nn.init.normal_(self.cls_tokens, std=0.02)

    @property
    def num_sub_tokens(self) -> int:
        return self.num_slots * self.width_multiplier

    def sub_tokens(self, batch: int) -> torch.Tensor:
        """Split the bank into [B, num_slots*J, d] sub-token rows."""
        split = self.cls_tokens.reshape(self.num_slots * self.width_multiplier, self.dim)
        return split.unsqueeze(0).expand(batch, -1, -1)


def attach_cls(local: torch.Tensor, bank: ClsBank) -> torch.Tensor:
    """Prepend CLS sub-tokens (slot 0 first) to a [B, L, d] local sequence."""
    if local.ndim != 3 or local.shape[-1] != bank.dim:
        raise ValueError("local sequence must be [B, L, d] with matching d")
    return torch.cat([bank.sub_tokens(local.shape[0]), local], dim=1)


def detach_cls(
    sequence: torch.Tensor, num_slots: int, width_multiplier: int
) -> tuple[torch.Tensor, torch.Tensor]:
    """Split a combined sequence back into (wide CLS [B, n, J*d], local [B, L, d])."""
    num_cls = num_slots * width_multiplier
    if sequence.shape[1] < num_cls:
        raise ValueError("sequence shorter than its CLS prefix")
    b = sequence.shape[0]
    cls = sequence[:, :num_cls].reshape(b, num_slots, width_multiplier * sequence.shape[-1])
    return cls, sequence[:, num_cls:]


class TaskHeads(nn.Module):
    """Per-task affine decoders from CLS width to class logits."""

    def __init__(self, task_classes: dict[int, int], in_width: int):
        super().__init__()
        self.task_ids = tuple(sorted(task_classes))
        self.heads = nn.ModuleDict(
            {str(tid): nn.Linear(in_width, task_classes[tid]) for tid in self.task_ids}
        )

    def decode(self, cls_final: torch.Tensor, task_id: int, slot: int | None = None) -> torch.Tensor:
        """Logits for one task from the final-layer CLS bank.

        Args:
            cls_final: [B, num_slots, width] reassembled final CLS vectors.
            task_id: which task head to apply.
            slot: CLS slot to read; defaults to the task's own slot when the
                bank is task-disentangled, slot 0 otherwise.
        """
        if str(task_id) not in self.heads:
            raise KeyError(f"unknown task id {task_id}")
        if slot is None:
            slot = self.task_ids.index(task_id) if cls_final.shape[1] > 1 else 0
        return self.heads[str(task_id)](cls_final[:, slot])

    def forward(self, cls_final: torch.Tensor) -> dict[int, torch.Tensor]:
        return {tid: self.decode(cls_final, tid) for tid in self.task_ids}
