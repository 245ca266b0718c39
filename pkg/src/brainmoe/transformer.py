"""Transformer blocks whose FFN stage is a mixture of regional experts.

Per block: pre-norm multi-head self-attention with residual, then a second
norm and an FFN stage with residual.  For local (channel) tokens the FFN
stage is the expert mixture: a channel-wise router sums each channel's
normalized hidden states over time, projects the sum through a routing
matrix, and softmaxes over experts; the top-k experts (renormalized to sum
to one) process every token of that channel.  Aggregation (CLS) tokens
bypass the router and use a dedicated FFN supplied by the caller.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn


class SelfAttention(nn.Module):
    """Full bidirectional multi-head self-attention."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        if dim % num_heads != 0:
            raise ValueError(f"dim {dim} not divisible by {num_heads} heads")
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, attn_mask: torch.Tensor | None = None) -> torch.Tensor:
        b, s, d = x.shape
        qkv = self.qkv(x).reshape(b, s, 3, self.num_heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)  # each [B, H, S, hd]
        scores = (q @ k.transpose(-2, -1)) / (self.head_dim**0.5)
        if attn_mask is not None:
            scores = scores.masked_fill(~attn_mask, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, s, d)
        return self.proj(out)


class FeedForward(nn.Module):
    """Two-layer GELU MLP: dim -> hidden -> dim."""

    def __init__(self, dim: int, hidden: int, out_dim: int | None = None):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, out_dim if out_dim is not None else dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(x)))


def topk_gates(probs: torch.Tensor, top_k: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Sparsify routing probabilities to their top-k entries, renormalized.

    Ties at the selection boundary break toward the lowest expert index
    (stable sort), keeping routing deterministic.

    Args:
        probs: [..., N_x] softmax rows.
        top_k: experts kept per row; must not exceed N_x.

    Returns:
        (gates, selected): gates is [..., N_x] with exactly min(top_k, N_x)
        nonzeros per row summing to one; selected is [..., top_k] expert ids
        in descending-probability order (index 0 is the top-1 expert).
    """
    n_experts = probs.shape[-1]
    if top_k > n_experts:
        raise ValueError(f"top_k={top_k} exceeds the expert count {n_experts}")
    order = torch.argsort(-probs, dim=-1, stable=True)
    selected = order[..., :top_k]
    chosen = torch.gather(probs, -1, selected)
    chosen = chosen / chosen.sum(dim=-1, keepdim=True)
    gates = torch.zeros_like(probs)
    gates.scatter_(-1, selected, chosen)
    return gates, selected


def load_balance_loss(probs: torch.Tensor, top1: torch.Tensor) -> torch.Tensor:
    """Switch-style balance estimator: N_x * sum_x f_x * p_x.

    f_x is the fraction of channels whose top-1 expert is x (non-differentiable
    count); p_x is the mean routing probability of expert x over channels.
    Equals 1.0 under perfectly uniform assignment and gates.
    """
    n_experts = probs.shape[-1]
    flat = probs.reshape(-1, n_experts)
    if flat.shape[0] == 0:
        return probs.new_zeros(())
    counts = torch.bincount(top1.reshape(-1), minlength=n_experts).to(flat.dtype)
    f = counts / flat.shape[0]
    p = flat.mean(dim=0)
    return n_experts * (f * p).sum()


@dataclass
class RouterDecision:
    """Routing outcome of one block forward.

    Attributes:
        gates: [B, C, N_x] sparse renormalized gates (numpy copy).
        probs: [B, C, N_x] dense routing probabilities.
        dispatch_counts: [R, N_x] channel-dispatch counts summed over the
            batch: +1 for every (channel, selected expert) pair, bucketed by
            the channel's region.
    """

    gates: np.ndarray
    probs: np.ndarray
    dispatch_counts: np.ndarray


def _dispatch_counts(
    selected: torch.Tensor, region_index: torch.Tensor, num_regions: int, n_experts: int
) -> np.ndarray:
    counts = np.zeros((num_regions, n_experts), dtype=np.int64)
    sel = selected.detach().cpu().numpy()  # [B, C, k]
    regions = region_index.detach().cpu().numpy()
    for c in range(sel.shape[1]):
        experts, n = np.unique(sel[:, c, :], return_counts=True)
        counts[regions[c], experts] += n
    return counts


class ChannelRouter(nn.Module):
    """Channel-wise top-k router over experts.

    The routing decision for channel c is computed once from the sum of that
    channel's P normalized hidden vectors, then applied to all P tokens.
    """

    def __init__(self, dim: int, n_experts: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(dim, n_experts))
        nn.init.normal_(self.weight, std=0.02)

    @property
    def n_experts(self) -> int:
        return self.weight.shape[1]

    def forward(self, h_norm: torch.Tensor, top_k: int) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Route from normalized local hiddens.

        Args:
            h_norm: [B, P, C, d] normalized hidden states of local tokens.
            top_k: experts per channel.

        Returns:
            (probs [B, C, N_x], gates [B, C, N_x], selected [B, C, top_k]).
        """
        channel_sum = h_norm.sum(dim=1)  # [B, C, d]
        logits = channel_sum @ self.weight
        if not torch.isfinite(logits).all():
            raise FloatingPointError("router logits contain NaN/Inf (divergence)")
        probs = torch.softmax(logits, dim=-1)
        gates, selected = topk_gates(probs, top_k)
        return probs, gates, selected


class Block(nn.Module):
    """One transformer block with either a dense FFN or an expert mixture.

    ``ffn_mode='dense'`` uses a single FFN for local tokens (the pretraining
    variant); ``ffn_mode='moe'`` uses ``n_experts`` expert FFNs behind a
    channel-wise router.  CLS tokens, when present, are processed by the
    caller-supplied FFN operating on the reassembled wide vectors.
    """

    def __init__(
        self,
        dim: int,
        num_heads: int,
        mlp_hidden: int,
        ffn_mode: str = "moe",
        n_experts: int = 1,
        top_k: int = 1,
    ):
        super().__init__()
        if ffn_mode not in ("moe", "dense"):
            raise ValueError(f"unknown ffn_mode {ffn_mode!r}")
        if ffn_mode == "moe" and not (1 <= top_k <= n_experts):
            raise ValueError(f"need 1 <= top_k <= n_experts, got {top_k}/{n_experts}")
        self.dim = dim
        self.ffn_mode = ffn_mode
        self.top_k = top_k
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, num_heads)
        if ffn_mode == "moe":
            self.experts = nn.ModuleList(
                FeedForward(dim, mlp_hidden) for _ in range(n_experts)
            )
            self.router = ChannelRouter(dim, n_experts)
        else:
            self.dense_ffn = FeedForward(dim, mlp_hidden)

    def _apply_experts(self, local: torch.Tensor, gates: torch.Tensor) -> torch.Tensor:
        """Dispatch [B, P, C, d] tokens to the experts selected per channel."""
        b, p, c, d = local.shape
        flat = local.reshape(b, p * c, d)
        out = torch.zeros_like(flat)
        for x, expert in enumerate(self.experts):
            g = gates[:, :, x]  # [B, C]
            active = g > 0
            if not active.any():
                continue
            token_gate = g.unsqueeze(1).expand(b, p, c).reshape(b, p * c)
            token_active = active.unsqueeze(1).expand(b, p, c).reshape(b, p * c)
            idx = token_active.nonzero(as_tuple=True)
            expert_out = expert(flat[idx])
            out = out.index_put(idx, expert_out * token_gate[idx].unsqueeze(-1), accumulate=True)
        return out.reshape(b, p, c, d)

    def forward(
        self,
        x: torch.Tensor,
        num_cls: int,
        num_patches: int,
        num_channels: int,
        region_index: torch.Tensor,
        num_regions: int,
        cls_ffn: nn.Module | None = None,
        cls_width: int = 1,
        attn_mask: torch.Tensor | None = None,
    ) -> tuple[torch.Tensor, RouterDecision | None, torch.Tensor]:
        """Block forward over a [B, num_cls + P*C, d] sequence.

        CLS sub-tokens occupy the first ``num_cls`` positions; local tokens
        follow in patch-major [P, C] order.  Returns the output sequence, the
        routing decision (None in dense mode), and the balance loss (zero in
        dense mode).
        """
        b, s, d = x.shape
        if s != num_cls + num_patches * num_channels:
            raise ValueError(
                f"sequence length {s} inconsistent with {num_cls} CLS + "
                f"{num_patches}x{num_channels} local tokens"
            )
        if num_cls > 0 and cls_ffn is None:
            raise ValueError("sequence has CLS tokens but no CLS FFN was supplied")
        if num_cls % max(cls_width, 1) != 0:
            raise ValueError("CLS token count is not a multiple of the split width")

        h = x + self.attn(self.norm1(x), attn_mask=attn_mask)
        h_norm = self.norm2(h)

        local = h_norm[:, num_cls:].reshape(b, num_patches, num_channels, d)
        decision = None
        aux = x.new_zeros(())
        if self.ffn_mode == "moe":
            probs, gates, selected = self.router(local, self.top_k)
            ffn_local = self._apply_experts(local, gates)
            aux = load_balance_loss(probs, selected[..., 0])
            decision = RouterDecision(
                gates=gates.detach().cpu().numpy(),
                probs=probs.detach().cpu().numpy(),
                dispatch_counts=_dispatch_counts(
                    selected, region_index, num_regions, self.router.n_experts
                ),
            )
        else:
            ffn_local = self.dense_ffn(local)
        ffn_local = ffn_local.reshape(b, num_patches * num_channels, d)

        if num_cls > 0:
            wide = h_norm[:, :num_cls].reshape(b, num_cls // cls_width, cls_width * d)
            ffn_cls = cls_ffn(wide).reshape(b, num_cls, d)
            ffn_out = torch.cat([ffn_cls, ffn_local], dim=1)
        else:
            ffn_out = ffn_local
        return h + ffn_out, decision, aux


@dataclass
class RouterReport:
    """Aggregated expert-assignment statistics across forwards.

    Attributes:
        dispatch_counts: [L, R, N_x] channel-dispatch counts per layer.
        region_names: region vocabulary for row labels.
    """

    dispatch_counts: np.ndarray
    region_names: tuple[str, ...]

    @classmethod
    def empty(cls, num_layers: int, region_names: tuple[str, ...], n_experts: int) -> "RouterReport":
        return cls(
            dispatch_counts=np.zeros((num_layers, len(region_names), n_experts), dtype=np.int64),
            region_names=tuple(region_names),
        )

    def add(self, decisions: list[RouterDecision | None]) -> None:
        for layer, decision in enumerate(decisions):
            if decision is not None:
                self.dispatch_counts[layer] += decision.dispatch_counts

    def utilization(self) -> np.ndarray:
        """Fraction of all dispatches handled by each expert, [N_x]."""
        total = self.dispatch_counts.sum()
        if total == 0:
            return np.zeros(self.dispatch_counts.shape[-1])
        return self.dispatch_counts.sum(axis=(0, 1)) / total

    def utilization_variance(self) -> float:
        """Variance over experts of the dispatch fractions."""
        return float(np.var(self.utilization()))

    def write(self, out_dir: str) -> None:
        """Write one tab-separated count table per layer (rows = regions)."""
        import os

        os.makedirs(out_dir, exist_ok=True)
        n_experts = self.dispatch_counts.shape[-1]
        header = "region\t" + "\t".join(f"expert_{x}" for x in range(n_experts))
        for layer in range(self.dispatch_counts.shape[0]):
            lines = [header]
            for r, name in enumerate(self.region_names):
                row = "\t".join(str(v) for v in self.dispatch_counts[layer, r])
                lines.append(f"{name}\t{row}")
            path = os.path.join(out_dir, f"router_layer_{layer:02d}.tsv")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write("\n".join(lines) + "\n")
