"""Finite-difference verification of analytic gradients.

The check perturbs every scalar parameter by ±h, re-evaluates the loss, and
compares the central difference against the autograd gradient.  Run in
float64: central differences are O(h^2) accurate, so relative errors above
~1e-6 indicate a wrong gradient rather than round-off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .model import ModelConfig, build_decoder
from .tokenizer import TokenizerConfig


def relative_gradient_error(
    loss_fn,
    model: nn.Module,
    step: float = 1e-5,
    zero_tolerance: float = 1e-8,
) -> tuple[float, str]:
    """Max relative error between autograd and central differences.

    Args:
        loss_fn: nullary callable evaluating the scalar loss from the model's
            current parameters.
        model: module whose parameters are checked (must be float64).
        step: finite-difference half-step.
        zero_tolerance: absolute disagreement below which a parameter whose
            analytic and numeric gradients are both ~0 counts as exact.

    Returns:
        (max relative error, name of the worst parameter).
    """
    model.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in model.named_parameters()
    }

    worst, worst_name = 0.0, ""
    with torch.no_grad():
        for name, param in model.named_parameters():
            flat = param.reshape(-1)
            grad_flat = analytic[name].reshape(-1)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + step
                up = float(loss_fn())
                flat[i] = original - step
                down = float(loss_fn())
                flat[i] = original
                numeric = (up - down) / (2.0 * step)
                a = float(grad_flat[i])
                scale = max(abs(a), abs(numeric))
                if scale < zero_tolerance:
                    continue
                err = abs(a - numeric) / scale
                if err > worst:
                    worst, worst_name = err, f"{name}[{i}]"
    return worst, worst_name


@dataclass
class TinyGradSetup:
    """A small float64 model plus a synthetic batch for the full-loss check."""

    model: nn.Module
    loss_fn: object
    num_parameters: int


def tiny_gradcheck_setup(
    hidden: int = 8,
    blocks: int = 2,
    n_experts: int = 3,
    top_k: int = 2,
    channels: int = 4,
    patches: int = 3,
    num_tasks: int = 2,
    cls_width: int = 2,
    aux_weight: float = 0.01,
    seed: int = 0,
) -> TinyGradSetup:
    """Build the tiny configuration used by the gradient acceptance check.

    The loss is the full training objective: task-mean cross-entropy plus the
    weighted expert-balance term, through router gates, experts, attention,
    the CLS pathway, and the conv tokenizer.
    """
    tok = TokenizerConfig(filters=(4, hidden), kernels=(5, 3), strides=(3, 2))
    # Input length chosen so the two-stage cascade emits exactly `patches`.
    t = ((patches - 1) * 2 + 3 - 1) * 3 + 5
    assert tok.output_length(t) == patches
    config = ModelConfig(
        hidden=hidden,
        blocks=blocks,
        heads=2,
        mlp_hidden=2 * hidden,
        n_experts=n_experts,
        top_k=top_k,
        cls_width=cls_width,
        max_patches=patches,
        tokenizer=tok,
    )
    task_classes = {i: 3 + i for i in range(num_tasks)}
    model = build_decoder(
        config,
        num_regions=3,
        task_classes=task_classes,
        seed=seed,
        dtype=torch.float64,
    )
    rng = np.random.default_rng(seed)
    x = torch.from_numpy(rng.standard_normal((2, t, channels)))
    region_index = torch.from_numpy(rng.integers(0, 3, size=channels))
    labels = {
        tid: torch.from_numpy(rng.integers(0, n_cls, size=2))
        for tid, n_cls in task_classes.items()
    }
    ce = nn.CrossEntropyLoss()

    def loss_fn():
        out = model(x, region_index)
        ce_terms = [ce(out.logits[tid], labels[tid]) for tid in sorted(task_classes)]
        return torch.stack(ce_terms).mean() + aux_weight * out.aux_loss

    n_params = sum(p.numel() for p in model.parameters())
    return TinyGradSetup(model=model, loss_fn=loss_fn, num_parameters=n_params)
