"""Merging subject-specific pretrained models into one initialization.

Three stages: magnitude trimming (lowest-magnitude fraction zeroed, ranked
globally across the parameter set by default), consensus-sign election per
scalar (sign of the sum across models), and averaging only the values whose
sign agrees with the consensus.  Scalars whose trimmed values sum to exactly
zero have no consensus and merge to zero.

Only the backbone components shared between the dense pretraining model and
the expert-mixture decoder are merged: tokenizer convolutions, temporal
embeddings, attention, norms (and regional embeddings when all models share
a region vocabulary).  Experts, router, CLS bank, the shared CLS FFN, and
task heads stay freshly initialized.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .model import Decoder, ModelConfig, build_decoder

ParamSet = dict[str, np.ndarray]

# Backbone tensors common to the dense pretraining model and the decoder.
_ALWAYS_SHARED = ("tokenizer.convs.", "tokenizer.temporal_emb", "final_norm.")
_BLOCK_SHARED = (".norm1.", ".norm2.", ".attn.")
_REGION_EMB = "tokenizer.region_emb"


def is_shared_name(name: str, merge_region_emb: bool = True) -> bool:
    """Whether a parameter name belongs to the merge-eligible backbone."""
    if name.startswith(_ALWAYS_SHARED):
        return True
    if name.startswith("blocks.") and any(tag in name for tag in _BLOCK_SHARED):
        return True
    return merge_region_emb and name == _REGION_EMB


def shared_param_names(model: nn.Module, merge_region_emb: bool = True) -> list[str]:
    """Names of the merge-eligible backbone tensors of ``model``."""
    return sorted(
        name
        for name, _ in model.named_parameters()
        if is_shared_name(name, merge_region_emb)
    )


def extract_params(model: nn.Module, names: list[str]) -> ParamSet:
    """Copy the named tensors of ``model`` into a ParamSet."""
    state = dict(model.named_parameters())
    missing = [n for n in names if n not in state]
    if missing:
        raise KeyError(f"model lacks parameters: {missing}")
    return {n: state[n].detach().cpu().numpy().copy() for n in names}


def _check_aligned(param_sets: list[ParamSet]) -> None:
    if not param_sets:
        raise ValueError("need at least one parameter set")
    names = sorted(param_sets[0])
    for i, ps in enumerate(param_sets):
        if sorted(ps) != names:
            raise ValueError(f"parameter set {i} has a different name set")
        for name in names:
            if ps[name].shape != param_sets[0][name].shape:
                raise ValueError(
                    f"shape mismatch at {name!r}: {ps[name].shape} vs "
                    f"{param_sets[0][name].shape}"
                )


def trim(params: ParamSet, fraction: float, scope: str = "global") -> ParamSet:
    """Zero the lowest-magnitude ``fraction`` of parameters.

    Ranking is over the whole set by default (``scope='global'``) or within
    each tensor (``scope='per_tensor'``).  Ties at the threshold break by
    parameter name, then flat index, so trimming is deterministic.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"trim fraction must lie in [0, 1), got {fraction}")
    if scope not in ("global", "per_tensor"):
        raise ValueError(f"unknown trim scope {scope!r}")
    if fraction == 0.0:
        return {name: value.copy() for name, value in params.items()}

    def trim_group(entries: list[tuple[int, str, np.ndarray]]) -> dict[str, np.ndarray]:
        # entries: (name_rank, name, flat values); returns trimmed flats.
        magnitudes = np.concatenate([np.abs(v) for _, _, v in entries])
        name_ranks = np.concatenate(
            [np.full(v.size, rank, dtype=np.int64) for rank, _, v in entries]
        )
        flat_index = np.concatenate(
            [np.arange(v.size, dtype=np.int64) for _, _, v in entries]
        )
        order = np.lexsort((flat_index, name_ranks, magnitudes))
        n_zero = int(np.floor(fraction * magnitudes.size))
        kill = order[:n_zero]
        keep_mask = np.ones(magnitudes.size, dtype=bool)
        keep_mask[kill] = False
        out = {}
        offset = 0
        for _, name, v in entries:
            mask = keep_mask[offset : offset + v.size]
            out[name] = np.where(mask, v, 0.0).astype(v.dtype, copy=False)
            offset += v.size
        return out

    names = sorted(params)
    result: ParamSet = {}
    if scope == "global":
        entries = [(rank, name, params[name].reshape(-1)) for rank, name in enumerate(names)]
        flat = trim_group(entries)
    else:
        flat = {}
        for rank, name in enumerate(names):
            flat.update(trim_group([(rank, name, params[name].reshape(-1))]))
    for name in names:
        result[name] = flat[name].reshape(params[name].shape)
    return result


def merge(trimmed: list[ParamSet]) -> ParamSet:
    """Consensus-sign merge of aligned parameter sets.

    Per scalar: the consensus sign is the sign of the sum across sets; the
    output is the mean of the values sharing that sign.  A zero sum (no
    consensus) merges to zero.  Sums accumulate in ascending value order, so
    the result is exactly permutation-invariant over the subject list; and
    when every agreeing value is bit-identical their mean is returned as that
    value (no divide round-off), so merging m copies of a model is the
    identity.
    """
    _check_aligned(trimmed)
    out: ParamSet = {}
    for name in sorted(trimmed[0]):
        stack = np.stack([ps[name] for ps in trimmed])  # [m, ...]
        total = _ordered_sum(stack)
        consensus = np.sign(total)
        agree = np.sign(stack) == consensus
        count = agree.sum(axis=0)
        summed = _ordered_sum(np.where(agree, stack, 0.0))
        safe_count = np.where(count == 0, 1, count)
        merged = summed / safe_count
        # Exact constant fold: mean(v, ..., v) is v, not fl(fl(m*v)/m).
        first_idx = np.argmax(agree, axis=0)
        first_val = np.take_along_axis(stack, first_idx[np.newaxis], axis=0)[0]
        all_equal = np.where(agree, stack == first_val, True).all(axis=0)
        merged = np.where(all_equal & (count > 0), first_val, merged)
        out[name] = np.where(consensus == 0, 0.0, merged).astype(stack.dtype, copy=False)
    return out


def _ordered_sum(stack: np.ndarray) -> np.ndarray:
    """Sequential sum along axis 0 in ascending value order (adding 0.0 is
    exact, so masked-out entries cannot perturb the result)."""
    ordered = np.sort(stack, axis=0)
    total = ordered[0].copy()
    for i in range(1, ordered.shape[0]):
        total += ordered[i]
    return total


def upcycle_init(
    merged: ParamSet,
    config: ModelConfig,
    num_regions: int,
    task_classes: dict[int, int],
    seed: int = 0,
    dtype: torch.dtype = torch.float32,
    moe: bool = True,
    task_cls: bool = True,
) -> Decoder:
    """Build a decoder whose shared backbone is the merged parameter set.

    Experts, router, CLS bank, shared CLS FFN, and heads keep their fresh
    seeded initialization.  Raises if the merged set misses any shared name.
    """
    model = build_decoder(
        config,
        num_regions=num_regions,
        task_classes=task_classes,
        moe=moe,
        task_cls=task_cls,
        seed=seed,
        dtype=dtype,
    )
    merge_region = _REGION_EMB in merged
    expected = shared_param_names(model, merge_region_emb=merge_region)
    missing = [n for n in expected if n not in merged]
    if missing:
        raise KeyError(f"merged parameter set lacks shared tensors: {missing}")
    state = dict(model.named_parameters())
    with torch.no_grad():
        for name in expected:
            tensor = torch.from_numpy(np.ascontiguousarray(merged[name])).to(dtype)
            if tensor.shape != state[name].shape:
                raise ValueError(
                    f"shape mismatch at {name!r}: merged {tuple(tensor.shape)} vs "
                    f"model {tuple(state[name].shape)}"
                )
            state[name].copy_(tensor)
    return model
