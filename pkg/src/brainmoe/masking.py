"""Region-grouped masking plans for masked-autoencoding pretraining.

Masking proceeds region by region: regions are sampled uniformly without
replacement and all token-columns (every temporal patch of every channel in
the region) are masked until the cumulative masked fraction reaches the
target ratio.  Within the final region only as many channel-columns as
needed are masked, so the realized ratio overshoots the target by less than
one column.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tokenizer import TokenGrid


@dataclass(frozen=True)
class MaskPlan:
    """Mask plane over the [P, C] token grid.

    Attributes:
        masked: [P, C] booleans, True = masked.
        mask_ratio: requested fraction.
        regions: region indices sampled, in sampling order.
    """

    masked: np.ndarray
    mask_ratio: float
    regions: tuple[int, ...]

    @property
    def realized_ratio(self) -> float:
        return float(self.masked.mean())


def sample_region_mask(
    region_index: np.ndarray,
    num_patches: int,
    mask_ratio: float,
    rng: np.random.Generator,
) -> MaskPlan:
    """Draw a region-grouped mask over a [num_patches, C] grid.

    Args:
        region_index: [C] region of each channel.
        num_patches: temporal patches per channel.
        mask_ratio: target masked fraction, in (0, 1).
        rng: source of randomness (seeded for reproducible plans).
    """
    if not 0.0 < mask_ratio < 1.0:
        raise ValueError(f"mask_ratio must lie in (0, 1), got {mask_ratio}")
    region_index = np.asarray(region_index, dtype=np.int64)
    num_channels = region_index.size
    present = np.unique(region_index)
    if present.size == 0:
        raise ValueError("no regions present")

    target_columns = int(np.ceil(mask_ratio * num_channels))
    order = rng.permutation(present)
    masked_channels: list[int] = []
    used_regions: list[int] = []
    for region in order:
        deficit = target_columns - len(masked_channels)
        if deficit <= 0:
            break
        channels = np.nonzero(region_index == region)[0]
        used_regions.append(int(region))
        if channels.size <= deficit:
            masked_channels.extend(int(c) for c in channels)
        else:
            picked = rng.choice(channels, size=deficit, replace=False)
            masked_channels.extend(int(c) for c in np.sort(picked))

    masked = np.zeros((num_patches, num_channels), dtype=bool)
    masked[:, masked_channels] = True
    return MaskPlan(masked=masked, mask_ratio=mask_ratio, regions=tuple(used_regions))


def plan_mask(grid: TokenGrid, mask_ratio: float, rng: np.random.Generator) -> MaskPlan:
    """Mask plan for one token grid (see :func:`sample_region_mask`)."""
    return sample_region_mask(grid.region_index, grid.num_patches, mask_ratio, rng)
