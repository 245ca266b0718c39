"""Region-grouped mask plans."""

import numpy as np
import pytest
import torch

from brainmoe.masking import plan_mask, sample_region_mask
from brainmoe.tokenizer import TokenGrid


class TestSampleRegionMask:
    def test_limit_case_single_region(self):
        rng = np.random.default_rng(0)
        plan = sample_region_mask(np.zeros(6, dtype=int), 4, 0.999, rng)
        assert plan.masked.all()

    def test_five_equal_regions_ratio_point2(self):
        # R=5 equal-size regions at r=0.2: exactly one full region masked,
        # realized ratio exactly 0.2.
        region_index = np.repeat(np.arange(5), 2)  # 10 channels
        rng = np.random.default_rng(1)
        plan = sample_region_mask(region_index, 3, 0.2, rng)
        assert plan.realized_ratio == pytest.approx(0.2)
        assert len(plan.regions) == 1
        masked_channels = np.nonzero(plan.masked[0])[0]
        assert set(region_index[masked_channels]) == {plan.regions[0]}

    def test_seeded_plan_reproducible(self):
        region_index = np.array([0, 0, 1, 2, 2, 3])
        a = sample_region_mask(region_index, 4, 0.5, np.random.default_rng(7))
        b = sample_region_mask(region_index, 4, 0.5, np.random.default_rng(7))
        np.testing.assert_array_equal(a.masked, b.masked)
        assert a.regions == b.regions

    def test_ratio_bounds_within_one_column(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            c = int(rng.integers(2, 12))
            regions = rng.integers(0, 4, size=c)
            r = float(rng.uniform(0.05, 0.95))
            plan = sample_region_mask(regions, 3, r, rng)
            assert plan.realized_ratio >= r - 1e-12
            assert plan.realized_ratio < r + 1.0 / c + 1e-12

    def test_masked_tokens_belong_to_sampled_regions(self):
        rng = np.random.default_rng(4)
        regions = np.array([0, 1, 1, 2, 3, 3, 3])
        plan = sample_region_mask(regions, 2, 0.5, rng)
        masked_regions = set(regions[np.nonzero(plan.masked[0])[0]])
        assert masked_regions <= set(plan.regions)

    def test_column_structure(self):
        # Masking is column-wise: all patches of a channel agree.
        rng = np.random.default_rng(5)
        plan = sample_region_mask(np.array([0, 1, 2, 0]), 5, 0.4, rng)
        for c in range(4):
            column = plan.masked[:, c]
            assert column.all() or not column.any()

    def test_invalid_ratio_rejected(self):
        rng = np.random.default_rng(6)
        for bad in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(ValueError, match="mask_ratio"):
                sample_region_mask(np.zeros(3, dtype=int), 2, bad, rng)


class TestPlanMask:
    def test_grid_interface(self):
        grid = TokenGrid(
            tokens=torch.zeros(3, 4, 8),
            region_index=np.array([0, 1, 1, 2]),
            mask=None,
        )
        plan = plan_mask(grid, 0.25, np.random.default_rng(0))
        assert plan.masked.shape == (3, 4)
