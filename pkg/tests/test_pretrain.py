"""Masked-autoencoding pretraining: loss contract, gradients, smoke training."""

import numpy as np
import pytest
import torch

from brainmoe.model import ModelConfig
from brainmoe.pretrain import Autoencoder, PretrainConfig, patch_targets, pretrain_subject, rmae_loss
from brainmoe.preprocess import preprocess
from brainmoe.synth import SynthConfig, TaskSynthSpec, generate_corpus
from brainmoe.tokenizer import TokenizerConfig


def tiny_cfg():
    tok = TokenizerConfig(filters=(4, 8), kernels=(5, 3), strides=(3, 2))
    return ModelConfig(
        hidden=8, blocks=2, heads=2, mlp_hidden=16, n_experts=3, top_k=2,
        cls_width=2, max_patches=16, tokenizer=tok,
    )


def tiny_batch(b=2, t=53, c=4, seed=0):
    torch.manual_seed(seed)
    x = torch.randn(b, t, c)
    regions = torch.tensor([0, 1, 2, 0])
    return x, regions


class TestPatchTargets:
    def test_window_alignment(self):
        x = torch.arange(24, dtype=torch.float32).reshape(1, 24, 1)
        targets = patch_targets(x, num_patches=3, window=6)
        assert targets.shape == (1, 3, 1, 6)
        torch.testing.assert_close(targets[0, 1, 0], x[0, 6:12, 0])

    def test_too_long_rejected(self):
        with pytest.raises(ValueError, match="exceed"):
            patch_targets(torch.zeros(1, 10, 1), num_patches=3, window=6)


class TestRmaeLoss:
    def test_masking_nothing_is_error(self):
        model = Autoencoder(tiny_cfg(), num_regions=3)
        x, regions = tiny_batch()
        p = model.config.tokenizer.output_length(53)
        mask = torch.zeros(2, p, 4, dtype=torch.bool)
        with pytest.raises(ValueError, match="no tokens"):
            rmae_loss(model, x, regions, mask)

    def test_mask_embedding_gradient_nonzero(self):
        torch.manual_seed(0)
        model = Autoencoder(tiny_cfg(), num_regions=3)
        x, regions = tiny_batch()
        p = model.config.tokenizer.output_length(53)
        mask = torch.zeros(2, p, 4, dtype=torch.bool)
        mask[:, :, 1] = True
        loss = rmae_loss(model, x, regions, mask)
        loss.backward()
        assert model.mask_token.grad is not None
        assert model.mask_token.grad.abs().sum() > 0

    def test_unmasked_targets_never_touch_loss(self):
        # Perturbing the raw samples of unmasked patch windows leaves the
        # loss's dependence through targets untouched (only masked windows
        # are reconstruction targets); perturbing a masked window changes it.
        torch.manual_seed(1)
        model = Autoencoder(tiny_cfg(), num_regions=3)
        x, regions = tiny_batch()
        p = model.config.tokenizer.output_length(53)
        window = model.patch_window
        mask = torch.zeros(2, p, 4, dtype=torch.bool)
        mask[:, 0, 2] = True

        hidden = model.encode(x, regions, mask)
        targets = patch_targets(x, p, window)
        idx = mask.nonzero(as_tuple=True)
        recon = model.reconstruct(hidden[idx]).detach()

        # Direct check of the loss formula: only masked windows appear.
        loss = ((recon - targets[idx]) ** 2).mean()
        x_mod = x.clone()
        x_mod[:, (p - 1) * window : p * window, 3] += 100.0  # unmasked window
        targets_mod = patch_targets(x_mod, p, window)
        loss_mod = ((recon - targets_mod[idx]) ** 2).mean()
        torch.testing.assert_close(loss, loss_mod)

    def test_masked_token_content_does_not_leak(self):
        # The conv content of a masked grid cell must not influence the
        # encoder output (it is replaced by the mask token).
        torch.manual_seed(2)
        model = Autoencoder(tiny_cfg(), num_regions=3)
        x, regions = tiny_batch()
        p = model.config.tokenizer.output_length(53)
        mask = torch.ones(2, p, 4, dtype=torch.bool)  # mask everything
        h1 = model.encode(x, regions, mask)
        h2 = model.encode(x * 3.0 + 1.0, regions, mask)
        torch.testing.assert_close(h1, h2)

    def test_spectral_aux_mode(self):
        torch.manual_seed(3)
        model = Autoencoder(tiny_cfg(), num_regions=3)
        x, regions = tiny_batch()
        p = model.config.tokenizer.output_length(53)
        mask = torch.zeros(2, p, 4, dtype=torch.bool)
        mask[:, :, 0] = True
        plain = rmae_loss(model, x, regions, mask, spectral_aux_weight=0.0)
        augmented = rmae_loss(model, x, regions, mask, spectral_aux_weight=0.5)
        assert float(augmented.detach()) > float(plain.detach())


class TestPretrainSubject:
    def make_recordings(self, seed=0, samples_per_class=8):
        cfg = SynthConfig(
            subjects=1,
            channels=6,
            num_regions=3,
            tasks=[
                TaskSynthSpec(
                    task_id=0, name="t", num_classes=2,
                    relevant_regions=(0, 1, 2), samples_per_class=samples_per_class,
                )
            ],
            num_samples=2048,
            noise_std=0.3,
            seed=seed,
            min_output_length=53,
        )
        return [preprocess(r) for r in generate_corpus(cfg)]

    def test_loss_decreases_across_seeds(self):
        # Smoke-training oracle: ~200 optimization steps beat the untrained
        # loss on a 1-subject toy corpus, for every seed.
        recs = self.make_recordings(samples_per_class=16)
        arch = ModelConfig(
            hidden=16, blocks=1, heads=2, mlp_hidden=32, n_experts=2, top_k=1,
            cls_width=2, max_patches=8,
            tokenizer=TokenizerConfig(filters=(8, 16), kernels=(32, 16), strides=(16, 8)),
        )
        for seed in range(5):
            cfg = PretrainConfig(epochs=50, batch_size=8, lr=1e-3, seed=seed)
            _, curve = pretrain_subject(recs, arch, cfg)
            assert curve[-1] < curve[0], (seed, curve)

    def test_multiple_subjects_rejected(self):
        recs = self.make_recordings()
        other = self.make_recordings()
        for r in other:
            r.subject_id = 1
        with pytest.raises(ValueError, match="one subject"):
            pretrain_subject(recs + other, tiny_cfg(), PretrainConfig(epochs=1))

    def test_uniform_ratio_mode(self):
        recs = self.make_recordings()[:8]
        arch = ModelConfig(
            hidden=8, blocks=1, heads=2, mlp_hidden=16, n_experts=2, top_k=1,
            cls_width=2, max_patches=8,
            tokenizer=TokenizerConfig(filters=(4, 8), kernels=(32, 16), strides=(16, 8)),
        )
        cfg = PretrainConfig(
            epochs=1, batch_size=8, mask_ratio_mode="uniform",
            mask_ratio_range=(0.2, 0.6), seed=0,
        )
        _, curve = pretrain_subject(recs, arch, cfg)
        assert np.isfinite(curve).all()

    def test_bad_ratio_mode_rejected(self):
        with pytest.raises(ValueError, match="mask_ratio_mode"):
            PretrainConfig(mask_ratio_mode="sometimes")
