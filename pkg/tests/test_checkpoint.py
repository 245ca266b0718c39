"""Checkpoint format: bit-exact round-trips, integrity, provenance."""

import numpy as np
import pytest
import torch

from brainmoe.checkpoint import (
    Checkpoint,
    CheckpointError,
    CheckpointIntegrityError,
    CheckpointVersionError,
    apply_to_model,
    from_model,
    load_checkpoint,
    save_checkpoint,
    validate_names,
)
from brainmoe.model import ModelConfig, build_decoder
from brainmoe.tokenizer import TokenizerConfig


def tiny_model(seed=0):
    tok = TokenizerConfig(filters=(4, 8), kernels=(5, 3), strides=(3, 2))
    cfg = ModelConfig(
        hidden=8, blocks=1, heads=2, mlp_hidden=16, n_experts=2, top_k=1,
        cls_width=2, max_patches=8, tokenizer=tok,
    )
    return build_decoder(cfg, num_regions=2, task_classes={0: 3}, seed=seed)


class TestRoundTrip:
    def test_bit_exact(self, tmp_path):
        model = tiny_model()
        ckpt = from_model(model, stage="trained", config={"note": "t"})
        path = str(tmp_path / "m.ckpt")
        digest = save_checkpoint(ckpt, path)
        loaded = load_checkpoint(path)
        assert loaded.stage == "trained"
        assert loaded.payload_sha256 == digest
        assert set(loaded.tensors) == set(ckpt.tensors)
        for name in ckpt.tensors:
            np.testing.assert_array_equal(loaded.tensors[name], ckpt.tensors[name])
            assert loaded.tensors[name].dtype == ckpt.tensors[name].dtype

    def test_apply_restores_model_bitwise(self, tmp_path):
        model = tiny_model(seed=1)
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(from_model(model, "trained", {}), path)
        other = tiny_model(seed=2)
        apply_to_model(load_checkpoint(path), other)
        for (_, a), (_, b) in zip(model.named_parameters(), other.named_parameters()):
            torch.testing.assert_close(a, b, rtol=0, atol=0)

    def test_float64_tensors(self, tmp_path):
        ckpt = Checkpoint(
            stage="merged",
            config={},
            tensors={"w": np.random.default_rng(0).standard_normal((3, 4))},
        )
        path = str(tmp_path / "d.ckpt")
        save_checkpoint(ckpt, path)
        loaded = load_checkpoint(path)
        assert loaded.tensors["w"].dtype == np.float64
        np.testing.assert_array_equal(loaded.tensors["w"], ckpt.tensors["w"])

    def test_rng_state_preserved(self, tmp_path):
        model = tiny_model()
        ckpt = from_model(model, "rmae", {})
        path = str(tmp_path / "r.ckpt")
        save_checkpoint(ckpt, path)
        assert load_checkpoint(path).rng_state == ckpt.rng_state


class TestIntegrity:
    def test_every_corrupted_byte_rejected(self, tmp_path):
        ckpt = Checkpoint(
            stage="merged", config={}, tensors={"w": np.arange(6, dtype=np.float32)}
        )
        path = str(tmp_path / "c.ckpt")
        save_checkpoint(ckpt, path)
        blob = bytearray(open(path, "rb").read())
        rng = np.random.default_rng(0)
        for _ in range(25):
            pos = int(rng.integers(0, len(blob)))
            corrupted = bytearray(blob)
            corrupted[pos] ^= 0xFF
            (tmp_path / "bad.ckpt").write_bytes(bytes(corrupted))
            with pytest.raises((CheckpointError, ValueError)):
                load_checkpoint(str(tmp_path / "bad.ckpt"))

    def test_truncation_rejected(self, tmp_path):
        ckpt = Checkpoint(
            stage="merged", config={}, tensors={"w": np.arange(6, dtype=np.float32)}
        )
        path = str(tmp_path / "t.ckpt")
        save_checkpoint(ckpt, path)
        blob = open(path, "rb").read()
        (tmp_path / "cut.ckpt").write_bytes(blob[:-4])
        with pytest.raises(CheckpointIntegrityError):
            load_checkpoint(str(tmp_path / "cut.ckpt"))

    def test_unknown_version_rejected(self, tmp_path):
        ckpt = Checkpoint(
            stage="merged", config={}, tensors={"w": np.zeros(2, dtype=np.float32)}
        )
        path = str(tmp_path / "v.ckpt")
        save_checkpoint(ckpt, path)
        raw = open(path, "rb").read()
        hacked = raw.replace(b'"format_version": 1', b'"format_version": 9')
        (tmp_path / "v9.ckpt").write_bytes(hacked)
        with pytest.raises(CheckpointVersionError):
            load_checkpoint(str(tmp_path / "v9.ckpt"))

    def test_missing_file(self):
        with pytest.raises(FileNotFoundError):
            load_checkpoint("/nonexistent/nothing.ckpt")


class TestValidation:
    def test_unknown_stage_rejected(self):
        with pytest.raises(CheckpointError, match="stage"):
            Checkpoint(stage="bogus", config={}, tensors={})

    def test_name_set_validation(self):
        model = tiny_model()
        ckpt = from_model(model, "trained", {})
        expected = {name for name, _ in model.named_parameters()}
        validate_names(ckpt, expected)
        with pytest.raises(CheckpointError, match="missing"):
            validate_names(ckpt, expected | {"ghost.weight"})

    def test_shape_mismatch_on_apply(self, tmp_path):
        model = tiny_model()
        ckpt = from_model(model, "trained", {})
        ckpt.tensors["final_norm.weight"] = np.zeros(5, dtype=np.float32)
        with pytest.raises(CheckpointError):
            apply_to_model(ckpt, tiny_model(seed=3))

    def test_unsupported_dtype_rejected(self):
        with pytest.raises(CheckpointError, match="dtype"):
            Checkpoint(stage="merged", config={}, tensors={"w": np.zeros(2, dtype=np.int32)})
