"""Strict config parsing and the command-line pipeline."""

import json
import os

import numpy as np
import pytest
import yaml

from brainmoe.cli import (
    EXIT_BAD_CONFIG,
    EXIT_CKPT_INTEGRITY,
    EXIT_CKPT_VERSION,
    EXIT_MISSING_FILE,
    EXIT_OK,
    EXIT_SHAPE_MISMATCH,
    main,
)
from brainmoe.config import (
    ConfigError,
    ExperimentConfig,
    config_from_dict,
    config_to_dict,
    load_config,
)


TINY_DOC = {
    "synth": {
        "subjects": 2,
        "channels": 6,
        "num_regions": 3,
        "tasks": [
            {
                "task_id": 0,
                "name": "a",
                "num_classes": 3,
                "relevant_regions": [0],
                "samples_per_class": 6,
            },
            {
                "task_id": 1,
                "name": "b",
                "num_classes": 2,
                "relevant_regions": [1],
                "samples_per_class": 6,
            },
        ],
        "num_samples": 2048,
        "noise_std": 0.5,
        "seed": 5,
        "min_output_length": 53,
    },
    "tokenizer": {"filters": [8, 16], "kernels": [64, 16], "strides": [32, 8]},
    "model": {
        "hidden": 16,
        "blocks": 1,
        "heads": 2,
        "mlp_hidden": 32,
        "n_experts": 3,
        "top_k": 2,
        "cls_width": 2,
        "max_patches": 8,
    },
    "rmae": {"epochs": 1, "batch_size": 8},
    "train": {"epochs": 1, "seed": 0},
}


def write_cfg(tmp_path, doc=None, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc if doc is not None else TINY_DOC))
    return str(path)


class TestConfig:
    def test_defaults_load(self):
        cfg = config_from_dict({})
        assert cfg.model.n_experts == 21
        assert cfg.model.top_k == 2
        assert cfg.model.cls_width == 4
        assert cfg.rmae.mask_ratio == 0.2
        assert cfg.merge.trim_fraction == 0.5
        assert cfg.train.aux_weight == pytest.approx(0.01)
        assert cfg.train.lr == pytest.approx(5e-4)
        assert cfg.train.betas == (0.9, 0.95)

    def test_unknown_key_rejected_with_path(self):
        with pytest.raises(ConfigError, match="train"):
            config_from_dict({"train": {"learning_rate": 0.1}})
        with pytest.raises(ConfigError, match="unknown keys"):
            config_from_dict({"bogus_section": {}})

    def test_nested_unknown_key(self):
        doc = {"synth": {"tasks": [{"task_id": 0, "name": "x", "num_classes": 2,
                                    "relevant_regions": [0], "colour": "red"}]}}
        with pytest.raises(ConfigError, match="colour"):
            config_from_dict(doc)

    def test_round_trip_dict(self):
        cfg = config_from_dict(TINY_DOC)
        doc = config_to_dict(cfg)
        cfg2 = config_from_dict(doc)
        assert config_to_dict(cfg2) == doc

    def test_invalid_value_flagged(self):
        with pytest.raises(ConfigError, match="merge"):
            config_from_dict({"merge": {"trim_fraction": 1.5}})

    def test_yaml_file_loading(self, tmp_path):
        path = write_cfg(tmp_path)
        cfg = load_config(path)
        assert cfg.synth.subjects == 2
        assert cfg.tokenizer.filters == (8, 16)

    def test_malformed_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("train: [unclosed")
        with pytest.raises(ConfigError):
            load_config(str(path))

    def test_model_config_couples_tokenizer(self):
        cfg = config_from_dict(TINY_DOC)
        mc = cfg.model_config()
        assert mc.tokenizer.filters == (8, 16)
        assert mc.hidden == 16


class TestCliPipeline:
    def test_synth_deterministic_trees(self, tmp_path):
        import hashlib

        cfg = write_cfg(tmp_path)

        def digest(root):
            acc = hashlib.sha256()
            for base, _, files in sorted(os.walk(root)):
                for f in sorted(files):
                    if f == "provenance.json":  # carries a timestamp
                        continue
                    acc.update(f.encode())
                    acc.update(open(os.path.join(base, f), "rb").read())
            return acc.hexdigest()

        assert main(["synth", "--config", cfg, "--out", str(tmp_path / "c1")]) == EXIT_OK
        assert main(["synth", "--config", cfg, "--out", str(tmp_path / "c2")]) == EXIT_OK
        assert digest(tmp_path / "c1") == digest(tmp_path / "c2")

    def test_full_pipeline(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path)
        corpus = str(tmp_path / "corpus")
        assert main(["synth", "--config", cfg, "--out", corpus]) == EXIT_OK

        pre = str(tmp_path / "pre")
        assert main(["pretrain", "--config", cfg, "--corpus", corpus, "--out", pre]) == EXIT_OK
        ckpts = sorted(str(p) for p in (tmp_path / "pre").glob("*.ckpt"))
        assert len(ckpts) == 2

        merged = str(tmp_path / "merged.ckpt")
        assert main(["merge", "--config", cfg, "--inputs", *ckpts, "--out", merged]) == EXIT_OK

        run = str(tmp_path / "run")
        assert (
            main(
                ["train", "--config", cfg, "--corpus", corpus, "--out", run,
                 "--init", merged]
            )
            == EXIT_OK
        )
        assert os.path.exists(os.path.join(run, "trained.ckpt"))
        assert os.path.exists(os.path.join(run, "config.yaml"))
        assert os.path.exists(os.path.join(run, "metrics.jsonl"))
        assert os.path.exists(os.path.join(run, "train_loss.txt"))

        out = str(tmp_path / "eval")
        assert (
            main(
                ["eval", "--config", cfg, "--corpus", corpus,
                 "--checkpoint", os.path.join(run, "trained.ckpt"), "--out", out]
            )
            == EXIT_OK
        )
        records = [
            json.loads(line)
            for line in open(os.path.join(out, "metrics.jsonl"), encoding="utf-8")
        ]
        assert {r["task_id"] for r in records} == {0, 1}

        report = str(tmp_path / "routes")
        assert (
            main(
                ["route-report", "--config", cfg, "--corpus", corpus,
                 "--checkpoint", os.path.join(run, "trained.ckpt"), "--out", report]
            )
            == EXIT_OK
        )
        table = open(os.path.join(report, "router_layer_00.tsv")).read()
        assert table.startswith("region\texpert_0")

    def test_missing_corpus_exit_code(self, tmp_path):
        cfg = write_cfg(tmp_path)
        code = main(["train", "--config", cfg, "--corpus", str(tmp_path / "nope"),
                     "--out", str(tmp_path / "r")])
        assert code == EXIT_MISSING_FILE

    def test_bad_config_exit_code(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("train:\n  bogus_key: 1\n")
        code = main(["synth", "--config", str(path), "--out", str(tmp_path / "c")])
        assert code == EXIT_BAD_CONFIG

    def test_merge_shape_mismatch_exit_code(self, tmp_path):
        import numpy as np
        from brainmoe.checkpoint import Checkpoint, save_checkpoint

        a = str(tmp_path / "a.ckpt")
        b = str(tmp_path / "b.ckpt")
        save_checkpoint(
            Checkpoint(stage="rmae", config={}, tensors={
                "tokenizer.temporal_emb": np.zeros((2, 4), dtype=np.float32)
            }), a,
        )
        save_checkpoint(
            Checkpoint(stage="rmae", config={}, tensors={
                "tokenizer.temporal_emb": np.zeros((3, 4), dtype=np.float32)
            }), b,
        )
        code = main(["merge", "--inputs", a, b, "--out", str(tmp_path / "m.ckpt")])
        assert code == EXIT_SHAPE_MISMATCH

    def test_corrupt_checkpoint_exit_code(self, tmp_path, capsys):
        from brainmoe.checkpoint import Checkpoint, save_checkpoint

        path = str(tmp_path / "x.ckpt")
        save_checkpoint(
            Checkpoint(stage="rmae", config={}, tensors={
                "w": np.zeros(4, dtype=np.float32)
            }), path,
        )
        blob = bytearray(open(path, "rb").read())
        blob[-1] ^= 0xFF
        open(path, "wb").write(bytes(blob))
        code = main(["merge", "--inputs", path, "--out", str(tmp_path / "m.ckpt")])
        assert code == EXIT_CKPT_INTEGRITY
        err = capsys.readouterr().err
        assert err.startswith("ERROR code=CKPT_INTEGRITY")

    def test_version_mismatch_exit_code(self, tmp_path):
        from brainmoe.checkpoint import Checkpoint, save_checkpoint

        path = str(tmp_path / "x.ckpt")
        save_checkpoint(
            Checkpoint(stage="rmae", config={}, tensors={
                "w": np.zeros(4, dtype=np.float32)
            }), path,
        )
        raw = open(path, "rb").read().replace(b'"format_version": 1', b'"format_version": 9')
        open(path, "wb").write(raw)
        code = main(["merge", "--inputs", path, "--out", str(tmp_path / "m.ckpt")])
        assert code == EXIT_CKPT_VERSION

    def test_gradcheck_subcommand(self, capsys):
        # Run on an extra-tiny setup by seeding; tolerance from the CLI.
        code = main(["gradcheck", "--seed", "1", "--tolerance", "1e-4"])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "max relative gradient error" in out


class TestCliExperiments:
    def test_loso_subcommand(self, tmp_path):
        cfg = write_cfg(tmp_path)
        corpus = str(tmp_path / "corpus")
        assert main(["synth", "--config", cfg, "--out", corpus]) == EXIT_OK
        out = str(tmp_path / "loso")
        code = main(
            ["loso", "--config", cfg, "--corpus", corpus, "--held-out", "1",
             "--variant", "+TIA", "--out", out]
        )
        assert code == EXIT_OK
        records = [
            json.loads(line)
            for line in open(os.path.join(out, "metrics.jsonl"), encoding="utf-8")
        ]
        assert any(r.get("split") == "held_out" for r in records)

    def test_ablate_subcommand(self, tmp_path):
        cfg = write_cfg(tmp_path)
        corpus = str(tmp_path / "corpus")
        assert main(["synth", "--config", cfg, "--out", corpus]) == EXIT_OK
        out = str(tmp_path / "abl")
        code = main(
            ["ablate", "--config", cfg, "--corpus", corpus,
             "--variants", "tokenizer-only", "+TIA:2", "--seeds", "0", "--out", out]
        )
        assert code == EXIT_OK
        records = [
            json.loads(line)
            for line in open(os.path.join(out, "ablation.jsonl"), encoding="utf-8")
        ]
        variants = {r["variant"] for r in records}
        assert variants == {"tokenizer-only", "+TIA[experts=2]"}

    def test_unknown_variant_exit(self, tmp_path):
        cfg = write_cfg(tmp_path)
        corpus = str(tmp_path / "corpus")
        assert main(["synth", "--config", cfg, "--out", corpus]) == EXIT_OK
        code = main(
            ["train", "--config", cfg, "--corpus", corpus,
             "--variant", "+Everything", "--out", str(tmp_path / "r")]
        )
        assert code == 1
