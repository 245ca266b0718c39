"""Command-line driver for the full pipeline.

Subcommands: synth, pretrain, merge, train, eval, loso, ablate,
route-report, gradcheck.  Every run directory receives the resolved config
echo plus a provenance record (seeds and checkpoint hashes), so runs are
reproducible from their outputs alone.  Failures print one machine-parsable
line to stderr (``ERROR code=<NAME> msg="..."``) and exit with a code
distinct per error family.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace

import numpy as np
import torch

from . import checkpoint as ckpt_io
from .config import ConfigError, ExperimentConfig, config_to_dict, dump_config, load_config
from .gradcheck import relative_gradient_error, tiny_gradcheck_setup
from .merging import is_shared_name, merge, trim, upcycle_init
from .model import build_decoder
from .pretrain import pretrain_subject
from .preprocess import preprocess
from .synth import generate_corpus, load_corpus, save_corpus
from .training import (
    SubjectData,
    ablate,
    evaluate,
    get_variant,
    group_by_subject,
    loso_run,
    run_variant,
    split_corpus,
    train,
    write_curve,
    write_records,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_BAD_CONFIG = 4
EXIT_CKPT_VERSION = 5
EXIT_CKPT_INTEGRITY = 6
EXIT_SHAPE_MISMATCH = 7


class ShapeMismatch(Exception):
    pass


def _fail(code: int, name: str, message: str) -> int:
    message = " ".join(str(message).split())
    print(f'ERROR code={name} msg="{message}"', file=sys.stderr)
    return code


def _load_cfg(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    return load_config(path)


def _echo_run(out_dir: str, cfg: ExperimentConfig, extra: dict | None = None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    dump_config(cfg, os.path.join(out_dir, "config.yaml"))
    record = {"created_unix": int(time.time())}
    if extra:
        record.update(extra)
    with open(os.path.join(out_dir, "provenance.json"), "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)


def _load_preprocessed_corpus(corpus_dir: str):
    if not os.path.isdir(corpus_dir):
        raise FileNotFoundError(corpus_dir)
    return load_corpus(corpus_dir)


def _arch_snapshot(cfg: ExperimentConfig, variant_name: str, num_regions: int, task_classes: dict) -> dict:
    doc = config_to_dict(cfg)
    return {
        "model": doc["model"],
        "tokenizer": doc["tokenizer"],
        "variant": variant_name,
        "num_regions": num_regions,
        "task_classes": {str(k): v for k, v in task_classes.items()},
    }


def _model_from_snapshot(snapshot: dict, cfg: ExperimentConfig):
    variant = get_variant(snapshot["variant"])
    arch = variant.resolve(cfg.model_config())
    return build_decoder(
        arch,
        num_regions=int(snapshot["num_regions"]),
        task_classes={int(k): int(v) for k, v in snapshot["task_classes"].items()},
        moe=variant.moe,
        task_cls=variant.task_cls,
    )


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _load_cfg(args.config)
    raw = generate_corpus(cfg.synth)
    processed = [preprocess(rec) for rec in raw]
    save_corpus(processed, cfg.synth.task_specs(), args.out)
    _echo_run(args.out, cfg, {"seed": cfg.synth.seed, "recordings": len(processed)})
    print(f"wrote {len(processed)} recordings to {args.out}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = _load_cfg(args.config)
    recordings, tasks = _load_preprocessed_corpus(args.corpus)
    by_subject = group_by_subject(recordings)
    subjects = [args.subject] if args.subject is not None else sorted(by_subject)
    os.makedirs(args.out, exist_ok=True)
    hashes = {}
    for offset, subject_id in enumerate(subjects):
        if subject_id not in by_subject:
            raise FileNotFoundError(f"subject {subject_id} not in corpus")
        sub_cfg = replace(cfg.rmae, seed=cfg.rmae.seed + offset)
        model, curve = pretrain_subject(by_subject[subject_id], cfg.model_config(), sub_cfg)
        task_classes = {t.task_id: t.num_classes for t in tasks}
        snapshot = _arch_snapshot(cfg, "+TIA", model.num_regions, task_classes)
        ckpt = ckpt_io.from_model(model, stage="rmae", config=snapshot)
        path = os.path.join(args.out, f"rmae_subject_{subject_id:03d}.ckpt")
        hashes[str(subject_id)] = ckpt_io.save_checkpoint(ckpt, path)
        write_curve(
            list(enumerate(curve)), os.path.join(args.out, f"rmae_loss_{subject_id:03d}.txt")
        )
        print(f"subject {subject_id}: final loss {curve[-1]:.5f} -> {path}")
    _echo_run(args.out, cfg, {"checkpoint_hashes": hashes, "seed": cfg.rmae.seed})
    return EXIT_OK


def cmd_merge(args) -> int:
    cfg = _load_cfg(args.config)
    param_sets = []
    parents = []
    reference_snapshot = None
    for path in args.inputs:
        ckpt = ckpt_io.load_checkpoint(path)
        if ckpt.stage != "rmae":
            raise ckpt_io.CheckpointError(
                f"{path}: expected an rmae-stage checkpoint, got {ckpt.stage!r}"
            )
        reference_snapshot = ckpt.config
        parents.append(ckpt.payload_sha256)
        shared = [
            n
            for n in ckpt.tensors
            if is_shared_name(n, merge_region_emb=cfg.merge.region_emb_mode == "merge")
        ]
        param_sets.append(
            trim({n: ckpt.tensors[n] for n in shared}, cfg.merge.trim_fraction, cfg.merge.trim_scope)
        )
    try:
        merged = merge(param_sets)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc
    out = ckpt_io.Checkpoint(
        stage="merged", config=reference_snapshot, tensors=merged, parents=tuple(parents)
    )
    digest = ckpt_io.save_checkpoint(out, args.out)
    print(f"merged {len(param_sets)} checkpoints -> {args.out} ({digest[:12]})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_cfg(args.config)
    recordings, tasks = _load_preprocessed_corpus(args.corpus)
    variant = get_variant(args.variant, n_experts=args.n_experts)
    task_classes = {t.task_id: t.num_classes for t in tasks}
    by_subject = group_by_subject(recordings)
    subjects = {sid: SubjectData(recs) for sid, recs in by_subject.items()}
    num_regions = next(iter(subjects.values())).region_map.num_regions
    train_cfg = replace(cfg.train, seed=args.seed if args.seed is not None else cfg.train.seed)
    parents: tuple[str, ...] = ()

    if args.init is not None:
        init_ckpt = ckpt_io.load_checkpoint(args.init)
        if init_ckpt.stage != "merged":
            raise ckpt_io.CheckpointError(
                f"{args.init}: expected a merged-stage checkpoint, got {init_ckpt.stage!r}"
            )
        arch = variant.resolve(cfg.model_config())
        try:
            model = upcycle_init(
                init_ckpt.tensors,
                arch,
                num_regions=num_regions,
                task_classes=task_classes,
                seed=train_cfg.seed,
                moe=variant.moe,
                task_cls=variant.task_cls,
            )
        except (KeyError, ValueError) as exc:
            raise ShapeMismatch(str(exc)) from exc
        parents = (init_ckpt.payload_sha256,)
        splits = split_corpus(
            subjects, tasks, train_cfg.seed, train_cfg.test_fraction, train_cfg.val_fraction
        )
        result = train(model, subjects, tasks, train_cfg, splits)
        report, router = evaluate(result.model, subjects, tasks, splits, subset="test")
    else:
        fit = run_variant(
            recordings, tasks, variant, cfg.model_config(), train_cfg, cfg.rmae,
            seed=train_cfg.seed,
        )
        result, report, router = fit.result, fit.report, fit.router

    os.makedirs(args.out, exist_ok=True)
    snapshot = _arch_snapshot(cfg, variant.name, num_regions, task_classes)
    ckpt = ckpt_io.from_model(result.model, stage="trained", config=snapshot, parents=parents)
    ckpt_path = os.path.join(args.out, "trained.ckpt")
    digest = ckpt_io.save_checkpoint(ckpt, ckpt_path)
    write_curve(result.loss_curve, os.path.join(args.out, "train_loss.txt"))
    write_curve(result.val_curve, os.path.join(args.out, "val_accuracy.txt"))
    write_records(
        report.to_records(variant=variant.name, seed=train_cfg.seed),
        os.path.join(args.out, "metrics.jsonl"),
    )
    router.write(os.path.join(args.out, "router"))
    _echo_run(
        args.out,
        cfg,
        {"seed": train_cfg.seed, "checkpoint_hashes": {"trained": digest}, "variant": variant.name},
    )
    for tid, m in sorted(report.per_task.items()):
        print(
            f"task {tid}: acc {m.accuracy:.4f} kappa {m.kappa:.4f} "
            f"(chance {m.chance_level:.4f})"
        )
    return EXIT_OK


def _load_trained(args, cfg):
    ckpt = ckpt_io.load_checkpoint(args.checkpoint)
    if ckpt.stage != "trained":
        raise ckpt_io.CheckpointError(
            f"{args.checkpoint}: expected a trained-stage checkpoint, got {ckpt.stage!r}"
        )
    model = _model_from_snapshot(ckpt.config, cfg)
    try:
        ckpt_io.apply_to_model(ckpt, model)
    except ckpt_io.CheckpointError as exc:
        raise ShapeMismatch(str(exc)) from exc
    return model


def cmd_eval(args) -> int:
    cfg = _load_cfg(args.config)
    recordings, tasks = _load_preprocessed_corpus(args.corpus)
    model = _load_trained(args, cfg)
    subjects = {sid: SubjectData(recs) for sid, recs in group_by_subject(recordings).items()}
    splits = split_corpus(
        subjects, tasks, cfg.train.seed, cfg.train.test_fraction, cfg.train.val_fraction
    )
    report, router = evaluate(model, subjects, tasks, splits, subset=args.subset)
    os.makedirs(args.out, exist_ok=True)
    write_records(report.to_records(subset=args.subset), os.path.join(args.out, "metrics.jsonl"))
    router.write(os.path.join(args.out, "router"))
    _echo_run(args.out, cfg, {"checkpoint": args.checkpoint, "subset": args.subset})
    for tid, m in sorted(report.per_task.items()):
        print(f"task {tid}: acc {m.accuracy:.4f} f1 {m.weighted_f1:.4f}")
    return EXIT_OK


def cmd_loso(args) -> int:
    cfg = _load_cfg(args.config)
    recordings, tasks = _load_preprocessed_corpus(args.corpus)
    variant = get_variant(args.variant)
    seed = args.seed if args.seed is not None else cfg.train.seed
    held_report, train_report = loso_run(
        recordings,
        tasks,
        args.held_out,
        variant,
        cfg.model_config(),
        replace(cfg.train, seed=seed),
        cfg.rmae,
        seed=seed,
    )
    os.makedirs(args.out, exist_ok=True)
    write_records(
        held_report.to_records(split="held_out", held_out=args.held_out, seed=seed)
        + train_report.to_records(split="train_subjects_test", seed=seed),
        os.path.join(args.out, "metrics.jsonl"),
    )
    _echo_run(args.out, cfg, {"held_out": args.held_out, "seed": seed, "variant": variant.name})
    for tid, m in sorted(held_report.per_task.items()):
        print(
            f"held-out task {tid}: acc {m.accuracy:.4f} vs chance {m.chance_level:.4f}"
        )
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args.config)
    recordings, tasks = _load_preprocessed_corpus(args.corpus)
    variants = []
    for name in args.variants:
        if ":" in name:
            base, n = name.split(":", 1)
            variants.append(get_variant(base, n_experts=int(n)))
        else:
            variants.append(get_variant(name))
    records = ablate(
        recordings,
        tasks,
        variants,
        cfg.model_config(),
        cfg.train,
        cfg.rmae,
        seeds=tuple(args.seeds),
    )
    os.makedirs(args.out, exist_ok=True)
    write_records(records, os.path.join(args.out, "ablation.jsonl"))
    _echo_run(args.out, cfg, {"variants": args.variants, "seeds": args.seeds})
    for name in dict.fromkeys(r["variant"] for r in records):
        accs = [r["accuracy"] for r in records if r["variant"] == name]
        print(f"{name}: mean acc {np.mean(accs):.4f} over {len(accs)} task-seed cells")
    return EXIT_OK


def cmd_route_report(args) -> int:
    cfg = _load_cfg(args.config)
    recordings, tasks = _load_preprocessed_corpus(args.corpus)
    model = _load_trained(args, cfg)
    subjects = {sid: SubjectData(recs) for sid, recs in group_by_subject(recordings).items()}
    _, router = evaluate(model, subjects, tasks, splits=None)
    router.write(args.out)
    _echo_run(args.out, cfg, {"checkpoint": args.checkpoint})
    print(f"wrote per-layer routing tables to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.config is not None:
        _load_cfg(args.config)  # validated but the tiny fixed setup is used
    torch.set_num_threads(1)
    setup = tiny_gradcheck_setup(seed=args.seed)
    err, worst = relative_gradient_error(setup.loss_fn, setup.model)
    print(
        f"max relative gradient error {err:.3e} over {setup.num_parameters} "
        f"parameters (worst: {worst})"
    )
    return EXIT_OK if err < args.tolerance else EXIT_ERROR


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="brainmoe", description="multi-subject multi-task neural decoding pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate and preprocess a synthetic corpus")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="masked-autoencoding pretraining per subject")
    p.add_argument("--config", default=None)
    p.add_argument("--corpus", required=True)
    p.add_argument("--subject", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("merge", help="merge pretrained checkpoints into one init")
    p.add_argument("--config", default=None)
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("train", help="supervised multi-task training")
    p.add_argument("--config", default=None)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", default="+TIA")
    p.add_argument("--n-experts", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--init", default=None, help="merged-stage checkpoint to upcycle")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained checkpoint")
    p.add_argument("--config", default=None)
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--subset", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("loso", help="leave-one-subject-out zero-shot evaluation")
    p.add_argument("--config", default=None)
    p.add_argument("--corpus", required=True)
    p.add_argument("--held-out", type=int, required=True)
    p.add_argument("--variant", default="+TIA")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_loso)

    p = sub.add_parser("ablate", help="run the component/expert-count ablation grid")
    p.add_argument("--config", default=None)
    p.add_argument("--corpus", required=True)
    p.add_argument(
        "--variants",
        nargs="+",
        default=["tokenizer-only", "+BrMoE", "+TIA", "+RMAE"],
        help="variant names; append :N to override the expert count",
    )
    p.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2, 3, 4])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("route-report", help="export per-layer region/expert tables")
    p.add_argument("--config", default=None)
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_route_report)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        return _fail(EXIT_MISSING_FILE, "MISSING_FILE", exc)
    except ConfigError as exc:
        return _fail(EXIT_BAD_CONFIG, "BAD_CONFIG", exc)
    except ckpt_io.CheckpointVersionError as exc:
        return _fail(EXIT_CKPT_VERSION, "CKPT_VERSION", exc)
    except ckpt_io.CheckpointIntegrityError as exc:
        return _fail(EXIT_CKPT_INTEGRITY, "CKPT_INTEGRITY", exc)
    except ShapeMismatch as exc:
        return _fail(EXIT_SHAPE_MISMATCH, "SHAPE_MISMATCH", exc)
    except ckpt_io.CheckpointError as exc:
        return _fail(EXIT_CKPT_INTEGRITY, "CKPT_INVALID", exc)
    except (ValueError, KeyError) as exc:
        return _fail(EXIT_ERROR, "INVALID", exc)


if __name__ == "__main__":
    sys.exit(main())
