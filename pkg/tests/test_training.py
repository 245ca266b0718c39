"""Training harness: splits, determinism, evaluation, LOSO contracts."""

import copy

import numpy as np
import pytest
import torch

from brainmoe.model import ModelConfig, build_decoder
from brainmoe.preprocess import preprocess
from brainmoe.synth import SynthConfig, TaskSynthSpec, generate_corpus
from brainmoe.tokenizer import TokenizerConfig
from brainmoe.training import (
    SubjectData,
    TrainConfig,
    evaluate,
    get_variant,
    group_by_subject,
    loso_run,
    run_variant,
    split_corpus,
    train,
)


def tiny_corpus(subjects=2, seed=0, samples_per_class=6, noise=0.5):
    cfg = SynthConfig(
        subjects=subjects,
        channels=6,
        num_regions=3,
        tasks=[
            TaskSynthSpec(
                task_id=0, name="a", num_classes=3,
                relevant_regions=(0,), samples_per_class=samples_per_class,
            ),
            TaskSynthSpec(
                task_id=1, name="b", num_classes=2,
                relevant_regions=(1,), samples_per_class=samples_per_class,
            ),
        ],
        num_samples=2048,
        noise_std=noise,
        seed=seed,
        min_output_length=53,
    )
    recs = [preprocess(r) for r in generate_corpus(cfg)]
    return recs, cfg.task_specs()


def tiny_arch():
    tok = TokenizerConfig(filters=(8, 16), kernels=(64, 16), strides=(32, 8))
    return ModelConfig(
        hidden=16, blocks=1, heads=2, mlp_hidden=32, n_experts=3, top_k=2,
        cls_width=2, max_patches=8, tokenizer=tok,
    )


def build_subjects(recs):
    return {sid: SubjectData(r) for sid, r in group_by_subject(recs).items()}


class TestSplits:
    def test_disjoint_within_task(self):
        recs, tasks = tiny_corpus()
        subjects = build_subjects(recs)
        plan = split_corpus(subjects, tasks, seed=0)
        for key in plan.train:
            tr, va, te = set(plan.train[key]), set(plan.val[key]), set(plan.test[key])
            assert not (tr & va) and not (tr & te) and not (va & te)
            assert len(tr | va | te) == len(next(iter(subjects.values())).labels[key[1]])

    def test_test_set_class_balanced(self):
        recs, tasks = tiny_corpus(samples_per_class=8)
        subjects = build_subjects(recs)
        plan = split_corpus(subjects, tasks, seed=1)
        for (sid, tid), idx in plan.test.items():
            labels = subjects[sid].labels[tid][idx]
            counts = np.bincount(labels)
            assert counts.min() == counts.max()

    def test_deterministic(self):
        recs, tasks = tiny_corpus()
        subjects = build_subjects(recs)
        a = split_corpus(subjects, tasks, seed=5)
        b = split_corpus(subjects, tasks, seed=5)
        for key in a.train:
            np.testing.assert_array_equal(a.train[key], b.train[key])


class TestTrain:
    def test_zero_epochs_returns_init_unchanged(self):
        recs, tasks = tiny_corpus()
        subjects = build_subjects(recs)
        model = build_decoder(
            tiny_arch(), num_regions=3, task_classes={0: 3, 1: 2}, seed=0
        )
        before = copy.deepcopy(model.state_dict())
        result = train(model, subjects, tasks, TrainConfig(epochs=0, seed=0))
        for name, tensor in result.model.state_dict().items():
            torch.testing.assert_close(tensor, before[name], rtol=0, atol=0)

    def test_reproducible_bitwise(self):
        recs, tasks = tiny_corpus()
        metrics = []
        for _ in range(2):
            fit = run_variant(
                recs, tasks, get_variant("+TIA"), tiny_arch(),
                TrainConfig(epochs=2, seed=3), seed=3,
            )
            metrics.append(
                {tid: (m.accuracy, m.kappa) for tid, m in fit.report.per_task.items()}
            )
        assert metrics[0] == metrics[1]

    def test_loss_curve_recorded(self):
        recs, tasks = tiny_corpus()
        fit = run_variant(
            recs, tasks, get_variant("+BrMoE"), tiny_arch(),
            TrainConfig(epochs=2, seed=0), seed=0,
        )
        assert len(fit.result.loss_curve) == 2
        assert all(np.isfinite(v) for _, v in fit.result.loss_curve)


class TestEvaluate:
    def test_empty_split_rejected(self):
        recs, tasks = tiny_corpus()
        subjects = build_subjects(recs)
        model = build_decoder(
            tiny_arch(), num_regions=3, task_classes={0: 3, 1: 2}, seed=0
        )
        plan = split_corpus(subjects, tasks, seed=0)
        plan.test = {}
        with pytest.raises(ValueError, match="empty"):
            evaluate(model, subjects, tasks, plan, subset="test")

    def test_whole_corpus_mode(self):
        recs, tasks = tiny_corpus()
        subjects = build_subjects(recs)
        model = build_decoder(
            tiny_arch(), num_regions=3, task_classes={0: 3, 1: 2}, seed=0
        )
        report, router = evaluate(model, subjects, tasks, splits=None)
        n = sum(len(d) for d in subjects.values())
        assert report.per_task[0].confusion.sum() == n
        assert router.dispatch_counts.sum() > 0


class TestLoso:
    def test_unknown_subject_rejected(self):
        recs, tasks = tiny_corpus()
        with pytest.raises(ValueError, match="not present"):
            loso_run(
                recs, tasks, 99, get_variant("+TIA"), tiny_arch(),
                TrainConfig(epochs=0, seed=0),
            )

    def test_held_out_in_train_list_rejected(self):
        recs, tasks = tiny_corpus()
        with pytest.raises(ValueError, match="appears in the training"):
            loso_run(
                recs, tasks, 0, get_variant("+TIA"), tiny_arch(),
                TrainConfig(epochs=0, seed=0), train_subjects=[0, 1],
            )

    def test_chance_level_reported(self):
        recs, tasks = tiny_corpus()
        held, _ = loso_run(
            recs, tasks, 1, get_variant("+TIA"), tiny_arch(),
            TrainConfig(epochs=1, seed=0),
        )
        assert held.per_task[0].chance_level == pytest.approx(1 / 3)
        assert held.per_task[1].chance_level == pytest.approx(1 / 2)


class TestVariants:
    def test_unknown_variant_rejected(self):
        with pytest.raises(KeyError, match="unknown variant"):
            get_variant("+Everything")

    def test_tokenizer_only_has_zero_expert_parameters(self):
        recs, tasks = tiny_corpus()
        fit = run_variant(
            recs, tasks, get_variant("tokenizer-only"), tiny_arch(),
            TrainConfig(epochs=0, seed=0), seed=0,
        )
        names = [n for n, _ in fit.result.model.named_parameters()]
        assert all("experts" not in n for n in names)
        assert all("router" not in n for n in names)

    def test_expert_count_override(self):
        variant = get_variant("+TIA", n_experts=5)
        cfg = variant.resolve(tiny_arch())
        assert cfg.n_experts == 5

    def test_aux_weight_zero_trains(self):
        recs, tasks = tiny_corpus()
        fit = run_variant(
            recs, tasks, get_variant("+TIA"), tiny_arch(),
            TrainConfig(epochs=1, seed=0, aux_weight=0.0), seed=0,
        )
        assert np.isfinite(fit.report.mean_accuracy())
