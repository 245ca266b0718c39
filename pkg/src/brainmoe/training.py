"""Supervised multi-subject, multi-task training, evaluation, LOSO, ablations.

Splits are drawn per (subject, task) over the shared recording pool: every
recording carries one label per task, test sets are class-balanced within
each task, and a validation set is carved from each task's training portion.
One optimization step draws ``batch`` recordings per subject per task,
forwards each subject once, and minimizes the task-mean cross-entropy plus
the weighted expert-balance loss.  The best checkpoint by validation mean
accuracy is retained (no early stopping).
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .merging import extract_params, merge, shared_param_names, trim, upcycle_init
from .metrics import MetricsReport, evaluate_predictions
from .model import Decoder, ModelConfig, build_decoder
from .pretrain import PretrainConfig, pretrain_subject
from .synth import Recording, TaskSpec
from .transformer import RouterReport


@dataclass
class TrainConfig:
    """Supervised-stage optimization settings (desk-scale defaults)."""

    lr: float = 5e-4
    betas: tuple[float, float] = (0.9, 0.95)
    weight_decay: float = 0.1
    epochs: int = 200
    batch_per_subject_task: int = 4
    aux_weight: float = 0.01
    seed: int = 0
    schedule: str = "cosine"
    test_fraction: float = 0.2
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.lr <= 0 or self.epochs < 0:
            raise ValueError("lr must be positive and epochs nonnegative")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")


class SubjectData:
    """One subject's recordings stacked into tensors."""

    def __init__(self, recordings: list[Recording], dtype: torch.dtype = torch.float32):
        if not recordings:
            raise ValueError("no recordings for subject")
        shapes = {r.samples.shape for r in recordings}
        if len(shapes) != 1:
            raise ValueError(f"recordings of one subject must share [T, C], got {shapes}")
        self.subject_id = recordings[0].subject_id
        self.region_map = recordings[0].region_map
        self.samples = torch.from_numpy(np.stack([r.samples for r in recordings])).to(dtype)
        self.labels = {
            task_id: np.array([r.labels[task_id] for r in recordings], dtype=np.int64)
            for task_id in recordings[0].labels
        }
        self.region_index = torch.from_numpy(self.region_map.channel_to_region)

    def __len__(self) -> int:
        return int(self.samples.shape[0])


def group_by_subject(recordings: list[Recording]) -> dict[int, list[Recording]]:
    grouped: dict[int, list[Recording]] = {}
    for rec in recordings:
        grouped.setdefault(rec.subject_id, []).append(rec)
    return dict(sorted(grouped.items()))


@dataclass
class SplitPlan:
    """Per (subject, task) index sets into the subject's recording list."""

    train: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    val: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    test: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)

    def subset(self, name: str) -> dict[tuple[int, int], np.ndarray]:
        return getattr(self, name)


def split_corpus(
    subjects: dict[int, SubjectData],
    tasks: list[TaskSpec],
    seed: int,
    test_fraction: float = 0.2,
    val_fraction: float = 0.2,
) -> SplitPlan:
    """Stratified class-balanced splits for every (subject, task) pair.

    The test set holds the same number of instances of every class; the
    validation set is a stratified fraction of the remaining training pool.
    """
    rng = np.random.default_rng(seed)
    plan = SplitPlan()
    for subject_id, data in subjects.items():
        for task in tasks:
            labels = data.labels[task.task_id]
            per_class = [np.nonzero(labels == k)[0] for k in range(task.num_classes)]
            counts = [idx.size for idx in per_class]
            if min(counts) < 2:
                raise ValueError(
                    f"subject {subject_id} task {task.task_id}: every class needs "
                    "at least 2 instances to split"
                )
            n_test = max(1, int(round(test_fraction * min(counts))))
            train_idx, val_idx, test_idx = [], [], []
            for idx in per_class:
                shuffled = rng.permutation(idx)
                test_idx.append(shuffled[:n_test])
                rest = shuffled[n_test:]
                n_val = max(1, int(round(val_fraction * rest.size))) if rest.size > 1 else 0
                val_idx.append(rest[:n_val])
                train_idx.append(rest[n_val:])
            key = (subject_id, task.task_id)
            plan.train[key] = np.sort(np.concatenate(train_idx))
            plan.val[key] = np.sort(np.concatenate(val_idx))
            plan.test[key] = np.sort(np.concatenate(test_idx))
            if plan.train[key].size == 0:
                raise ValueError(f"empty training split for subject {subject_id}")
    return plan


class _CyclingSampler:
    """Shuffled batches over a fixed index set, reshuffling on exhaustion."""

    def __init__(self, indices: np.ndarray, batch_size: int, rng: np.random.Generator):
        self.indices = indices
        self.batch_size = min(batch_size, indices.size)
        self.rng = rng
        self._order = rng.permutation(indices)
        self._pos = 0

    def next_batch(self) -> np.ndarray:
        if self._pos + self.batch_size > self._order.size:
            self._order = self.rng.permutation(self.indices)
            self._pos = 0
        batch = self._order[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        return batch


@dataclass
class TrainResult:
    model: Decoder
    loss_curve: list[tuple[int, float]]
    val_curve: list[tuple[int, float]]
    best_epoch: int
    best_val_accuracy: float


def train(
    model: Decoder,
    subjects: dict[int, SubjectData],
    tasks: list[TaskSpec],
    cfg: TrainConfig,
    splits: SplitPlan | None = None,
) -> TrainResult:
    """Train the decoder; deterministic given the seed and config."""
    torch.set_num_threads(1)
    torch.manual_seed(cfg.seed)
    if splits is None:
        splits = split_corpus(
            subjects, tasks, cfg.seed, cfg.test_fraction, cfg.val_fraction
        )
    rng = np.random.default_rng(cfg.seed)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay
    )
    scheduler = None
    if cfg.schedule == "cosine" and cfg.epochs > 0:
        scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=cfg.epochs)

    samplers = {
        key: _CyclingSampler(idx, cfg.batch_per_subject_task, rng)
        for key, idx in splits.train.items()
    }
    largest = max(idx.size for idx in splits.train.values())
    steps_per_epoch = int(np.ceil(largest / cfg.batch_per_subject_task))
    task_ids = [t.task_id for t in tasks]
    ce = torch.nn.CrossEntropyLoss()

    best_state = copy.deepcopy(model.state_dict())
    best_val, best_epoch = -1.0, -1
    loss_curve: list[tuple[int, float]] = []
    val_curve: list[tuple[int, float]] = []

    for epoch in range(cfg.epochs):
        model.train()
        epoch_losses = []
        for _ in range(steps_per_epoch):
            optimizer.zero_grad()
            task_logits: dict[int, list[torch.Tensor]] = {t: [] for t in task_ids}
            task_labels: dict[int, list[np.ndarray]] = {t: [] for t in task_ids}
            aux_terms = []
            for subject_id, data in subjects.items():
                picks = {
                    t: samplers[(subject_id, t)].next_batch() for t in task_ids
                }
                stacked = np.concatenate([picks[t] for t in task_ids])
                out = model(data.samples[stacked], data.region_index)
                aux_terms.append(out.aux_loss)
                offset = 0
                for t in task_ids:
                    n = picks[t].size
                    task_logits[t].append(out.logits[t][offset : offset + n])
                    task_labels[t].append(data.labels[t][picks[t]])
                    offset += n
            ce_terms = []
            for t in task_ids:
                logits = torch.cat(task_logits[t])
                labels = torch.from_numpy(np.concatenate(task_labels[t]))
                ce_terms.append(ce(logits, labels))
            loss = torch.stack(ce_terms).mean() + cfg.aux_weight * torch.stack(aux_terms).mean()
            if not torch.isfinite(loss):
                raise FloatingPointError(
                    f"loss diverged to {float(loss.detach())} at epoch {epoch}"
                )
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss.detach()))
        if scheduler is not None:
            scheduler.step()
        loss_curve.append((epoch, float(np.mean(epoch_losses))))

        report, _ = evaluate(model, subjects, tasks, splits, subset="val")
        val_acc = report.mean_accuracy()
        val_curve.append((epoch, val_acc))
        if val_acc > best_val:
            best_val, best_epoch = val_acc, epoch
            best_state = copy.deepcopy(model.state_dict())

    if cfg.epochs > 0:
        model.load_state_dict(best_state)
    return TrainResult(
        model=model,
        loss_curve=loss_curve,
        val_curve=val_curve,
        best_epoch=best_epoch,
        best_val_accuracy=best_val,
    )


@torch.no_grad()
def evaluate(
    model: Decoder,
    subjects: dict[int, SubjectData],
    tasks: list[TaskSpec],
    splits: SplitPlan | None = None,
    subset: str = "test",
    batch_size: int = 64,
) -> tuple[MetricsReport, RouterReport]:
    """Metrics over one split, plus aggregated routing statistics.

    With ``splits=None`` the whole corpus is evaluated (the zero-shot path).
    """
    model.eval()
    region_names = next(iter(subjects.values())).region_map.region_names
    router_report = RouterReport.empty(
        len(model.blocks), region_names, model.config.n_experts if model.moe else 1
    )
    report = MetricsReport()
    for task in tasks:
        y_true, y_pred = [], []
        for subject_id, data in subjects.items():
            if splits is None:
                indices = np.arange(len(data))
            else:
                indices = splits.subset(subset).get((subject_id, task.task_id))
                if indices is None:
                    continue
            for start in range(0, indices.size, batch_size):
                chunk = indices[start : start + batch_size]
                out = model(data.samples[chunk], data.region_index)
                router_report.add(out.decisions)
                y_pred.append(out.logits[task.task_id].argmax(dim=-1).numpy())
                y_true.append(data.labels[task.task_id][chunk])
        if not y_true:
            raise ValueError(f"empty {subset!r} split for task {task.task_id}")
        report.per_task[task.task_id] = evaluate_predictions(
            np.concatenate(y_true),
            np.concatenate(y_pred),
            task.num_classes,
            task_id=task.task_id,
        )
    return report, router_report


# ---------------------------------------------------------------------------
# Variants, pretraining-backed initialization, LOSO, ablations.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Variant:
    """One ablation configuration of the architecture/initialization."""

    name: str
    moe: bool
    task_cls: bool
    rmae_init: bool
    n_experts: int | None = None
    hidden: int | None = None
    blocks: int | None = None

    def resolve(self, config: ModelConfig) -> ModelConfig:
        cfg = copy.deepcopy(config)
        if self.n_experts is not None:
            cfg = replace(cfg, n_experts=self.n_experts)
        if self.hidden is not None or self.blocks is not None:
            raise NotImplementedError(
                "size-grid variants must supply a full tokenizer config; "
                "override ModelConfig directly instead"
            )
        return cfg


VARIANTS = {
    "tokenizer-only": Variant("tokenizer-only", moe=False, task_cls=False, rmae_init=False),
    "+BrMoE": Variant("+BrMoE", moe=True, task_cls=False, rmae_init=False),
    "+TIA": Variant("+TIA", moe=True, task_cls=True, rmae_init=False),
    "+RMAE": Variant("+RMAE", moe=True, task_cls=True, rmae_init=True),
}


def get_variant(name: str, n_experts: int | None = None) -> Variant:
    if name not in VARIANTS:
        raise KeyError(
            f"unknown variant {name!r}; known: {sorted(VARIANTS)}"
        )
    base = VARIANTS[name]
    if n_experts is not None:
        base = replace(base, n_experts=n_experts, name=f"{name}[experts={n_experts}]")
    return base


def rmae_merged_init(
    subjects: dict[int, SubjectData],
    recordings_by_subject: dict[int, list[Recording]],
    model_cfg: ModelConfig,
    pretrain_cfg: PretrainConfig,
    task_classes: dict[int, int],
    trim_fraction: float = 0.5,
    trim_scope: str = "global",
    merge_region_emb: bool = True,
    seed: int = 0,
    moe: bool = True,
    task_cls: bool = True,
) -> tuple[Decoder, list[list[float]]]:
    """Pretrain per subject, merge the shared backbone, and upcycle.

    Returns the initialized decoder and the per-subject pretraining curves.
    """
    num_regions = next(iter(subjects.values())).region_map.num_regions
    param_sets, curves = [], []
    for offset, subject_id in enumerate(sorted(subjects)):
        sub_cfg = replace(pretrain_cfg, seed=pretrain_cfg.seed + offset)
        dense, curve = pretrain_subject(
            recordings_by_subject[subject_id], model_cfg, sub_cfg
        )
        names = shared_param_names(dense, merge_region_emb=merge_region_emb)
        param_sets.append(trim(extract_params(dense, names), trim_fraction, trim_scope))
        curves.append(curve)
    merged = merge(param_sets)
    model = upcycle_init(
        merged,
        model_cfg,
        num_regions=num_regions,
        task_classes=task_classes,
        seed=seed,
        moe=moe,
        task_cls=task_cls,
    )
    return model, curves


@dataclass
class VariantResult:
    variant: str
    seed: int
    report: MetricsReport
    router: RouterReport
    result: TrainResult


def run_variant(
    recordings: list[Recording],
    tasks: list[TaskSpec],
    variant: Variant,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    pretrain_cfg: PretrainConfig | None = None,
    seed: int | None = None,
) -> VariantResult:
    """Train and evaluate one variant under one seed."""
    seed = train_cfg.seed if seed is None else seed
    cfg = replace(train_cfg, seed=seed)
    arch = variant.resolve(model_cfg)
    by_subject = group_by_subject(recordings)
    subjects = {sid: SubjectData(recs) for sid, recs in by_subject.items()}
    task_classes = {t.task_id: t.num_classes for t in tasks}
    num_regions = next(iter(subjects.values())).region_map.num_regions

    if variant.rmae_init:
        if pretrain_cfg is None:
            raise ValueError("variant needs pretraining but no PretrainConfig given")
        model, _ = rmae_merged_init(
            subjects,
            by_subject,
            arch,
            replace(pretrain_cfg, seed=seed),
            task_classes,
            seed=seed,
            moe=variant.moe,
            task_cls=variant.task_cls,
        )
    else:
        model = build_decoder(
            arch,
            num_regions=num_regions,
            task_classes=task_classes,
            moe=variant.moe,
            task_cls=variant.task_cls,
            seed=seed,
        )

    splits = split_corpus(subjects, tasks, cfg.seed, cfg.test_fraction, cfg.val_fraction)
    result = train(model, subjects, tasks, cfg, splits)
    report, router = evaluate(result.model, subjects, tasks, splits, subset="test")
    return VariantResult(
        variant=variant.name, seed=seed, report=report, router=router, result=result
    )


def loso_run(
    recordings: list[Recording],
    tasks: list[TaskSpec],
    held_out: int,
    variant: Variant,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    pretrain_cfg: PretrainConfig | None = None,
    seed: int | None = None,
    train_subjects: list[int] | None = None,
) -> tuple[MetricsReport, MetricsReport]:
    """Leave-one-subject-out: train without the held-out subject and score
    them zero-shot on all of their recordings.

    Returns (held-out report, training-subjects test report).
    """
    by_subject = group_by_subject(recordings)
    if held_out not in by_subject:
        raise ValueError(f"held-out subject {held_out} not present in the corpus")
    if train_subjects is None:
        train_subjects = [s for s in by_subject if s != held_out]
    if held_out in train_subjects:
        raise ValueError(f"held-out subject {held_out} appears in the training set")
    if not train_subjects:
        raise ValueError("no training subjects left")

    held_map = by_subject[held_out][0].region_map
    train_map = by_subject[train_subjects[0]][0].region_map
    if held_map.region_names != train_map.region_names:
        raise ValueError(
            "held-out subject's regions are not covered by the shared vocabulary"
        )

    train_recs = [r for s in train_subjects for r in by_subject[s]]
    fit = run_variant(
        train_recs, tasks, variant, model_cfg, train_cfg, pretrain_cfg, seed=seed
    )
    held_subjects = {held_out: SubjectData(by_subject[held_out])}
    held_report, _ = evaluate(fit.result.model, held_subjects, tasks, splits=None)
    return held_report, fit.report


def ablate(
    recordings: list[Recording],
    tasks: list[TaskSpec],
    variants: list[Variant],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    pretrain_cfg: PretrainConfig | None = None,
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4),
) -> list[dict]:
    """Run every variant under every seed; one record per {variant, seed, task}."""
    records = []
    for variant in variants:
        for seed in seeds:
            fit = run_variant(
                recordings, tasks, variant, model_cfg, train_cfg, pretrain_cfg, seed=seed
            )
            for rec in fit.report.to_records(variant=variant.name, seed=seed):
                rec["utilization_variance"] = fit.router.utilization_variance()
                records.append(rec)
    return records


def write_records(records: list[dict], path: str) -> None:
    """Line-delimited JSON, one record per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def write_curve(curve: list[tuple[int, float]], path: str) -> None:
    """Two-column text: epoch <tab> value."""
    with open(path, "w", encoding="utf-8") as fh:
        for step, value in curve:
            fh.write(f"{step}\t{value:.10g}\n")


def median_accuracy(records: list[dict], variant: str) -> float:
    """Median over seeds of the task-mean accuracy for one variant."""
    by_seed: dict[int, list[float]] = {}
    for rec in records:
        if rec["variant"] == variant:
            by_seed.setdefault(rec["seed"], []).append(rec["accuracy"])
    if not by_seed:
        raise KeyError(f"no records for variant {variant!r}")
    return float(np.median([np.mean(v) for v in by_seed.values()]))
