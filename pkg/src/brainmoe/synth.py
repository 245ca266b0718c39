"""Synthetic multi-subject, multi-task corpora with planted class structure.

Each recording carries one class label per task.  A label (task j, class c)
is planted as a band-limited oscillation with a class-specific carrier
frequency and amplitude envelope, injected only into channels belonging to
that task's relevant brain regions.  Subjects differ by per-channel mixing
gains and by their channel-to-region maps, so inter-subject heterogeneity
exists by construction.  White noise is the only artifact model.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class RegionMap:
    """Channel-to-region assignment over a fixed region vocabulary."""

    channel_to_region: np.ndarray
    region_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "channel_to_region", np.asarray(self.channel_to_region, dtype=np.int64)
        )
        object.__setattr__(self, "region_names", tuple(self.region_names))
        if len(self.region_names) < 1:
            raise ValueError("need at least one region")
        if self.channel_to_region.ndim != 1 or self.channel_to_region.size == 0:
            raise ValueError("channel_to_region must be a nonempty 1-D array")
        if np.any(self.channel_to_region < 0) or np.any(
            self.channel_to_region >= len(self.region_names)
        ):
            raise ValueError("region indices must lie in [0, num_regions)")

    @property
    def num_channels(self) -> int:
        return int(self.channel_to_region.size)

    @property
    def num_regions(self) -> int:
        return len(self.region_names)

    def channels_of_region(self, region: int) -> np.ndarray:
        return np.nonzero(self.channel_to_region == region)[0]


@dataclass(frozen=True)
class TaskSpec:
    """One decoding task: a class count and the brain regions it recruits."""

    task_id: int
    name: str
    num_classes: int
    relevant_regions: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "relevant_regions", tuple(self.relevant_regions))
        if self.num_classes < 2:
            raise ValueError(f"task {self.name}: num_classes must be >= 2")
        if len(self.relevant_regions) == 0:
            raise ValueError(f"task {self.name}: relevant_regions must be nonempty")


@dataclass
class Recording:
    """Multi-channel time series with region labels and per-task classes."""

    subject_id: int
    samples: np.ndarray  # [T, C]
    sample_rate: float
    region_map: RegionMap
    labels: dict[int, int]  # task_id -> class index

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[0] < 1 or self.samples.shape[1] < 1:
            raise ValueError("samples must be a [T, C] array with T > 0, C > 0")
        if self.samples.shape[1] != self.region_map.num_channels:
            raise ValueError("channel count does not match region map")

    @property
    def num_samples(self) -> int:
        return int(self.samples.shape[0])

    @property
    def num_channels(self) -> int:
        return int(self.samples.shape[1])


@dataclass
class TaskSynthSpec:
    """Generation recipe for one task."""

    task_id: int
    name: str
    num_classes: int
    relevant_regions: tuple[int, ...]
    samples_per_class: int = 4
    carrier_lo_hz: float = 4.0
    carrier_spacing_hz: float = 4.0
    carrier_amp: float = 1.0

    def to_task_spec(self) -> TaskSpec:
        return TaskSpec(
            task_id=self.task_id,
            name=self.name,
            num_classes=self.num_classes,
            relevant_regions=self.relevant_regions,
        )

    def carrier_hz(self, class_index: int) -> float:
        return self.carrier_lo_hz + class_index * self.carrier_spacing_hz


def _default_tasks() -> list["TaskSynthSpec"]:
    """Desk-scale default: three tasks with 23/11/4 classes in disjoint regions."""
    return [
        TaskSynthSpec(
            task_id=0,
            name="syllable_onset",
            num_classes=23,
            relevant_regions=(0, 1),
            samples_per_class=6,
        ),
        TaskSynthSpec(
            task_id=1,
            name="vowel_group",
            num_classes=11,
            relevant_regions=(2, 3),
            samples_per_class=12,
        ),
        TaskSynthSpec(
            task_id=2,
            name="pitch_contour",
            num_classes=4,
            relevant_regions=(4,),
            samples_per_class=34,
        ),
    ]


@dataclass
class SynthConfig:
    """Corpus-level generation settings.

    ``channels`` is one count per subject (an int replicates across all
    subjects); each subject gets a seeded channel-to-region map covering
    every region.  ``min_output_length`` guards the downstream tokenizer's
    minimum input: generation fails fast if the post-resample length would
    fall below it.
    """

    subjects: int = 3
    channels: int | tuple[int, ...] = 8
    num_regions: int = 6
    region_names: tuple[str, ...] | None = None
    tasks: list[TaskSynthSpec] = field(default_factory=_default_tasks)
    num_samples: int = 2048  # T at the native rate
    sample_rate: float = 1024.0
    noise_std: float = 1.0
    gain_range: tuple[float, float] = (0.5, 1.5)
    envelope_depth: float = 0.5
    seed: int = 0
    target_rate: float = 512.0
    min_output_length: int = 673

    def __post_init__(self):
        if self.subjects < 1:
            raise ValueError("need at least one subject")
        if isinstance(self.channels, int):
            self.channels = (self.channels,) * self.subjects
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.channels) != self.subjects:
            raise ValueError("channels must list one count per subject")
        if not self.tasks:
            raise ValueError("need at least one task")
        self.tasks = [
            TaskSynthSpec(**t) if isinstance(t, dict) else t for t in self.tasks
        ]
        if self.region_names is None:
            self.region_names = tuple(f"region_{r}" for r in range(self.num_regions))
        self.region_names = tuple(self.region_names)
        if len(self.region_names) != self.num_regions:
            raise ValueError("region_names must match num_regions")
        for task in self.tasks:
            if len(task.relevant_regions) == 0:
                raise ValueError(f"task {task.name}: relevant_regions must be nonempty")
            if any(r < 0 or r >= self.num_regions for r in task.relevant_regions):
                raise ValueError(f"task {task.name}: region index out of range")
            top = task.carrier_hz(task.num_classes - 1)
            if top >= min(100.0, self.sample_rate / 2, self.target_rate / 2):
                raise ValueError(
                    f"task {task.name}: carrier grid tops out at {top:.1f} Hz, "
                    "outside the separable band"
                )
        out_len = int(self.num_samples * self.target_rate / self.sample_rate)
        if out_len < self.min_output_length:
            raise ValueError(
                f"num_samples={self.num_samples} yields {out_len} samples after "
                f"resampling, below the tokenizer minimum {self.min_output_length}"
            )

    def task_specs(self) -> list[TaskSpec]:
        return [t.to_task_spec() for t in self.tasks]


def _default_region_map(cfg: SynthConfig, rng: np.random.Generator, channels: int) -> RegionMap:
    # First R channels cover every region once; extras get random regions.
    if channels < cfg.num_regions:
        raise ValueError("each subject needs at least one channel per region")
    assignment = np.concatenate(
        [
            np.arange(cfg.num_regions),
            rng.integers(0, cfg.num_regions, size=channels - cfg.num_regions),
        ]
    )
    return RegionMap(channel_to_region=assignment, region_names=cfg.region_names)


def _balanced_labels(n: int, num_classes: int, rng: np.random.Generator) -> np.ndarray:
    reps = int(np.ceil(n / num_classes))
    labels = np.tile(np.arange(num_classes), reps)[:n]
    rng.shuffle(labels)
    return labels


def _planted_component(
    task: TaskSynthSpec,
    class_index: int,
    region_slot: int,
    t: np.ndarray,
    envelope_depth: float,
) -> np.ndarray:
    # Deterministic per (task, class, region): carrier + slow class-keyed
    # envelope.  Each relevant region uses a rotated class-to-carrier
    # mapping, so the same class occupies different carriers in different
    # regions: decoding requires region-conditional processing, mirroring
    # how distinct brain regions encode the same behavior differently.
    rotation = (region_slot * task.num_classes) // max(1, len(task.relevant_regions))
    effective = (class_index + rotation) % task.num_classes
    freq = task.carrier_hz(effective)
    phase = 2.0 * np.pi * effective / task.num_classes
    env_freq = 0.5 + 0.5 * (class_index % 4)
    envelope = 1.0 + envelope_depth * np.sin(2.0 * np.pi * env_freq * t)
    return task.carrier_amp * envelope * np.sin(2.0 * np.pi * freq * t + phase)


def generate_corpus(config: SynthConfig) -> list[Recording]:
    """Generate raw (not yet preprocessed) recordings for all subjects.

    Deterministic given ``config.seed``: every recording draws its noise from
    an independent child stream of the master seed, so corpora are bit-stable
    regardless of generation order.
    """
    master = np.random.SeedSequence(config.seed)
    subject_seeds = master.spawn(config.subjects)
    recordings: list[Recording] = []
    t = np.arange(config.num_samples, dtype=np.float64) / config.sample_rate
    n_recordings = max(task.num_classes * task.samples_per_class for task in config.tasks)

    for subject in range(config.subjects):
        children = subject_seeds[subject].spawn(n_recordings + 1)
        subject_rng = np.random.default_rng(children[0])
        noise_seeds = children[1:]
        channels = config.channels[subject]
        region_map = _default_region_map(config, subject_rng, channels)
        gains = subject_rng.uniform(*config.gain_range, size=channels)

        label_table = {
            task.task_id: _balanced_labels(n_recordings, task.num_classes, subject_rng)
            for task in config.tasks
        }

        for i in range(n_recordings):
            signal = np.zeros((config.num_samples, channels), dtype=np.float64)
            labels: dict[int, int] = {}
            for task in config.tasks:
                class_index = int(label_table[task.task_id][i])
                labels[task.task_id] = class_index
                for slot, region in enumerate(task.relevant_regions):
                    component = _planted_component(
                        task, class_index, slot, t, config.envelope_depth
                    )
                    for ch in region_map.channels_of_region(region):
                        signal[:, ch] += gains[ch] * component
            if config.noise_std > 0:
                noise_rng = np.random.default_rng(noise_seeds[i])
                signal += config.noise_std * noise_rng.standard_normal(signal.shape)
            recordings.append(
                Recording(
                    subject_id=subject,
                    samples=signal,
                    sample_rate=config.sample_rate,
                    region_map=region_map,
                    labels=labels,
                )
            )
    return recordings


def default_synth_config(seed: int = 0) -> SynthConfig:
    """Desk-scale default: 3 subjects, 3 tasks with 23/11/4 classes."""
    return SynthConfig(seed=seed)


# ---------------------------------------------------------------------------
# Corpus serialization: one directory per subject, a JSON manifest plus raw
# little-endian float32 sample arrays (row-major [T, C]).
# ---------------------------------------------------------------------------


def _atomic_write(path: str, data: bytes) -> None:
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp_")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_corpus(recordings: list[Recording], tasks: list[TaskSpec], out_dir: str) -> None:
    """Serialize a corpus to ``out_dir`` (created if needed)."""
    os.makedirs(out_dir, exist_ok=True)
    tasks_doc = {
        "tasks": [
            {
                "task_id": t.task_id,
                "name": t.name,
                "num_classes": t.num_classes,
                "relevant_regions": list(t.relevant_regions),
            }
            for t in tasks
        ]
    }
    _atomic_write(
        os.path.join(out_dir, "tasks.json"),
        (json.dumps(tasks_doc, indent=2, sort_keys=True) + "\n").encode(),
    )

    by_subject: dict[int, list[Recording]] = {}
    for rec in recordings:
        by_subject.setdefault(rec.subject_id, []).append(rec)

    for subject_id, recs in sorted(by_subject.items()):
        subject_dir = os.path.join(out_dir, f"subject_{subject_id:03d}")
        os.makedirs(subject_dir, exist_ok=True)
        manifest = {
            "subject_id": subject_id,
            "sample_rate": recs[0].sample_rate,
            "region_map": {
                "channel_to_region": recs[0].region_map.channel_to_region.tolist(),
                "region_names": list(recs[0].region_map.region_names),
            },
            "recordings": [],
        }
        for i, rec in enumerate(recs):
            fname = f"rec_{i:05d}.f32"
            payload = rec.samples.astype("<f4").tobytes(order="C")
            _atomic_write(os.path.join(subject_dir, fname), payload)
            manifest["recordings"].append(
                {
                    "file": fname,
                    "num_samples": rec.num_samples,
                    "num_channels": rec.num_channels,
                    "labels": {str(k): int(v) for k, v in sorted(rec.labels.items())},
                }
            )
        _atomic_write(
            os.path.join(subject_dir, "manifest.json"),
            (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode(),
        )


def load_corpus(corpus_dir: str) -> tuple[list[Recording], list[TaskSpec]]:
    """Load a corpus serialized by :func:`save_corpus`."""
    tasks_path = os.path.join(corpus_dir, "tasks.json")
    if not os.path.exists(tasks_path):
        raise FileNotFoundError(f"no tasks.json under {corpus_dir}")
    with open(tasks_path, encoding="utf-8") as fh:
        tasks_doc = json.load(fh)
    tasks = [
        TaskSpec(
            task_id=t["task_id"],
            name=t["name"],
            num_classes=t["num_classes"],
            relevant_regions=tuple(t["relevant_regions"]),
        )
        for t in tasks_doc["tasks"]
    ]

    recordings: list[Recording] = []
    subject_dirs = sorted(
        d for d in os.listdir(corpus_dir) if d.startswith("subject_")
    )
    for subject_dir in subject_dirs:
        with open(os.path.join(corpus_dir, subject_dir, "manifest.json"), encoding="utf-8") as fh:
            manifest = json.load(fh)
        region_map = RegionMap(
            channel_to_region=np.asarray(manifest["region_map"]["channel_to_region"]),
            region_names=tuple(manifest["region_map"]["region_names"]),
        )
        for entry in manifest["recordings"]:
            raw = np.fromfile(
                os.path.join(corpus_dir, subject_dir, entry["file"]), dtype="<f4"
            )
            expected = entry["num_samples"] * entry["num_channels"]
            if raw.size != expected:
                raise ValueError(
                    f"{entry['file']}: expected {expected} float32 values, got {raw.size}"
                )
            samples = raw.reshape(entry["num_samples"], entry["num_channels"]).astype(np.float64)
            recordings.append(
                Recording(
                    subject_id=manifest["subject_id"],
                    samples=samples,
                    sample_rate=manifest["sample_rate"],
                    region_map=region_map,
                    labels={int(k): int(v) for k, v in entry["labels"].items()},
                )
            )
    return recordings, tasks
