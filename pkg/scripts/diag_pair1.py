"""Pair-1 diagnostic: dense vs MoE as per-class data grows."""

import sys
import time

import numpy as np
import torch

torch.set_num_threads(1)

from brainmoe.model import ModelConfig
from brainmoe.preprocess import preprocess
from brainmoe.synth import SynthConfig, TaskSynthSpec, generate_corpus
from brainmoe.tokenizer import TokenizerConfig
from brainmoe.training import TrainConfig, get_variant, run_variant

spc0 = int(sys.argv[1])   # samples per class, 23-class task
epochs = int(sys.argv[2])
noise = float(sys.argv[3])
seeds = [0, 1, 2]

scfg = SynthConfig(
    subjects=3,
    channels=8,
    num_regions=6,
    tasks=[
        TaskSynthSpec(task_id=0, name="syllable_onset", num_classes=23,
                      relevant_regions=(0, 1), samples_per_class=spc0),
        TaskSynthSpec(task_id=1, name="vowel_group", num_classes=11,
                      relevant_regions=(2, 3), samples_per_class=2 * spc0),
        TaskSynthSpec(task_id=2, name="pitch_contour", num_classes=4,
                      relevant_regions=(4,), samples_per_class=5 * spc0),
    ],
    noise_std=noise,
    seed=7,
)
proc = [preprocess(r) for r in generate_corpus(scfg)]
tasks = scfg.task_specs()
tok = TokenizerConfig(filters=(8, 16, 16, 32, 32), kernels=(15, 7, 5, 3, 3), strides=(7, 4, 3, 2, 2))
mc = ModelConfig(hidden=32, blocks=2, heads=4, mlp_hidden=16, n_experts=6,
                 top_k=2, cls_width=4, tokenizer=tok)
tc = TrainConfig(epochs=epochs, seed=0)

for label, variant in [("tokenizer-only", get_variant("tokenizer-only")),
                       ("+BrMoE", get_variant("+BrMoE"))]:
    means = []
    for seed in seeds:
        t0 = time.time()
        fit = run_variant(proc, tasks, variant, mc, tc, None, seed=seed)
        accs = [m.accuracy for _, m in sorted(fit.report.per_task.items())]
        means.append(float(np.mean(accs)))
        print(
            f"spc{spc0} ep{epochs} {label:15s} seed {seed} mean {means[-1]:.3f} "
            f"tasks {[f'{a:.3f}' for a in accs]} {time.time()-t0:.0f}s",
            flush=True,
        )
    print(f"== spc{spc0} ep{epochs} {label}: median {np.median(means):.4f}", flush=True)
