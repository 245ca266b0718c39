"""Focused diagnostic: dense vs MoE and expert counts under capacity scarcity."""

import sys
import time

import numpy as np
import torch

torch.set_num_threads(1)

from brainmoe.model import ModelConfig
from brainmoe.preprocess import preprocess
from brainmoe.synth import default_synth_config, generate_corpus
from brainmoe.tokenizer import TokenizerConfig
from brainmoe.training import TrainConfig, get_variant, run_variant

mlp = int(sys.argv[1])
noise = float(sys.argv[2])
epochs = int(sys.argv[3])
seeds = [0, 1]

scfg = default_synth_config(seed=7)
scfg.noise_std = noise
proc = [preprocess(r) for r in generate_corpus(scfg)]
tasks = scfg.task_specs()
tok = TokenizerConfig(filters=(8, 16, 16, 32, 32), kernels=(15, 7, 5, 3, 3), strides=(7, 4, 3, 2, 2))
mc = ModelConfig(hidden=32, blocks=2, heads=4, mlp_hidden=mlp, n_experts=8, top_k=2, cls_width=4, tokenizer=tok)
tc = TrainConfig(epochs=epochs, seed=0)

jobs = [
    ("tokenizer-only", get_variant("tokenizer-only")),
    ("+BrMoE", get_variant("+BrMoE")),
    ("tia-e4", get_variant("+TIA", n_experts=4)),
    ("tia-e21", get_variant("+TIA", n_experts=21)),
]
for label, variant in jobs:
    means = []
    for seed in seeds:
        t0 = time.time()
        fit = run_variant(proc, tasks, variant, mc, tc, None, seed=seed)
        accs = [m.accuracy for _, m in sorted(fit.report.per_task.items())]
        means.append(float(np.mean(accs)))
        print(
            f"mlp{mlp} {label:14s} seed {seed} mean {means[-1]:.3f} "
            f"tasks {[f'{a:.3f}' for a in accs]} {time.time()-t0:.0f}s",
            flush=True,
        )
    print(f"== mlp{mlp} {label}: median {np.median(means):.4f}", flush=True)
