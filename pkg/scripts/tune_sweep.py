"""Tuning sweep: component ordering, expert-count trend, aux-weight effect."""

import sys
import time

import numpy as np
import torch

torch.set_num_threads(1)

from dataclasses import replace

from brainmoe.model import ModelConfig
from brainmoe.pretrain import PretrainConfig
from brainmoe.preprocess import preprocess
from brainmoe.synth import default_synth_config, generate_corpus
from brainmoe.tokenizer import TokenizerConfig
from brainmoe.training import TrainConfig, get_variant, run_variant

mlp = int(sys.argv[1]) if len(sys.argv) > 1 else 32
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 40
pre_epochs = int(sys.argv[3]) if len(sys.argv) > 3 else 25
pre_lr = float(sys.argv[4]) if len(sys.argv) > 4 else 5e-5
noise = float(sys.argv[5]) if len(sys.argv) > 5 else 2.0
seeds = [0, 1, 2]

scfg = default_synth_config(seed=7)
scfg.noise_std = noise
raw = generate_corpus(scfg)
proc = [preprocess(r) for r in raw]
tasks = scfg.task_specs()

tok = TokenizerConfig(filters=(8, 16, 16, 32, 32), kernels=(15, 7, 5, 3, 3), strides=(7, 4, 3, 2, 2))
mc = ModelConfig(hidden=32, blocks=2, heads=4, mlp_hidden=mlp, n_experts=8, top_k=2, cls_width=4, tokenizer=tok)
tc = TrainConfig(epochs=epochs, seed=0)
pc = PretrainConfig(epochs=pre_epochs, batch_size=16, lr=pre_lr, seed=0)

jobs = [
    ("tokenizer-only", get_variant("tokenizer-only"), tc),
    ("+BrMoE", get_variant("+BrMoE"), tc),
    ("+TIA", get_variant("+TIA"), tc),
    ("+RMAE", get_variant("+RMAE"), tc),
    ("experts4", get_variant("+TIA", n_experts=4), tc),
    ("experts21", get_variant("+TIA", n_experts=21), tc),
    ("aux0", get_variant("+TIA"), replace(tc, aux_weight=0.0)),
]

for label, variant, cfg in jobs:
    means, utils = [], []
    for seed in seeds:
        t0 = time.time()
        fit = run_variant(proc, tasks, variant, mc, cfg, pc, seed=seed)
        accs = [m.accuracy for _, m in sorted(fit.report.per_task.items())]
        means.append(float(np.mean(accs)))
        utils.append(fit.router.utilization_variance())
        print(
            f"{label:15s} seed {seed} mean {means[-1]:.3f} "
            f"tasks {[f'{a:.3f}' for a in accs]} utilvar {utils[-1]:.5f} {time.time()-t0:.0f}s",
            flush=True,
        )
    print(
        f"== {label}: median acc {np.median(means):.4f} median utilvar {np.median(utils):.6f}",
        flush=True,
    )
