"""Tuning driver: 5-seed component ablation on the desk corpus."""

import sys
import time

import numpy as np
import torch

torch.set_num_threads(1)

from brainmoe.model import ModelConfig
from brainmoe.pretrain import PretrainConfig
from brainmoe.preprocess import preprocess
from brainmoe.synth import default_synth_config, generate_corpus
from brainmoe.tokenizer import TokenizerConfig
from brainmoe.training import TrainConfig, get_variant, run_variant

noise = float(sys.argv[1]) if len(sys.argv) > 1 else 2.0
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 30
seeds = list(range(5))

scfg = default_synth_config(seed=7)
scfg.noise_std = noise
raw = generate_corpus(scfg)
proc = [preprocess(r) for r in raw]
tasks = scfg.task_specs()

tok = TokenizerConfig(filters=(8, 16, 16, 32, 32), kernels=(15, 7, 5, 3, 3), strides=(7, 4, 3, 2, 2))
mc = ModelConfig(hidden=32, blocks=2, heads=4, mlp_hidden=64, n_experts=8, top_k=2, cls_width=4, tokenizer=tok)
tc = TrainConfig(epochs=epochs, seed=0)
pc = PretrainConfig(epochs=10, batch_size=16, seed=0)

results = {}
for name in ["tokenizer-only", "+BrMoE", "+TIA", "+RMAE"]:
    means = []
    for seed in seeds:
        t0 = time.time()
        fit = run_variant(proc, tasks, get_variant(name), mc, tc, pc, seed=seed)
        accs = {tid: m.accuracy for tid, m in sorted(fit.report.per_task.items())}
        mean = float(np.mean(list(accs.values())))
        means.append(mean)
        print(
            f"{name:15s} seed {seed} mean {mean:.3f} "
            f"tasks {[f'{v:.3f}' for _, v in sorted(accs.items())]} "
            f"utilvar {fit.router.utilization_variance():.5f} {time.time()-t0:.0f}s",
            flush=True,
        )
    results[name] = means
    print(f"== {name}: median {np.median(means):.4f} means {[f'{m:.3f}' for m in means]}", flush=True)

print("\nmedians:", {k: float(np.median(v)) for k, v in results.items()})
