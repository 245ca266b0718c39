"""Tokenize a recording and watch the channel-wise expert router at work.

The tokenizer convolves each channel through a strided conv cascade and adds
temporal + regional embeddings.  Inside each transformer block, a router
sums every channel's normalized hidden states over time, softmaxes a linear
projection over experts, and keeps the top-k: all temporal tokens of one
channel go to the same experts.
"""

import numpy as np
import torch

torch.manual_seed(0)

from brainmoe import (
    ModelConfig,
    SynthConfig,
    TaskSynthSpec,
    TokenizerConfig,
    build_decoder,
    generate_corpus,
    preprocess,
)

config = SynthConfig(
    subjects=1,
    channels=8,
    num_regions=4,
    tasks=[
        TaskSynthSpec(task_id=0, name="quad", num_classes=4,
                      relevant_regions=(0, 1), samples_per_class=3)
    ],
    seed=1,
)
recordings = [preprocess(r) for r in generate_corpus(config)]
rec = recordings[0]

arch = ModelConfig(
    hidden=32,
    blocks=2,
    heads=4,
    mlp_hidden=64,
    n_experts=6,
    top_k=2,
    cls_width=4,
    tokenizer=TokenizerConfig(
        filters=(8, 16, 16, 32, 32), kernels=(15, 7, 5, 3, 3), strides=(7, 4, 3, 2, 2)
    ),
)
model = build_decoder(arch, num_regions=4, task_classes={0: 4}, seed=0)

x = torch.from_numpy(rec.samples).float().unsqueeze(0)
regions = torch.from_numpy(rec.region_map.channel_to_region)

grid = model.tokenizer(x, regions)
print(f"token grid: {tuple(grid.shape)}  (batch, patches, channels, width)")

out = model(x, regions)
print(f"task logits: {tuple(out.logits[0].shape)}, balance loss {float(out.aux_loss.detach()):.3f}")

print("\nlayer-0 routing (channel -> experts, gate weights):")
gates = out.decisions[0].gates[0]  # [C, N_x]
for c in range(gates.shape[0]):
    chosen = np.nonzero(gates[c] > 0)[0]
    weights = ", ".join(f"e{e}:{gates[c, e]:.2f}" for e in chosen)
    print(f"  channel {c} (region {int(regions[c])}): {weights}")

print("\nlayer-0 dispatch counts (rows = regions):")
print(out.decisions[0].dispatch_counts)
