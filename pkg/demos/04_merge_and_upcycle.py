"""Merge subject-specific pretrained backbones into one initialization.

Per parameter: prune the globally lowest-magnitude half, elect a consensus
sign from the sum across subjects, and average only the values that agree
with it.  The merged backbone (tokenizer convs, embeddings, attention,
norms) seeds the expert-mixture decoder; experts, router, CLS bank, and
heads stay freshly initialized.
"""

import numpy as np
import torch

torch.set_num_threads(1)

from brainmoe import (
    ModelConfig,
    PretrainConfig,
    SynthConfig,
    TaskSynthSpec,
    TokenizerConfig,
    generate_corpus,
    merge,
    preprocess,
    pretrain_subject,
    shared_param_names,
    trim,
    upcycle_init,
)
from brainmoe.merging import extract_params
from brainmoe.training import group_by_subject

# The scalar mechanics first.
sets = [{"p": np.array([0.5, 0.3, -0.8])},
        {"p": np.array([0.4, -0.3, -0.1])},
        {"p": np.array([-0.3, 0.0, 0.2])}]
print("values per subject:", [s["p"].tolist() for s in sets])
print("merged:", merge(sets)["p"].tolist())
print("  (sign election keeps {0.5, 0.4}, {0.3}, {-0.8, -0.1})")

print("\ntrim 50% of [3, -1, 0.5, -2]:", trim({"w": np.array([3.0, -1.0, 0.5, -2.0])}, 0.5)["w"].tolist())

# Now the full pipeline on two subjects.
config = SynthConfig(
    subjects=2,
    channels=8,
    num_regions=4,
    tasks=[
        TaskSynthSpec(task_id=0, name="quad", num_classes=4,
                      relevant_regions=(0, 1), samples_per_class=6)
    ],
    noise_std=0.5,
    seed=5,
)
recordings = [preprocess(r) for r in generate_corpus(config)]
by_subject = group_by_subject(recordings)

arch = ModelConfig(
    hidden=32, blocks=2, heads=4, mlp_hidden=64, n_experts=4, top_k=2, cls_width=4,
    tokenizer=TokenizerConfig(
        filters=(8, 16, 16, 32, 32), kernels=(15, 7, 5, 3, 3), strides=(7, 4, 3, 2, 2)
    ),
)

param_sets = []
for subject_id, recs in by_subject.items():
    dense, curve = pretrain_subject(
        recs, arch, PretrainConfig(epochs=8, batch_size=16, lr=2e-4, seed=subject_id)
    )
    names = shared_param_names(dense)
    param_sets.append(trim(extract_params(dense, names), 0.5))
    print(f"subject {subject_id}: pretrain loss {curve[0]:.3f} -> {curve[-1]:.3f}, "
          f"{len(names)} shared tensors")

merged = merge(param_sets)
zero_frac = np.mean([float((v == 0).mean()) for v in merged.values()])
print(f"\nmerged backbone: mean zero fraction {zero_frac:.2f} (from trimming)")

model = upcycle_init(merged, arch, num_regions=4, task_classes={0: 4}, seed=0)
x = torch.from_numpy(recordings[0].samples).float().unsqueeze(0)
regions = torch.from_numpy(recordings[0].region_map.channel_to_region)
out = model(x, regions)
print(f"upcycled decoder forward OK: logits {tuple(out.logits[0].shape)}, "
      f"finite: {bool(torch.isfinite(out.logits[0]).all())}")
