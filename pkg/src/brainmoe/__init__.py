"""brainmoe: multi-subject, multi-task neural decoding with brain-regional
mixture-of-experts transformers, regional masked-autoencoding pretraining,
and consensus-sign parameter merging, exercised on synthetic recordings."""

from .aggregation import ClsBank, TaskHeads, attach_cls, detach_cls
from .masking import MaskPlan, plan_mask, sample_region_mask
from .merging import merge, shared_param_names, trim, upcycle_init
from .metrics import MetricsReport, TaskMetrics, evaluate_predictions
from .model import Decoder, ModelConfig, build_decoder
from .pretrain import Autoencoder, PretrainConfig, pretrain_subject, rmae_loss
from .preprocess import preprocess
from .spectral import SpectralTarget, decode_spectrum_torch, spectral_decode, spectral_encode
from .synth import (
    Recording,
    RegionMap,
    SynthConfig,
    TaskSpec,
    TaskSynthSpec,
    default_synth_config,
    generate_corpus,
    load_corpus,
    save_corpus,
)
from .tokenizer import TokenGrid, Tokenizer, TokenizerConfig, tokenize
from .training import (
    SubjectData,
    TrainConfig,
    Variant,
    VARIANTS,
    ablate,
    evaluate,
    get_variant,
    loso_run,
    run_variant,
    split_corpus,
    train,
)
from .transformer import Block, ChannelRouter, RouterDecision, RouterReport, load_balance_loss

__version__ = "0.1.0"

__all__ = [
    "Autoencoder",
    "Block",
    "ChannelRouter",
    "ClsBank",
    "Decoder",
    "MaskPlan",
    "MetricsReport",
    "ModelConfig",
    "PretrainConfig",
    "Recording",
    "RegionMap",
    "RouterDecision",
    "RouterReport",
    "SpectralTarget",
    "SubjectData",
    "SynthConfig",
    "TaskHeads",
    "TaskMetrics",
    "TaskSpec",
    "TaskSynthSpec",
    "TokenGrid",
    "Tokenizer",
    "TokenizerConfig",
    "TrainConfig",
    "VARIANTS",
    "Variant",
    "ablate",
    "attach_cls",
    "build_decoder",
    "decode_spectrum_torch",
    "default_synth_config",
    "detach_cls",
    "evaluate",
    "evaluate_predictions",
    "generate_corpus",
    "get_variant",
    "load_balance_loss",
    "load_corpus",
    "loso_run",
    "merge",
    "plan_mask",
    "preprocess",
    "pretrain_subject",
    "rmae_loss",
    "run_variant",
    "sample_region_mask",
    "save_corpus",
    "shared_param_names",
    "spectral_decode",
    "spectral_encode",
    "split_corpus",
    "tokenize",
    "train",
    "trim",
    "upcycle_init",
]
