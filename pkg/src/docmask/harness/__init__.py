"""Training, evaluation, checkpointing, gradient checking and the CLI."""

from .checkpoint import load_checkpoint, load_into, save_checkpoint
from .gradcheck import GradcheckReport, gradcheck
from .optim import OptimizerState, adam_step, lr_at, warmup_steps
from .training import (
    FinetuneResult,
    PretrainResult,
    RunConfig,
    accumulate_gradients,
    batch_indices,
    evaluate,
    finetune,
    pretrain,
)

__all__ = [
    "FinetuneResult", "GradcheckReport", "OptimizerState", "PretrainResult", "RunConfig",
    "accumulate_gradients", "adam_step", "batch_indices", "evaluate", "finetune", "gradcheck",
    "load_checkpoint", "load_into", "lr_at", "pretrain", "save_checkpoint", "warmup_steps",
]
