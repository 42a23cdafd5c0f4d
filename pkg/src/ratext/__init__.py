"""ratext: extractive rationales from a selector-predictor pair, trained
with an information-bottleneck guider, adversarial feature calibration,
and a language model fluency prior.
"""

from .autodiff import Tensor, backward
from .data import Instance, SyntheticSpec, Vocab, generate
from .errors import (ConfigError, ContractViolation, DataError, NumericFault,
                     RatextError, VerificationFailure)
from .lm import LanguageModel, lm_pretrain
from .metrics import RationaleScore, TaskScore, rationale_prf, task_metrics
from .optim import AdamState, GradCheckReport, adam_step, grad_check
from .params import ParamStore
from .training import (Hyperparams, LossBreakdown, ModelConfig, TrainResult,
                       build_model, compute_losses, extract, full_model_gradcheck,
                       train)

__version__ = "0.1.0"

__all__ = [
    "AdamState", "ConfigError", "ContractViolation", "DataError",
    "GradCheckReport", "Hyperparams", "Instance", "LanguageModel",
    "LossBreakdown", "ModelConfig", "NumericFault", "ParamStore",
    "RatextError", "RationaleScore", "SyntheticSpec", "TaskScore",
    "Tensor", "TrainResult", "VerificationFailure", "Vocab", "adam_step",
    "backward", "build_model", "compute_losses", "extract",
    "full_model_gradcheck", "generate", "grad_check", "lm_pretrain",
    "rationale_prf", "task_metrics", "train",
]
