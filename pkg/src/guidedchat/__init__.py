"""Target-guided proactive dialogue with scenario biasing and keyword bridging."""

from .backbone import EncoderDecoder, EncoderState, ModelConfig, init_model
from .corpus import (
    DatasetSplit,
    DialogueSample,
    IntentKeyword,
    KeywordInventory,
    TrainingExample,
    Turn,
    Vocabulary,
    build_inventory,
    build_vocabulary,
    encode_sample,
    load_dataset,
    verify_ood,
)
from .generator import GenerationContext, GenerationResult, RunOptions, build_context, generate
from .metrics import EvalReport, evaluate_split
from .model import DialogueModel, load_checkpoint, save_checkpoint
from .trainer import OptimizerConfig, fit, grad_check

__version__ = "0.1.0"

__all__ = [
    "DatasetSplit", "DialogueModel", "DialogueSample", "EncoderDecoder",
    "EncoderState", "EvalReport", "GenerationContext", "GenerationResult",
    "IntentKeyword", "KeywordInventory", "ModelConfig", "OptimizerConfig",
    "RunOptions", "TrainingExample", "Turn", "Vocabulary", "build_context",
    "build_inventory", "build_vocabulary", "encode_sample", "evaluate_split",
    "fit", "generate", "grad_check", "init_model", "load_checkpoint",
    "load_dataset", "save_checkpoint", "verify_ood",
]
