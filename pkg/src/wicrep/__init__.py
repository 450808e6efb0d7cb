"""Self-contained contrastive fine-tuning of word-in-context representations,
with evaluation protocols and embedding-geometry diagnostics, on numpy."""

from .autodiff import Tensor, gradient, no_grad
from .encoder import (
    EncoderConfig,
    EncoderModel,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from .errors import (
    ConfigError,
    DataError,
    DegenerateVectorError,
    NumericError,
    WicrepError,
)
from .features import LayerSpec, cosine, extract_wic, extract_wic_batch
from .rng import Rng
from .tokenizer import Vocab, build_vocab, encode_with_target
from .training import MlmConfig, TrainConfig, finetune, infonce_loss, mlm_pretrain

__all__ = [
    "ConfigError",
    "DataError",
    "DegenerateVectorError",
    "EncoderConfig",
    "EncoderModel",
    "LayerSpec",
    "MlmConfig",
    "NumericError",
    "Rng",
    "Tensor",
    "TrainConfig",
    "Vocab",
    "WicrepError",
    "build_vocab",
    "cosine",
    "encode_with_target",
    "extract_wic",
    "extract_wic_batch",
    "finetune",
    "gradient",
    "infonce_loss",
    "init_model",
    "load_checkpoint",
    "mlm_pretrain",
    "no_grad",
    "save_checkpoint",
]

__version__ = "0.1.0"
