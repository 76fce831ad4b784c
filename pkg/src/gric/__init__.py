"""gric: deterministic reference-based learned image codec (inference only)."""

from .codec import (
    analyze,
    decode_image,
    encode_image,
    estimate_rate,
    hyper_analyze,
    hyper_synthesize,
    quantize,
    rd_loss,
    synthesize,
)
from .container import BitstreamContainer, load_container, read_container, save_container, write_container
from .errors import ConfigError, GricError, InputError, StreamError, WeightsError
from .weights import Dims, ModelWeights, generate_weights, load_weights, save_weights

__version__ = "0.1.0"

__all__ = [
    "analyze",
    "synthesize",
    "hyper_analyze",
    "hyper_synthesize",
    "quantize",
    "encode_image",
    "decode_image",
    "estimate_rate",
    "rd_loss",
    "BitstreamContainer",
    "read_container",
    "write_container",
    "load_container",
    "save_container",
    "Dims",
    "ModelWeights",
    "generate_weights",
    "load_weights",
    "save_weights",
    "GricError",
    "ConfigError",
    "InputError",
    "WeightsError",
    "StreamError",
    "__version__",
]
