from .model import EngineModel, InputSpec, LabeledExample, dequantize, dequantize_tensor
from .tensor import Tensor, read_tensor, write_tensor

__all__ = [
    "EngineModel",
    "InputSpec",
    "LabeledExample",
    "Tensor",
    "dequantize",
    "dequantize_tensor",
    "read_tensor",
    "write_tensor",
]
