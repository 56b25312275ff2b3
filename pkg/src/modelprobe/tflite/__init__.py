from .model import (
    DType,
    LayerUnit,
    ModelGraph,
    ModelMeta,
    Op,
    ParamVector,
    QuantParams,
    TensorInfo,
)
from .parser import extract_params, layer_sequence_json, parse_model, to_layer_sequence

__all__ = [
    "DType",
    "LayerUnit",
    "ModelGraph",
    "ModelMeta",
    "Op",
    "ParamVector",
    "QuantParams",
    "TensorInfo",
    "extract_params",
    "layer_sequence_json",
    "parse_model",
    "to_layer_sequence",
]
