from .autograd import GraphNotRecorded, Tensor, concat, no_grad, parameter
from .layers import (
    GcnLayerParams,
    GgcnnLayerParams,
    GruParams,
    HiddenTooSmall,
    gcn_forward,
    ggcnn_layer,
    gru_cell,
    gru_gates,
)
from .model import GgcnnModel, Mlp, Module, build_model, load_checkpoint, model_forward, save_checkpoint

__all__ = [
    "GcnLayerParams",
    "GgcnnLayerParams",
    "GgcnnModel",
    "GraphNotRecorded",
    "GruParams",
    "HiddenTooSmall",
    "Mlp",
    "Module",
    "Tensor",
    "build_model",
    "concat",
    "gcn_forward",
    "ggcnn_layer",
    "gru_cell",
    "gru_gates",
    "load_checkpoint",
    "no_grad",
    "model_forward",
    "parameter",
    "save_checkpoint",
]
