from .gradcheck import NonDeterministicError, grad_check
from .ops import (
    EmptySequenceError,
    add,
    affine,
    concat,
    concat_rows,
    conv1d,
    dot,
    embedding,
    gate_mix,
    index,
    lstm_batch,
    lstm_sequence,
    mean,
    neg_log_at,
    neg_log_sigmoid,
    scale,
    sigmoid,
    softmax,
    stack,
    take_rows,
    total,
)
from .optim import AdamState, adam_step, global_norm
from .params import CheckpointError, ParameterStore, glorot, load_checkpoint, save_checkpoint
from .tensor import ShapeError, Tensor, constant, parameter

__all__ = [
    "AdamState", "CheckpointError", "EmptySequenceError", "NonDeterministicError",
    "ParameterStore", "ShapeError", "Tensor", "adam_step", "add", "affine",
    "concat", "concat_rows", "constant", "conv1d", "dot", "embedding", "gate_mix", "global_norm",
    "glorot", "grad_check", "index", "load_checkpoint", "lstm_batch", "lstm_sequence", "mean",
    "neg_log_at", "neg_log_sigmoid", "parameter", "save_checkpoint", "scale",
    "sigmoid", "softmax", "stack", "take_rows", "total",
]
