from .core import (Tensor, add, as_tensor, cols, concat, flatten, GradReport, grad_check, matmul, mul, parameter, rowdot,
                   scale, segment_log_softmax, segment_mean, segment_nll, sigmoid, spmm, sub, take, tanh,
                   total)
from .cells import GRUCell, LSTMCell, RaggedLayout, lstm_scan
from .params import Adam, CheckpointError, ParamStore, read_checkpoint, write_checkpoint

__all__ = [
    "Tensor", "add", "as_tensor", "cols", "concat", "flatten", "GradReport", "grad_check", "matmul", "mul", "parameter", "rowdot",
    "scale", "segment_log_softmax", "segment_mean", "segment_nll", "sigmoid", "spmm", "sub", "take", "tanh",
    "total", "GRUCell", "LSTMCell", "RaggedLayout", "lstm_scan", "Adam", "CheckpointError", "ParamStore", "read_checkpoint", "write_checkpoint",
]
