from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import finite_diff_check, group_relative_error, numeric_grad, relative_error
from .module import Module, uniform_init
from .optim import ParamGroup, adam_step, clip_grad_norm
from .tensor import (
    GraphConsumedError,
    Tensor,
    add,
    add_bias,
    bmm,
    concat,
    cos,
    cross_entropy,
    embedding,
    expand,
    index,
    layer_norm,
    leaky_relu,
    matmul,
    mean,
    mul,
    neg,
    relu,
    reshape,
    scale,
    sigmoid,
    sin,
    softmax,
    softplus,
    sum_all,
    sum_axis,
    tanh,
    transpose,
)
