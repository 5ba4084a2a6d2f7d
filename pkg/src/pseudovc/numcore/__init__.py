"""Float32 tensors with reverse-mode gradients, Adam, and gradient checking."""

from . import kernels
from .autograd import GradReport, forward_backward, grad_check
from .nn import bigru, conv, conv1d, dense, gru, init_conv, init_gru, init_linear
from .optim import AdamState, NonFiniteGradient, adam_step
from .tensor import (
    ShapeError,
    Tensor,
    abs_,
    add,
    as_tensor,
    backward,
    concat,
    cosine_similarity,
    cross_entropy,
    div,
    exp,
    expand,
    getitem,
    l2_normalize,
    linear,
    log,
    log_softmax,
    mae,
    matmul,
    mean,
    mse,
    mul,
    neg,
    no_grad,
    pad_axis,
    relu,
    repeat,
    reshape,
    sigmoid,
    softplus,
    sqrt,
    square,
    stack,
    sub,
    sum_,
    tanh,
    transpose,
)
