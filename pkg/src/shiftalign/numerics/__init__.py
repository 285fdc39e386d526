from . import functional, nn, tsr
from .functional import (
    abs_sum,
    absolute,
    add,
    concat,
    conv2d,
    conv3d,
    conv_transpose2d,
    getitem,
    leaky_relu,
    matmul,
    mean,
    mul,
    pointwise,
    reduce,
    relu,
    reshape,
    sigmoid,
    square,
    sub,
    sum,
    tanh,
    transpose,
)
from .gradcheck import grad_check
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    as_tensor,
    default_dtype,
    make_op,
    no_grad,
    precision,
    set_default_dtype,
)
