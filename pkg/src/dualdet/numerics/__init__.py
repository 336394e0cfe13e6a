from .tensor import (Tensor, as_tensor, default_dtype, grad_enabled, no_grad,
                     NonFiniteError, precision, set_default_dtype, strict_finite)
from .functional import (AttentionConfig, absolute, add, avgpool2,
                         bilinear_sample, bilinear_sample_many,
                         bilinear_sample_nd, concat, conv2d,
                         div, exp, gather_rc, gather_rows, getitem, layer_norm,
                         linear, log, masked_mha, masked_softmax, matmul, mul,
                         neg, pow_const, relu, reshape, scatter_rc, segment_max,
                         sigmoid, sinusoidal_encoding, softmax, softmax_axis,
                         softplus, sqrt, stack, sub, tanh, tmean, transpose,
                         tsum, where_mask)
from .gradcheck import check_gradients, numeric_gradient
from .nn import MLP, Conv2d, LayerNorm, Linear, Module, param
from .optim import Adam, AdamState, adam_step, one_cycle
from . import tensorio
