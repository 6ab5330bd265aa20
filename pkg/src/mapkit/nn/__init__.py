from .tensor import (ComputationTape, Tensor, backward, clamp_min, concat,
                     exp, gelu, get_tape, grad_check, log, matmul, no_grad,
                     power, relu, reshape, sigmoid, softmax, sqrt, stack,
                     tanh, tmean, transpose, tsum)
from .layers import (Params, cross_attention_block, init_cross_attention_block,
                     init_layer_norm, init_linear, init_mha, init_mlp,
                     init_transformer_block, layer_norm, linear, mlp,
                     multi_head_attention, transformer_block)
from .optim import AdamWState, adamw_step, zero_grads
from .checkpoint import (CheckpointError, load_params, load_params_into,
                         params_hash, save_params)
