"""
Parameter holders for the affine and convolution maps used by the network
"""

import numpy as np

from ucip.numerics import Tensor, conv3x3, depthwise_conv3x3, linear


def _uniform(rng, bound, shape):
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    """Per-location affine map over channels"""

    def __init__(self, in_dim, out_dim, rng, zero=False, bias=True):
        bound = 1.0 / np.sqrt(in_dim)
        weight = np.zeros((in_dim, out_dim)) if zero else _uniform(rng, bound, (in_dim, out_dim))
        self.weight = Tensor(weight, requires_grad=True)
        self.bias = None
        if bias:
            b = np.zeros(out_dim) if zero else _uniform(rng, bound, (out_dim,))
            self.bias = Tensor(b, requires_grad=True)

    def __call__(self, x):
        return linear(x, self.weight, self.bias)

    def named_parameters(self, prefix):
        params = {f"{prefix}.weight": self.weight}
        if self.bias is not None:
            params[f"{prefix}.bias"] = self.bias
        return params


class Conv3x3:
    def __init__(self, in_ch, out_ch, rng, zero=False, bias_fill=None):
        bound = 1.0 / np.sqrt(9 * in_ch)
        weight = np.zeros((3, 3, in_ch, out_ch)) if zero else _uniform(rng, bound, (3, 3, in_ch, out_ch))
        if bias_fill is not None:
            bias = np.full(out_ch, float(bias_fill))
        else:
            bias = np.zeros(out_ch) if zero else _uniform(rng, bound, (out_ch,))
        self.weight = Tensor(weight, requires_grad=True)
        self.bias = Tensor(bias, requires_grad=True)

    def __call__(self, x):
        return conv3x3(x, self.weight, self.bias)

    def named_parameters(self, prefix):
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


class DepthwiseConv3x3:
    def __init__(self, channels, rng, zero=False):
        bound = 1.0 / 3.0
        weight = np.zeros((3, 3, channels)) if zero else _uniform(rng, bound, (3, 3, channels))
        bias = np.zeros(channels) if zero else _uniform(rng, bound, (channels,))
        self.weight = Tensor(weight, requires_grad=True)
        self.bias = Tensor(bias, requires_grad=True)

    def __call__(self, x):
        return depthwise_conv3x3(x, self.weight, self.bias)

    def named_parameters(self, prefix):
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


def set_identity_kernel(conv):
    """Make a depthwise conv pass its input through unchanged"""
    conv.weight.data[...] = 0
    conv.weight.data[1, 1, :] = 1
    conv.bias.data[...] = 0


def zero_(*layers):
    for layer in layers:
        for p in layer.named_parameters("_").values():
            p.data[...] = 0
