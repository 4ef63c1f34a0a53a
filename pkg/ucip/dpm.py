"""
Dynamic prompt generation
A small bank of learnable 1x1 basic prompts is composed per location
with softmax coefficients predicted from the input features
"""

import logging

import numpy as np

from ucip.errors import ConfigError, ShapeMismatchError
from ucip.layers import Linear
from ucip.numerics import Tensor, linear, softmax

logger = logging.getLogger(__name__)

PROMPT_MODES = ("dynamic", "fixed", "none")
BASIC_PROMPT_STD = 0.02


class PromptBank:
    """
    D basic prompts of width C_p and the C -> D coefficient projection.

    mode "fixed" keeps a single prompt vector that is broadcast to every
    location and has no projection.
    """

    def __init__(self, channels, prompt_channels, num_prompts, rng, mode="dynamic"):
        if mode not in ("dynamic", "fixed"):
            raise ConfigError("prompt_mode", f"a PromptBank needs 'dynamic' or 'fixed', got {mode!r}")
        if num_prompts < 1 or prompt_channels < 1 or channels < 1:
            raise ConfigError("num_prompts", "prompt count and widths must be >= 1")
        self.mode = mode
        self.channels = channels
        self.prompt_channels = prompt_channels
        self.num_prompts = num_prompts if mode == "dynamic" else 1
        self.basic_prompts = Tensor(
            rng.normal(0.0, BASIC_PROMPT_STD, size=(self.num_prompts, prompt_channels)),
            requires_grad=True,
        )
        self.coeff_proj = Linear(channels, num_prompts, rng) if mode == "dynamic" else None

    def named_parameters(self, prefix):
        params = {f"{prefix}.basic_prompts": self.basic_prompts}
        if self.coeff_proj is not None:
            params.update(self.coeff_proj.named_parameters(f"{prefix}.coeff_proj"))
        return params


def generate_prompt(bank, features):
    """Return (prompt H×W×C_p, coeffs H×W×D) for NHWC features"""
    if features.shape[-1] != bank.channels:
        raise ShapeMismatchError("generate_prompt", (bank.channels,), (features.shape[-1],), "feature channels")
    if bank.coeff_proj is None:
        coeffs = Tensor(np.ones(features.shape[:-1] + (1,)), dtype=features.dtype)
    else:
        coeffs = softmax(bank.coeff_proj(features), axis=-1)
    prompt = linear(coeffs, bank.basic_prompts)
    return prompt, coeffs


def zero_prompt(features, prompt_channels):
    """Stand-in prompt for models built without prompts"""
    return Tensor(np.zeros(features.shape[:-1] + (prompt_channels,)), dtype=features.dtype)


def prompt_param_count(C, D, C_p):
    """D·C_p basic prompt entries plus the (C+1)·D projection"""
    for name, value in (("C", C), ("D", D), ("C_p", C_p)):
        if value < 1:
            raise ConfigError(name, "must be positive")
    return D * C_p + (C + 1) * D


def image_prompt_param_count(H, W, C_p):
    """Parameters of one learnable prompt with the image's spatial size"""
    return H * W * C_p


def prompt_flops(H, W, C, D, C_p):
    """Multiply-accumulates of generate_prompt at H×W, softmax counted as D per location"""
    return H * W * (C * D + D * C_p + D)
