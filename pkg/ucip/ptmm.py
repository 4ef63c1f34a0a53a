"""
Prompt-guided token mixer
Offsets predicted from features and prompt pick one token per channel
along each spatial axis; a depthwise local branch joins them and the
three are mixed with per-channel softmax weights, then modulated by
the prompt through SPADE
"""

import logging
from dataclasses import dataclass

from ucip.errors import ShapeMismatchError, UcipError
from ucip.layers import Conv3x3, DepthwiseConv3x3, Linear
from ucip.numerics import (
    Tensor,
    add,
    concat,
    gather_along,
    gelu,
    instance_norm,
    mul,
    slice_axis,
    softmax,
    spatial_mean,
)

logger = logging.getLogger(__name__)

AXES = {"vertical": 1, "horizontal": 2}
FFN_EXPANSION = 2
SPADE_GAMMA_STD = 0.02


@dataclass(frozen=True)
class OffsetField:
    axis: str
    values: Tensor

    @property
    def shape(self):
        return self.values.shape


class MixerParams:
    """Learned maps of one PTMM"""

    def __init__(self, channels, prompt_channels, rng, local_branch=True, predicts_offsets=True):
        self.channels = channels
        self.prompt_channels = prompt_channels
        self.local_branch_enabled = local_branch
        self.predicts_offsets = predicts_offsets
        cond = channels + prompt_channels
        # mixers that reuse their predecessor's offsets own no offset maps
        self.fc_v = Linear(cond, channels, rng, zero=True) if predicts_offsets else None
        self.fc_h = Linear(cond, channels, rng, zero=True) if predicts_offsets else None
        self.local_conv = DepthwiseConv3x3(channels, rng) if local_branch else None
        self.mix_v = Linear(channels, channels, rng)
        self.mix_h = Linear(channels, channels, rng)
        self.mix_l = Linear(channels, channels, rng) if local_branch else None
        # gamma starts near 1 so the modulated output keeps the mixed signal
        self.spade_gamma = Conv3x3(prompt_channels, channels, rng, bias_fill=1.0)
        self.spade_gamma.weight.data[...] = rng.normal(0.0, SPADE_GAMMA_STD, size=self.spade_gamma.weight.shape)
        self.spade_beta = Conv3x3(prompt_channels, channels, rng)
        self.ffn_in = Linear(channels, FFN_EXPANSION * channels, rng)
        self.ffn_out = Linear(FFN_EXPANSION * channels, channels, rng)

    def branches(self):
        maps = [("mix_v", self.mix_v), ("mix_h", self.mix_h)]
        if self.local_branch_enabled:
            maps.append(("mix_l", self.mix_l))
        return maps

    def named_parameters(self, prefix):
        params = {}
        if self.predicts_offsets:
            params.update(self.fc_v.named_parameters(f"{prefix}.fc_v"))
            params.update(self.fc_h.named_parameters(f"{prefix}.fc_h"))
        if self.local_conv is not None:
            params.update(self.local_conv.named_parameters(f"{prefix}.local_conv"))
        for name, layer in self.branches():
            params.update(layer.named_parameters(f"{prefix}.{name}"))
        params.update(self.spade_gamma.named_parameters(f"{prefix}.spade_gamma"))
        params.update(self.spade_beta.named_parameters(f"{prefix}.spade_beta"))
        params.update(self.ffn_in.named_parameters(f"{prefix}.ffn_in"))
        params.update(self.ffn_out.named_parameters(f"{prefix}.ffn_out"))
        return params


def predict_offsets(params, features, prompt):
    if not params.predicts_offsets:
        raise UcipError("predict_offsets: this mixer reuses offsets and has no offset maps")
    if features.shape[:-1] != prompt.shape[:-1]:
        raise ShapeMismatchError("predict_offsets", features.shape[:-1], prompt.shape[:-1], "prompt spatial size")
    cond = concat([features, prompt], axis=-1)
    return (
        OffsetField("vertical", params.fc_v(cond)),
        OffsetField("horizontal", params.fc_h(cond)),
    )


def recompose(features, offsets):
    """Re-sample every channel along the offset field's axis"""
    if offsets.shape != features.shape:
        raise ShapeMismatchError("recompose", features.shape, offsets.shape, f"{offsets.axis} offsets")
    return gather_along(features, offsets.values, AXES[offsets.axis])


def mixing_weights(params, xv, xh, xl=None):
    """Per-channel softmax over the branches: (N, K, 1, C) with K = 2 or 3"""
    tokens = [xv, xh] + ([xl] if params.local_branch_enabled else [])
    for t in tokens[1:]:
        if t is None or t.shape != xv.shape:
            raise ShapeMismatchError("mix_tokens", xv.shape, None if t is None else t.shape)
    total = tokens[0]
    for t in tokens[1:]:
        total = add(total, t)
    pooled = spatial_mean(total)
    # spatial mean commutes with the affine maps, so pool first
    scores = [layer(pooled) for _, layer in params.branches()]
    return softmax(concat(scores, axis=1), axis=1)


def mix_tokens(params, xv, xh, xl=None):
    alpha = mixing_weights(params, xv, xh, xl)
    tokens = [xv, xh] + ([xl] if params.local_branch_enabled else [])
    out = None
    for k, token in enumerate(tokens):
        term = mul(slice_axis(alpha, k, k + 1, axis=1), token)
        out = term if out is None else add(out, term)
    return out


def spade_modulate(params, mixed, prompt):
    if mixed.shape[:-1] != prompt.shape[:-1]:
        raise ShapeMismatchError("spade_modulate", mixed.shape[:-1], prompt.shape[:-1], "prompt spatial size")
    gamma = params.spade_gamma(prompt)
    beta = params.spade_beta(prompt)
    return add(mul(gamma, instance_norm(mixed)), beta)


def channel_ffn(params, x):
    return params.ffn_out(gelu(params.ffn_in(instance_norm(x))))


def ptmm_forward(params, features, prompt, offsets=None):
    """
    One PTMM with pre-normalisation and two residual branches.
    Supplied offsets are reused as-is; otherwise they are predicted.
    """
    normed = instance_norm(features)
    if offsets is None:
        offsets = predict_offsets(params, normed, prompt)
    xv = recompose(normed, offsets[0])
    xh = recompose(normed, offsets[1])
    xl = params.local_conv(normed) if params.local_branch_enabled else None
    mixed = mix_tokens(params, xv, xh, xl)
    y = add(features, spade_modulate(params, mixed, prompt))
    y = add(y, channel_ffn(params, y))
    return y, offsets
