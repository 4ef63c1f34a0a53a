"""
UCIP network assembly
Shallow embedding, a stack of prompt-guided token mixer blocks with a
global residual, and a conv / nearest-×2 reconstruction head
"""

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ucip.dpm import PROMPT_MODES, PromptBank, generate_prompt, zero_prompt
from ucip.errors import ConfigError, ShapeMismatchError
from ucip.layers import Conv3x3
from ucip.numerics import Tensor, add, as_tensor, leaky_relu, no_grad, reshape, upsample_nearest2x
from ucip.ptmm import MixerParams, ptmm_forward

logger = logging.getLogger(__name__)

MIN_INPUT_SIZE = 8
SUPPORTED_SCALE = 4


@dataclass
class ModelConfig:
    num_blocks: int = 2
    ptmms_per_block: int = 2
    channels: int = 16
    prompt_channels: int = 16
    num_prompts: int = 8
    scale: int = 4
    local_branch: bool = True
    prompt_mode: str = "dynamic"
    seed: int = 0

    def validate(self):
        if self.scale != SUPPORTED_SCALE:
            raise ConfigError("model.scale", f"only ×{SUPPORTED_SCALE} is supported, got {self.scale}")
        for name in ("num_blocks", "ptmms_per_block", "channels", "prompt_channels", "num_prompts"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"model.{name}", "must be >= 1")
        if self.prompt_mode not in PROMPT_MODES:
            raise ConfigError("model.prompt_mode", f"must be one of {PROMPT_MODES}, got {self.prompt_mode!r}")
        return self

    def to_dict(self):
        return asdict(self)


@dataclass
class OffsetRecord:
    block: int
    ptmm: int
    axis: str
    values: np.ndarray
    reused: bool
    source_ptmm: int


@dataclass
class OffsetRecorder:
    """Captures every offset field and prompt seen during one forward pass"""

    records: list = field(default_factory=list)
    prompts: dict = field(default_factory=dict)

    def record(self, block, ptmm, offsets, reused, source_ptmm):
        for field_ in offsets:
            self.records.append(
                OffsetRecord(block, ptmm, field_.axis, field_.values.data.copy(), reused, source_ptmm)
            )

    def record_prompt(self, block, ptmm, prompt):
        self.prompts[(block, ptmm)] = prompt.data.copy()

    def predictions(self, block=None):
        """Number of freshly predicted offset fields (both axes counted)"""
        return sum(1 for r in self.records if not r.reused and (block is None or r.block == block))


class PromptedBlock:
    """One PTMB: a prompt bank shared by N token mixers"""

    def __init__(self, config, rng):
        self.prompt = None
        if config.prompt_mode != "none":
            self.prompt = PromptBank(
                config.channels, config.prompt_channels, config.num_prompts, rng, mode=config.prompt_mode
            )
        self.prompt_channels = config.prompt_channels
        self.ptmms = [
            MixerParams(
                config.channels, config.prompt_channels, rng,
                local_branch=config.local_branch, predicts_offsets=k % 2 == 0,
            )
            for k in range(config.ptmms_per_block)
        ]

    def named_parameters(self, prefix):
        params = {}
        if self.prompt is not None:
            params.update(self.prompt.named_parameters(f"{prefix}.prompt"))
        for k, mixer in enumerate(self.ptmms):
            params.update(mixer.named_parameters(f"{prefix}.ptmms.{k}"))
        return params


def ptmb_forward(block, features, recorder=None, block_index=0):
    """
    Prompt computed once from the block input and shared by every PTMM.
    PTMM k predicts fresh offsets when k is even and reuses the pair
    from k-1 when k is odd. The block adds a residual from its input.
    """
    if block.prompt is not None:
        prompt, _ = generate_prompt(block.prompt, features)
    else:
        prompt = zero_prompt(features, block.prompt_channels)
    x = features
    offsets = None
    for k, mixer in enumerate(block.ptmms):
        reuse = not mixer.predicts_offsets
        x, offsets = ptmm_forward(mixer, x, prompt, offsets if reuse else None)
        if recorder is not None:
            recorder.record(block_index, k, offsets, reused=reuse, source_ptmm=k - 1 if reuse else k)
            recorder.record_prompt(block_index, k, prompt)
    return add(x, features)


class UcipModel:
    def __init__(self, config=None):
        self.config = (config or ModelConfig()).validate()
        rng = np.random.default_rng(self.config.seed)
        c = self.config.channels
        self.embed = Conv3x3(3, c, rng)
        self.blocks = [PromptedBlock(self.config, rng) for _ in range(self.config.num_blocks)]
        self.recon = [Conv3x3(c, c, rng), Conv3x3(c, c, rng), Conv3x3(c, 3, rng)]

    def parameters(self):
        params = {}
        params.update(self.embed.named_parameters("embed"))
        for b, block in enumerate(self.blocks):
            params.update(block.named_parameters(f"blocks.{b}"))
        for k, conv in enumerate(self.recon):
            params.update(conv.named_parameters(f"recon.{k}"))
        return params

    def prompt_parameter_names(self):
        return [name for name in self.parameters() if ".prompt." in name]

    def forward(self, x_lr, recorder=None):
        return forward(self, x_lr, recorder)

    def predict(self, x_lr):
        """No-grad inference on an H×W×3 or N×H×W×3 array, clamped to [0, 1]"""
        with no_grad():
            out = forward(self, Tensor(x_lr, dtype=self.dtype))
        return np.clip(out.data, 0.0, 1.0)

    @property
    def dtype(self):
        return self.embed.weight.dtype


def forward(model, x_lr, recorder=None):
    """embed → blocks → global residual → conv, ×2, conv, ×2, conv"""
    x = as_tensor(x_lr)
    squeeze = x.ndim == 3
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 4 or x.shape[-1] != 3:
        raise ShapeMismatchError("forward", "(H, W, 3)", x.shape)
    h, w = x.shape[1:3]
    if h < MIN_INPUT_SIZE or w < MIN_INPUT_SIZE:
        raise ShapeMismatchError(
            "forward", f"H, W >= {MIN_INPUT_SIZE}", (h, w), f"input must be at least {MIN_INPUT_SIZE}x{MIN_INPUT_SIZE}"
        )

    shallow = model.embed(x)
    deep = shallow
    for b, block in enumerate(model.blocks):
        deep = ptmb_forward(block, deep, recorder, b)
    trunk = add(shallow, deep)

    y = upsample_nearest2x(leaky_relu(model.recon[0](trunk)))
    y = upsample_nearest2x(leaky_relu(model.recon[1](y)))
    y = model.recon[2](y)
    if squeeze:
        y = reshape(y, y.shape[1:])
    return y


@dataclass
class ParamBreakdown:
    embed: int
    prompts: int
    offset_fcs: int
    mixers: int
    spade: int
    recon: int
    total: int

    def to_dict(self):
        return asdict(self)


def _category(name):
    if name.startswith("embed."):
        return "embed"
    if name.startswith("recon."):
        return "recon"
    if ".prompt." in name:
        return "prompts"
    if ".fc_v." in name or ".fc_h." in name:
        return "offset_fcs"
    if ".spade_" in name:
        return "spade"
    return "mixers"


def count_params(model):
    counts = dict.fromkeys(("embed", "prompts", "offset_fcs", "mixers", "spade", "recon"), 0)
    for name, p in model.parameters().items():
        counts[_category(name)] += int(p.size)
    return ParamBreakdown(total=sum(counts.values()), **counts)


def offset_predictions_per_block(ptmms_per_block):
    """Fresh offset pairs per block under the every-two-PTMMs schedule"""
    return math.ceil(ptmms_per_block / 2)
