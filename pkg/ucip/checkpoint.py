"""
Checkpoint files
An 8-byte little-endian header length, a JSON header (config, iteration,
RNG state, optimizer hyper-parameters and a tensor table with byte
offsets) and a raw little-endian payload of parameters and Adam moments
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ucip.errors import CheckpointError
from ucip.model import ModelConfig, UcipModel
from ucip.optim import AdamState

logger = logging.getLogger(__name__)

FORMAT_NAME = "ucip-checkpoint"
FORMAT_VERSION = 1
GROUPS = ("param", "adam_m", "adam_v")


@dataclass
class Checkpoint:
    model_config: dict
    train_config: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    optimizer: AdamState = None
    iteration: int = 0
    rng: dict = field(default_factory=dict)

    @classmethod
    def capture(cls, model, state=None, iteration=0, train_config=None):
        """Snapshot the model (and optimizer) as they are now"""
        snapshot = state.copy() if state is not None else None
        seed = (train_config or {}).get("seed", model.config.seed)
        return cls(
            model_config=model.config.to_dict(),
            train_config=dict(train_config or {}),
            params={name: p.data.copy() for name, p in model.parameters().items()},
            optimizer=snapshot,
            iteration=int(iteration),
            rng={"seed": int(seed), "iteration": int(iteration)},
        )

    def check_compatible(self, model, allow_missing=()):
        """Raise CheckpointError unless every model tensor has a same-shaped counterpart"""
        model_params = model.parameters()
        mismatched = [
            name for name, p in model_params.items()
            if name in self.params and self.params[name].shape != p.shape
        ]
        if mismatched:
            first = mismatched[0]
            raise CheckpointError(
                f"shape mismatch for {first}: checkpoint {self.params[first].shape} "
                f"vs model {model_params[first].shape}",
                mismatched,
            )
        missing = [n for n in model_params if n not in self.params and n not in set(allow_missing)]
        extra = [n for n in self.params if n not in model_params]
        if missing or extra:
            names = missing + extra
            raise CheckpointError(
                f"tensor names differ from the model: missing {missing or '[]'}, unexpected {extra or '[]'}",
                names,
            )

    def apply_to(self, model, allow_missing=()):
        self.check_compatible(model, allow_missing)
        for name, p in model.parameters().items():
            if name in self.params:
                p.data[...] = self.params[name].astype(p.dtype)
        return model


def _le(array):
    return np.ascontiguousarray(array, dtype=array.dtype.newbyteorder("<"))


def save_checkpoint(path, checkpoint):
    path = Path(path)
    tensors, chunks = [], []
    offset = 0

    def add(name, group, array):
        nonlocal offset
        data = _le(np.asarray(array)).tobytes()
        tensors.append({
            "name": name, "group": group, "shape": list(array.shape),
            "dtype": _le(np.asarray(array)).dtype.str, "offset": offset, "nbytes": len(data),
        })
        chunks.append(data)
        offset += len(data)

    for name, array in checkpoint.params.items():
        add(name, "param", array)
    optimizer = None
    if checkpoint.optimizer is not None:
        state = checkpoint.optimizer
        optimizer = {"lr": state.lr, "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps, "step": state.step}
        for name in state.names():
            add(name, "adam_m", state.first_moment[name])
            add(name, "adam_v", state.second_moment[name])

    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "config": {"model": checkpoint.model_config, "train": checkpoint.train_config},
        "iteration": checkpoint.iteration,
        "rng": checkpoint.rng,
        "optimizer": optimizer,
        "tensors": tensors,
    }
    encoded = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(encoded)))
        f.write(encoded)
        for chunk in chunks:
            f.write(chunk)
    logger.debug(f"Saved checkpoint at iteration {checkpoint.iteration} to {path} ({offset} payload bytes)")
    return path


def _read_header(raw, path):
    if len(raw) < 8:
        raise CheckpointError(f"{path}: file too short for a checkpoint header")
    (length,) = struct.unpack("<Q", raw[:8])
    if length > len(raw) - 8:
        raise CheckpointError(f"{path}: header length {length} exceeds file size")
    try:
        header = json.loads(raw[8:8 + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header: {e}") from e
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise CheckpointError(f"{path}: not a {FORMAT_NAME} file")
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('version')}")
    return header, 8 + length


def load_checkpoint(path, model=None, allow_missing=()):
    """Read a checkpoint; with a model, also validate tensor names and shapes against it"""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    header, start = _read_header(raw, path)

    groups = {group: {} for group in GROUPS}
    try:
        for entry in header["tensors"]:
            begin = start + entry["offset"]
            end = begin + entry["nbytes"]
            if end > len(raw):
                raise CheckpointError(f"{path}: payload for {entry['name']} is truncated", [entry["name"]])
            array = np.frombuffer(raw[begin:end], dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
            groups[entry["group"]][entry["name"]] = array.copy()
        config = header["config"]
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: corrupt tensor table: {e}") from e

    optimizer = None
    if header.get("optimizer") is not None:
        hyper = header["optimizer"]
        optimizer = AdamState(
            lr=hyper["lr"], beta1=hyper["beta1"], beta2=hyper["beta2"], eps=hyper["eps"], step=hyper["step"],
            first_moment=groups["adam_m"], second_moment=groups["adam_v"],
        )
    checkpoint = Checkpoint(
        model_config=config.get("model", {}),
        train_config=config.get("train", {}),
        params=groups["param"],
        optimizer=optimizer,
        iteration=int(header.get("iteration", 0)),
        rng=header.get("rng", {}),
    )
    if model is not None:
        checkpoint.check_compatible(model, allow_missing)
    return checkpoint


def restore_model(path):
    """Build the model a checkpoint describes and load its weights"""
    checkpoint = load_checkpoint(path)
    try:
        config = ModelConfig(**checkpoint.model_config)
    except TypeError as e:
        raise CheckpointError(f"{path}: model config does not match this version: {e}") from e
    return checkpoint.apply_to(UcipModel(config)), checkpoint
