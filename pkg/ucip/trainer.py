"""
Training loop
L1 training with Adam and a single learning-rate halving, batch
prefetching, line-delimited JSON logs, resumable checkpoints and the
prompt-tuning regimes (prompts only, new prompts on a prompt-free base,
full model)
"""

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ucip.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from ucip.degrade import sample_patch
from ucip.errors import CheckpointError, ConfigError, DatasetError, NumericOverflowError, TrainingAbort
from ucip.metrics import evaluate
from ucip.model import MIN_INPUT_SIZE, ModelConfig, UcipModel, forward
from ucip.numerics import Tensor, mean_abs_error
from ucip.optim import AdamState, adam_step

logger = logging.getLogger(__name__)

TUNE_MODES = ("full", "prompts_only")
CHECKPOINT_NAME = "checkpoint.ucip"
TRAIN_LOG_NAME = "train_log.jsonl"


@dataclass
class TrainConfig:
    total_iters: int = 5000
    lr: float = 3e-4
    # below 1: fraction of total_iters; otherwise an absolute iteration
    lr_halve_at: float = 0.5
    batch_size: int = 8
    patch_size: int = 64
    seed: int = 0
    tune_mode: str = "full"
    eval_every: int = 500
    log_every: int = 50

    def validate(self):
        if int(self.total_iters) < 0:
            raise ConfigError("train.total_iters", "must be >= 0")
        if not self.lr > 0:
            raise ConfigError("train.lr", f"must be positive, got {self.lr}")
        if self.lr_halve_at < 0:
            raise ConfigError("train.lr_halve_at", "must be >= 0")
        if int(self.batch_size) < 1:
            raise ConfigError("train.batch_size", "must be >= 1")
        if int(self.patch_size) < MIN_INPUT_SIZE:
            raise ConfigError("train.patch_size", f"must be >= {MIN_INPUT_SIZE}")
        if int(self.seed) < 0:
            raise ConfigError("train.seed", "must be >= 0")
        if self.tune_mode not in TUNE_MODES:
            raise ConfigError("train.tune_mode", f"must be one of {TUNE_MODES}, got {self.tune_mode!r}")
        if int(self.eval_every) < 0 or int(self.log_every) < 0:
            raise ConfigError("train.eval_every", "intervals must be >= 0")
        return self

    @property
    def halve_iteration(self):
        if self.lr_halve_at < 1:
            return int(round(self.lr_halve_at * self.total_iters))
        return int(self.lr_halve_at)

    def lr_at(self, iteration):
        return self.lr / 2 if iteration >= self.halve_iteration else self.lr

    def to_dict(self):
        return asdict(self)


@dataclass
class Batch:
    lr: np.ndarray
    hr: np.ndarray
    provenance: list


@dataclass
class TrainReport:
    loss_curve: list = field(default_factory=list)
    eval_points: list = field(default_factory=list)
    final_checkpoint: Checkpoint = None
    checkpoint_path: str = None
    start_iteration: int = 0
    end_iteration: int = 0
    elapsed: float = 0.0
    base_psnr: float = None
    tuned_psnr: float = None
    psnr_delta: dict = None
    frozen_drift: list = None

    def to_dict(self):
        return {
            "loss_curve": self.loss_curve,
            "eval_points": self.eval_points,
            "checkpoint_path": self.checkpoint_path,
            "start_iteration": self.start_iteration,
            "end_iteration": self.end_iteration,
            "elapsed": self.elapsed,
            "base_psnr": self.base_psnr,
            "tuned_psnr": self.tuned_psnr,
            "psnr_delta": self.psnr_delta,
            "frozen_drift": self.frozen_drift,
        }


def trainable_parameters(model, tune_mode):
    params = model.parameters()
    if tune_mode == "full":
        return params
    names = model.prompt_parameter_names()
    if not names:
        raise ConfigError("train.tune_mode", "prompts_only needs a model with prompt parameters")
    return {name: params[name] for name in names}


def sample_batch(manifest, iteration, cfg, workers=1):
    """Entries drawn uniformly; every draw depends only on (seed, iteration, slot)"""
    rng = np.random.default_rng([cfg.seed, iteration])
    indices = rng.integers(0, len(manifest), size=cfg.batch_size)
    steps = [iteration * cfg.batch_size + slot for slot in range(cfg.batch_size)]

    def draw(args):
        index, step = args
        return sample_patch(manifest, int(index), cfg.patch_size, cfg.seed, step)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            patches = list(pool.map(draw, zip(indices, steps)))
    else:
        patches = [draw(args) for args in zip(indices, steps)]
    provenance = [f"{manifest.entries[i].lr_path}" for i in indices]
    return Batch(
        lr=np.stack([p[0] for p in patches]),
        hr=np.stack([p[1] for p in patches]),
        provenance=provenance,
    )


def _check_inputs(model, manifest):
    if manifest is None or len(manifest) == 0:
        raise DatasetError("training manifest is empty")
    scales = {entry.spec.scale for entry in manifest.entries}
    if scales != {model.config.scale}:
        raise ConfigError("model.scale", f"model is ×{model.config.scale} but the manifest holds ×{sorted(scales)}")


def train(model, manifest, cfg, eval_manifest=None, out_dir=None, resume=None, stop_at=None, workers=1):
    """
    Run iterations [start, stop_at or total_iters) and return a TrainReport.
    `resume` is a Checkpoint whose weights, optimizer state and iteration
    are restored first.
    """
    cfg.validate()
    _check_inputs(model, manifest)
    trainable = trainable_parameters(model, cfg.tune_mode)
    all_params = model.parameters()
    for name, p in all_params.items():
        p.requires_grad = name in trainable

    if resume is not None:
        resume.apply_to(model)
        if resume.optimizer is None or sorted(resume.optimizer.names()) != sorted(trainable):
            raise CheckpointError("optimizer state in the checkpoint does not match the trainable parameters")
        if resume.rng.get("seed", cfg.seed) != cfg.seed:
            raise CheckpointError(f"checkpoint was trained with seed {resume.rng.get('seed')}, config says {cfg.seed}")
        state = resume.optimizer.copy()
        start = resume.iteration
    else:
        state = AdamState.for_parameters(trainable, lr=cfg.lr)
        start = 0
    end = cfg.total_iters if stop_at is None else min(int(stop_at), cfg.total_iters)

    out_dir = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = open(out_dir / TRAIN_LOG_NAME, "a" if resume is not None else "w")

    report = TrainReport(start_iteration=start)
    frozen = len(all_params) - len(trainable)
    logger.info(
        f"🏋️ Training iterations {start}..{end} | {len(trainable)} trainable tensors, {frozen} frozen | "
        f"batch {cfg.batch_size} × {cfg.patch_size}px | lr {cfg.lr} halved at {cfg.halve_iteration}"
    )
    started = time.perf_counter()
    try:
        with ThreadPoolExecutor(max_workers=1) as prefetch:
            pending = prefetch.submit(sample_batch, manifest, start, cfg, workers) if start < end else None
            for it in range(start, end):
                batch = pending.result()
                if it + 1 < end:
                    pending = prefetch.submit(sample_batch, manifest, it + 1, cfg, workers)

                state.lr = cfg.lr_at(it)
                loss_value = _step(model, trainable, state, batch, it)
                report.loss_curve.append(loss_value)
                record = {"iter": it, "loss": loss_value, "lr": state.lr}

                if eval_manifest is not None and cfg.eval_every and (it + 1) % cfg.eval_every == 0:
                    evaluation = evaluate(model, eval_manifest, workers)
                    point = {"iter": it + 1, "psnr": evaluation.overall.psnr_mean, "ssim": evaluation.overall.ssim_mean}
                    report.eval_points.append(point)
                    record["eval"] = point
                    logger.info(f"📊 Eval at {it + 1}: PSNR {point['psnr']:.3f} dB, SSIM {point['ssim']:.4f}")

                if log_file is not None:
                    log_file.write(json.dumps(record) + "\n")
                if cfg.log_every and (it + 1) % cfg.log_every == 0:
                    logger.info(f"iter {it + 1}/{end} loss {loss_value:.5f} lr {state.lr:.2e}")
    finally:
        if log_file is not None:
            log_file.close()
        for p in all_params.values():
            p.requires_grad = True

    report.end_iteration = max(start, end)
    report.elapsed = time.perf_counter() - started
    report.final_checkpoint = Checkpoint.capture(model, state, report.end_iteration, cfg.to_dict())
    if out_dir is not None:
        path = save_checkpoint(out_dir / CHECKPOINT_NAME, report.final_checkpoint)
        report.checkpoint_path = str(path)
        logger.info(f"💾 Checkpoint written to {path}")
    return report


def _step(model, trainable, state, batch, iteration):
    try:
        x = Tensor(batch.lr, dtype=model.dtype)
        target = Tensor(batch.hr, dtype=model.dtype)
        loss = mean_abs_error(forward(model, x), target)
        loss.backward()
    except NumericOverflowError as e:
        raise TrainingAbort(iteration, batch.provenance, reason=str(e)) from e
    value = loss.item()
    if not np.isfinite(value):
        raise TrainingAbort(iteration, batch.provenance)
    adam_step(trainable, state)
    return value


def snapshot_parameters(model, names=None):
    params = model.parameters()
    return {name: params[name].data.copy() for name in (names if names is not None else params)}


def frozen_parameter_drift(before, model):
    """Names of snapshotted tensors that are no longer bit-identical"""
    params = model.parameters()
    return [name for name, data in before.items() if not np.array_equal(params[name].data, data)]


def _as_checkpoint(base_ckpt):
    return base_ckpt if isinstance(base_ckpt, Checkpoint) else load_checkpoint(base_ckpt)


def finetune_prompts(
    base_ckpt, new_manifest, cfg, eval_manifest=None, add_prompts=False, out_dir=None,
    tune_mode="prompts_only", workers=1,
):
    """
    Adapt a trained model to a new task.

    tune_mode "prompts_only" trains only PromptBank parameters; with
    add_prompts a base trained without prompts gets fresh dynamic
    prompt banks while every other tensor is loaded. tune_mode "full"
    trains everything. The report carries the PSNR change against the
    untouched base on `eval_manifest` (the new manifest if omitted).
    """
    base = _as_checkpoint(base_ckpt)
    base_config = ModelConfig(**base.model_config)
    tuned_config = base_config
    if add_prompts:
        if base_config.prompt_mode != "none":
            raise ConfigError("finetune.add_prompts", f"base model already has {base_config.prompt_mode} prompts")
        tuned_config = replace(base_config, prompt_mode="dynamic")

    base_model = base.apply_to(UcipModel(base_config))
    model = UcipModel(tuned_config)
    base.apply_to(model, allow_missing=model.prompt_parameter_names() if add_prompts else ())

    cfg = replace(cfg, tune_mode=tune_mode)
    frozen_names = [n for n in model.parameters() if n not in trainable_parameters(model, cfg.tune_mode)]
    before = snapshot_parameters(model, frozen_names)

    report = train(model, new_manifest, cfg, eval_manifest=eval_manifest, out_dir=out_dir, workers=workers)

    scored = eval_manifest if eval_manifest is not None else new_manifest
    base_eval = evaluate(base_model, scored, workers)
    tuned_eval = evaluate(model, scored, workers)
    report.base_psnr = base_eval.overall.psnr_mean
    report.tuned_psnr = tuned_eval.overall.psnr_mean
    report.psnr_delta = tuned_eval.psnr_delta(base_eval)
    report.frozen_drift = frozen_parameter_drift(before, model)
    if report.frozen_drift:
        logger.error(f"Frozen parameters drifted: {', '.join(report.frozen_drift)}")
    logger.info(
        f"🎯 Fine-tune ({cfg.tune_mode}{', new prompts' if add_prompts else ''}): "
        f"PSNR {report.base_psnr:.3f} → {report.tuned_psnr:.3f} dB ({report.psnr_delta['overall']:+.3f})"
    )
    return report
