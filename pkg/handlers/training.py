"""
Training command handlers
train: fit a model on the configured manifest
finetune: adapt a trained checkpoint to a new task
"""

import logging
from pathlib import Path

from config import EMOJIS, TRAIN_REPORT_NAME, UCIP_THREADS
from ucip.checkpoint import load_checkpoint
from ucip.degrade import DatasetManifest
from ucip.errors import ConfigError
from ucip.model import UcipModel
from ucip.trainer import TUNE_MODES, finetune_prompts, train
from utils.decorators import exit_on_error, log_command_usage
from utils.helpers import write_json
from utils.run_config import load_run_config

logger = logging.getLogger(__name__)


def _add_config_arguments(parser):
    parser.add_argument("--config", help="TOML run config with [model], [train] and [data] sections")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
        help="override one config field (repeatable)",
    )
    parser.add_argument("--out", required=True, help="run directory")


def add_train_arguments(parser):
    _add_config_arguments(parser)
    parser.add_argument("--resume", help="checkpoint to continue from")
    parser.add_argument("--stop-at", type=int, default=None, help="stop before this iteration")


def add_finetune_arguments(parser):
    parser.add_argument("--base-ckpt", required=True, help="checkpoint of the trained base model")
    _add_config_arguments(parser)
    parser.add_argument("--add-prompts", action="store_true", help="give a prompt-free base fresh dynamic prompts")
    parser.add_argument("--tune-mode", choices=TUNE_MODES, default="prompts_only", help="which parameters to train")


def _manifests(cfg):
    if cfg.manifest is None:
        raise ConfigError("data.manifest", "a training manifest is required")
    manifest = DatasetManifest.load(cfg.manifest)
    eval_manifest = DatasetManifest.load(cfg.eval_manifest) if cfg.eval_manifest else None
    return manifest, eval_manifest


@log_command_usage
@exit_on_error
def train_command(args):
    cfg = load_run_config(args.config, args.overrides)
    cfg.echo(args.out)
    manifest, eval_manifest = _manifests(cfg)

    model = UcipModel(cfg.model)
    resume = load_checkpoint(args.resume, model) if args.resume else None
    report = train(
        model, manifest, cfg.train, eval_manifest=eval_manifest, out_dir=args.out,
        resume=resume, stop_at=args.stop_at, workers=UCIP_THREADS,
    )
    write_json(Path(args.out) / TRAIN_REPORT_NAME, report.to_dict())
    if report.loss_curve:
        logger.info(
            f"{EMOJIS['train']} Loss {report.loss_curve[0]:.5f} → {report.loss_curve[-1]:.5f} "
            f"over {len(report.loss_curve)} iterations"
        )


@log_command_usage
@exit_on_error
def finetune_command(args):
    cfg = load_run_config(args.config, args.overrides)
    cfg.echo(args.out)
    manifest, eval_manifest = _manifests(cfg)

    report = finetune_prompts(
        args.base_ckpt, manifest, cfg.train, eval_manifest=eval_manifest, add_prompts=args.add_prompts,
        out_dir=args.out, tune_mode=args.tune_mode, workers=UCIP_THREADS,
    )
    write_json(Path(args.out) / TRAIN_REPORT_NAME, report.to_dict())
    print(f"PSNR delta vs base: {report.psnr_delta['overall']:+.4f} dB")
