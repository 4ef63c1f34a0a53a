"""
Analysis command handlers
eval: PSNR/SSIM of a checkpoint or the bicubic baseline on a manifest
dump-offsets: offset histograms of a checkpoint on one image
param-count: parameter breakdown and prompt economy of a config
"""

import logging
from pathlib import Path

from config import EMOJIS, EVAL_REPORT_NAME, PARAM_REPORT_NAME, UCIP_THREADS
from ucip.checkpoint import restore_model
from ucip.degrade import DatasetManifest, load_image
from ucip.dpm import image_prompt_param_count, prompt_flops, prompt_param_count
from ucip.errors import ConfigError
from ucip.metrics import BicubicBaseline, EvalReport, dump_offsets, evaluate
from ucip.model import UcipModel, count_params
from utils.decorators import exit_on_error, log_command_usage
from utils.helpers import write_json
from utils.run_config import echo_arguments, load_run_config

logger = logging.getLogger(__name__)


def add_eval_arguments(parser):
    parser.add_argument("--ckpt", help="checkpoint to evaluate")
    parser.add_argument("--baseline", action="store_true", help="evaluate bicubic ×4 upsampling instead")
    parser.add_argument("--manifest", required=True, help="manifest of the pairs to score")
    parser.add_argument("--out", default="runs/eval", help="directory for eval_report.json")
    parser.add_argument("--compare", help="eval_report.json to report PSNR deltas against")


def add_dump_offsets_arguments(parser):
    parser.add_argument("--ckpt", required=True, help="checkpoint whose offsets are dumped")
    parser.add_argument("--image", required=True, help="LR image fed to the model")
    parser.add_argument("--out", required=True, help="directory for the CSV files and offset_stats.json")
    parser.add_argument("--bins", type=int, default=50, help="histogram bins")


def add_param_count_arguments(parser):
    parser.add_argument("--config", help="TOML run config; toy defaults when omitted")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
        help="override one config field (repeatable)",
    )
    parser.add_argument("--size", type=int, default=64, help="H = W used for the image-sized prompt comparison")
    parser.add_argument("--out", help="optional directory for param_count.json")


@log_command_usage
@exit_on_error
def eval_command(args):
    if bool(args.ckpt) == bool(args.baseline):
        raise ConfigError("--ckpt/--baseline", "give exactly one of a checkpoint or --baseline")
    echo_arguments(args.out, args)
    manifest = DatasetManifest.load(args.manifest)
    predictor = BicubicBaseline() if args.baseline else restore_model(args.ckpt)[0]

    report = evaluate(predictor, manifest, UCIP_THREADS)
    payload = report.to_dict()
    payload["predictor"] = "bicubic" if args.baseline else str(args.ckpt)
    for spec, scores in report.per_spec.items():
        print(f"{spec:>14}  PSNR {scores.psnr_mean:8.4f} dB  SSIM {scores.ssim_mean:.5f}  n={scores.count}")
    print(f"{'overall':>14}  PSNR {report.overall.psnr_mean:8.4f} dB  SSIM {report.overall.ssim_mean:.5f}")

    if args.compare:
        delta = report.psnr_delta(EvalReport.load(args.compare))
        payload["psnr_delta"] = delta
        for spec, value in delta.items():
            print(f"{spec:>14}  ΔPSNR {value:+.4f} dB")

    path = write_json(Path(args.out) / EVAL_REPORT_NAME, payload)
    logger.info(f"{EMOJIS['eval']} Eval report written to {path}")


@log_command_usage
@exit_on_error
def dump_offsets_command(args):
    echo_arguments(args.out, args)
    model, _ = restore_model(args.ckpt)
    stats = dump_offsets(model, load_image(args.image), args.out, bins=args.bins)
    for f in stats.fields:
        tag = f" (reuses ptmm {f.source_ptmm})" if f.reused else ""
        print(f"block {f.block} ptmm {f.ptmm} {f.axis:<10} min {f.min:+.4f} max {f.max:+.4f} "
              f"mean {f.mean:+.4f} std {f.std:.4f}{tag}")


@log_command_usage
@exit_on_error
def param_count_command(args):
    cfg = load_run_config(args.config, args.overrides)
    m = cfg.model
    breakdown = count_params(UcipModel(m))
    per_block = prompt_param_count(m.channels, m.num_prompts, m.prompt_channels)
    comparator = image_prompt_param_count(args.size, args.size, m.prompt_channels)
    payload = {
        "breakdown": breakdown.to_dict(),
        "prompt_params_per_block": per_block,
        "image_prompt_params": comparator,
        "prompt_ratio": per_block / comparator,
        "prompt_flops": prompt_flops(args.size, args.size, m.channels, m.num_prompts, m.prompt_channels),
    }
    for name, value in breakdown.to_dict().items():
        print(f"{name:>12}: {value}")
    print(f"DPM per block: {per_block} vs image-sized prompt at {args.size}x{args.size}: {comparator} "
          f"({100 * payload['prompt_ratio']:.2f}%)")
    if args.out:
        cfg.echo(args.out)
        write_json(Path(args.out) / PARAM_REPORT_NAME, payload)
