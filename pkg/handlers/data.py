"""
Dataset command handlers
gen-data: degrade an HR directory (or synthetic images) under a list of
specs and write the manifest, optionally split into train / eval
"""

import logging
from pathlib import Path

from config import EMOJIS, UCIP_THREADS
from ucip.degrade import build_dataset, parse_specs, split_manifest, write_synthetic_images
from ucip.errors import DatasetError
from utils.decorators import exit_on_error, log_command_usage
from utils.helpers import file_sha256
from utils.run_config import echo_arguments

logger = logging.getLogger(__name__)


def add_gen_data_arguments(parser):
    parser.add_argument("--hr-dir", help="directory of HR source images")
    parser.add_argument("--specs", default="dct_q:10,dct_q:40,blur_q:2", help="comma separated codec:quality list")
    parser.add_argument("--out", required=True, help="dataset output directory")
    parser.add_argument("--seed", type=int, default=0, help="seed for splits and synthetic images")
    parser.add_argument("--lr-dir", help="externally compressed LR images for codec 'external', paired by stem")
    parser.add_argument("--eval-fraction", type=float, default=0.0, help="share of HR images held out for eval")
    parser.add_argument("--synthetic", type=int, default=0, help="generate this many synthetic HR images instead")
    parser.add_argument("--synthetic-size", type=int, default=256, help="side length of synthetic images")


@log_command_usage
@exit_on_error
def gen_data_command(args):
    out = Path(args.out)
    specs = parse_specs(args.specs)
    echo_arguments(out, args)
    hr_dir = args.hr_dir
    if args.synthetic > 0:
        hr_dir = out / "source_hr"
        write_synthetic_images(hr_dir, args.synthetic, args.synthetic_size, args.seed)
    if hr_dir is None:
        raise DatasetError("--hr-dir is required unless --synthetic is given")

    manifest = build_dataset(hr_dir, specs, out, seed=args.seed, lr_dir=args.lr_dir, workers=UCIP_THREADS)
    manifest_path = out / "manifest.json"
    if args.eval_fraction > 0:
        train, evaluation = split_manifest(manifest, args.eval_fraction, args.seed)
        train.save(out / "manifest_train.json")
        evaluation.save(out / "manifest_eval.json")
        logger.info(f"Split into {len(train)} train / {len(evaluation)} eval pairs")

    logger.info(f"{EMOJIS['data']} Manifest {manifest_path} (sha256 {file_sha256(manifest_path)[:16]})")
    print(manifest_path)
