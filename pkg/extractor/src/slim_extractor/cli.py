"""slim-extract: audio clips -> SLEM embedding files + manifest.

Exit codes: 0 success, 2 bad flags/config, 3 extraction or I/O failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .augment import AugmentError, AugmentParams, KINDS
from .encoders import EncoderError
from .extract import ExtractionError, ExtractionJob, run_extraction


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slim-extract",
        description="Extract style/linguistics subspace embeddings from audio "
                    "into SLEM files consumable by the detection engine.",
    )
    parser.add_argument("--audio-dir", required=True)
    parser.add_argument("--labels", required=True, help="CSV with id,path,label[,split,attack_id]")
    parser.add_argument("--out", required=True)
    parser.add_argument("--style-encoder", default="builtin-ser")
    parser.add_argument("--ling-encoder", default="builtin-asr")
    parser.add_argument("--style-layers", default="0-10")
    parser.add_argument("--ling-layers", default="14-21")
    parser.add_argument("--sample-rate", type=int, default=16000)
    parser.add_argument("--max-duration", type=float, default=5.0)
    parser.add_argument("--augment", default="", help=f"comma list of {KINDS}")
    parser.add_argument("--snr-low", type=float, default=0.0)
    parser.add_argument("--snr-high", type=float, default=15.0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--dataset-tag", default="extracted")
    parser.add_argument("--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
    )
    kinds = tuple(k for k in args.augment.split(",") if k)
    job = ExtractionJob(
        audio_dir=Path(args.audio_dir),
        labels_csv=Path(args.labels),
        out_dir=Path(args.out),
        style_encoder=args.style_encoder,
        ling_encoder=args.ling_encoder,
        style_layers=args.style_layers,
        ling_layers=args.ling_layers,
        sample_rate=args.sample_rate,
        max_duration=args.max_duration,
        augment_kinds=kinds,
        augment_params=AugmentParams(snr_low=args.snr_low, snr_high=args.snr_high),
        seed=args.seed,
        dataset_tag=args.dataset_tag,
    )
    try:
        manifest = run_extraction(job)
    except (AugmentError, EncoderError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ExtractionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
