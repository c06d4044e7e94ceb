"""Command line entry point: affectseq-export --in <dir> --out <dir> --batch <n>."""

import argparse
import logging
import sys

from affect_exporter.errors import SetupError, StorageError
from affect_exporter.export import ExportJob, export


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="affectseq-export",
        description="extract ViT-Base features from frame folders into AFSQ files",
    )
    parser.add_argument("--in", dest="input_dir", required=True,
                        help="directory of per-video frame folders")
    parser.add_argument("--out", dest="output_dir", required=True)
    parser.add_argument("--batch", type=int, default=16)
    parser.add_argument("--device", default="cpu")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        job = ExportJob(args.input_dir, args.output_dir,
                        batch_size=args.batch, device=args.device)
        results = export(job)
    except SetupError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StorageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(f"exported {len(results)} videos to {args.output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
