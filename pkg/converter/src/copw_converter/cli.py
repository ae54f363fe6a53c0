"""Checkpoint export command.

    copw-convert export --checkpoint model.pt --map map.yaml \
        --out model.copw --manifest-out model.yaml
"""

from __future__ import annotations

import argparse
import sys

from .export import ExportError, export_checkpoint


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="copw-convert", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="export a checkpoint to a COPW container")
    p.add_argument("--checkpoint", required=True, help="PyTorch checkpoint (.pt)")
    p.add_argument("--map", required=True, dest="map_file",
                   help="YAML export map: checkpoint tensor -> {name, permute}")
    p.add_argument("--out", required=True, help="COPW output path")
    p.add_argument("--manifest-out", help="write a draft manifest here")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        n = export_checkpoint(args.checkpoint, args.map_file, args.out,
                              args.manifest_out)
    except (ExportError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(f"exported {n} tensors to {args.out}")
    if args.manifest_out:
        print(f"draft manifest written to {args.manifest_out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
