"""CLI: dump CNN feature maps into hdff feature packs.

    hdff-extract extract --checkpoint m.pt --data images/ --hooks "conv*" --out pack/
    hdff-extract list-hooks --checkpoint m.pt

Exit codes: 0 success, 1 usage error, 2 checkpoint/data error.
"""

from __future__ import annotations

import argparse
import sys
from typing import Sequence

from .errors import ExtractorError
from .extract import extract, load_checkpoint
from .hooks import list_hooks


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _build_parser() -> _Parser:
    parser = _Parser(prog="hdff-extract", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="run the dataset through hooks into a pack")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="image directory (class subdirs = labels)")
    p.add_argument("--hooks", required=True, help="comma-separated module-name globs")
    p.add_argument("--out", required=True, help="output pack directory")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--input-size", type=int, default=None)
    p.add_argument("--mean", type=_floats, default=None, help="per-channel mean")
    p.add_argument("--std", type=_floats, default=None, help="per-channel std")
    p.add_argument("--dataset-name", default="")
    p.add_argument("--split", default="")

    p = sub.add_parser("list-hooks", help="print hookable module names")
    p.add_argument("--checkpoint", required=True)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        if args.command == "extract":
            out = extract(
                args.checkpoint,
                args.data,
                args.hooks,
                args.out,
                dataset_name=args.dataset_name,
                split=args.split,
                batch_size=args.batch_size,
                input_size=args.input_size,
                mean=args.mean,
                std=args.std,
            )
            print(f"wrote {out}")
        else:
            for line in list_hooks(load_checkpoint(args.checkpoint)):
                print(line)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ExtractorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
