"""CLI: regenerate the fixture corpus deterministically."""

from __future__ import annotations

import argparse
import sys


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fixturegen",
                                     description="Generate the tiny TFLite fixture corpus.")
    parser.add_argument("--out", required=True, help="corpus output directory")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    try:
        import tensorflow  # noqa: F401
    except ImportError as exc:
        print(f"fixturegen: TensorFlow toolchain unavailable: {exc}", file=sys.stderr)
        return 1
    from .corpus import generate_corpus

    manifest = generate_corpus(args.out, seed=args.seed)
    print(f"wrote {len(manifest['models'])} models to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
