"""CLI: extract-objects | extract-dense | embed-texts.

Model ids resolve through transformers (`openai/clip-vit-large-patch14-336`
by default); the sentinel id `tiny-debug` builds a small random model with
the same 768-dim space for offline runs. Exit codes: 0 success, 2 I/O,
3 validation, 1 unexpected.
"""

from __future__ import annotations

import argparse
import sys

from .extract import (AdapterConfig, extract_dense_features, extract_object_features,
                      embed_texts)
from .model import DEFAULT_MODEL, load_bundle


def _add_model_args(sp):
    sp.add_argument("--model", default=DEFAULT_MODEL)
    sp.add_argument("--device", default="cpu")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clipexport", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("extract-objects", help="one embedding per (view, object) mask crop")
    sp.add_argument("--scene", required=True, help="scene directory with manifest.json")
    sp.add_argument("--out", required=True, help="output object-feature payload")
    sp.add_argument("--crop-mode", choices=["crop", "crop-mask"], default="crop-mask")
    sp.add_argument("--background", choices=["mean-color", "black"], default="mean-color")
    sp.add_argument("--batch-size", type=int, default=16)
    _add_model_args(sp)

    sp = sub.add_parser("extract-dense", help="patch-level feature grid for one image")
    sp.add_argument("--image", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--grid-divisor", type=int, default=8)
    _add_model_args(sp)

    sp = sub.add_parser("embed-texts", help="prompt bank from a JSON text spec")
    sp.add_argument("--texts", required=True, help='JSON: {"instances": [{"id", "texts"}]}')
    sp.add_argument("--out", required=True)
    sp.add_argument("--canonical", action="store_true",
                    help="append the four canonical phrases")
    _add_model_args(sp)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        bundle = load_bundle(args.model, args.device)
        if args.command == "extract-objects":
            cfg = AdapterConfig(model_id=args.model, device=args.device,
                                crop_mode=args.crop_mode, background=args.background,
                                batch_size=args.batch_size)
            feats, valid = extract_object_features(args.scene, bundle, cfg, args.out)
            print(f"extract-objects: {int(valid.sum())} (view, object) embeddings "
                  f"x {feats.shape[2]} dims -> {args.out}")
        elif args.command == "extract-dense":
            cfg = AdapterConfig(model_id=args.model, device=args.device,
                                dense_divisor=args.grid_divisor)
            grid = extract_dense_features(args.image, bundle, cfg, args.out)
            print(f"extract-dense: {grid.shape[0]}x{grid.shape[1]}x{grid.shape[2]} -> {args.out}")
        else:
            embed_texts(args.texts, bundle, args.out, canonical=args.canonical)
            print(f"embed-texts: wrote {args.out}")
        return 0
    except ValueError as exc:
        print(f"error (validation): {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error (i/o): {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"error (unexpected): {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
