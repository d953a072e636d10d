"""Command line for offline feature export."""

from __future__ import annotations

import argparse
import sys

from .encoder import ClipRN50Encoder, ExporterError, StubEncoder
from .export import ExportSpec, export_image_features, export_text_embeddings


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vtexport",
        description="Export CLIP RN50 features into VTFB/VTTE feature banks.",
    )
    parser.add_argument("--dataset", required=True, help="caltech101 or cifar10")
    parser.add_argument("--root", default="data", help="local dataset root")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--template", default="a photo of a {}.")
    parser.add_argument("--classes", help="comma-separated class names "
                        "(default: taken from the dataset)")
    parser.add_argument("--splits", default="train,test")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--stub", action="store_true",
                        help="use the deterministic stub encoder (dry runs)")
    return parser


def _dataset_class_names(dataset: str, root: str) -> list[str]:
    try:
        import torchvision.datasets as tvd
    except ImportError as exc:
        raise ExporterError(
            "torchvision is required to read dataset class names; pass --classes "
            "explicitly or install the [clip] extra"
        ) from exc
    name = dataset.lower()
    if name == "caltech101":
        return list(tvd.Caltech101(root, download=False).categories)
    if name == "cifar10":
        return list(tvd.CIFAR10(root, download=False).classes)
    raise ExporterError(f"unknown dataset {dataset!r}")


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        names = (
            [n for n in args.classes.split(",") if n]
            if args.classes
            else _dataset_class_names(args.dataset, args.root)
        )
        spec = ExportSpec(
            dataset=args.dataset,
            class_names=names,
            output_dir=args.out,
            template=args.template,
            splits=tuple(s for s in args.splits.split(",") if s),
            data_root=args.root,
        )
        encoder = (
            StubEncoder()
            if args.stub
            else ClipRN50Encoder(device=args.device, batch_size=args.batch_size)
        )
        text_path = export_text_embeddings(spec, encoder)
        print(f"texts={text_path}")
        for path in export_image_features(spec, encoder):
            print(f"bank={path}")
        return 0
    except (ExporterError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
