"""Command line interface.

Machine-readable output goes to stdout as ``key=value`` lines and is
deterministic for a fixed ``--seed``; human-oriented detail (including
wall time) goes to stderr under ``--verbose``. Exit codes: 0 success,
1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .attention import attention_map, vt_forward
from .bank import SynthConfig, synth_bank
from .errors import VTError
from .formats import (
    read_bank,
    read_class_embeddings,
    read_params,
    write_bank,
    write_class_embeddings,
    write_params,
)
from .matching import accuracy, predict, vt_logits, zero_shot_logits
from .trainer import TrainConfig, ablate, evaluate, train, write_sweep_csv


def _parse_values(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vt",
        description="Train and inspect a visual-guided text head over feature banks.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", action="store_true", help="human-readable detail on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic feature dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--k", type=int, default=10, help="number of classes")
    p.add_argument("--d", type=int, default=32, help="global feature dim")
    p.add_argument("--ds", type=int, default=48, help="spatial token dim")
    p.add_argument("--grid-h", type=int, default=4)
    p.add_argument("--grid-w", type=int, default=4)
    p.add_argument("--train-per-class", type=int, default=16)
    p.add_argument("--test-per-class", type=int, default=100)
    p.add_argument("--m", type=int, default=4, help="informative tokens per image")
    p.add_argument("--sigma", type=float, default=0.1, help="noise level")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", parents=[common], help="few-shot training run")
    p.add_argument("--bank", required=True, help="training bank (.vtfb)")
    p.add_argument("--texts", required=True, help="class embeddings (.vtte)")
    p.add_argument("--shots", type=int, required=True)
    p.add_argument("--test", help="test bank for final accuracy")
    p.add_argument("--out", help="write trained parameters here (.vtpm)")
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval", parents=[common], help="accuracy of a trained head")
    p.add_argument("--bank", required=True)
    p.add_argument("--texts", required=True)
    p.add_argument("--model", required=True, help="trained parameters (.vtpm)")

    p = sub.add_parser("zeroshot", parents=[common], help="cosine-matching baseline accuracy")
    p.add_argument("--bank", required=True)
    p.add_argument("--texts", required=True)

    p = sub.add_parser("ablate", parents=[common], help="sweep heads or layers")
    p.add_argument("--bank", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--texts", required=True)
    p.add_argument("--axis", required=True, choices=("heads", "layers"))
    p.add_argument("--values", required=True, type=_parse_values, help="e.g. 4,8,16,32")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--shots", type=int, default=16)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("attnmap", parents=[common], help="export one attention map")
    p.add_argument("--model", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--texts", required=True)
    p.add_argument("--image", type=int, required=True, help="image index in the bank")
    p.add_argument("--class", dest="class_idx", type=int, required=True)
    p.add_argument("--out", required=True, help="output prefix (.csv and .pgm appended)")

    return parser


def _emit(key: str, value) -> None:
    print(f"{key}={value}")


def _verbose(args, text: str) -> None:
    if args.verbose:
        print(text, file=sys.stderr)


def _cmd_synth(args) -> int:
    cfg = SynthConfig(
        num_classes=args.k,
        global_dim=args.d,
        spatial_dim=args.ds,
        num_tokens=args.grid_h * args.grid_w,
        grid_h=args.grid_h,
        grid_w=args.grid_w,
        images_per_class_train=args.train_per_class,
        images_per_class_test=args.test_per_class,
        informative_tokens=args.m,
        noise_sigma=args.sigma,
        seed=args.seed,
    )
    train_bank, test_bank, texts = synth_bank(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_bank(train_bank, out / "train.vtfb")
    write_bank(test_bank, out / "test.vtfb")
    write_class_embeddings(texts, out / "texts.vtte")
    _emit("train_bank", out / "train.vtfb")
    _emit("test_bank", out / "test.vtfb")
    _emit("texts", out / "texts.vtte")
    _verbose(args, f"wrote {train_bank.num_images} train / {test_bank.num_images} test images")
    return 0


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        n_shots=args.shots,
        batch_size=args.batch,
        lr=args.lr,
        epochs=args.epochs,
        heads=args.heads,
        layers=args.layers,
        seed=args.seed,
    )


def _cmd_train(args) -> int:
    bank = read_bank(args.bank)
    texts = read_class_embeddings(args.texts)
    test_bank = read_bank(args.test) if args.test else None
    params, report = train(bank, texts, _train_config(args), test_bank=test_bank)
    if args.out:
        write_params(params, args.out)
        _emit("model", args.out)
    _emit("train_accuracy", f"{report.final_train_accuracy:.6f}")
    if report.test_accuracy is not None:
        _emit("test_accuracy", f"{report.test_accuracy:.6f}")
    _emit("param_checksum", report.param_checksum)
    _verbose(args, f"wall_time_seconds={report.wall_time_seconds:.3f}")
    _verbose(
        args,
        f"loss first={report.epoch_losses[0]:.6f} last={report.epoch_losses[-1]:.6f}",
    )
    return 0


def _cmd_eval(args) -> int:
    bank = read_bank(args.bank)
    texts = read_class_embeddings(args.texts)
    params = read_params(args.model)
    _emit("accuracy", f"{evaluate(bank, texts, params):.6f}")
    return 0


def _cmd_zeroshot(args) -> int:
    bank = read_bank(args.bank)
    texts = read_class_embeddings(args.texts)
    logits = zero_shot_logits(bank.global_features, texts.rows)
    _emit("zeroshot_accuracy", f"{accuracy(predict(logits), bank.labels):.6f}")
    return 0


def _cmd_ablate(args) -> int:
    bank = read_bank(args.bank)
    test_bank = read_bank(args.test)
    texts = read_class_embeddings(args.texts)
    cells = ablate(bank, test_bank, texts, args.axis, args.values, _train_config(args))
    write_sweep_csv(cells, args.out)
    _emit("csv", args.out)
    for cell in cells:
        value = "nan" if cell.error else f"{cell.test_accuracy:.6f}"
        _emit(f"cell_{cell.axis_value}", value)
        if cell.error:
            print(f"error in cell {cell.axis_value}: {cell.error}", file=sys.stderr)
    return 0


def _write_map_csv(map2d: np.ndarray, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in map2d:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def _write_map_pgm(map2d: np.ndarray, path: Path) -> None:
    h, w = map2d.shape
    lo, hi = float(map2d.min()), float(map2d.max())
    if hi > lo:
        scaled = np.round((map2d - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.zeros_like(map2d)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(scaled.astype(np.uint8).tobytes())


def _cmd_attnmap(args) -> int:
    bank = read_bank(args.bank)
    texts = read_class_embeddings(args.texts)
    params = read_params(args.model)
    if not 0 <= args.image < bank.num_images:
        raise IndexError(f"image {args.image} out of range [0, {bank.num_images})")

    refined, trace = vt_forward(texts.rows, bank.spatial_features[args.image], params)
    map2d = attention_map(
        trace, args.class_idx, trace.num_layers - 1, bank.grid_h, bank.grid_w
    )
    logits = vt_logits(
        bank.global_features[args.image : args.image + 1], refined[np.newaxis]
    )
    probs = logits.probabilities()[0]

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    csv_path = out.with_name(out.name + ".csv")
    pgm_path = out.with_name(out.name + ".pgm")
    _write_map_csv(map2d, csv_path)
    _write_map_pgm(map2d, pgm_path)
    _emit("attnmap_csv", csv_path)
    _emit("attnmap_pgm", pgm_path)
    _emit("label", int(bank.labels[args.image]))
    _emit("predicted", int(np.argmax(probs)))
    _emit("probs", ",".join(f"{p:.6g}" for p in probs))
    return 0


_HANDLERS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "zeroshot": _cmd_zeroshot,
    "ablate": _cmd_ablate,
    "attnmap": _cmd_attnmap,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _HANDLERS[args.command](args)
    except (VTError, OSError, IndexError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
