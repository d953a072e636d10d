"""Export pipeline: dataset -> VTFB feature banks + VTTE text embeddings."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import ExporterError, FeatureEncoder
from .formats import write_class_embeddings, write_feature_bank


@dataclass
class ExportSpec:
    dataset: str
    class_names: list[str]
    output_dir: str
    template: str = "a photo of a {}."
    splits: tuple[str, ...] = ("train", "test")
    data_root: str = "data"

    def validate(self) -> "ExportSpec":
        if self.template.count("{}") != 1:
            raise ExporterError(
                f"template must contain exactly one {{}} placeholder, got {self.template!r}"
            )
        if len(self.class_names) < 2:
            raise ExporterError("need at least 2 classes")
        if len(set(self.class_names)) != len(self.class_names):
            raise ExporterError("class names must be unique")
        return self


@dataclass
class SplitData:
    """One dataset split: parallel lists of images and integer labels."""

    images: list = field(default_factory=list)
    labels: list[int] = field(default_factory=list)


def load_torchvision_split(spec: ExportSpec, split: str) -> SplitData:
    """Load a torchvision dataset split from local files only."""
    try:
        import torchvision.datasets as tvd
    except ImportError as exc:
        raise ExporterError(
            "torchvision is required to load real datasets; install the "
            "exporter with the [clip] extra"
        ) from exc
    name = spec.dataset.lower()
    try:
        if name == "caltech101":
            ds = tvd.Caltech101(spec.data_root, download=False)
        elif name == "cifar10":
            ds = tvd.CIFAR10(spec.data_root, train=split == "train", download=False)
        else:
            raise ExporterError(
                f"unknown dataset {spec.dataset!r}; supported: caltech101, cifar10"
            )
    except RuntimeError as exc:
        raise ExporterError(
            f"dataset {spec.dataset!r} not found under {spec.data_root!r}; "
            f"download it there first (torchvision layout), then re-run"
        ) from exc
    out = SplitData()
    for img, label in ds:  # torchvision yields deterministic order
        out.images.append(img.convert("RGB") if hasattr(img, "convert") else img)
        out.labels.append(int(label))
    return out


def export_text_embeddings(spec: ExportSpec, encoder: FeatureEncoder) -> Path:
    """Embed one filled template per class; row order == label order."""
    spec.validate()
    prompts = [spec.template.format(name) for name in spec.class_names]
    rows = encoder.encode_texts(prompts)
    if rows.shape != (len(spec.class_names), encoder.global_dim):
        raise ExporterError(f"encoder returned text rows of shape {rows.shape}")
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "texts.vtte"
    write_class_embeddings(path, rows, spec.template, spec.class_names)
    return path


def export_image_features(
    spec: ExportSpec,
    encoder: FeatureEncoder,
    splits: dict[str, SplitData] | None = None,
) -> list[Path]:
    """Encode each requested split and write one VTFB file per split."""
    spec.validate()
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for split in spec.splits:
        data = (
            splits[split] if splits is not None else load_torchvision_split(spec, split)
        )
        if not data.images:
            raise ExporterError(f"split {split!r} of {spec.dataset!r} is empty")
        global_feats, spatial = encoder.encode_images(data.images)
        labels = np.asarray(data.labels, dtype=np.int64)
        if labels.max() >= len(spec.class_names):
            raise ExporterError(
                f"label {labels.max()} exceeds class-name table of "
                f"{len(spec.class_names)} entries"
            )
        path = out / f"{split}.vtfb"
        write_feature_bank(
            path,
            split=split,
            labels=labels,
            global_features=global_feats,
            spatial_features=spatial,
            num_classes=len(spec.class_names),
            grid_h=encoder.grid_h,
            grid_w=encoder.grid_w,
        )
        written.append(path)
    return written
