"""Feature banks: the serialized datasets this package trains and evaluates on.

A bank holds, per image, a global feature vector (the pooled encoder
output) and a matrix of spatial tokens (the pre-pooling grid features,
flattened token-major). Class text embeddings live in a separate
structure together with the prompt template that produced them.

Stored feature values always sit on the float32 grid even though arrays
are float64 in memory, so writing a bank to disk and reading it back is
the identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ShotSamplingError
from .validation import check_finite

SPLIT_TAGS = ("train", "test")


@dataclass
class ImageRecord:
    """One image: class label, global feature (D,), spatial tokens (S, D_s)."""

    label: int
    global_feature: np.ndarray
    spatial_tokens: np.ndarray


@dataclass
class FeatureBank:
    num_classes: int
    grid_h: int
    grid_w: int
    split: str
    labels: np.ndarray  # (N,) int64
    global_features: np.ndarray  # (N, D) float64
    spatial_features: np.ndarray  # (N, S, D_s) float64, token-major

    @property
    def num_images(self) -> int:
        return int(self.labels.shape[0])

    @property
    def global_dim(self) -> int:
        return int(self.global_features.shape[1])

    @property
    def spatial_dim(self) -> int:
        return int(self.spatial_features.shape[2])

    @property
    def num_tokens(self) -> int:
        return int(self.spatial_features.shape[1])

    def record(self, i: int) -> ImageRecord:
        return ImageRecord(
            label=int(self.labels[i]),
            global_feature=self.global_features[i],
            spatial_tokens=self.spatial_features[i],
        )

    def validate(self) -> "FeatureBank":
        if self.split not in SPLIT_TAGS:
            raise ConfigError(f"split must be one of {SPLIT_TAGS}, got {self.split!r}")
        n = self.num_images
        if self.global_features.shape[0] != n or self.spatial_features.shape[0] != n:
            raise ConfigError("labels, global and spatial arrays disagree on image count")
        if self.num_tokens != self.grid_h * self.grid_w:
            raise ConfigError(
                f"token count {self.num_tokens} != grid {self.grid_h}x{self.grid_w}"
            )
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ConfigError("labels must lie in [0, num_classes)")
        check_finite(self.global_features, "global features")
        check_finite(self.spatial_features, "spatial features")
        return self


@dataclass
class ClassEmbeddings:
    rows: np.ndarray  # (K, D) float64
    template: str
    class_names: list[str]

    @property
    def num_classes(self) -> int:
        return int(self.rows.shape[0])

    @property
    def dim(self) -> int:
        return int(self.rows.shape[1])

    def validate(self) -> "ClassEmbeddings":
        if self.num_classes < 2:
            raise ConfigError("class embeddings need at least 2 classes")
        if len(self.class_names) != self.num_classes:
            raise ConfigError(
                f"{len(self.class_names)} class names for {self.num_classes} rows"
            )
        check_finite(self.rows, "class embedding rows")
        return self


def _near_square_grid(s: int) -> tuple[int, int]:
    h = int(math.isqrt(s))
    while s % h:
        h -= 1
    return h, s // h


@dataclass
class SynthConfig:
    """Configuration for the synthetic, desk-scale feature generator.

    ``noise_sigma`` scales the per-token and global noise; ``background_sigma``
    scales the uninformative tokens; ``class_signal`` sets how much of the
    global feature's direction is class-specific versus shared across classes
    (small values force a matching head to read the spatial tokens).
    """

    num_classes: int = 10
    global_dim: int = 32
    spatial_dim: int = 48
    num_tokens: int = 16
    images_per_class_train: int = 16
    images_per_class_test: int = 100
    informative_tokens: int = 4
    noise_sigma: float = 0.1
    background_sigma: float = 0.05
    class_signal: float = 0.35
    mode: str = "aligned-through-spatial"
    seed: int = 0
    grid_h: int | None = None
    grid_w: int | None = None

    def resolved_grid(self) -> tuple[int, int]:
        if self.grid_h is None and self.grid_w is None:
            return _near_square_grid(self.num_tokens)
        if self.grid_h is None or self.grid_w is None:
            raise ConfigError("set both grid_h and grid_w, or neither")
        return self.grid_h, self.grid_w

    def validate(self) -> "SynthConfig":
        if self.mode != "aligned-through-spatial":
            raise ConfigError(f"unknown synthesis mode {self.mode!r}")
        if self.num_classes < 2:
            raise ConfigError("need at least 2 classes")
        for name in ("global_dim", "spatial_dim", "num_tokens",
                     "images_per_class_train", "images_per_class_test"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.informative_tokens > self.num_tokens:
            raise ConfigError(
                f"informative_tokens={self.informative_tokens} exceeds "
                f"num_tokens={self.num_tokens}"
            )
        if self.informative_tokens < 1:
            raise ConfigError("informative_tokens must be >= 1")
        if self.noise_sigma <= 0:
            raise ConfigError("noise_sigma must be > 0")
        if self.background_sigma <= 0:
            raise ConfigError("background_sigma must be > 0")
        if not 0 <= self.class_signal <= 1:
            raise ConfigError("class_signal must lie in [0, 1]")
        gh, gw = self.resolved_grid()
        if gh * gw != self.num_tokens:
            raise ConfigError(f"grid {gh}x{gw} != num_tokens {self.num_tokens}")
        return self


def _rng(seed: int) -> np.random.Generator:
    # Philox is counter-based with a documented cross-platform stream;
    # the raw 64-bit seed is used directly as the key.
    return np.random.Generator(np.random.Philox(key=seed))


def _f32_grid(a: np.ndarray) -> np.ndarray:
    return a.astype(np.float32).astype(np.float64)


def synth_bank(cfg: SynthConfig) -> tuple[FeatureBank, FeatureBank, ClassEmbeddings]:
    """Generate (train, test, texts) deterministically from cfg.seed.

    Construction ("aligned-through-spatial"): class identity is planted in
    the first ``informative_tokens`` spatial positions as a unit prototype
    plus Gaussian noise; the remaining positions are low-amplitude noise.
    Prototypes are a fixed random linear image of the text rows, mirroring
    encoders whose modalities share an (unknown) linear alignment. The
    global feature is a fixed projection of the mean informative token plus
    noise, L2-normalized; the projection maps every prototype to a mixture
    of a weak class-specific direction (weight ``class_signal``) and one
    direction shared by all classes, so raw text-vs-global cosine carries
    no usable class signal and a matching head must read the spatial tokens
    to separate classes.
    """
    cfg.validate()
    k, d, d_s, s, m = (
        cfg.num_classes,
        cfg.global_dim,
        cfg.spatial_dim,
        cfg.num_tokens,
        cfg.informative_tokens,
    )
    gh, gw = cfg.resolved_grid()
    rng = _rng(cfg.seed)

    # Draw order is fixed and documented: pooling projection, text rows,
    # text-to-prototype link, shared global direction; then train split,
    # then test split (per image: informative tokens, background tokens,
    # global noise).
    projection = rng.standard_normal((d, d_s))
    text_rows = rng.standard_normal((k, d))
    text_rows /= np.linalg.norm(text_rows, axis=1, keepdims=True)
    link = rng.standard_normal((d_s, d))
    shared_dir = rng.standard_normal(d)

    prototypes = text_rows @ link.T
    prototypes /= np.linalg.norm(prototypes, axis=1, keepdims=True)

    # Rebuild the projection on the prototype span so that each prototype
    # maps to class_signal * (unit class offset * sqrt(d)) plus the shared
    # direction; off-span behavior of the raw projection is kept.
    gram_inv = np.linalg.inv(prototypes @ prototypes.T)
    span_proj = prototypes.T @ gram_inv @ prototypes  # (d_s, d_s)
    dual = prototypes.T @ gram_inv  # (d_s, k), dual[:, c] . p_c' = delta
    offsets = projection @ prototypes.T  # (d, k)
    offsets = offsets / np.linalg.norm(offsets, axis=0, keepdims=True) * math.sqrt(d)
    class_means = cfg.class_signal * offsets + (1 - cfg.class_signal) * shared_dir[:, None]
    pool_map = projection @ (np.eye(d_s) - span_proj) + class_means @ dual.T

    def make_split(per_class: int, split: str) -> FeatureBank:
        n = k * per_class
        labels = np.repeat(np.arange(k, dtype=np.int64), per_class)
        spatial = np.empty((n, s, d_s))
        global_feats = np.empty((n, d))
        for i, label in enumerate(labels):
            tokens = np.empty((s, d_s))
            tokens[:m] = prototypes[label] + cfg.noise_sigma * rng.standard_normal((m, d_s))
            tokens[m:] = cfg.background_sigma * rng.standard_normal((s - m, d_s))
            pooled = pool_map @ tokens[:m].mean(axis=0)
            pooled = pooled + cfg.noise_sigma * rng.standard_normal(d)
            spatial[i] = tokens
            global_feats[i] = pooled / np.linalg.norm(pooled)
        return FeatureBank(
            num_classes=k,
            grid_h=gh,
            grid_w=gw,
            split=split,
            labels=labels,
            global_features=_f32_grid(global_feats),
            spatial_features=_f32_grid(spatial),
        ).validate()

    train = make_split(cfg.images_per_class_train, "train")
    test = make_split(cfg.images_per_class_test, "test")
    texts = ClassEmbeddings(
        rows=_f32_grid(text_rows),
        template="a photo of a {name}.",
        class_names=[f"class_{i}" for i in range(k)],
    ).validate()
    return train, test, texts


def sample_shots(bank: FeatureBank, n_shots: int, seed: int) -> np.ndarray:
    """Pick n_shots image indices per class, without replacement.

    Deterministic in seed; output sorted by (class, index).
    """
    if n_shots < 1:
        raise ConfigError("n_shots must be >= 1")
    rng = _rng(seed)
    picks = []
    for label in range(bank.num_classes):
        idxs = np.flatnonzero(bank.labels == label)
        if idxs.size < n_shots:
            raise ShotSamplingError(
                f"class {label} has {idxs.size} images, need {n_shots}"
            )
        chosen = rng.permutation(idxs)[:n_shots]
        picks.append(np.sort(chosen))
    return np.concatenate(picks).astype(np.int64)


def subset_bank(bank: FeatureBank, indices: np.ndarray) -> FeatureBank:
    """View of the given images as a new bank (metadata shared)."""
    return replace(
        bank,
        labels=bank.labels[indices],
        global_features=bank.global_features[indices],
        spatial_features=bank.spatial_features[indices],
    )
