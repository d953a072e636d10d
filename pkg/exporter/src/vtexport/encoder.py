"""Feature encoders: the pretrained dual-encoder behind the export.

The production encoder wraps CLIP ResNet-50 and captures the spatial
feature map right before the attention-pooling layer (7x7x2048 at 224px
input) alongside the pooled 1024-d global embedding and the 1024-d text
embeddings. Preprocessing is the deterministic resize + center-crop
pipeline, so re-exports are bit-identical.
"""

from __future__ import annotations

import hashlib
from typing import Protocol

import numpy as np


class ExporterError(RuntimeError):
    pass


class FeatureEncoder(Protocol):
    """What the export pipeline needs from an encoder."""

    grid_h: int
    grid_w: int
    global_dim: int
    spatial_dim: int

    def encode_images(self, images: list) -> tuple[np.ndarray, np.ndarray]:
        """Return (global (N, D), spatial (N, S, D_s)) for PIL images."""
        ...

    def encode_texts(self, prompts: list[str]) -> np.ndarray:
        """Return (K, D) text embeddings, one row per prompt."""
        ...


class ClipRN50Encoder:
    """CLIP ResNet-50 via open_clip, spatial features taken before pooling."""

    grid_h = 7
    grid_w = 7
    global_dim = 1024
    spatial_dim = 2048

    def __init__(self, device: str = "cpu", batch_size: int = 32):
        try:
            import open_clip
            import torch
        except ImportError as exc:
            raise ExporterError(
                "open_clip and torch are required for real exports; install "
                "the exporter with the [clip] extra: pip install 'vthead-exporter[clip]'"
            ) from exc
        self._torch = torch
        self._open_clip = open_clip
        self.device = device
        self.batch_size = batch_size
        try:
            model, _, preprocess = open_clip.create_model_and_transforms(
                "RN50", pretrained="openai"
            )
        except Exception as exc:
            raise ExporterError(
                "could not load pretrained CLIP RN50 weights; they are "
                "downloaded on first use, so run once with network access or "
                "point OPEN_CLIP cache at a local copy"
            ) from exc
        self.model = model.eval().to(device)
        self.preprocess = preprocess
        self.tokenizer = open_clip.get_tokenizer("RN50")

    def _visual_forward(self, pixels):
        """Backbone forward split around the attention pool.

        Returns (global (B, 1024), spatial (B, 49, 2048)): the feature map
        entering attnpool, flattened token-major, and attnpool's output.
        """
        visual = self.model.visual
        x = pixels.type(self.model.visual.conv1.weight.dtype)
        x = visual.act1(visual.bn1(visual.conv1(x)))
        x = visual.act2(visual.bn2(visual.conv2(x)))
        x = visual.act3(visual.bn3(visual.conv3(x)))
        x = visual.avgpool(x)
        x = visual.layer1(x)
        x = visual.layer2(x)
        x = visual.layer3(x)
        x = visual.layer4(x)  # (B, 2048, 7, 7)
        pooled = visual.attnpool(x)  # (B, 1024)
        spatial = x.flatten(2).permute(0, 2, 1)  # (B, 49, 2048)
        return pooled, spatial

    def encode_images(self, images: list) -> tuple[np.ndarray, np.ndarray]:
        torch = self._torch
        globals_out, spatial_out = [], []
        with torch.no_grad():
            for start in range(0, len(images), self.batch_size):
                batch = images[start : start + self.batch_size]
                pixels = torch.stack([self.preprocess(img) for img in batch]).to(self.device)
                pooled, spatial = self._visual_forward(pixels)
                globals_out.append(pooled.float().cpu().numpy())
                spatial_out.append(spatial.float().cpu().numpy())
        return np.concatenate(globals_out), np.concatenate(spatial_out)

    def encode_texts(self, prompts: list[str]) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            tokens = self.tokenizer(prompts).to(self.device)
            rows = self.model.encode_text(tokens)
        return rows.float().cpu().numpy()


class StubEncoder:
    """Deterministic random-projection encoder for tests and dry runs.

    Hashes image bytes and prompt text through fixed random projections so
    outputs are repeatable, distinct per input, and shaped like the real
    encoder (configurable dims).
    """

    def __init__(self, grid_h=2, grid_w=2, global_dim=8, spatial_dim=6, seed=0):
        self.grid_h = grid_h
        self.grid_w = grid_w
        self.global_dim = global_dim
        self.spatial_dim = spatial_dim
        self._seed = seed

    def _rng_for(self, payload: bytes) -> np.random.Generator:
        digest = int.from_bytes(hashlib.sha256(payload).digest()[:16], "little")
        return np.random.Generator(np.random.Philox(key=(self._seed << 64) ^ digest))

    def encode_images(self, images: list) -> tuple[np.ndarray, np.ndarray]:
        s = self.grid_h * self.grid_w
        globals_out = np.empty((len(images), self.global_dim))
        spatial_out = np.empty((len(images), s, self.spatial_dim))
        for i, img in enumerate(images):
            rng = self._rng_for(bytes(img) if isinstance(img, (bytes, bytearray)) else repr(img).encode())
            globals_out[i] = rng.standard_normal(self.global_dim)
            spatial_out[i] = rng.standard_normal((s, self.spatial_dim))
        return globals_out, spatial_out

    def encode_texts(self, prompts: list[str]) -> np.ndarray:
        rows = np.empty((len(prompts), self.global_dim))
        for i, prompt in enumerate(prompts):
            rng = self._rng_for(prompt.encode("utf-8"))
            rows[i] = rng.standard_normal(self.global_dim)
        return rows
