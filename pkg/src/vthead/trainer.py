"""Few-shot training of the head over frozen feature banks.

Only the head's parameters are updated: banks and text embeddings are
read-only inputs. The optimizer is momentum SGD with a cosine-annealed
learning rate. All randomness (shot sampling, init, per-epoch shuffles)
derives from the config seed, and gradient accumulation order is fixed,
so identical inputs give bit-identical parameters regardless of the
worker thread count.
"""

from __future__ import annotations

import hashlib
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .attention import (
    DEFAULT_HEADS,
    DEFAULT_LAYERS,
    VTParams,
    init_params,
    iter_param_arrays,
    vt_backward,
    vt_forward,
    vt_forward_cached,
    zeros_like_params,
)
from .bank import ClassEmbeddings, FeatureBank, sample_shots, subset_bank
from .errors import ConfigError, DivergenceError, VTError
from .formats import params_payload_bytes
from .matching import DEFAULT_LOGIT_SCALE, accuracy, cross_entropy, predict, vt_logits
from .ops import normalize_rows
from .validation import check_dims_match

ALLOWED_SHOTS = (1, 2, 4, 8, 16)
SCHEDULES = ("cosine", "constant")


@dataclass
class TrainConfig:
    n_shots: int = 16
    batch_size: int = 32
    lr: float = 2e-3
    momentum: float = 0.9
    epochs: int = 200
    schedule: str = "cosine"
    seed: int = 0
    heads: int = DEFAULT_HEADS
    layers: int = DEFAULT_LAYERS

    def validate(self) -> "TrainConfig":
        if self.n_shots not in ALLOWED_SHOTS:
            raise ConfigError(f"n_shots must be one of {ALLOWED_SHOTS}, got {self.n_shots}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.heads < 1 or self.layers < 1:
            raise ConfigError("heads and layers must be >= 1")
        return self


@dataclass
class TrainReport:
    config: TrainConfig
    epoch_losses: list[float] = field(default_factory=list)
    final_train_accuracy: float = 0.0
    test_accuracy: float | None = None
    wall_time_seconds: float = 0.0
    param_checksum: str = ""


def thread_count() -> int:
    """Worker threads for per-image passes, capped by env var VT_THREADS.

    0 or unset means auto; auto resolves to 1 because per-image tensors
    are small and BLAS threading already applies underneath.
    """
    raw = os.environ.get("VT_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"VT_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ConfigError(f"VT_THREADS must be >= 0, got {n}")
    return n if n > 0 else 1


def _ordered_map(fn, items, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def param_checksum(params: VTParams) -> str:
    return hashlib.sha256(params_payload_bytes(params)).hexdigest()


def _add_params(dst: VTParams, src: VTParams) -> None:
    for (_, a), (_, b) in zip(iter_param_arrays(dst), iter_param_arrays(src)):
        a += b


def _check_compatible(bank: FeatureBank, texts: ClassEmbeddings) -> None:
    check_dims_match(bank.num_classes, texts.num_classes, "bank classes", "text classes")
    check_dims_match(bank.global_dim, texts.dim, "global feature dim", "text dim")


def refined_rows(
    bank: FeatureBank, t_c: np.ndarray, params: VTParams, workers: int
) -> np.ndarray:
    """Refined text rows per image, shape (N, K, D)."""
    outs = _ordered_map(
        lambda i: vt_forward(t_c, bank.spatial_features[i], params)[0],
        range(bank.num_images),
        workers,
    )
    return np.stack(outs)


def _batch_loss_and_grads(
    params: VTParams,
    t_c: np.ndarray,
    v_c: np.ndarray,
    v_s: np.ndarray,
    labels: np.ndarray,
    logit_scale: float,
    workers: int,
) -> tuple[float, VTParams]:
    b = labels.shape[0]
    forwards = _ordered_map(
        lambda i: vt_forward_cached(t_c, v_s[i], params), range(b), workers
    )
    vt_rows = np.stack([out for out, _, _ in forwards])
    logits = vt_logits(v_c, vt_rows, logit_scale)
    loss, dscores = cross_entropy(logits, labels)

    u = normalize_rows(v_c, "global features")

    def backward(i: int) -> VTParams:
        vt_c = forwards[i][0]
        norms = np.linalg.norm(vt_c, axis=1, keepdims=True)  # (K, 1)
        w = vt_c / norms
        # d score[i,k] / d vt_c[k] = scale * (u_i - (u_i . w_k) w_k) / ||vt_c[k]||
        proj = w @ u[i]  # (K,)
        d_vt = (logit_scale * dscores[i])[:, None] * (u[i] - proj[:, None] * w) / norms
        grads, _ = vt_backward(d_vt, forwards[i][2], params)
        return grads

    per_image = _ordered_map(backward, range(b), workers)
    total = zeros_like_params(params)
    for g in per_image:
        _add_params(total, g)
    return loss, total


def _epoch_lr(cfg: TrainConfig, epoch: int) -> float:
    if cfg.schedule == "constant":
        return cfg.lr
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))


def train(
    train_bank: FeatureBank,
    texts: ClassEmbeddings,
    cfg: TrainConfig,
    test_bank: FeatureBank | None = None,
    logit_scale: float = DEFAULT_LOGIT_SCALE,
) -> tuple[VTParams, TrainReport]:
    """Train head parameters on n_shots images per class.

    Returns the trained parameters and a report with per-epoch mean loss,
    train/test accuracy and a checksum of the final parameters. Raises
    DivergenceError if the loss goes non-finite.
    """
    cfg.validate()
    _check_compatible(train_bank, texts)
    started = time.perf_counter()
    workers = thread_count()

    shot_indices = sample_shots(train_bank, cfg.n_shots, cfg.seed)
    shots = subset_bank(train_bank, shot_indices)
    t_c = texts.rows
    params = init_params(texts.dim, train_bank.spatial_dim, cfg.heads, cfg.layers, cfg.seed)
    velocity = zeros_like_params(params)
    shuffle_rng = np.random.Generator(np.random.Philox(key=cfg.seed))

    n = shots.num_images
    epoch_losses: list[float] = []
    for epoch in range(cfg.epochs):
        lr = _epoch_lr(cfg, epoch)
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            loss, grads = _batch_loss_and_grads(
                params,
                t_c,
                shots.global_features[batch],
                shots.spatial_features[batch],
                shots.labels[batch],
                logit_scale,
                workers,
            )
            if not math.isfinite(loss):
                raise DivergenceError(epoch)
            loss_sum += loss * batch.size
            for (_, p), (_, v), (_, g) in zip(
                iter_param_arrays(params),
                iter_param_arrays(velocity),
                iter_param_arrays(grads),
            ):
                v *= cfg.momentum
                v -= lr * g
                p += v
        epoch_losses.append(loss_sum / n)

    report = TrainReport(
        config=cfg,
        epoch_losses=epoch_losses,
        final_train_accuracy=evaluate(shots, texts, params, logit_scale),
        test_accuracy=(
            evaluate(test_bank, texts, params, logit_scale)
            if test_bank is not None
            else None
        ),
        wall_time_seconds=time.perf_counter() - started,
        param_checksum=param_checksum(params),
    )
    return params, report


def evaluate(
    bank: FeatureBank,
    texts: ClassEmbeddings,
    params: VTParams,
    logit_scale: float = DEFAULT_LOGIT_SCALE,
) -> float:
    """Accuracy of the head over every image in the bank."""
    _check_compatible(bank, texts)
    check_dims_match(bank.spatial_dim, params.spatial_dim, "bank spatial dim", "head spatial dim")
    check_dims_match(texts.dim, params.model_dim, "text dim", "head model dim")
    vt_rows = refined_rows(bank, texts.rows, params, thread_count())
    logits = vt_logits(bank.global_features, vt_rows, logit_scale)
    return accuracy(predict(logits), bank.labels)


def write_report(report: TrainReport, path, include_wall_time: bool = True) -> None:
    """Serialize a report as line-oriented key=value text."""
    cfg = report.config
    lines = [
        f"n_shots={cfg.n_shots}",
        f"batch_size={cfg.batch_size}",
        f"lr={cfg.lr}",
        f"momentum={cfg.momentum}",
        f"epochs={cfg.epochs}",
        f"schedule={cfg.schedule}",
        f"seed={cfg.seed}",
        f"heads={cfg.heads}",
        f"layers={cfg.layers}",
        f"final_train_accuracy={report.final_train_accuracy:.6f}",
    ]
    if report.test_accuracy is not None:
        lines.append(f"test_accuracy={report.test_accuracy:.6f}")
    if include_wall_time:
        lines.append(f"wall_time_seconds={report.wall_time_seconds:.3f}")
    lines.append(f"param_checksum={report.param_checksum}")
    lines.append("epoch_losses=" + ",".join(f"{v:.6f}" for v in report.epoch_losses))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Ablation sweeps
# ---------------------------------------------------------------------------

ABLATION_AXES = ("heads", "layers")


@dataclass
class AblationCell:
    axis_value: int
    test_accuracy: float  # nan when the cell failed
    first_epoch_loss: float
    final_epoch_loss: float
    error: str | None = None


def ablate(
    train_bank: FeatureBank,
    test_bank: FeatureBank,
    texts: ClassEmbeddings,
    axis: str,
    values: list[int],
    base_cfg: TrainConfig,
) -> list[AblationCell]:
    """One train+evaluate per axis value, identical seed throughout.

    A failing cell is recorded (accuracy nan) and the sweep continues.
    """
    if axis not in ABLATION_AXES:
        raise ConfigError(f"axis must be one of {ABLATION_AXES}, got {axis!r}")
    cells = []
    for value in values:
        cfg = replace(base_cfg, **{axis: value})
        try:
            _, report = train(train_bank, texts, cfg, test_bank=test_bank)
            cells.append(
                AblationCell(
                    axis_value=value,
                    test_accuracy=float(report.test_accuracy),
                    first_epoch_loss=report.epoch_losses[0],
                    final_epoch_loss=report.epoch_losses[-1],
                )
            )
        except VTError as exc:
            cells.append(
                AblationCell(
                    axis_value=value,
                    test_accuracy=float("nan"),
                    first_epoch_loss=float("nan"),
                    final_epoch_loss=float("nan"),
                    error=str(exc),
                )
            )
    return cells


def write_sweep_csv(cells: list[AblationCell], path) -> None:
    lines = ["axis_value,test_accuracy"]
    for cell in cells:
        acc = "nan" if math.isnan(cell.test_accuracy) else f"{cell.test_accuracy:.6f}"
        lines.append(f"{cell.axis_value},{acc}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
