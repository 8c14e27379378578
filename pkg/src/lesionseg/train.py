"""Training, evaluation and inference orchestration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from PIL import Image

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .cnn import ConfigError
from .data import (AugmentConfig, SegSample, augment, derive_rng,
                   load_isic_dir, load_manifest, normalize_rgb, synth_dataset)
from .fusion import FusionMode
from .losses import segmentation_loss, total_loss, boundary_weight_map
from .metrics import (ConfusionMatrix, Metrics, confusion, metric_suite,
                      report_row, write_report)
from .model import ModelConfig, PRESETS, SegNet, build_model
from .optim import Adam
from .tensor import Tensor, backward


@dataclass
class TrainConfig:
    """Run configuration; the defaults give the small CI-friendly run."""
    preset: str = "toy"
    fusion_mode: str = "full"
    epochs: int = 100
    batch_size: int = 4
    lr: float = 2e-3
    lr_final: float = 1e-3
    lr_schedule: str = "linear"  # or "constant"
    alpha: float = 0.5
    beta: float = 0.3
    gamma: float = 0.2
    seed: int = 42
    synthetic_n: int = 8
    images_dir: str = ""
    masks_dir: str = ""
    manifest: str = ""
    val_images_dir: str = ""
    val_masks_dir: str = ""
    val_fraction: float = 0.2
    max_images: int = 0
    checkpoint: str = "checkpoint.bin"
    eval_interval: int = 10
    clip_norm: float = 5.0
    augment: bool = False
    early_stop_dice: float = 0.0
    threshold: float = 0.5

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("epochs/batch_size must be >= 1 and lr > 0")
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        if self.lr_schedule not in ("linear", "constant"):
            raise ConfigError(f"unknown lr schedule {self.lr_schedule!r}")
        FusionMode(self.fusion_mode)  # validates

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        """Parse the flat `key = value` config format."""
        known = {f.name: f.type for f in fields(cls)}
        values: dict = {}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected `key = value`")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _coerce(val, known[key])
        return cls(**values)


def _coerce(val: str, typ) -> object:
    name = typ if isinstance(typ, str) else typ.__name__
    if name == "int":
        return int(val)
    if name == "float":
        return float(val)
    if name == "bool":
        if val.lower() in ("true", "1", "yes"):
            return True
        if val.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {val!r}")
    return val


@dataclass
class TrainResult:
    model: SegNet
    model_cfg: ModelConfig
    checkpoint_path: Path
    history: list[dict] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    stopped_early: bool = False


def _build_datasets(cfg: TrainConfig
                    ) -> tuple[list[SegSample], list[SegSample]]:
    limit = cfg.max_images or None
    if cfg.manifest:
        train_set = load_manifest(cfg.manifest, limit=limit)
    elif cfg.images_dir:
        if not cfg.masks_dir:
            raise ConfigError("images_dir requires masks_dir")
        train_set = load_isic_dir(cfg.images_dir, cfg.masks_dir, limit=limit)
    else:
        train_set = synth_dataset(cfg.synthetic_n, cfg.seed)
        return train_set, train_set
    if not train_set:
        raise ConfigError("dataset source produced no samples")
    if cfg.val_images_dir:
        val_set = load_isic_dir(cfg.val_images_dir, cfg.val_masks_dir,
                                limit=limit)
    else:
        split = max(1, int(round(len(train_set) * cfg.val_fraction)))
        val_set = train_set[-split:]
        train_set = train_set[:-split] or val_set
    return train_set, val_set


def _batch(samples: list[SegSample]) -> tuple[Tensor, Tensor]:
    images = np.stack([s.image.data for s in samples])
    masks = np.stack([s.mask.data for s in samples])
    return Tensor(images), Tensor(masks)


def _epoch_lr(cfg: TrainConfig, epoch: int) -> float:
    if cfg.lr_schedule == "constant" or cfg.epochs == 1:
        return cfg.lr
    frac = epoch / (cfg.epochs - 1)
    return cfg.lr + (cfg.lr_final - cfg.lr) * frac


def _diagnose_nonfinite(fused, gt, weights, k, lam) -> str:
    w = boundary_weight_map(gt, k, lam)
    for name, head in (("head_main", fused.head_main),
                       ("head_f0", fused.head_f0),
                       ("head_tfm", fused.head_tfm)):
        if not np.isfinite(head.data).all():
            return name
        if not np.isfinite(segmentation_loss(head, gt, w).item()):
            return name
    return "total"


def model_state(model: SegNet, cfg: TrainConfig, optimizer: Adam,
                rng_state: dict, step: int, epoch: int) -> Checkpoint:
    return Checkpoint(
        preset=cfg.preset, fusion_mode=cfg.fusion_mode, step=step,
        epoch=epoch, rng_state=rng_state,
        params={n: p.data.copy() for n, p in model.named_parameters()},
        buffers={n: b.copy() for n, b in model.named_buffers()},
        adam_m={n: m.copy() for n, m in optimizer.m.items()},
        adam_v={n: v.copy() for n, v in optimizer.v.items()},
        adam_step=optimizer.step_count,
    )


def restore_model(model: SegNet, ckpt: Checkpoint) -> None:
    for name, p in model.named_parameters():
        if name not in ckpt.params:
            raise ConfigError(f"checkpoint missing parameter {name}")
        if ckpt.params[name].shape != p.data.shape:
            raise ConfigError(
                f"checkpoint parameter {name} has shape "
                f"{ckpt.params[name].shape}, model expects {p.data.shape}")
        p.data[...] = ckpt.params[name]
    for name, buf in model.named_buffers():
        buf[...] = ckpt.buffers[name]


def model_from_checkpoint(path: str | Path) -> tuple[SegNet, ModelConfig]:
    ckpt = load_checkpoint(path)
    model, model_cfg = build_model(ckpt.preset, FusionMode(ckpt.fusion_mode),
                                   derive_rng(0, "init"))
    restore_model(model, ckpt)
    return model, model_cfg


def train(cfg: TrainConfig, resume_from: str | Path | None = None,
          log=print) -> TrainResult:
    """Run the full training loop; deterministic for a fixed config."""
    train_set, val_set = _build_datasets(cfg)
    model, model_cfg = build_model(cfg.preset, FusionMode(cfg.fusion_mode),
                                   derive_rng(cfg.seed, "init"))
    model_cfg.loss.alpha = cfg.alpha
    model_cfg.loss.beta = cfg.beta
    model_cfg.loss.gamma = cfg.gamma
    optimizer = Adam(list(model.named_parameters()), lr=cfg.lr)
    shuffle_rng = derive_rng(cfg.seed, "shuffle")
    start_epoch = 0
    global_step = 0

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if ckpt.preset != cfg.preset or ckpt.fusion_mode != cfg.fusion_mode:
            raise ConfigError(
                f"checkpoint was trained with preset={ckpt.preset} "
                f"fusion_mode={ckpt.fusion_mode}, config asks for "
                f"{cfg.preset}/{cfg.fusion_mode}")
        restore_model(model, ckpt)
        for name in optimizer.m:
            optimizer.m[name][...] = ckpt.adam_m[name]
            optimizer.v[name][...] = ckpt.adam_v[name]
        optimizer.step_count = ckpt.adam_step
        shuffle_rng.bit_generator.state = ckpt.rng_state
        start_epoch = ckpt.epoch
        global_step = ckpt.step

    ckpt_path = Path(cfg.checkpoint)
    if ckpt_path.parent != Path("."):
        ckpt_path.parent.mkdir(parents=True, exist_ok=True)
    result = TrainResult(model=model, model_cfg=model_cfg,
                         checkpoint_path=ckpt_path)
    aug_cfg = AugmentConfig(seed=cfg.seed)

    for epoch in range(start_epoch, cfg.epochs):
        optimizer.lr = _epoch_lr(cfg, epoch)
        order = shuffle_rng.permutation(len(train_set))
        model.train()
        epoch_losses = []
        for lo in range(0, len(order), cfg.batch_size):
            chunk = [train_set[i] for i in order[lo:lo + cfg.batch_size]]
            if cfg.augment:
                chunk = [augment(s, aug_cfg,
                                 derive_rng(cfg.seed, "augment", epoch, int(i)))
                         for s, i in zip(chunk, order[lo:lo + cfg.batch_size])]
            images, masks = _batch(chunk)
            fused = model(images)
            loss = total_loss(fused, masks, model_cfg.loss,
                              model_cfg.boundary_kernel,
                              model_cfg.boundary_lambda)
            val = loss.item()
            if not math.isfinite(val):
                head = _diagnose_nonfinite(fused, masks, model_cfg.loss,
                                           model_cfg.boundary_kernel,
                                           model_cfg.boundary_lambda)
                raise RuntimeError(
                    f"non-finite loss at step {global_step} "
                    f"(offending head: {head})")
            model.zero_grad()
            backward(loss)
            if cfg.clip_norm > 0:
                optimizer.clip_global_norm(cfg.clip_norm)
            optimizer.step()
            global_step += 1
            epoch_losses.append(val)
            result.step_losses.append(val)

        row = {"epoch": epoch, "step": global_step,
               "loss": float(np.mean(epoch_losses)), "lr": optimizer.lr,
               "val_jaccard": None, "val_dice": None, "val_accuracy": None}
        is_eval_epoch = (cfg.eval_interval > 0
                         and (epoch + 1) % cfg.eval_interval == 0)
        if is_eval_epoch or epoch == cfg.epochs - 1:
            agg, _ = evaluate(model, val_set, threshold=cfg.threshold)
            row.update(val_jaccard=agg.jaccard, val_dice=agg.f_measure,
                       val_accuracy=agg.accuracy)
        result.history.append(row)
        if log is not None:
            vals = {k: ("" if row[k] is None else f"{row[k]:.4f}")
                    for k in ("val_jaccard", "val_dice", "val_accuracy")}
            log(f"epoch={epoch} step={global_step} loss={row['loss']:.6f} "
                f"lr={optimizer.lr:.3e} val_jaccard={vals['val_jaccard']} "
                f"val_dice={vals['val_dice']} "
                f"val_accuracy={vals['val_accuracy']}")
        save_checkpoint(model_state(model, cfg, optimizer,
                                    shuffle_rng.bit_generator.state,
                                    global_step, epoch + 1), ckpt_path)
        if (cfg.early_stop_dice > 0 and row["val_dice"] is not None
                and row["val_dice"] >= cfg.early_stop_dice):
            result.stopped_early = True
            break

    return result


def evaluate(model: SegNet, dataset: list[SegSample], threshold: float = 0.5,
             csv_path: str | Path | None = None,
             json_path: str | Path | None = None,
             batch_size: int = 4) -> tuple[Metrics, list[dict]]:
    """Eval-mode forward over a dataset; per-sample and aggregate metrics."""
    model.eval()
    rows = []
    aggregate = ConfusionMatrix()
    for lo in range(0, len(dataset), batch_size):
        chunk = dataset[lo:lo + batch_size]
        images, _ = _batch(chunk)
        fused = model(images)
        for j, sample in enumerate(chunk):
            pred = fused.head_main.data[j]
            cm = confusion(pred, sample.mask.data, threshold)
            aggregate = aggregate + cm
            rows.append(report_row(metric_suite(cm), cm, sample.id))
    agg_metrics = metric_suite(aggregate)
    rows.append(report_row(agg_metrics, aggregate, "aggregate"))
    write_report(rows, csv_path, json_path)
    return agg_metrics, rows


def _mask_boundary(mask: np.ndarray) -> np.ndarray:
    """Pixels of the mask whose 4-neighborhood leaves the mask."""
    inner = mask.copy()
    inner[1:] &= mask[:-1]
    inner[:-1] &= mask[1:]
    inner[:, 1:] &= mask[:, :-1]
    inner[:, :-1] &= mask[:, 1:]
    return mask & ~inner


def infer(checkpoint_path: str | Path, image_path: str | Path,
          out_dir: str | Path, threshold: float = 0.5) -> tuple[Path, Path]:
    """Segment one image; write a 0/255 mask PNG and a boundary overlay."""
    model, model_cfg = model_from_checkpoint(checkpoint_path)
    model.eval()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    image_path = Path(image_path)

    with Image.open(image_path) as im:
        original = im.convert("RGB")
        orig_w, orig_h = original.size
        h, w = model_cfg.input_hw
        resized = original.resize((w, h), Image.BILINEAR)
    rgb = np.asarray(resized, dtype=np.float64) / 255.0
    fused = model(Tensor(normalize_rgb(rgb)[None]))
    prob = fused.head_main.data[0, 0]
    mask_small = Image.fromarray(
        ((prob >= threshold) * 255).astype(np.uint8))
    mask_full = mask_small.resize((orig_w, orig_h), Image.NEAREST)

    mask_path = out_dir / f"{image_path.stem}_mask.png"
    mask_full.save(mask_path)

    overlay = np.asarray(original, dtype=np.uint8).copy()
    boundary = _mask_boundary(np.asarray(mask_full) > 127)
    overlay[boundary] = (255, 32, 32)
    overlay_path = out_dir / f"{image_path.stem}_overlay.png"
    Image.fromarray(overlay).save(overlay_path)
    return mask_path, overlay_path
