"""Image/mask ingestion, seeded augmentation and synthetic lesion data.

Pipeline order is resize -> augment -> normalize: geometric transforms
fill borders with (unnormalized) black, color jitter runs on raw RGB, and
samples store the normalized tensor. Masks are nearest-resampled and
re-binarized after every geometric stage so they stay exactly {0, 1}.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .tensor import Tensor

TARGET_HW = (192, 256)
IMAGENET_MEAN = np.array([0.485, 0.456, 0.406])
IMAGENET_STD = np.array([0.229, 0.224, 0.225])
MASK_SUFFIX = "_segmentation"


class IngestionError(ValueError):
    """Raised when an image/mask pair cannot be loaded."""


@dataclass
class SegSample:
    """One normalized image tensor plus its exactly-binary mask."""
    image: Tensor
    mask: Tensor
    id: str


@dataclass
class AugmentConfig:
    shift_limit: float = 0.15
    scale_limit: float = 0.15
    rotate_limit: float = 25.0
    p_affine: float = 0.5
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2
    hue: float = 0.05
    p_hflip: float = 0.5
    p_vflip: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for p in (self.p_affine, self.p_hflip, self.p_vflip):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} outside [0, 1]")
        limits = (self.shift_limit, self.scale_limit, self.rotate_limit,
                  self.brightness, self.contrast, self.saturation, self.hue)
        if any(v < 0 for v in limits):
            raise ValueError("augmentation limits must be nonnegative")


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Independent, reproducible stream for (seed, keys).

    String keys are hashed so per-sample streams can be derived from ids.
    """
    words = [seed & 0xFFFFFFFFFFFFFFFF]
    for key in keys:
        if isinstance(key, str):
            digest = hashlib.sha256(key.encode()).digest()
            words.append(int.from_bytes(digest[:8], "little"))
        else:
            words.append(int(key) & 0xFFFFFFFFFFFFFFFF)
    return np.random.default_rng(words)


def normalize_rgb(rgb: np.ndarray) -> np.ndarray:
    """(H, W, 3) floats in [0, 1] -> normalized (3, H, W)."""
    return ((rgb - IMAGENET_MEAN) / IMAGENET_STD).transpose(2, 0, 1)


def denormalize_rgb(chw: np.ndarray) -> np.ndarray:
    """Normalized (3, H, W) -> (H, W, 3) floats, clipped to [0, 1]."""
    rgb = chw.transpose(1, 2, 0) * IMAGENET_STD + IMAGENET_MEAN
    return np.clip(rgb, 0.0, 1.0)


def load_sample(image_path: str | Path, mask_path: str | Path,
                target_hw: tuple[int, int] = TARGET_HW) -> SegSample:
    """Read a lesion photo and its mask, resize and normalize them."""
    image_path, mask_path = Path(image_path), Path(mask_path)
    try:
        with Image.open(image_path) as im:
            img = im.convert("RGB")
            img_size = img.size
            with Image.open(mask_path) as mm:
                msk = mm.convert("L")
                if msk.size != img_size:
                    raise IngestionError(
                        f"image {image_path} is {img_size} but mask "
                        f"{mask_path} is {msk.size}")
                h, w = target_hw
                if img_size[0] == 0 or img_size[1] == 0:
                    raise IngestionError(f"empty image: {image_path}")
                img = img.resize((w, h), Image.BILINEAR)
                msk = msk.resize((w, h), Image.NEAREST)
    except (OSError, SyntaxError) as exc:
        raise IngestionError(
            f"cannot read pair {image_path} / {mask_path}: {exc}") from exc
    rgb = np.asarray(img, dtype=np.float64) / 255.0
    mask = (np.asarray(msk, dtype=np.float64) > 127.0).astype(np.float64)
    return SegSample(image=Tensor(normalize_rgb(rgb)),
                     mask=Tensor(mask[None]),
                     id=image_path.stem)


# -- geometric and photometric transforms --------------------------------

def _affine_sample(chw: np.ndarray, angle_deg: float, scale: float,
                   tx: float, ty: float, nearest: bool) -> np.ndarray:
    """Rotate/scale about the center then translate; zero fill outside."""
    h, w = chw.shape[-2:]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    th = math.radians(angle_deg)
    cos_t, sin_t = math.cos(th), math.sin(th)
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    # invert: undo translation, then rotation/scale, relative to the center
    dx = xs - cx - tx
    dy = ys - cy - ty
    sx = (cos_t * dx + sin_t * dy) / scale + cx
    sy = (-sin_t * dx + cos_t * dy) / scale + cy
    out = np.zeros_like(chw)
    if nearest:
        xi = np.rint(sx).astype(np.intp)
        yi = np.rint(sy).astype(np.intp)
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        out[..., valid] = chw[..., yi[valid], xi[valid]]
        return out
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    fx = sx - x0
    fy = sy - y0
    for dyi, dxi in ((0, 0), (0, 1), (1, 0), (1, 1)):
        xi = x0 + dxi
        yi = y0 + dyi
        weight = (fx if dxi else 1.0 - fx) * (fy if dyi else 1.0 - fy)
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        xi_c = np.clip(xi, 0, w - 1)
        yi_c = np.clip(yi, 0, h - 1)
        out += np.where(valid, weight, 0.0) * chw[..., yi_c, xi_c]
    return out


def _rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    diff = mx - mn
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    safe = np.where(diff > 0, diff, 1.0)
    h = np.zeros_like(mx)
    h = np.where(mx == r, ((g - b) / safe) % 6.0, h)
    h = np.where(mx == g, (b - r) / safe + 2.0, h)
    h = np.where(mx == b, (r - g) / safe + 4.0, h)
    h = np.where(diff > 0, h / 6.0, 0.0)
    s = np.where(mx > 0, diff / np.where(mx > 0, mx, 1.0), 0.0)
    return np.stack([h, s, mx], axis=-1)


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    lut = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    rgb = np.zeros(hsv.shape)
    for idx, (rr, gg, bb) in enumerate(lut):
        sel = i == idx
        rgb[..., 0] = np.where(sel, rr, rgb[..., 0])
        rgb[..., 1] = np.where(sel, gg, rgb[..., 1])
        rgb[..., 2] = np.where(sel, bb, rgb[..., 2])
    return rgb


def _color_jitter(rgb: np.ndarray, f_bright: float, f_contrast: float,
                  f_sat: float, hue_shift: float) -> np.ndarray:
    out = np.clip(rgb * f_bright, 0.0, 1.0)
    gray = (0.299 * out[..., 0] + 0.587 * out[..., 1] + 0.114 * out[..., 2])
    out = np.clip(out * f_contrast + gray.mean() * (1.0 - f_contrast),
                  0.0, 1.0)
    out = np.clip(out * f_sat + gray[..., None] * (1.0 - f_sat), 0.0, 1.0)
    if hue_shift:
        hsv = _rgb_to_hsv(out)
        hsv[..., 0] = (hsv[..., 0] + hue_shift) % 1.0
        out = np.clip(_hsv_to_rgb(hsv), 0.0, 1.0)
    return out


def augment(sample: SegSample, cfg: AugmentConfig,
            rng: np.random.Generator) -> SegSample:
    """Affine + color-jitter + flips, fully determined by the rng state.

    The affine runs on the normalized tensor with a fill equal to
    normalized black, which is exactly zero fill in raw RGB space.
    """
    img = sample.image.data
    mask = sample.mask.data

    if cfg.p_affine > 0 and rng.random() < cfg.p_affine:
        h, w = mask.shape[-2:]
        tx = rng.uniform(-cfg.shift_limit, cfg.shift_limit) * w
        ty = rng.uniform(-cfg.shift_limit, cfg.shift_limit) * h
        scale = 1.0 + rng.uniform(-cfg.scale_limit, cfg.scale_limit)
        angle = rng.uniform(-cfg.rotate_limit, cfg.rotate_limit)
        black = ((0.0 - IMAGENET_MEAN) / IMAGENET_STD)[:, None, None]
        img = _affine_sample(img - black, angle, scale, tx, ty,
                             nearest=False) + black
        mask = _affine_sample(mask, angle, scale, tx, ty, nearest=True)
        mask = (mask >= 0.5).astype(np.float64)

    if cfg.brightness or cfg.contrast or cfg.saturation or cfg.hue:
        f_b = rng.uniform(max(0.0, 1.0 - cfg.brightness), 1.0 + cfg.brightness)
        f_c = rng.uniform(max(0.0, 1.0 - cfg.contrast), 1.0 + cfg.contrast)
        f_s = rng.uniform(max(0.0, 1.0 - cfg.saturation), 1.0 + cfg.saturation)
        hue = rng.uniform(-cfg.hue, cfg.hue)
        rgb = _color_jitter(denormalize_rgb(img), f_b, f_c, f_s, hue)
        img = normalize_rgb(rgb)

    if cfg.p_hflip > 0 and rng.random() < cfg.p_hflip:
        img = img[..., ::-1].copy()
        mask = mask[..., ::-1].copy()
    if cfg.p_vflip > 0 and rng.random() < cfg.p_vflip:
        img = img[..., ::-1, :].copy()
        mask = mask[..., ::-1, :].copy()

    return SegSample(image=Tensor(img), mask=Tensor(mask), id=sample.id)


# -- dataset construction -------------------------------------------------

def scan_isic_dir(images_dir: str | Path, masks_dir: str | Path
                  ) -> tuple[list[tuple[Path, Path, str]], list[str]]:
    """Pair image files with `<stem>_segmentation` masks.

    Returns (pairs sorted by stem, skip report of unmatched names).
    """
    images_dir, masks_dir = Path(images_dir), Path(masks_dir)
    masks: dict[str, Path] = {}
    for p in sorted(masks_dir.iterdir()):
        if p.suffix.lower() in (".png", ".jpg", ".jpeg"):
            stem = p.stem
            if stem.endswith(MASK_SUFFIX):
                stem = stem[:-len(MASK_SUFFIX)]
            masks[stem] = p
    pairs: list[tuple[Path, Path, str]] = []
    skipped: list[str] = []
    seen: set[str] = set()
    for p in sorted(images_dir.iterdir()):
        if p.suffix.lower() not in (".png", ".jpg", ".jpeg"):
            continue
        seen.add(p.stem)
        if p.stem in masks:
            pairs.append((p, masks[p.stem], p.stem))
        else:
            skipped.append(f"image without mask: {p.name}")
    for stem, p in sorted(masks.items()):
        if stem not in seen:
            skipped.append(f"mask without image: {p.name}")
    return pairs, skipped


def load_isic_dir(images_dir: str | Path, masks_dir: str | Path,
                  limit: int | None = None) -> list[SegSample]:
    """Load all matched pairs, in stable lexicographic stem order."""
    pairs, _ = scan_isic_dir(images_dir, masks_dir)
    if limit is not None:
        pairs = pairs[:limit]
    return [load_sample(img, msk) for img, msk, _ in pairs]


def load_manifest(path: str | Path,
                  limit: int | None = None) -> list[SegSample]:
    """Load a JSON manifest: a list of {image, mask, id} entries.

    Relative paths resolve against the manifest's directory.
    """
    import json

    path = Path(path)
    try:
        entries = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestionError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(entries, list):
        raise IngestionError(f"manifest {path} must be a JSON list")
    samples = []
    for entry in entries[:limit]:
        try:
            image, mask = entry["image"], entry["mask"]
        except (TypeError, KeyError) as exc:
            raise IngestionError(
                f"manifest {path}: every entry needs image and mask") from exc
        sample = load_sample(path.parent / image, path.parent / mask)
        if "id" in entry:
            sample.id = str(entry["id"])
        samples.append(sample)
    return samples


def synth_dataset(n: int, seed: int, target_hw: tuple[int, int] = TARGET_HW,
                  contrast: float = 0.55, hair_prob: float = 0.3,
                  noise: float = 0.02) -> list[SegSample]:
    """Randomized elliptical lesions on skin-toned backgrounds.

    Masks are the exact ellipse interiors; per-sample streams make the
    dataset a pure function of (n, seed).
    """
    h, w = target_hw
    samples = []
    for i in range(n):
        rng = derive_rng(seed, "synth", i)
        # axis range keeps the analytic ellipse area within 2%..60% of frame
        ax = rng.uniform(0.11, 0.30) * min(h, w)
        bx = rng.uniform(0.11, 0.30) * min(h, w)
        theta = rng.uniform(0.0, math.pi)
        rmax = max(ax, bx) + 2.0
        cx = rng.uniform(rmax, w - 1 - rmax)
        cy = rng.uniform(rmax, h - 1 - rmax)

        ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                             np.arange(w, dtype=np.float64), indexing="ij")
        u = (xs - cx) * math.cos(theta) + (ys - cy) * math.sin(theta)
        v = -(xs - cx) * math.sin(theta) + (ys - cy) * math.cos(theta)
        mask = ((u / ax) ** 2 + (v / bx) ** 2 <= 1.0).astype(np.float64)

        skin = np.array([rng.uniform(0.75, 0.9), rng.uniform(0.55, 0.7),
                         rng.uniform(0.45, 0.6)])
        depth = contrast * rng.uniform(0.8, 1.0)
        lesion = np.clip(skin * (1.0 - depth) * np.array([1.0, 0.85, 0.8]),
                         0.05, None)
        rgb = np.where(mask[..., None] > 0, lesion, skin)

        if rng.random() < hair_prob:
            for _ in range(rng.integers(1, 4)):
                # a chord through the lesion: anchor near the center,
                # random direction, extended past the ellipse both ways
                px0 = cx + rng.uniform(-0.5, 0.5) * min(ax, bx)
                py0 = cy + rng.uniform(-0.5, 0.5) * min(ax, bx)
                phi = rng.uniform(0.0, math.pi)
                reach = rmax * rng.uniform(1.2, 2.5)
                dx, dy = math.cos(phi) * reach, math.sin(phi) * reach
                x0, y0 = px0 - dx, py0 - dy
                x1, y1 = px0 + dx, py0 + dy
                steps = int(2 * max(abs(x1 - x0), abs(y1 - y0))) + 2
                ts = np.linspace(0.0, 1.0, steps)
                px = np.clip(np.rint(x0 + ts * (x1 - x0)), 0, w - 1).astype(int)
                py = np.clip(np.rint(y0 + ts * (y1 - y0)), 0, h - 1).astype(int)
                rgb[py, px] = rng.uniform(0.05, 0.2)

        rgb = np.clip(rgb + rng.normal(0.0, noise, size=rgb.shape), 0.0, 1.0)
        samples.append(SegSample(image=Tensor(normalize_rgb(rgb)),
                                 mask=Tensor(mask[None]),
                                 id=f"synth-{seed}-{i}"))
    return samples
