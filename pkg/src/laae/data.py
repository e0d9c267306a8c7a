"""Image datasets: CIFAR-100 binary files, PPM directories, synthetic frames.

All images are float64 arrays in [0, 1], stored stacked as (N, 3, H, W).
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn import make_rng

CIFAR_RECORD = 3074  # coarse label, fine label, 3 * 32 * 32 pixel bytes
CIFAR_SIDE = 32


class DataFormatError(ValueError):
    """Malformed dataset file."""


@dataclass
class ImageDataset:
    images: np.ndarray  # (N, 3, H, W), float64 in [0, 1]
    source: str

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[1] != 3:
            raise DataFormatError(f"{self.source}: expected (N, 3, H, W), got {self.images.shape}")
        if len(self.images) == 0:
            raise DataFormatError(f"{self.source}: dataset is empty")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def take(self, n: int) -> "ImageDataset":
        if n > len(self):
            raise ValueError(f"requested {n} images but {self.source} has {len(self)}")
        return ImageDataset(self.images[:n], f"{self.source}[:{n}]")


# --------------------------------------------------------------------------
# CIFAR-100

def parse_cifar100(raw: bytes, source: str = "<bytes>") -> np.ndarray:
    """Decode CIFAR-100 binary records into (N, 3, 32, 32) floats; labels dropped."""
    if len(raw) == 0 or len(raw) % CIFAR_RECORD:
        whole = len(raw) // CIFAR_RECORD * CIFAR_RECORD
        raise DataFormatError(
            f"{source}: size {len(raw)} is not a positive multiple of {CIFAR_RECORD}; "
            f"trailing partial record starts at byte offset {whole}")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    pixels = records[:, 2:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE)
    return pixels.astype(np.float64) / 255.0


def load_cifar100(path: str | os.PathLike) -> ImageDataset:
    path = Path(path)
    raw = path.read_bytes()
    return ImageDataset(parse_cifar100(raw, str(path)), f"cifar100:{path}")


def write_cifar100(path: str | os.PathLike, images: np.ndarray, coarse=None, fine=None) -> None:
    """Write (N, 3, 32, 32) images in [0, 1] as CIFAR-100 binary records."""
    n = len(images)
    if images.shape[1:] != (3, CIFAR_SIDE, CIFAR_SIDE):
        raise DataFormatError(f"CIFAR-100 records hold (3, 32, 32) images, got {images.shape[1:]}")
    out = np.empty((n, CIFAR_RECORD), dtype=np.uint8)
    out[:, 0] = 0 if coarse is None else coarse
    out[:, 1] = 0 if fine is None else fine
    out[:, 2:] = to_bytes(images).reshape(n, -1)
    Path(path).write_bytes(out.tobytes())


def to_bytes(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats to uint8 via round(v * 255), clamped."""
    return np.clip(np.rint(values * 255.0), 0, 255).astype(np.uint8)


# --------------------------------------------------------------------------
# PPM (P6, maxval 255)

def _ppm_tokens(raw: bytes, source: str):
    """Parse the four header tokens; returns (tokens, offset of pixel data)."""
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < 4:
        if i >= len(raw):
            raise DataFormatError(f"{source}: truncated PPM header")
        c = raw[i:i + 1]
        if c == b"#":
            while i < len(raw) and raw[i:i + 1] not in (b"\n", b"\r"):
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(raw) and not raw[j:j + 1].isspace() and raw[j:j + 1] != b"#":
                j += 1
            tokens.append(raw[i:j])
            i = j
    # exactly one whitespace byte separates maxval from the raster
    return tokens, i + 1


def decode_ppm(raw: bytes, source: str = "<bytes>") -> np.ndarray:
    """Decode a binary P6 image to a (3, H, W) uint8 array."""
    if raw[:2] != b"P6":
        raise DataFormatError(f"{source}: not a binary PPM (magic {raw[:2]!r}, expected b'P6')")
    tokens, offset = _ppm_tokens(raw, source)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise DataFormatError(f"{source}: bad PPM header {tokens!r}") from exc
    if maxval != 255:
        raise DataFormatError(f"{source}: maxval {maxval} unsupported (only 255)")
    need = width * height * 3
    body = raw[offset:offset + need]
    if len(body) != need:
        raise DataFormatError(f"{source}: expected {need} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3).transpose(2, 0, 1).copy()


def encode_ppm(pixels: np.ndarray) -> bytes:
    """Encode a (3, H, W) uint8 array as P6."""
    if pixels.dtype != np.uint8 or pixels.ndim != 3 or pixels.shape[0] != 3:
        raise DataFormatError(f"encode_ppm wants (3, H, W) uint8, got {pixels.shape} {pixels.dtype}")
    _, h, w = pixels.shape
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(pixels.transpose(1, 2, 0)).tobytes()


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes(), str(path))


def write_ppm(path: str | os.PathLike, pixels: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(pixels))


def load_ppm_dir(path: str | os.PathLike) -> ImageDataset:
    """Load every ``*.ppm`` file in lexicographic filename order."""
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"{root}: not a directory")
    files = sorted(p for p in root.iterdir() if p.suffix.lower() == ".ppm" and p.is_file())
    if not files:
        raise DataFormatError(f"{root}: no .ppm files found")
    images = []
    for f in files:
        img = read_ppm(f)
        if images and img.shape != images[0].shape:
            raise DataFormatError(
                f"{f}: size {img.shape[2]}x{img.shape[1]} differs from "
                f"{images[0].shape[2]}x{images[0].shape[1]} of {files[0].name}")
        images.append(img)
    return ImageDataset(np.stack(images).astype(np.float64) / 255.0, f"ppm:{root}")


# --------------------------------------------------------------------------
# preprocessing and synthetic data

def resize_half(img: np.ndarray) -> np.ndarray:
    """2x2 box-filter downsample of (..., H, W); H and W must be even."""
    h, w = img.shape[-2:]
    if h % 2 or w % 2:
        raise ValueError(f"resize_half needs even dims, got {h}x{w}")
    blocks = img.reshape(*img.shape[:-2], h // 2, 2, w // 2, 2)
    return (blocks[..., 0, :, 0] + blocks[..., 0, :, 1]
            + blocks[..., 1, :, 0] + blocks[..., 1, :, 1]) * 0.25


def fit_to(dataset: ImageDataset, hw: tuple[int, int]) -> ImageDataset:
    """Halve the resolution until it matches ``hw``; raise if it never does."""
    images = dataset.images
    source = dataset.source
    while images.shape[2:] != tuple(hw):
        h, w = images.shape[2:]
        if h <= hw[0] or w <= hw[1] or h % 2 or w % 2:
            raise ValueError(f"{dataset.source}: images are {dataset.images.shape[2]}x"
                             f"{dataset.images.shape[3]}, cannot resize to {hw[0]}x{hw[1]} by halving")
        images = resize_half(images)
        source += "|half"
    return ImageDataset(images, source)


def synth_movie(n: int, seed: int, size: int = 128) -> ImageDataset:
    """Seeded stand-in for natural movie frames.

    Each frame is a two-colour linear ramp with a few oriented Gabor-like
    patches on top, clipped to [0, 1]. Spatially smooth by construction.
    """
    if n < 1:
        raise ValueError("synth_movie needs n >= 1")
    rng = make_rng(seed, 0x5EED)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1.0)
    frames = np.empty((n, 3, size, size))
    for i in range(n):
        theta = rng.uniform(0, 2 * np.pi)
        ramp = (np.cos(theta) * (xx - 0.5) + np.sin(theta) * (yy - 0.5)) / np.sqrt(2) + 0.5
        c0, c1 = rng.uniform(0.15, 0.85, size=(2, 3))
        img = c0[:, None, None] + (c1 - c0)[:, None, None] * ramp[None]
        for _ in range(rng.integers(2, 5)):
            cx, cy = rng.uniform(0.15, 0.85, size=2)
            sigma = rng.uniform(0.06, 0.18)
            orient = rng.uniform(0, np.pi)
            freq = rng.uniform(2.0, 6.0)
            phase = rng.uniform(0, 2 * np.pi)
            amp = rng.uniform(-0.35, 0.35, size=3)
            dx, dy = xx - cx, yy - cy
            env = np.exp(-(dx * dx + dy * dy) / (2 * sigma * sigma))
            wave = np.cos(2 * np.pi * freq * (np.cos(orient) * dx + np.sin(orient) * dy) + phase)
            img = img + amp[:, None, None] * (env * wave)[None]
        frames[i] = np.clip(img, 0.0, 1.0)
    return ImageDataset(frames, f"synth:{n}:{seed}")


# --------------------------------------------------------------------------
# batching

@dataclass(frozen=True)
class BatchPlan:
    seed: int
    batch_size: int

    def permutation(self, n: int, epoch: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n) driven by a stream keyed on (seed, epoch)."""
        rng = make_rng(self.seed, 0xBA7C4, epoch)
        perm = np.arange(n)
        draws = rng.random(max(n - 1, 0))
        for i, u in zip(range(n - 1, 0, -1), draws):
            j = int(u * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm


def batch_indices(n: int, plan: BatchPlan, epoch: int) -> list[np.ndarray]:
    if n < 1:
        raise ValueError("cannot batch an empty dataset")
    if not 1 <= plan.batch_size <= n:
        raise ValueError(f"batch size {plan.batch_size} must lie in [1, {n}]")
    perm = plan.permutation(n, epoch)
    return [perm[i:i + plan.batch_size] for i in range(0, n, plan.batch_size)]


def batches(dataset: ImageDataset, plan: BatchPlan, epoch: int) -> list[np.ndarray]:
    """Shuffled mini-batches for one epoch; the last batch may be short."""
    return [dataset.images[idx] for idx in batch_indices(len(dataset), plan, epoch)]
