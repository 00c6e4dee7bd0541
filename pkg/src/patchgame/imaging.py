"""Image tensors, patch grids, masking, and file ingestion.

Pixel data lives in 64-bit floats, channel-major (C, H, W), values in
[0, 1].  Every ingestion path rounds pixels through 32-bit floats so that
the raw tensor file format and the oracle wire (both float32) are lossless
round trips; in-memory arithmetic stays 64-bit.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .coalition import Coalition

RAW_MAGIC = b"ILNS"

_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class ImageTensor:
    """Channel-major image with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self) -> None:
        d = self.data
        if not isinstance(d, np.ndarray) or d.dtype != np.float64 or d.ndim != 3:
            raise ValueError("image data must be a 3-D float64 array (C, H, W)")
        if not d.flags.c_contiguous:
            object.__setattr__(self, "data", np.ascontiguousarray(d))
        if not np.all(np.isfinite(self.data)):
            raise ValueError("image contains non-finite values")
        lo, hi = float(self.data.min()), float(self.data.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"pixel values outside [0, 1]: min {lo}, max {hi}")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape_hwc(self) -> tuple[int, int, int]:
        """Shape in the (height, width, channels) order used on the wire."""
        c, h, w = self.data.shape
        return h, w, c

    @classmethod
    def from_channels_last(cls, array: np.ndarray) -> "ImageTensor":
        """Build from an (H, W, C) or (H, W) array."""
        a = np.asarray(array, dtype=np.float64)
        if a.ndim == 2:
            a = a[:, :, None]
        if a.ndim != 3:
            raise ValueError(f"expected 2-D or 3-D array, got shape {a.shape}")
        return cls(np.ascontiguousarray(np.transpose(a, (2, 0, 1))))

    def to_channels_last(self) -> np.ndarray:
        return np.ascontiguousarray(np.transpose(self.data, (1, 2, 0)))

    def quantized(self) -> "ImageTensor":
        """Copy with every pixel rounded to the nearest 32-bit float."""
        return ImageTensor(self.data.astype(np.float32).astype(np.float64))


@dataclass(frozen=True)
class PatchGrid:
    """Square tiling of an image; each patch is one player.

    Player k sits at grid row k // grid_w, column k % grid_w.  The grid must
    tile the image exactly: no padding, no partial edge patches.
    """

    patch_size: int
    grid_h: int
    grid_w: int

    def __post_init__(self) -> None:
        if self.patch_size < 1 or self.grid_h < 1 or self.grid_w < 1:
            raise ValueError("patch_size and grid extents must be >= 1")

    @classmethod
    def for_image(cls, height: int, width: int, patch_size: int = 16) -> "PatchGrid":
        if patch_size < 1:
            raise ValueError(f"patch_size must be >= 1, got {patch_size}")
        if height % patch_size or width % patch_size:
            raise ValueError(
                f"{height}x{width} image does not tile exactly with "
                f"{patch_size}x{patch_size} patches"
            )
        return cls(patch_size, height // patch_size, width // patch_size)

    @property
    def n(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def height(self) -> int:
        return self.grid_h * self.patch_size

    @property
    def width(self) -> int:
        return self.grid_w * self.patch_size

    def patch_coord(self, player: int) -> tuple[int, int]:
        if not 0 <= player < self.n:
            raise ValueError(f"player {player} out of range [0, {self.n})")
        return divmod(player, self.grid_w)

    def patch_distance(self, a: int, b: int) -> float:
        """Euclidean distance between two patches in grid units."""
        (ra, ca), (rb, cb) = self.patch_coord(a), self.patch_coord(b)
        return math.hypot(ra - rb, ca - cb)

    def pixel_mask(self, coalition: Coalition) -> np.ndarray:
        """Boolean (H, W) array: True where the pixel's patch is a member."""
        if coalition.n != self.n:
            raise ValueError(
                f"coalition over {coalition.n} players on a {self.n}-patch grid"
            )
        member = np.zeros(self.n, dtype=bool)
        for k in coalition.members():
            member[k] = True
        grid = member.reshape(self.grid_h, self.grid_w)
        return np.repeat(np.repeat(grid, self.patch_size, 0), self.patch_size, 1)


@dataclass(frozen=True)
class MaskBaseline:
    """Fill values for masked-out patches.

    Modes: ``zero``, ``mean`` (per-channel mean over the analysis image set,
    never per image), ``color`` (custom per-channel constants).  Stored
    values are rounded to 32-bit floats so masked images stay losslessly
    transportable.
    """

    mode: str
    values: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("zero", "mean", "color"):
            raise ValueError(f"unknown baseline mode {self.mode!r}")
        if self.mode == "zero":
            if self.values is not None:
                raise ValueError("zero baseline takes no values")
        else:
            if not self.values:
                raise ValueError(f"{self.mode} baseline needs per-channel values")
            if any(not 0.0 <= v <= 1.0 for v in self.values):
                raise ValueError(f"baseline values outside [0, 1]: {self.values}")

    @classmethod
    def zero(cls) -> "MaskBaseline":
        return cls("zero")

    @classmethod
    def color(cls, values: Sequence[float]) -> "MaskBaseline":
        return cls("color", _quantize_values(values))

    @classmethod
    def from_images(cls, images: Iterable[ImageTensor]) -> "MaskBaseline":
        """Per-channel mean over a whole image set."""
        sums: np.ndarray | None = None
        count = 0
        for img in images:
            per_channel = img.data.mean(axis=(1, 2))
            sums = per_channel if sums is None else sums + per_channel
            count += 1
        if sums is None:
            raise ValueError("mean baseline needs at least one image")
        return cls("mean", _quantize_values(sums / count))

    def values_for(self, channels: int) -> np.ndarray:
        """Per-channel fill values as a (C, 1, 1) array."""
        if self.mode == "zero":
            return np.zeros((channels, 1, 1))
        assert self.values is not None
        if len(self.values) != channels:
            raise ValueError(
                f"baseline has {len(self.values)} channels, image has {channels}"
            )
        return np.asarray(self.values, dtype=np.float64).reshape(channels, 1, 1)


def _quantize_values(values: Sequence[float] | np.ndarray) -> tuple[float, ...]:
    return tuple(float(v) for v in np.asarray(values, np.float64).astype(np.float32))


def apply_mask(
    x: ImageTensor, coalition: Coalition, grid: PatchGrid, baseline: MaskBaseline
) -> ImageTensor:
    """Keep pixels of member patches, fill the rest with the baseline.

    Kept pixels are copied bitwise (selection, not arithmetic), which makes
    masking idempotent and monotone under coalition growth.
    """
    _check_grid(x, grid)
    keep = grid.pixel_mask(coalition)[None, :, :]
    fill = baseline.values_for(x.channels)
    return ImageTensor(np.where(keep, x.data, fill))


def apply_mask_batch(
    x: ImageTensor,
    coalitions: Sequence[Coalition],
    grid: PatchGrid,
    baseline: MaskBaseline,
) -> np.ndarray:
    """Masked variants of one image as a (B, C, H, W) array."""
    _check_grid(x, grid)
    keep = np.stack([grid.pixel_mask(c) for c in coalitions])[:, None, :, :]
    fill = baseline.values_for(x.channels)
    return np.where(keep, x.data[None], fill)


def _check_grid(x: ImageTensor, grid: PatchGrid) -> None:
    if (grid.height, grid.width) != (x.height, x.width):
        raise ValueError(
            f"grid tiles {grid.height}x{grid.width} but image is "
            f"{x.height}x{x.width}"
        )


# ------------------------------------------------------------ file formats


def write_raw_array(array: np.ndarray, path: str | Path) -> None:
    """Write an (H, W, C) float array as a raw little-endian float32 file."""
    a = np.asarray(array, dtype=np.float64)
    if a.ndim != 3:
        raise ValueError(f"raw tensor files hold 3-D arrays, got shape {a.shape}")
    h, w, c = a.shape
    payload = _HEADER.pack(RAW_MAGIC, h, w, c) + a.astype("<f4").tobytes(order="C")
    Path(path).write_bytes(payload)


def read_raw_array(path: str | Path) -> np.ndarray:
    """Read a raw float32 tensor file back as an (H, W, C) float64 array."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise ValueError(f"{path}: truncated raw tensor file")
    magic, h, w, c = _HEADER.unpack_from(blob)
    if magic != RAW_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {RAW_MAGIC!r}")
    expected = _HEADER.size + 4 * h * w * c
    if len(blob) != expected:
        raise ValueError(
            f"{path}: header says {h}x{w}x{c} ({expected} bytes), file has "
            f"{len(blob)} bytes"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size)
    return data.astype(np.float64).reshape(h, w, c)


def write_raw(image: ImageTensor, path: str | Path) -> None:
    write_raw_array(image.to_channels_last(), path)


def read_raw(path: str | Path) -> ImageTensor:
    return ImageTensor.from_channels_last(read_raw_array(path))


def load_png(path: str | Path) -> ImageTensor:
    """Load a PNG as grayscale (1 channel) or RGB, scaled to [0, 1]."""
    with Image.open(path) as img:
        mode = "L" if img.mode in ("L", "1", "I;16", "I") else "RGB"
        array = np.asarray(img.convert(mode), dtype=np.float64) / 255.0
    return ImageTensor.from_channels_last(array).quantized()


def save_png(image: ImageTensor, path: str | Path) -> None:
    if image.channels not in (1, 3):
        raise ValueError(f"PNG output needs 1 or 3 channels, got {image.channels}")
    scaled = np.rint(image.to_channels_last() * 255.0).astype(np.uint8)
    if image.channels == 1:
        Image.fromarray(scaled[:, :, 0], mode="L").save(path)
    else:
        Image.fromarray(scaled, mode="RGB").save(path)


def load_image(path: str | Path) -> ImageTensor:
    """Dispatch on extension: .png via Pillow, anything else as raw tensor."""
    p = Path(path)
    if p.suffix.lower() == ".png":
        return load_png(p)
    return read_raw(p)


# ---------------------------------------------------------------- datasets


@dataclass(frozen=True)
class LabeledImage:
    image_id: str
    path: Path
    label: int
    image: ImageTensor = field(repr=False)


def read_manifest(path: str | Path) -> list[tuple[Path, int]]:
    """Read a (path,label) manifest; relative paths resolve next to it."""
    manifest = Path(path)
    if not manifest.is_file():
        raise FileNotFoundError(f"manifest not found: {manifest}")
    rows: list[tuple[Path, int]] = []
    with open(manifest, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or not {"path", "label"} <= set(reader.fieldnames):
            raise ValueError(f"{manifest}: manifest must have 'path' and 'label' columns")
        for row in reader:
            p = Path(row["path"])
            if not p.is_absolute():
                p = manifest.parent / p
            rows.append((p, int(row["label"])))
    if not rows:
        raise ValueError(f"{manifest}: manifest lists no images")
    return rows


def write_manifest(rows: Iterable[tuple[str | Path, int]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["path", "label"])
        for p, label in rows:
            writer.writerow([str(p), label])


def load_dataset(manifest_path: str | Path) -> list[LabeledImage]:
    """Load every manifest entry; image ids come from file stems."""
    entries = read_manifest(manifest_path)
    stems = [p.stem for p, _ in entries]
    seen: dict[str, int] = {}
    loaded = []
    for (path, label), stem in zip(entries, stems):
        image_id = stem if stems.count(stem) == 1 else f"{stem}#{seen.get(stem, 0)}"
        seen[stem] = seen.get(stem, 0) + 1
        loaded.append(LabeledImage(image_id, path, label, load_image(path)))
    return loaded


def make_synthetic_dataset(
    out_dir: str | Path,
    num_images: int,
    height: int,
    width: int,
    *,
    channels: int = 1,
    num_classes: int = 2,
    seed: int = 0,
    fmt: str = "raw",
) -> Path:
    """Write a seeded synthetic dataset and return its manifest path.

    Each image mixes a class-specific smooth pattern with uniform noise, so
    toy classifiers have real signal to find.  All pixels are rounded to
    32-bit floats.
    """
    if num_images < 1:
        raise ValueError("num_images must be >= 1")
    if fmt not in ("raw", "png"):
        raise ValueError(f"unknown dataset format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    yy, xx = np.meshgrid(
        np.linspace(0.0, 1.0, height), np.linspace(0.0, 1.0, width), indexing="ij"
    )
    rows: list[tuple[str, int]] = []
    suffix = ".raw" if fmt == "raw" else ".png"
    digits = max(3, len(str(num_images - 1)))
    for k in range(num_images):
        label = int(rng.integers(num_classes))
        freq = 1.0 + label
        phase = 2.0 * math.pi * label / num_classes
        pattern = 0.5 + 0.5 * np.cos(2.0 * math.pi * freq * (xx + yy) + phase)
        noise = rng.uniform(size=(channels, height, width))
        data = np.clip(0.5 * pattern[None] + 0.5 * noise, 0.0, 1.0)
        image = ImageTensor(data).quantized()
        name = f"img{k:0{digits}d}{suffix}"
        if fmt == "raw":
            write_raw(image, out / name)
        else:
            save_png(image, out / name)
        rows.append((name, label))
    manifest = out / "manifest.csv"
    write_manifest(rows, manifest)
    return manifest
