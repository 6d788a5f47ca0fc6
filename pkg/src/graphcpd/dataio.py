"""Containers and binary file formats for multiband sequences, labelings and masks.

Three little-endian formats are supported:

``MBS1``  image sequence
    magic, then uint32 ``T, H, W, L``, then ``T*L*H*W`` float32 values
    ordered frame-major, band-major, row-major.
``SPL1``  superpixel labeling
    magic, then uint32 ``H, W``, then ``H*W`` uint32 labels.
``CMK1``  binary change mask
    magic, then uint32 ``H, W``, then ``H*W`` bytes in {0, 1}.

Masks can also be exported as binary PGM (P5) images for viewing.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, FormatError

SEQUENCE_MAGIC = b"MBS1"
LABELS_MAGIC = b"SPL1"
MASK_MAGIC = b"CMK1"

_F32 = np.dtype("<f4")
_U32 = np.dtype("<u4")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Frame:
    """One multiband image, stored as an ``(L, H, W)`` array."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3 or min(v.shape) < 1:
            raise DimensionError(f"frame must have shape (L, H, W) with all dims >= 1, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise FormatError("values: frame contains non-finite entries")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def bands(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[1], self.values.shape[2]

    @property
    def n_pixels(self) -> int:
        return self.values.shape[1] * self.values.shape[2]

    @property
    def matrix(self) -> np.ndarray:
        """``L x N`` view with pixels in row-major order."""
        return self.values.reshape(self.bands, -1)


@dataclass(frozen=True, eq=False)
class ImageSequence:
    """``T`` frames of ``L`` bands over an ``H x W`` grid, held as float32."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 4:
            raise DimensionError(f"sequence must have shape (T, L, H, W), got {d.shape}")
        for name, n in zip("TLHW", d.shape):
            if n < 1:
                raise FormatError(f"{name}: dimension must be >= 1")
        d = d.astype(_F32, copy=False)
        if not np.all(np.isfinite(d)):
            raise FormatError("payload: sequence contains non-finite values")
        object.__setattr__(self, "data", _frozen(d))

    @classmethod
    def from_frames(cls, frames: Iterable[Frame | np.ndarray]) -> "ImageSequence":
        arrs = [f.values if isinstance(f, Frame) else np.asarray(f) for f in frames]
        shapes = {a.shape for a in arrs}
        if len(shapes) != 1:
            raise DimensionError(f"frames disagree in shape: {sorted(shapes)}")
        return cls(np.stack(arrs))

    @property
    def header(self) -> tuple[int, int, int, int]:
        """``(T, H, W, L)`` in file order."""
        T, L, H, W = self.data.shape
        return T, H, W, L

    def __len__(self) -> int:
        return self.data.shape[0]

    def frame(self, t: int) -> Frame:
        """Frame ``t`` using 1-based indexing."""
        if not 1 <= t <= len(self):
            raise IndexError(f"frame index {t} outside 1..{len(self)}")
        return Frame(self.data[t - 1])

    def __iter__(self):
        for t in range(1, len(self) + 1):
            yield self.frame(t)


@dataclass(frozen=True, eq=False)
class Labeling:
    """Superpixel id per pixel, contiguous ids ``0..K-1`` over an ``(H, W)`` grid."""

    labels: np.ndarray
    n_segments: int = field(init=False)

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim == 1:
            lab = lab.reshape(1, -1)
        if lab.ndim != 2 or lab.size == 0:
            raise DimensionError(f"labels must be a non-empty (H, W) array, got shape {lab.shape}")
        if not np.issubdtype(lab.dtype, np.integer):
            raise FormatError("labels: ids must be integers")
        if lab.min() < 0:
            raise FormatError("labels: ids must be non-negative")
        present = np.unique(lab)
        k = int(present[-1]) + 1
        if present.size != k:
            missing = sorted(set(range(k)) - set(present.tolist()))
            raise FormatError(f"labels: ids are not contiguous, missing {missing[:5]}")
        object.__setattr__(self, "labels", _frozen(lab.astype(np.int64)))
        object.__setattr__(self, "n_segments", k)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    @property
    def flat(self) -> np.ndarray:
        return self.labels.reshape(-1)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.flat, minlength=self.n_segments)

    def __eq__(self, other):
        if not isinstance(other, Labeling):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.labels, other.labels))


@dataclass(frozen=True, eq=False)
class ChangeMask:
    """Binary change flags of frame ``t`` over an ``(H, W)`` grid."""

    flags: np.ndarray
    t: int = 2

    def __post_init__(self):
        f = np.asarray(self.flags)
        if f.ndim == 1:
            f = f.reshape(1, -1)
        if f.ndim != 2 or f.size == 0:
            raise DimensionError(f"mask must be a non-empty (H, W) array, got shape {f.shape}")
        if f.dtype == bool:
            f = f.astype(np.uint8)
        if not np.all((f == 0) | (f == 1)):
            bad = f[(f != 0) & (f != 1)].flat[0]
            raise FormatError(f"flags: value {bad} outside {{0, 1}}")
        object.__setattr__(self, "flags", _frozen(f.astype(np.uint8)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.flags.shape

    def __eq__(self, other):
        if not isinstance(other, ChangeMask):
            return NotImplemented
        return self.t == other.t and bool(np.array_equal(self.flags, other.flags))


def _read_header(buf: bytes, magic: bytes, names: Sequence[str]) -> tuple[int, ...]:
    if buf[:4] != magic:
        raise FormatError(f"magic: expected {magic!r}, found {buf[:4]!r}")
    need = 4 + 4 * len(names)
    if len(buf) < need:
        raise FormatError(f"header: truncated, {len(buf)} of {need} bytes")
    dims = struct.unpack(f"<{len(names)}I", buf[4:need])
    for name, n in zip(names, dims):
        if n == 0:
            raise FormatError(f"{name}: dimension must be >= 1")
    return dims


def _payload(buf: bytes, offset: int, count: int, dtype: np.dtype, what: str) -> np.ndarray:
    have = len(buf) - offset
    need = count * dtype.itemsize
    if have < need:
        raise FormatError(f"{what}: truncated payload, {have} of {need} bytes")
    if have > need:
        raise FormatError(f"{what}: {have - need} trailing bytes beyond declared payload")
    return np.frombuffer(buf, dtype=dtype, count=count, offset=offset)


def decode_sequence(buf: bytes) -> ImageSequence:
    T, H, W, L = _read_header(buf, SEQUENCE_MAGIC, ("T", "H", "W", "L"))
    values = _payload(buf, 20, T * L * H * W, _F32, "payload")
    if not np.all(np.isfinite(values)):
        raise FormatError("payload: non-finite value")
    return ImageSequence(values.reshape(T, L, H, W))


def encode_sequence(seq: ImageSequence) -> bytes:
    return SEQUENCE_MAGIC + struct.pack("<4I", *seq.header) + seq.data.astype(_F32).tobytes()


def read_sequence(path) -> ImageSequence:
    return decode_sequence(Path(path).read_bytes())


def write_sequence(seq: ImageSequence, path) -> None:
    if not isinstance(seq, ImageSequence):
        seq = ImageSequence(seq)
    Path(path).write_bytes(encode_sequence(seq))


def decode_labels(buf: bytes) -> Labeling:
    H, W = _read_header(buf, LABELS_MAGIC, ("H", "W"))
    labels = _payload(buf, 12, H * W, _U32, "labels")
    return Labeling(labels.astype(np.int64).reshape(H, W))


def encode_labels(labeling: Labeling) -> bytes:
    H, W = labeling.shape
    return LABELS_MAGIC + struct.pack("<2I", H, W) + labeling.labels.astype(_U32).tobytes()


def read_labels(path) -> Labeling:
    return decode_labels(Path(path).read_bytes())


def write_labels(labeling: Labeling, path) -> None:
    Path(path).write_bytes(encode_labels(labeling))


def decode_mask(buf: bytes, t: int = 2) -> ChangeMask:
    H, W = _read_header(buf, MASK_MAGIC, ("H", "W"))
    flags = _payload(buf, 12, H * W, np.dtype("u1"), "flags")
    return ChangeMask(flags.reshape(H, W), t=t)


def encode_mask(mask: ChangeMask) -> bytes:
    H, W = mask.shape
    return MASK_MAGIC + struct.pack("<2I", H, W) + mask.flags.astype(np.uint8).tobytes()


def read_mask(path, t: int = 2) -> ChangeMask:
    """Read a CMK1 mask. The format does not store ``t``; pass it if known."""
    return decode_mask(Path(path).read_bytes(), t=t)


def write_mask(mask: ChangeMask, path) -> None:
    Path(path).write_bytes(encode_mask(mask))


def write_pgm(mask: ChangeMask, path) -> None:
    """Export a mask as an 8-bit binary PGM with changed pixels at 255."""
    H, W = mask.shape
    header = f"P5\n{W} {H}\n255\n".encode("ascii")
    Path(path).write_bytes(header + (mask.flags.astype(np.uint8) * 255).tobytes())


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
