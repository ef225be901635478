"""GIST descriptors: spectral prefiltering plus oriented log-Gabor energy
pooled on a coarse spatial grid.

The pipeline follows the canonical configuration of the descriptor: a
contrast-normalizing prefilter, a polar-separable log-Gabor bank (radial
center frequency halving per scale from 0.25 cycles/pixel, orientations
evenly covering [0, pi)), complex filtering in the frequency domain, and
block-averaged response magnitudes concatenated in (scale, orientation,
block-row, block-col) order.
"""

from __future__ import annotations

import hashlib
import logging
import struct
import zlib
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import GrayImage, Manifest, load_image
from .errors import ValidationError

log = logging.getLogger(__name__)

CACHE_MAGIC = b"GSTC"
CACHE_VERSION = 1

_LN2 = float(np.log(2.0))
# Radial log-Gabor width: adjacent octave-spaced scales cross near half height.
_SIGMA_RADIAL = _LN2 / (2.0 * np.sqrt(2.0 * _LN2))


class CacheError(ValidationError):
    """Descriptor cache unreadable or failed its integrity check."""


@dataclass(frozen=True)
class GistParams:
    image_side: int = 128
    orientations_per_scale: tuple[int, ...] = (8, 8, 8, 8)
    blocks: int = 4
    prefilter_cutoff: float = 4.0

    def __post_init__(self):
        object.__setattr__(self, "orientations_per_scale",
                           tuple(int(v) for v in self.orientations_per_scale))
        if self.image_side < 16:
            raise ValidationError("image_side must be >= 16")
        if self.blocks < 1 or self.image_side % self.blocks != 0:
            raise ValidationError("image_side must be divisible by blocks")
        if not self.orientations_per_scale or any(v < 1 for v in self.orientations_per_scale):
            raise ValidationError("orientation counts must all be >= 1")
        if not (self.prefilter_cutoff > 0.0):
            raise ValidationError("prefilter_cutoff must be > 0")

    @property
    def dim(self) -> int:
        return self.blocks * self.blocks * sum(self.orientations_per_scale)


def params_hash(params: GistParams) -> str:
    """16-hex-char checksum identifying a GistParams configuration."""
    text = "|".join([
        str(params.image_side),
        ",".join(str(v) for v in params.orientations_per_scale),
        str(params.blocks),
        repr(float(params.prefilter_cutoff)),
    ])
    return hashlib.sha256(text.encode("ascii")).hexdigest()[:16]


@dataclass(frozen=True)
class GistDescriptor:
    values: np.ndarray  # (dim,) float64, non-negative pooled magnitudes
    params_hash: str

    def __post_init__(self):
        v = self.values
        if v.ndim != 1:
            raise ValidationError("descriptor values must be a vector")
        if not np.all(np.isfinite(v)) or float(v.min(initial=0.0)) < 0.0:
            raise ValidationError("descriptor values must be finite and >= 0")


@dataclass(frozen=True)
class DescriptorSet:
    """Descriptor rows for an ordered id list, all from one configuration."""

    ids: tuple[str, ...]
    matrix: np.ndarray  # (n, dim)
    params_hash: str

    def __post_init__(self):
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.ids):
            raise ValidationError("row count must equal id count")

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, ids: Sequence[str]) -> "DescriptorSet":
        index = {v: i for i, v in enumerate(self.ids)}
        try:
            rows = [index[v] for v in ids]
        except KeyError as exc:
            raise ValidationError(f"id {exc.args[0]!r} has no descriptor row") from exc
        return DescriptorSet(tuple(ids), self.matrix[rows], self.params_hash)


def _lowpass_transfer(side: int, cutoff: float) -> np.ndarray:
    # Gaussian low-pass in the frequency domain, amplitude 1/2 at `cutoff`
    # cycles/image and exactly 1 at DC.
    freqs = np.fft.fftfreq(side) * side
    fsq = freqs[None, :] ** 2 + freqs[:, None] ** 2
    return np.exp(-fsq * (_LN2 / (cutoff * cutoff)))


def prefilter(img: GrayImage, cutoff: float) -> np.ndarray:
    """Contrast-normalize log intensities; the result has exactly zero mean.

    log(1 + 255 I) is high-passed by subtracting a Gaussian low-pass, divided
    by 0.2 plus the local RMS of the residual, then mean-centered.
    """
    if img.width != img.height:
        raise ValidationError("prefilter requires a square image")
    return _prefilter_stack(img.pixels[None, :, :], cutoff)[0]


def _prefilter_stack(stack: np.ndarray, cutoff: float) -> np.ndarray:
    side = stack.shape[-1]
    lp = _lowpass_transfer(side, cutoff)
    logimg = np.log1p(stack * 255.0)

    def lowpass(x: np.ndarray) -> np.ndarray:
        return np.real(np.fft.ifft2(np.fft.fft2(x) * lp))

    residual = logimg - lowpass(logimg)
    local_rms = np.sqrt(np.maximum(lowpass(residual * residual), 0.0))
    out = residual / (0.2 + local_rms)
    return out - out.mean(axis=(-2, -1), keepdims=True)


@lru_cache(maxsize=8)
def _bank_cached(params: GistParams) -> tuple[np.ndarray, ...]:
    side = params.image_side
    freqs = np.fft.fftfreq(side)  # cycles/pixel
    fx = freqs[None, :]
    fy = freqs[:, None]
    radius = np.hypot(fx, fy)
    angle = np.arctan2(fy, fx)
    nonzero = radius > 0.0
    log_r = np.zeros_like(radius)
    log_r[nonzero] = np.log(radius[nonzero])

    filters = []
    for scale, n_orient in enumerate(params.orientations_per_scale):
        f0 = 0.25 / (2.0 ** scale)
        radial = np.exp(-((log_r - np.log(f0)) ** 2) / (2.0 * _SIGMA_RADIAL**2))
        radial[~nonzero] = 0.0  # zero DC by construction
        # Adjacent orientations (spacing pi/n) cross near half height.
        sigma_theta = np.pi / (2.0 * n_orient * np.sqrt(2.0 * _LN2))
        for o in range(n_orient):
            theta = o * np.pi / n_orient
            delta = np.arctan2(np.sin(angle - theta), np.cos(angle - theta))
            transfer = radial * np.exp(-(delta**2) / (2.0 * sigma_theta**2))
            transfer /= transfer.max()
            filters.append(transfer)
    return tuple(filters)


def gabor_bank(params: GistParams) -> list[np.ndarray]:
    """Frequency-domain transfer functions, one per (scale, orientation).

    Each filter is single-lobed (complex response after inverse transform),
    with maximum transfer value exactly 1. The returned arrays are shared and
    must be treated as read-only.
    """
    return list(_bank_cached(params))


def _descriptor_stack(stack: np.ndarray, params: GistParams) -> np.ndarray:
    bank = _bank_cached(params)
    k = stack.shape[0]
    side = params.image_side
    blocks = params.blocks
    cell = side // blocks
    pre = _prefilter_stack(stack, params.prefilter_cutoff)
    spectra = np.fft.fft2(pre)
    out = np.empty((k, params.dim))
    col = 0
    step = blocks * blocks
    for transfer in bank:
        resp = np.abs(np.fft.ifft2(spectra * transfer))
        pooled = resp.reshape(k, blocks, cell, blocks, cell).mean(axis=(2, 4))
        out[:, col:col + step] = pooled.reshape(k, step)
        col += step
    return out


def gist_descriptor(img: GrayImage, params: GistParams) -> GistDescriptor:
    """Descriptor of one image; image side must match params.image_side."""
    if img.width != params.image_side or img.height != params.image_side:
        raise ValidationError(
            f"image is {img.width}x{img.height}, params expect {params.image_side}"
        )
    values = _descriptor_stack(img.pixels[None, :, :], params)[0]
    return GistDescriptor(values=values, params_hash=params_hash(params))


def batch_descriptors(
    manifest: Manifest,
    params: GistParams,
    cache_path: str | Path | None = None,
    progress: Callable[[int, int], None] | None = None,
    chunk_size: int = 1,
) -> DescriptorSet:
    """Descriptors for every manifest record, in manifest order.

    When `cache_path` holds a valid cache for the same params and id list it
    is loaded instead; stale or corrupt caches are recomputed and rewritten
    with a warning. Rows are stored as 32-bit floats.
    """
    ids = tuple(rec.id for rec in manifest.records)
    phash = params_hash(params)
    if cache_path is not None:
        cache_path = Path(cache_path)
        if cache_path.exists():
            try:
                cached = read_descriptor_cache(cache_path)
                if cached.params_hash == phash and cached.ids == ids:
                    return cached
                log.warning("descriptor cache %s is stale; recomputing", cache_path)
            except CacheError as exc:
                log.warning("descriptor cache %s unreadable (%s); recomputing", cache_path, exc)

    rows = np.empty((len(ids), params.dim), dtype=np.float32)
    done = 0
    for start in range(0, len(ids), chunk_size):
        records = manifest.records[start:start + chunk_size]
        imgs = []
        for rec in records:
            try:
                imgs.append(load_image(rec, params.image_side).pixels)
            except ValidationError as exc:
                raise ValidationError(f"record {rec.id!r}: {exc}") from exc
        if imgs:
            stack = np.stack(imgs)
            rows[start:start + len(imgs)] = _descriptor_stack(stack, params).astype(np.float32)
        done += len(records)
        if progress is not None:
            progress(done, len(ids))
    dset = DescriptorSet(ids=ids, matrix=rows, params_hash=phash)
    if cache_path is not None:
        write_descriptor_cache(dset, cache_path)
    return dset


def write_descriptor_cache(dset: DescriptorSet, path: str | Path) -> Path:
    """Binary cache: magic, u16 version, 8-byte params hash, u32 rows, u32 dim,
    length-prefixed UTF-8 ids, row-major little-endian float32 data, CRC32."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(dset.matrix, dtype="<f4").tobytes()
    blob = bytearray()
    blob += CACHE_MAGIC
    blob += struct.pack("<H", CACHE_VERSION)
    blob += bytes.fromhex(dset.params_hash)
    blob += struct.pack("<II", len(dset.ids), dset.matrix.shape[1])
    for image_id in dset.ids:
        encoded = image_id.encode("utf-8")
        blob += struct.pack("<I", len(encoded))
        blob += encoded
    blob += data
    blob += struct.pack("<I", zlib.crc32(data) & 0xFFFFFFFF)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(bytes(blob))
    tmp.replace(path)
    return path


def read_descriptor_cache(path: str | Path) -> DescriptorSet:
    raw = Path(path).read_bytes()
    view = memoryview(raw)
    try:
        if bytes(view[:4]) != CACHE_MAGIC:
            raise CacheError("bad magic")
        (version,) = struct.unpack_from("<H", view, 4)
        if version != CACHE_VERSION:
            raise CacheError(f"unsupported cache version {version}")
        phash = bytes(view[6:14]).hex()
        rows, dim = struct.unpack_from("<II", view, 14)
        offset = 22
        ids = []
        for _ in range(rows):
            (length,) = struct.unpack_from("<I", view, offset)
            offset += 4
            ids.append(bytes(view[offset:offset + length]).decode("utf-8"))
            offset += length
        nbytes = rows * dim * 4
        data = bytes(view[offset:offset + nbytes])
        if len(data) != nbytes:
            raise CacheError("truncated float block")
        offset += nbytes
        (crc,) = struct.unpack_from("<I", view, offset)
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise CacheError(f"malformed cache: {exc}") from exc
    if zlib.crc32(data) & 0xFFFFFFFF != crc:
        raise CacheError("CRC mismatch")
    matrix = np.frombuffer(data, dtype="<f4").reshape(rows, dim).copy()
    return DescriptorSet(ids=tuple(ids), matrix=matrix, params_hash=phash)
