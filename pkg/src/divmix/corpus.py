"""Labeled image corpora: disk manifests, canonical grayscale loading, split filtering.

Manifests are JSONL or CSV files listing image records; images are decoded
from PNG/PPM, optionally cropped to a bounding box, converted to grayscale,
and resized to a square working resolution (128 px by default elsewhere).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ValidationError

SPLITS = ("train", "val", "test")
SUPPORTED_SUFFIXES = (".png", ".ppm")

_CSV_HEADER = [
    "id", "path", "class", "split",
    "bbox_x", "bbox_y", "bbox_w", "bbox_h", "size_fraction",
]


class ManifestError(ValidationError):
    """Malformed or internally inconsistent manifest."""


class ImageLoadError(ValidationError):
    """Image file missing, undecodable, or inconsistent with its record."""


@dataclass(frozen=True)
class ImageRecord:
    id: str
    path: str
    class_label: str
    split: str
    bbox: tuple[int, int, int, int] | None = None
    size_fraction: float | None = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ManifestError(f"record {self.id!r}: unknown split {self.split!r}")
        if self.bbox is not None:
            x, y, w, h = self.bbox
            if x < 0 or y < 0 or w < 1 or h < 1:
                raise ManifestError(f"record {self.id!r}: invalid bbox {self.bbox}")
        if self.size_fraction is not None and not (0.0 < self.size_fraction <= 1.0):
            raise ManifestError(
                f"record {self.id!r}: size_fraction {self.size_fraction} not in (0, 1]"
            )


@dataclass(frozen=True)
class Manifest:
    records: tuple[ImageRecord, ...]
    classes: tuple[str, ...]

    def __post_init__(self):
        if not self.classes:
            raise ManifestError("class list is empty")
        if len(set(self.classes)) != len(self.classes):
            raise ManifestError("duplicate names in class list")
        known = set(self.classes)
        seen: set[str] = set()
        for rec in self.records:
            if rec.id in seen:
                raise ManifestError(f"duplicate record id {rec.id!r}")
            seen.add(rec.id)
            if rec.class_label not in known:
                raise ManifestError(
                    f"record {rec.id!r}: class {rec.class_label!r} not in class list"
                )

    def ids(self) -> list[str]:
        return [rec.id for rec in self.records]

    def by_class(self, split: str | None = None) -> dict[str, list[ImageRecord]]:
        """Records grouped by class (manifest order), optionally filtered by split."""
        groups: dict[str, list[ImageRecord]] = {c: [] for c in self.classes}
        for rec in self.records:
            if split is None or rec.split == split:
                groups[rec.class_label].append(rec)
        return groups


@dataclass(frozen=True)
class GrayImage:
    """Grayscale raster with row-major float intensities in [0, 1]."""

    pixels: np.ndarray  # (height, width) float64

    def __post_init__(self):
        px = self.pixels
        if not isinstance(px, np.ndarray) or px.ndim != 2 or px.size == 0:
            raise ValidationError("pixel grid must be a non-empty 2-D array")
        if not np.all(np.isfinite(px)):
            raise ValidationError("pixel intensities must be finite")
        if float(px.min()) < 0.0 or float(px.max()) > 1.0:
            raise ValidationError("pixel intensities must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def load_manifest(path: str | Path) -> Manifest:
    """Parse a JSONL or CSV manifest; image paths resolve against the manifest's directory.

    The class list is the sorted set of labels unless a JSONL header record
    ``{"classes": [...]}`` supplies an explicit ordering.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    if path.suffix.lower() == ".csv":
        records, classes = _parse_csv(path)
    elif path.suffix.lower() in (".jsonl", ".json"):
        records, classes = _parse_jsonl(path)
    else:
        raise ManifestError(f"unsupported manifest format: {path.suffix!r}")
    if not records:
        raise ManifestError(f"{path}: no records")
    if classes is None:
        classes = tuple(sorted({rec.class_label for rec in records}))
    return Manifest(records=tuple(records), classes=classes)


def _parse_jsonl(path: Path) -> tuple[list[ImageRecord], tuple[str, ...] | None]:
    records: list[ImageRecord] = []
    classes: tuple[str, ...] | None = None
    base = path.parent
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}: line {lineno}: malformed JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise ManifestError(f"{path}: line {lineno}: expected an object")
            if "classes" in obj and "id" not in obj:
                if classes is not None:
                    raise ManifestError(f"{path}: line {lineno}: duplicate classes header")
                classes = tuple(str(c) for c in obj["classes"])
                continue
            records.append(_record_from_fields(obj, base, f"{path}: line {lineno}"))
    return records, classes


def _parse_csv(path: Path) -> tuple[list[ImageRecord], tuple[str, ...] | None]:
    records: list[ImageRecord] = []
    base = path.parent
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return [], None
        if [h.strip() for h in header] != _CSV_HEADER:
            raise ManifestError(f"{path}: line 1: expected header {','.join(_CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(_CSV_HEADER):
                raise ManifestError(f"{path}: line {lineno}: expected {len(_CSV_HEADER)} cells")
            fields: dict = dict(zip(["id", "path", "class", "split"], row[:4]))
            bbox_cells = [c.strip() for c in row[4:8]]
            if any(bbox_cells):
                if not all(bbox_cells):
                    raise ManifestError(f"{path}: line {lineno}: partial bbox")
                fields["bbox"] = bbox_cells
            if row[8].strip():
                fields["size_fraction"] = row[8]
            records.append(_record_from_fields(fields, base, f"{path}: line {lineno}"))
    return records, None


def _record_from_fields(fields: dict, base: Path, where: str) -> ImageRecord:
    for key in ("id", "path", "class", "split"):
        if key not in fields or fields[key] in (None, ""):
            raise ManifestError(f"{where}: missing required field {key!r}")
    split = str(fields["split"])
    if split not in SPLITS:
        raise ManifestError(f"{where}: unknown split {split!r}")
    bbox = None
    if fields.get("bbox") is not None:
        raw = fields["bbox"]
        if not isinstance(raw, (list, tuple)) or len(raw) != 4:
            raise ManifestError(f"{where}: bbox must be [x, y, w, h]")
        try:
            bbox = tuple(int(v) for v in raw)
        except (TypeError, ValueError) as exc:
            raise ManifestError(f"{where}: non-integer bbox {raw!r}") from exc
    size_fraction = None
    if fields.get("size_fraction") is not None:
        try:
            size_fraction = float(fields["size_fraction"])
        except (TypeError, ValueError) as exc:
            raise ManifestError(f"{where}: bad size_fraction {fields['size_fraction']!r}") from exc
    rec_path = Path(str(fields["path"]))
    if not rec_path.is_absolute():
        rec_path = base / rec_path
    try:
        return ImageRecord(
            id=str(fields["id"]),
            path=str(rec_path),
            class_label=str(fields["class"]),
            split=split,
            bbox=bbox,
            size_fraction=size_fraction,
        )
    except ManifestError as exc:
        raise ManifestError(f"{where}: {exc}") from exc


def save_manifest(manifest: Manifest, path: str | Path) -> Path:
    """Write a manifest as JSONL with an explicit classes header.

    Record paths are stored relative to the manifest directory when possible.
    """
    path = Path(path)
    base = path.parent
    lines = [json.dumps({"classes": list(manifest.classes)})]
    for rec in manifest.records:
        rec_path = Path(rec.path)
        try:
            stored = rec_path.relative_to(base).as_posix()
        except ValueError:
            stored = str(rec_path)
        obj: dict = {"id": rec.id, "path": stored, "class": rec.class_label, "split": rec.split}
        if rec.bbox is not None:
            obj["bbox"] = list(rec.bbox)
        if rec.size_fraction is not None:
            obj["size_fraction"] = rec.size_fraction
        lines.append(json.dumps(obj))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_image(record: ImageRecord, side: int) -> GrayImage:
    """Decode one record to a side x side grayscale image.

    Pipeline: decode (PNG/PPM) -> crop to bbox when present -> grayscale by
    luminance (0.299 R + 0.587 G + 0.114 B; single-channel sources pass
    through exactly) -> bilinear resize with corner alignment.
    """
    if side < 16:
        raise ValidationError(f"side must be >= 16, got {side}")
    path = Path(record.path)
    if path.suffix.lower() not in SUPPORTED_SUFFIXES:
        raise ImageLoadError(f"record {record.id!r}: unsupported codec {path.suffix!r}")
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            if mode == "L":
                arr = np.asarray(img, dtype=np.float64) / 255.0
            else:
                rgb = np.asarray(img.convert("RGB"), dtype=np.float64)
                arr = (0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]) / 255.0
    except FileNotFoundError as exc:
        raise ImageLoadError(f"record {record.id!r}: file not found: {path}") from exc
    except (OSError, SyntaxError, ValueError) as exc:
        raise ImageLoadError(f"record {record.id!r}: decode failed: {exc}") from exc
    if record.bbox is not None:
        x, y, w, h = record.bbox
        height, width = arr.shape
        if x + w > width or y + h > height:
            raise ImageLoadError(
                f"record {record.id!r}: bbox {record.bbox} outside {width}x{height} image"
            )
        arr = arr[y:y + h, x:x + w]
    out = resize_bilinear(arr, side)
    return GrayImage(np.clip(out, 0.0, 1.0))


def resize_bilinear(src: np.ndarray, side: int) -> np.ndarray:
    """Corner-aligned bilinear resize of a 2-D array to side x side.

    Output pixel (r, c) samples source coordinates r*(H-1)/(side-1),
    c*(W-1)/(side-1), so the four corner pixels equal the source corners.
    """
    h, w = src.shape
    if h == side and w == side:
        return src.astype(np.float64, copy=True)
    ys = _sample_coords(h, side)
    xs = _sample_coords(w, side)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = src[np.ix_(y0, x0)]
    b = src[np.ix_(y0, x1)]
    c = src[np.ix_(y1, x0)]
    d = src[np.ix_(y1, x1)]
    return (a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx
            + c * fy * (1 - fx) + d * fy * fx)


def _sample_coords(src_len: int, out_len: int) -> np.ndarray:
    if src_len == 1 or out_len == 1:
        return np.zeros(out_len)
    return np.arange(out_len) * ((src_len - 1) / (out_len - 1))


def split_manifest(manifest: Manifest, split: str) -> Manifest:
    """Filter a manifest to one split, preserving class list and record order."""
    if split not in SPLITS:
        raise ValidationError(f"unknown split {split!r}")
    kept = tuple(rec for rec in manifest.records if rec.split == split)
    return Manifest(records=kept, classes=manifest.classes)
