"""Synthetic labeled corpora: procedural 3-D objects rendered under
controllable viewpoint and scale distributions.

Viewpoints mix a von Mises "core" around a mean direction with a uniform
outlier component; rendering is orthographic with headlight Lambert shading,
so all appearance variation comes from geometry, pose, and scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .corpus import GrayImage, ImageRecord, Manifest, load_manifest, save_manifest
from .errors import RunError, ValidationError
from .seeding import derive_seed, keyed_rng

TWO_PI = 2.0 * math.pi
HALF_PI = 0.5 * math.pi

SHAPES = ("cuboid", "ellipsoid")


class RenderError(ValidationError):
    """Object cannot be rendered (empty projection)."""


@dataclass(frozen=True)
class Part:
    shape: str
    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]
    albedo: float

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValidationError(f"unknown part shape {self.shape!r}")
        if len(self.center) != 3 or len(self.half_extents) != 3:
            raise ValidationError("part center and half_extents must be 3-vectors")
        if any(h <= 0.0 for h in self.half_extents):
            raise ValidationError("half_extents must be strictly positive")
        if not (0.0 <= self.albedo <= 1.0):
            raise ValidationError(f"albedo {self.albedo} not in [0, 1]")


@dataclass(frozen=True)
class ObjectSpec:
    name: str
    parts: tuple[Part, ...]

    def __post_init__(self):
        if not self.parts:
            raise ValidationError(f"object {self.name!r} has no parts")


@dataclass(frozen=True)
class ViewDistribution:
    """Two-component view model: a von Mises core plus uniform outliers.

    concentration 0 makes the core itself uniform; outlier_fraction is the
    probability that a draw ignores the core entirely. Object scale (projected
    bounding-square side over frame side) is uniform in [scale_min, scale_max].
    """

    azimuth_mean: float = 0.0
    elevation_mean: float = 0.0
    concentration: float = 0.0
    outlier_fraction: float = 0.0
    scale_min: float = 0.5
    scale_max: float = 0.5

    def __post_init__(self):
        if self.concentration < 0.0:
            raise ValidationError("concentration must be >= 0")
        if not (0.0 <= self.outlier_fraction <= 1.0):
            raise ValidationError("outlier_fraction must be in [0, 1]")
        if not (0.0 < self.scale_min <= self.scale_max):
            raise ValidationError("need 0 < scale_min <= scale_max")
        if self.scale_max > 1.0:
            raise ValidationError("scale_max must be <= 1")


@dataclass(frozen=True)
class Viewpoint:
    azimuth: float
    elevation: float
    scale: float

    def __post_init__(self):
        if not (-HALF_PI <= self.elevation <= HALF_PI):
            raise ValidationError(f"elevation {self.elevation} outside [-pi/2, pi/2]")
        if not (0.0 < self.scale <= 1.0):
            raise ValidationError(f"scale {self.scale} not in (0, 1]")


def child_like_views() -> ViewDistribution:
    """Diffuse large-object statistics: weak core, 30% outliers, big scales."""
    return ViewDistribution(
        azimuth_mean=0.0, elevation_mean=-0.35, concentration=4.0,
        outlier_fraction=0.3, scale_min=0.4, scale_max=0.9,
    )


def parent_like_views() -> ViewDistribution:
    """Concentrated small-object statistics: tight core, no outliers."""
    return ViewDistribution(
        azimuth_mean=0.0, elevation_mean=-0.35, concentration=30.0,
        outlier_fraction=0.0, scale_min=0.1, scale_max=0.4,
    )


def canonical_views() -> ViewDistribution:
    """Prototypical third-person viewpoint used as the default test split."""
    return ViewDistribution(
        azimuth_mean=0.9, elevation_mean=0.5, concentration=30.0,
        outlier_fraction=0.0, scale_min=0.35, scale_max=0.65,
    )


VIEW_PRESETS = {
    "child_like": child_like_views,
    "parent_like": parent_like_views,
    "canonical": canonical_views,
}


def _sample_von_mises(rng: np.random.Generator, mu: float, kappa: float) -> float:
    # Best-Fisher (1979) rejection sampler; kappa ~ 0 degenerates to uniform.
    if kappa < 1e-9:
        return mu + (2.0 * rng.random() - 1.0) * math.pi
    tau = 1.0 + math.sqrt(1.0 + 4.0 * kappa * kappa)
    rho = (tau - math.sqrt(2.0 * tau)) / (2.0 * kappa)
    r = (1.0 + rho * rho) / (2.0 * rho)
    while True:
        z = math.cos(math.pi * rng.random())
        f = (1.0 + r * z) / (r + z)
        c = kappa * (r - f)
        u2 = rng.random()
        if c * (2.0 - c) - u2 > 0.0 or math.log(c / u2) + 1.0 - c >= 0.0:
            break
    f = max(-1.0, min(1.0, f))
    return mu + math.copysign(math.acos(f), rng.random() - 0.5)


def sample_viewpoints(dist: ViewDistribution, count: int, seed: int) -> list[Viewpoint]:
    """Draw viewpoints; draw i comes from its own RNG stream keyed by (seed, i),
    so results do not depend on evaluation order."""
    if count < 0:
        raise ValidationError("count must be >= 0")
    views = []
    for i in range(count):
        rng = keyed_rng(seed, i)
        if rng.random() < dist.outlier_fraction:
            azimuth = rng.random() * TWO_PI
            elevation = (rng.random() - 0.5) * math.pi
        else:
            azimuth = _sample_von_mises(rng, dist.azimuth_mean, dist.concentration) % TWO_PI
            elevation = _sample_von_mises(rng, dist.elevation_mean, dist.concentration)
            elevation = max(-HALF_PI, min(HALF_PI, elevation))
        scale = dist.scale_min + (dist.scale_max - dist.scale_min) * rng.random()
        views.append(Viewpoint(azimuth=azimuth, elevation=elevation, scale=scale))
    return views


def _rotation(azimuth: float, elevation: float) -> np.ndarray:
    ca, sa = math.cos(azimuth), math.sin(azimuth)
    ce, se = math.cos(elevation), math.sin(elevation)
    ry = np.array([[ca, 0.0, sa], [0.0, 1.0, 0.0], [-sa, 0.0, ca]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, ce, -se], [0.0, se, ce]])
    return rx @ ry


def _projected_bounds(obj: ObjectSpec, rot: np.ndarray) -> tuple[float, float, float, float]:
    # Exact support-function extents of the rotated parts along screen x / y.
    xmin = ymin = math.inf
    xmax = ymax = -math.inf
    for part in obj.parts:
        center_w = rot @ np.asarray(part.center)
        h = np.asarray(part.half_extents)
        for axis in (0, 1):
            u_obj = rot[axis, :]  # rot.T @ e_axis
            if part.shape == "ellipsoid":
                ext = float(np.linalg.norm(h * u_obj))
            else:
                ext = float(np.abs(h * u_obj).sum())
            lo = float(center_w[axis]) - ext
            hi = float(center_w[axis]) + ext
            if axis == 0:
                xmin, xmax = min(xmin, lo), max(xmax, hi)
            else:
                ymin, ymax = min(ymin, lo), max(ymax, hi)
    return xmin, xmax, ymin, ymax


def render_view(obj: ObjectSpec, view: Viewpoint, side: int = 128) -> GrayImage:
    """Orthographic render of the rotated object, depth-tested per pixel.

    Intensity is part albedo times the Lambert term against a headlight at
    the camera; the projected bounding square spans `scale` of the frame.
    """
    if side < 16:
        raise ValidationError(f"side must be >= 16, got {side}")
    azimuth = math.fmod(view.azimuth, TWO_PI)
    if azimuth < 0.0:
        azimuth += TWO_PI
    rot = _rotation(azimuth, view.elevation)

    xmin, xmax, ymin, ymax = _projected_bounds(obj, rot)
    half = max(xmax - xmin, ymax - ymin) / 2.0
    if not (half > 0.0) or not math.isfinite(half):
        raise RenderError(f"object {obj.name!r}: degenerate projection")
    cx = (xmin + xmax) / 2.0
    cy = (ymin + ymax) / 2.0
    window = 2.0 * half / view.scale

    xs = cx + ((np.arange(side) + 0.5) / side - 0.5) * window
    ys = cy + (0.5 - (np.arange(side) + 0.5) / side) * window
    gx, gy = np.meshgrid(xs, ys)
    # Ray bases in object space: rot.T @ (x, y, 0); shared direction rot.T @ e_z.
    base = np.stack(
        [rot[0, 0] * gx + rot[1, 0] * gy,
         rot[0, 1] * gx + rot[1, 1] * gy,
         rot[0, 2] * gx + rot[1, 2] * gy],
        axis=-1,
    ).reshape(-1, 3)
    direction = rot[2, :]

    depth = np.full(side * side, -np.inf)
    shade = np.zeros(side * side)
    for part in obj.parts:
        t, cosine, hit = _intersect(part, base, direction)
        closer = hit & (t > depth)
        if np.any(closer):
            depth[closer] = t[closer]
            shade[closer] = part.albedo * np.clip(cosine[closer], 0.0, 1.0)
    if not np.any(np.isfinite(depth)):
        raise RenderError(f"object {obj.name!r}: projection empty at scale {view.scale}")
    img = np.clip(shade, 0.0, 1.0).reshape(side, side)
    return GrayImage(img)


def _intersect(part: Part, base: np.ndarray, direction: np.ndarray):
    """Per-ray nearest-to-camera hit parameter t, shading cosine, hit mask."""
    s = base - np.asarray(part.center)
    d = direction
    h = np.asarray(part.half_extents)
    m = s.shape[0]
    if part.shape == "ellipsoid":
        a = float(np.sum((d / h) ** 2))
        b = (s / h**2) @ d
        c = np.sum((s / h) ** 2, axis=1) - 1.0
        disc = b * b - a * c
        hit = disc >= 0.0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t = (-b + sq) / a
        point = s + t[:, None] * d
        grad = point / h**2
        norm = np.linalg.norm(grad, axis=1)
        norm[norm == 0.0] = 1.0
        cosine = (grad @ d) / norm
        return t, cosine, hit
    # Cuboid: slab test; the visible face is the one bounding min over exit points.
    tmax = np.full(m, np.inf)
    tmin = np.full(m, -np.inf)
    face_axis = np.zeros(m, dtype=np.intp)
    miss = np.zeros(m, dtype=bool)
    for axis in range(3):
        di = d[axis]
        if abs(di) < 1e-12:
            miss |= np.abs(s[:, axis]) > h[axis]
            continue
        t1 = (-h[axis] - s[:, axis]) / di
        t2 = (h[axis] - s[:, axis]) / di
        lo = np.minimum(t1, t2)
        hi = np.maximum(t1, t2)
        tighter = hi < tmax
        tmax = np.where(tighter, hi, tmax)
        face_axis = np.where(tighter, axis, face_axis)
        tmin = np.maximum(tmin, lo)
    hit = ~miss & (tmin <= tmax) & np.isfinite(tmax)
    t = tmax
    coord = s[np.arange(m), face_axis] + t * d[face_axis]
    cosine = np.sign(coord) * d[face_axis]
    return t, cosine, hit


def generate_corpus(
    objects: list[ObjectSpec],
    dist_per_split: dict[str, ViewDistribution],
    counts: dict[str, int],
    out_dir: str | Path,
    seed: int,
    image_side: int = 128,
) -> Manifest:
    """Render a labeled corpus to disk (PNG images + JSONL manifest).

    Per split and class, `counts[split]` views are drawn from the split's
    distribution; a missing test distribution falls back to canonical views.
    Fully deterministic given `seed`.
    """
    if counts.get("train", 0) < 1:
        raise ValidationError("train count must be >= 1")
    names = [obj.name for obj in objects]
    if not names or len(set(names)) != len(names):
        raise ValidationError("objects must be non-empty with unique names")
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)

    records: list[ImageRecord] = []
    for split_idx, split in enumerate(("train", "val", "test")):
        count = counts.get(split, 0)
        if count <= 0:
            continue
        dist = dist_per_split.get(split)
        if dist is None:
            if split == "test":
                dist = canonical_views()
            else:
                raise ValidationError(f"no view distribution for split {split!r}")
        for class_idx, obj in enumerate(objects):
            stream = derive_seed(seed, split_idx, class_idx)
            views = sample_viewpoints(dist, count, stream)
            for i, view in enumerate(views):
                image_id = f"{split}_{obj.name}_{i:05d}"
                img = render_view(obj, view, image_side)
                _write_png(img, img_dir / f"{image_id}.png")
                records.append(ImageRecord(
                    id=image_id, path=str(img_dir / f"{image_id}.png"),
                    class_label=obj.name, split=split, size_fraction=view.scale,
                ))

    manifest_path = save_manifest(Manifest(records=tuple(records), classes=tuple(names)),
                                  out_dir / "manifest.jsonl")
    return load_manifest(manifest_path)


def _write_png(img: GrayImage, path: Path) -> None:
    data = np.round(img.pixels * 255.0).astype(np.uint8)
    try:
        Image.fromarray(data, mode="L").save(path, format="PNG")
    except OSError as exc:
        raise RunError(f"failed to write {path}: {exc}") from exc


def builtin_object(name: str) -> ObjectSpec:
    """One of the stock procedural objects: car, ball, brick, rocket."""
    try:
        return _BUILTIN_FACTORIES[name]()
    except KeyError:
        raise ValidationError(
            f"unknown builtin object {name!r}; expected one of {sorted(_BUILTIN_FACTORIES)}"
        ) from None


def default_objects() -> list[ObjectSpec]:
    return [builtin_object(n) for n in ("car", "ball", "brick", "rocket")]


def _make_car() -> ObjectSpec:
    parts = [
        Part("cuboid", (0.0, 0.0, 0.0), (0.6, 0.18, 0.3), 0.85),
        Part("cuboid", (-0.05, 0.3, 0.0), (0.3, 0.14, 0.24), 0.7),
        Part("ellipsoid", (0.38, -0.18, 0.3), (0.13, 0.13, 0.06), 0.35),
        Part("ellipsoid", (0.38, -0.18, -0.3), (0.13, 0.13, 0.06), 0.35),
        Part("ellipsoid", (-0.38, -0.18, 0.3), (0.13, 0.13, 0.06), 0.35),
        Part("ellipsoid", (-0.38, -0.18, -0.3), (0.13, 0.13, 0.06), 0.35),
    ]
    return ObjectSpec("car", tuple(parts))


def _make_ball() -> ObjectSpec:
    return ObjectSpec("ball", (Part("ellipsoid", (0.0, 0.0, 0.0), (0.5, 0.5, 0.5), 0.8),))


def _make_brick() -> ObjectSpec:
    return ObjectSpec("brick", (Part("cuboid", (0.0, 0.0, 0.0), (0.4, 0.4, 0.4), 0.85),))


def _make_rocket() -> ObjectSpec:
    parts = [
        Part("cuboid", (0.0, 0.0, 0.0), (0.16, 0.55, 0.16), 0.8),
        Part("ellipsoid", (0.0, 0.62, 0.0), (0.16, 0.22, 0.16), 0.6),
        Part("cuboid", (0.26, -0.45, 0.0), (0.1, 0.14, 0.03), 0.5),
        Part("cuboid", (-0.26, -0.45, 0.0), (0.1, 0.14, 0.03), 0.5),
    ]
    return ObjectSpec("rocket", tuple(parts))


_BUILTIN_FACTORIES = {
    "car": _make_car,
    "ball": _make_ball,
    "brick": _make_brick,
    "rocket": _make_rocket,
}
