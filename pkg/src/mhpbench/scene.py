"""Scene and annotation data model.

Masks are dense integer rasters of shape ``(height, width)``; pixel ``(x, y)``
lives at ``pixels[y, x]``. Category 0 is background. A scene keeps one mask
per person, in annotation order; each mask labels only its own person and
treats everyone else as background.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import ValidationError
from .labels import DEFAULT_LABELS, LabelSpec


def _as_label_raster(pixels) -> np.ndarray:
    arr = np.asarray(pixels)
    if arr.ndim != 2:
        raise ValidationError(f"mask must be 2-D, got shape {arr.shape}")
    if arr.dtype.kind not in "iub":
        raise ValidationError(f"mask must hold integer category ids, got {arr.dtype}")
    if arr.size and arr.min() < 0:
        raise ValidationError("mask holds negative category ids")
    if arr.size and arr.max() > 255:
        arr = arr.astype(np.int32)
    else:
        arr = arr.astype(np.uint8)
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ImageSize:
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValidationError(f"image size must be positive, got {self.width}x{self.height}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @classmethod
    def from_shape(cls, shape) -> "ImageSize":
        return cls(width=int(shape[1]), height=int(shape[0]))


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box with inclusive corners."""

    x_left: int
    y_top: int
    x_right: int
    y_bottom: int

    @property
    def width(self) -> int:
        return self.x_right - self.x_left + 1

    @property
    def height(self) -> int:
        return self.y_bottom - self.y_top + 1

    @property
    def area(self) -> int:
        return self.width * self.height

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x_left, self.y_top, self.x_right, self.y_bottom)


@dataclass(frozen=True, eq=False)
class _Raster:
    pixels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pixels", _as_label_raster(self.pixels))

    @property
    def size(self) -> ImageSize:
        return ImageSize.from_shape(self.pixels.shape)

    @property
    def foreground(self) -> np.ndarray:
        return self.pixels != 0

    def categories(self) -> np.ndarray:
        """Sorted non-background category ids present in the raster."""
        present = np.unique(self.pixels)
        return present[present != 0]

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    def __hash__(self):
        return hash((type(self).__name__, self.pixels.shape, self.pixels.tobytes()))


class InstanceMask(_Raster):
    """Per-pixel category map of a single person instance."""


class SemanticMap(_Raster):
    """Instance-agnostic category map."""


@dataclass(frozen=True)
class SceneAnnotation:
    image_id: str
    instances: tuple[InstanceMask, ...]
    size: ImageSize | None = None

    def __post_init__(self):
        instances = tuple(
            m if isinstance(m, InstanceMask) else InstanceMask(m) for m in self.instances
        )
        object.__setattr__(self, "instances", instances)
        if self.size is None:
            if not instances:
                raise ValidationError("an empty scene needs an explicit size")
            object.__setattr__(self, "size", instances[0].size)

    @property
    def person_count(self) -> int:
        return len(self.instances)

    def __len__(self):
        return len(self.instances)


@dataclass(frozen=True)
class ScoredScene:
    scene: SceneAnnotation
    scores: tuple[float, ...] = field(default=())

    def __post_init__(self):
        scores = tuple(float(s) for s in self.scores)
        object.__setattr__(self, "scores", scores)
        if len(scores) != self.scene.person_count:
            raise ValidationError(
                f"{len(scores)} scores for {self.scene.person_count} instances"
            )
        for s in scores:
            if not 0.0 <= s <= 1.0:
                raise ValidationError(f"score out of range: {s}")

    @classmethod
    def certain(cls, scene: SceneAnnotation) -> "ScoredScene":
        """Wrap a scene with every score set to 1.0."""
        return cls(scene, (1.0,) * scene.person_count)

    @property
    def image_id(self) -> str:
        return self.scene.image_id

    @property
    def instances(self) -> tuple[InstanceMask, ...]:
        return self.scene.instances

    @property
    def size(self) -> ImageSize:
        return self.scene.size


def bounding_box(mask) -> BoundingBox:
    """Tight box around the non-background pixels of ``mask``."""
    pixels = mask.pixels if isinstance(mask, _Raster) else np.asarray(mask)
    ys, xs = np.nonzero(pixels)
    if xs.size == 0:
        raise ValidationError("empty instance")
    return BoundingBox(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def _check_sizes(scene: SceneAnnotation):
    for k, inst in enumerate(scene.instances):
        if inst.size != scene.size:
            raise ValidationError(
                f"size mismatch: instance {k} is {inst.size.width}x{inst.size.height}, "
                f"scene is {scene.size.width}x{scene.size.height}"
            )


def owner_map(scene: SceneAnnotation) -> np.ndarray:
    """Index of the instance owning each pixel, -1 for background.

    Later instances overwrite earlier ones where they overlap.
    """
    _check_sizes(scene)
    owner = np.full(scene.size.shape, -1, dtype=np.int32)
    for k, inst in enumerate(scene.instances):
        owner[inst.foreground] = k
    return owner


def flatten(scene: SceneAnnotation) -> SemanticMap:
    _check_sizes(scene)
    out = np.zeros(scene.size.shape, dtype=np.int32)
    for inst in scene.instances:
        fg = inst.foreground
        out[fg] = inst.pixels[fg]
    return SemanticMap(out)


def validate(scene: SceneAnnotation, spec: LabelSpec = DEFAULT_LABELS, strict: bool = False) -> list[str]:
    """Return the list of invariant violations; empty means the scene is valid.

    ``strict`` adds the ground-truth rule that a scene holds at least two people.
    """
    violations = []
    for k, inst in enumerate(scene.instances):
        if inst.size != scene.size:
            violations.append(f"instance {k}: size mismatch")
            continue
        if not inst.foreground.any():
            violations.append(f"instance {k}: empty instance")
        top = int(inst.pixels.max())
        if top >= spec.count:
            violations.append(
                f"instance {k}: category out of range ({top} >= {spec.count})"
            )
    if strict and scene.person_count < 2:
        violations.append("fewer than two instances")
    return violations


def check_scene(scene: SceneAnnotation, spec: LabelSpec = DEFAULT_LABELS, strict: bool = False) -> SceneAnnotation:
    problems = validate(scene, spec, strict)
    if problems:
        raise ValidationError(f"{scene.image_id}: " + "; ".join(problems))
    return scene


def scene_from_arrays(image_id: str, masks: Sequence, size: ImageSize | None = None) -> SceneAnnotation:
    return SceneAnnotation(image_id, tuple(InstanceMask(m) for m in masks), size)
