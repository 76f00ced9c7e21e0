"""Synthetic scenes and prediction corruptions for desk-scale verification."""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .exceptions import PlacementError, ValidationError
from .labels import DEFAULT_LABELS
from .metrics import box_iou
from .scene import BoundingBox, ImageSize, InstanceMask, SceneAnnotation, ScoredScene

OVERLAP_MODES = ("disjoint", "mild", "heavy")
# a new box may overlap earlier ones up to this box IoU in "mild" mode
MILD_MAX_IOU = 0.3
# in "heavy" mode a new box must reach this IoU with at least one earlier box
HEAVY_MIN_IOU = 0.2
PLACEMENT_TRIES = 200
IMAGE_RESTARTS = 20
_CROSS = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    image_count: int = 10
    grid: ImageSize = ImageSize(64, 64)
    instances_per_image: tuple[int, int] = (2, 5)
    parts_per_instance: tuple[int, int] = (1, 4)
    overlap_mode: str = "disjoint"
    category_pool: tuple[int, ...] = tuple(range(1, DEFAULT_LABELS.count))

    def __post_init__(self):
        lo, hi = self.instances_per_image
        if not 1 <= lo <= hi:
            raise ValidationError("instances_per_image must be a non-empty range of positive counts")
        lo, hi = self.parts_per_instance
        if not 1 <= lo <= hi:
            raise ValidationError("parts_per_instance must be a non-empty range of positive counts")
        if self.grid.width < 8 or self.grid.height < 8:
            raise ValidationError("grid must be at least 8x8")
        if self.overlap_mode not in OVERLAP_MODES:
            raise ValidationError(f"overlap_mode must be one of {OVERLAP_MODES}")
        if 0 in self.category_pool or not self.category_pool:
            raise ValidationError("category_pool must be non-empty and exclude background")
        if len(set(self.category_pool)) < hi:
            raise ValidationError("category_pool smaller than the largest part count")
        if hi > self.grid.height:
            raise ValidationError("more parts than grid rows")


def _random_box(rng, grid: ImageSize, parts: int) -> BoundingBox:
    W, H = grid.width, grid.height
    w = int(rng.integers(max(3, W // 8), max(3, W // 3) + 1))
    h = int(rng.integers(max(parts, H // 4), max(parts, 2 * H // 3) + 1))
    w, h = min(w, W), min(h, H)
    x = int(rng.integers(0, W - w + 1))
    y = int(rng.integers(0, H - h + 1))
    return BoundingBox(x, y, x + w - 1, y + h - 1)


def _acceptable(box: BoundingBox, placed: list[BoundingBox], mode: str) -> bool:
    if not placed:
        return True
    ious = [box_iou(box, b) for b in placed]
    if box.as_tuple() in {b.as_tuple() for b in placed}:
        return False
    if mode == "disjoint":
        return max(ious) == 0.0
    if mode == "mild":
        return max(ious) <= MILD_MAX_IOU
    return max(ious) >= HEAVY_MIN_IOU


def _banded_mask(grid: ImageSize, box: BoundingBox, categories) -> np.ndarray:
    mask = np.zeros(grid.shape, dtype=np.uint8)
    rows = np.array_split(np.arange(box.y_top, box.y_bottom + 1), len(categories))
    for band, cat in zip(rows, categories):
        mask[band[0]:band[-1] + 1, box.x_left:box.x_right + 1] = cat
    return mask


def _generate_one(cfg: SynthConfig, index: int) -> SceneAnnotation:
    rng = np.random.default_rng([cfg.seed, index])
    pool = np.array(sorted(set(cfg.category_pool)))
    for _ in range(IMAGE_RESTARTS):
        n = int(rng.integers(cfg.instances_per_image[0], cfg.instances_per_image[1] + 1))
        placed, masks = [], []
        for _ in range(n):
            parts = int(rng.integers(cfg.parts_per_instance[0], cfg.parts_per_instance[1] + 1))
            for _ in range(PLACEMENT_TRIES):
                box = _random_box(rng, cfg.grid, parts)
                if _acceptable(box, placed, cfg.overlap_mode):
                    break
            else:
                break
            placed.append(box)
            cats = rng.choice(pool, parts, replace=False)
            masks.append(_banded_mask(cfg.grid, box, cats))
        if len(masks) == n:
            # left-to-right annotation order
            order = sorted(range(n), key=lambda i: (placed[i].x_left, placed[i].y_top, i))
            return SceneAnnotation(f"img{index:05d}", tuple(InstanceMask(masks[i]) for i in order), cfg.grid)
    raise PlacementError(index)


def synth_generate(cfg: SynthConfig) -> dict[str, SceneAnnotation]:
    """Deterministic synthetic dataset: banded rectangles, one per person."""
    scenes = [_generate_one(cfg, i) for i in range(cfg.image_count)]
    return {s.image_id: s for s in scenes}


# -- corruption ---------------------------------------------------------------

@dataclass(frozen=True)
class CorruptionSpec:
    erode_radius: int = 0
    drop_prob: float = 0.0
    score_noise: float = 0.0
    relabel_frac: float = 0.0
    merge_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.erode_radius < 0:
            raise ValidationError("erode_radius must be >= 0")
        for name in ("drop_prob", "relabel_frac", "merge_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {v}")
        if self.score_noise < 0:
            raise ValidationError("score_noise must be >= 0")

    @classmethod
    def from_json(cls, path) -> "CorruptionSpec":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown corruption fields {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


def erode(mask: np.ndarray, radius: int) -> np.ndarray:
    """Erode the foreground with a 4-neighbourhood ``radius`` times; labels are kept."""
    if radius == 0:
        return mask.copy()
    keep = ndimage.binary_erosion(mask != 0, structure=_CROSS, iterations=radius, border_value=0)
    return np.where(keep, mask, 0).astype(mask.dtype)


def corrupt(gt: SceneAnnotation, spec: CorruptionSpec, n_categories: int = DEFAULT_LABELS.count) -> ScoredScene:
    """Degrade a ground-truth scene into a scored prediction.

    Steps, in order: drop instances, merge neighbours, erode, relabel a pixel
    fraction, draw scores. Randomness depends only on ``spec.seed`` and the
    image id.
    """
    rng = np.random.default_rng([spec.seed, zlib.crc32(gt.image_id.encode("utf-8"))])
    masks = [m.pixels.copy() for m in gt.instances]

    kept = [m for m, u in zip(masks, rng.random(len(masks))) if u >= spec.drop_prob]

    merged = []
    for m in kept:
        if merged and rng.random() < spec.merge_prob:
            merged[-1] = np.where(m != 0, m, merged[-1])
        else:
            merged.append(m)

    out = []
    for m in merged:
        m = erode(m, spec.erode_radius)
        fg = np.flatnonzero(m.ravel())
        if fg.size == 0:
            continue
        n_relabel = int(round(spec.relabel_frac * fg.size))
        if n_relabel:
            flat = m.ravel()
            picked = rng.choice(fg, n_relabel, replace=False)
            # uniform over the other foreground categories
            shift = rng.integers(1, n_categories - 1, size=n_relabel)
            flat[picked] = (flat[picked] - 1 + shift) % (n_categories - 1) + 1
            m = flat.reshape(m.shape)
        out.append(m)

    noise = rng.normal(0.0, spec.score_noise, size=len(out)) if spec.score_noise > 0 else np.zeros(len(out))
    scores = tuple(float(min(max(1.0 - d, 0.0), 1.0)) for d in noise)
    scene = SceneAnnotation(gt.image_id, tuple(InstanceMask(m) for m in out), gt.size)
    return ScoredScene(scene, scores)


def corrupt_dataset(gts, spec: CorruptionSpec) -> dict[str, ScoredScene]:
    return {i: corrupt(gts[i], spec) for i in sorted(gts)}


@dataclass(frozen=True)
class RandomSuite:
    gts: dict = field(default_factory=dict)
    preds: dict = field(default_factory=dict)


def random_suite(seed: int, max_grid: int = 32, max_instances: int = 5, images: tuple[int, int] = (1, 4)) -> RandomSuite:
    """A small random ground-truth set with corrupted, noisy-scored predictions."""
    rng = np.random.default_rng([seed, 0x5EED])
    grid = ImageSize(int(rng.integers(12, max_grid + 1)), int(rng.integers(12, max_grid + 1)))
    cfg = SynthConfig(
        seed=seed,
        image_count=int(rng.integers(images[0], images[1] + 1)),
        grid=grid,
        instances_per_image=(1, max_instances),
        parts_per_instance=(1, 4),
        overlap_mode=str(rng.choice(OVERLAP_MODES)),
        category_pool=tuple(range(1, 9)),
    )
    gts = synth_generate(cfg)
    spec = CorruptionSpec(
        erode_radius=int(rng.random() < 0.25),
        drop_prob=float(rng.uniform(0, 0.3)),
        score_noise=float(rng.uniform(0, 0.3)),
        relabel_frac=float(rng.uniform(0, 0.15)) if rng.random() < 0.5 else 0.0,
        merge_prob=float(rng.uniform(0, 0.3)),
        seed=seed,
    )
    preds = {i: corrupt(gts[i], spec, n_categories=9) for i in sorted(gts)}
    return RandomSuite(gts, preds)
