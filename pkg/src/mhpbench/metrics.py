"""Scoring engine: part/region IoU, greedy matching, AP^p, AP^p_vol, PCP, AP^r.

Also holds the interaction-intensity subset protocol and dataset statistics.
All IoU comparisons are strict (``iou > t``).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .exceptions import DatasetError, ValidationError
from .labels import DEFAULT_LABELS, LabelSpec
from .scene import BoundingBox, SceneAnnotation, ScoredScene, bounding_box

VOL_THRESHOLDS = tuple(k / 10 for k in range(1, 10))
METRICS = ("ap_p", "pcp", "ap_r")
CATEGORY_SETS = ("union", "gt")


def _pixels(x) -> np.ndarray:
    return x.pixels if hasattr(x, "pixels") else np.asarray(x)


def _same_threshold(a: float, b: float) -> bool:
    return abs(a - b) < 1e-9


# -- IoU primitives ---------------------------------------------------------

def mask_iou(a, b) -> float:
    """IoU of two boolean pixel sets on the same grid (1.0 if both are empty)."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValidationError(f"pixel sets on different grids: {a.shape} vs {b.shape}")
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(a & b)) / union


def _areas(pixels: np.ndarray, minlength: int) -> np.ndarray:
    return np.bincount(pixels.ravel(), minlength=minlength)


def _box_slices(p: np.ndarray, g: np.ndarray):
    """Slices covering the overlap of the two foreground boxes, or None."""
    boxes = []
    for arr in (p, g):
        rows = np.flatnonzero(arr.any(axis=1))
        cols = np.flatnonzero(arr.any(axis=0))
        if rows.size == 0:
            return None
        boxes.append((rows[0], rows[-1], cols[0], cols[-1]))
    (r0a, r1a, c0a, c1a), (r0b, r1b, c0b, c1b) = boxes
    r0, r1, c0, c1 = max(r0a, r0b), min(r1a, r1b), max(c0a, c0b), min(c1a, c1b)
    if r0 > r1 or c0 > c1:
        return None
    return slice(r0, r1 + 1), slice(c0, c1 + 1)


def _intersections(p: np.ndarray, g: np.ndarray, minlength: int) -> np.ndarray:
    window = _box_slices(p, g)
    if window is None:
        return np.zeros(minlength, dtype=np.int64)
    pw, gw = p[window], g[window]
    same = (pw == gw) & (gw != 0)
    return np.bincount(gw[same].ravel(), minlength=minlength)


def _category_ious(inter, area_p, area_g, cats) -> np.ndarray:
    union = area_p[cats] + area_g[cats] - inter[cats]
    out = np.ones(len(cats), dtype=np.float64)
    nz = union > 0
    out[nz] = inter[cats][nz] / union[nz]
    return out


def part_iou(pred, gt, spec: LabelSpec | None = None, categories: str = "union"):
    """Per-category IoU of two person instances and their mean.

    The category set is every non-background category present in either
    instance (``categories="union"``) or in the ground truth only
    (``categories="gt"``). The mean is 0.0 when the set is empty.
    """
    if categories not in CATEGORY_SETS:
        raise ValidationError(f"unknown category set {categories!r}")
    p, g = _pixels(pred), _pixels(gt)
    if p.shape != g.shape:
        raise ValidationError(f"instances on different grids: {p.shape} vs {g.shape}")
    k = int(max(p.max(initial=0), g.max(initial=0))) + 1
    if spec is not None:
        k = max(k, spec.count)
    area_p, area_g = _areas(p, k), _areas(g, k)
    inter = _intersections(p, g, k)
    present = area_g > 0
    if categories == "union":
        present = present | (area_p > 0)
    present[0] = False
    cats = np.flatnonzero(present)
    ious = _category_ious(inter, area_p, area_g, cats)
    per_category = {int(c): float(v) for c, v in zip(cats, ious)}
    mean = float(ious.mean()) if len(cats) else 0.0
    return per_category, mean


def region_iou(pred, gt) -> float:
    return mask_iou(_pixels(pred) != 0, _pixels(gt) != 0)


# -- matching and AP ---------------------------------------------------------

@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[tuple[int, int, float], ...]
    unmatched_preds: tuple[int, ...]
    unmatched_gts: tuple[int, ...]
    threshold: float

    def gt_to_pred(self) -> dict[int, int]:
        return {g: p for p, g, _ in self.pairs}


def score_order(scores: Sequence[float]) -> list[int]:
    """Prediction indices by descending score, ties by ascending index."""
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def greedy_match(ious: np.ndarray, scores: Sequence[float], t: float) -> MatchResult:
    """Greedy assignment on a (preds x gts) IoU matrix.

    Each prediction, in score order, takes the still-unmatched ground truth
    with the largest IoU (lowest index on ties) provided that IoU exceeds ``t``.
    """
    ious = np.asarray(ious, dtype=np.float64)
    n_gt = ious.shape[1] if ious.ndim == 2 else 0
    taken = np.zeros(n_gt, dtype=bool)
    pairs, unmatched = [], []
    for p in score_order(scores):
        if n_gt == 0:
            unmatched.append(p)
            continue
        row = np.where(taken, -np.inf, ious[p])
        g = int(np.argmax(row))
        if row[g] > t:
            taken[g] = True
            pairs.append((p, g, float(ious[p, g])))
        else:
            unmatched.append(p)
    return MatchResult(
        pairs=tuple(pairs),
        unmatched_preds=tuple(sorted(unmatched)),
        unmatched_gts=tuple(int(g) for g in np.flatnonzero(~taken)),
        threshold=t,
    )


def _pair_matrix(preds: ScoredScene, gts: SceneAnnotation, fn) -> np.ndarray:
    out = np.zeros((preds.scene.person_count, gts.person_count))
    for i, p in enumerate(preds.instances):
        for j, g in enumerate(gts.instances):
            out[i, j] = fn(p, g)
    return out


def match_instances(preds: ScoredScene, gts: SceneAnnotation, iou_fn: str = "part", t: float = 0.5,
                    categories: str = "union") -> MatchResult:
    if preds.size != gts.size:
        raise ValidationError(f"{gts.image_id}: prediction and ground truth sizes differ")
    if iou_fn == "part":
        matrix = _pair_matrix(preds, gts, lambda p, g: part_iou(p, g, categories=categories)[1])
    elif iou_fn == "region":
        matrix = _pair_matrix(preds, gts, region_iou)
    else:
        raise ValidationError(f"unknown IoU function {iou_fn!r}")
    return greedy_match(matrix, preds.scores, t)


@dataclass(frozen=True)
class APResult:
    threshold: float | None
    value: float
    pr_points: tuple[tuple[float, float, float], ...] = ()


def average_precision(scored_flags: Iterable[tuple[float, bool]], total_gt: int,
                      threshold: float | None = None) -> APResult:
    """All-point interpolated average precision.

    ``scored_flags`` holds ``(score, is_true_positive)``; equal scores keep
    their incoming order, so callers pre-sort by their tie-break key.
    """
    if total_gt < 0:
        raise ValidationError("total_gt must be non-negative")
    flags = sorted(scored_flags, key=lambda f: -f[0])
    if total_gt == 0:
        return APResult(threshold, 0.0 if flags else 1.0)
    if not flags:
        return APResult(threshold, 0.0)
    scores = np.array([f[0] for f in flags], dtype=np.float64)
    tp = np.cumsum([1 if f[1] else 0 for f in flags])
    fp = np.arange(1, len(flags) + 1) - tp
    recall = tp / total_gt
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    # recall only moves at true positives, by 1/total_gt each time
    hits = np.diff(np.concatenate(([0], tp))) > 0
    value = math.fsum(envelope[hits].tolist()) / total_gt
    points = tuple(zip(recall.tolist(), precision.tolist(), scores.tolist()))
    return APResult(threshold, value, points)


# -- per-image evaluation ----------------------------------------------------

@dataclass
class ImageEvaluation:
    """Pairwise IoUs for one image, shared by every threshold."""

    image_id: str
    scores: tuple[float, ...]
    n_gt: int
    part: np.ndarray
    region: np.ndarray
    # gt_category_ious[p][g]: IoU of each gt category for that pair
    gt_category_ious: list = field(default_factory=list)

    @property
    def n_pred(self) -> int:
        return len(self.scores)

    def match(self, kind: str, t: float) -> MatchResult:
        return greedy_match(self.part if kind == "part" else self.region, self.scores, t)

    def pcp_sum(self, t: float) -> float:
        """Sum of per-instance PCP over this image's ground truths."""
        total = 0.0
        for p, g, _ in self.match("part", t).pairs:
            cat_ious = self.gt_category_ious[p][g]
            if len(cat_ious):
                total += int(np.count_nonzero(cat_ious > t)) / len(cat_ious)
        return total


def evaluate_image(pred: ScoredScene, gt: SceneAnnotation, categories: str = "union") -> ImageEvaluation:
    if pred.size != gt.size:
        raise ValidationError(f"{gt.image_id}: prediction and ground truth sizes differ")
    pm = [m.pixels for m in pred.instances]
    gm = [m.pixels for m in gt.instances]
    k = int(max([a.max(initial=0) for a in pm + gm] + [0])) + 1
    p_areas = [_areas(a, k) for a in pm]
    g_areas = [_areas(a, k) for a in gm]
    g_fg = [a != 0 for a in gm]
    g_cats = []
    for areas in g_areas:
        present = areas > 0
        present[0] = False
        g_cats.append(np.flatnonzero(present))

    part = np.zeros((len(pm), len(gm)))
    region = np.zeros((len(pm), len(gm)))
    cat_ious = []
    for i, a in enumerate(pm):
        a_fg = a != 0
        a_count = int(p_areas[i].sum() - p_areas[i][0])
        row = []
        for j, b in enumerate(gm):
            inter = _intersections(a, b, k)
            if categories == "union":
                present = (p_areas[i] > 0) | (g_areas[j] > 0)
                present[0] = False
                cats = np.flatnonzero(present)
            else:
                cats = g_cats[j]
            ious = _category_ious(inter, p_areas[i], g_areas[j], cats)
            part[i, j] = float(ious.mean()) if len(cats) else 0.0
            row.append(_category_ious(inter, p_areas[i], g_areas[j], g_cats[j]))
            b_count = int(g_areas[j].sum() - g_areas[j][0])
            fg_inter = int(np.count_nonzero(a_fg & g_fg[j])) if a_count and b_count else 0
            fg_union = a_count + b_count - fg_inter
            region[i, j] = fg_inter / fg_union if fg_union else 1.0
        cat_ious.append(row)
    return ImageEvaluation(gt.image_id, pred.scores, len(gm), part, region, cat_ious)


# -- dataset-level metrics ---------------------------------------------------

def _aligned(preds: Mapping[str, ScoredScene], gts: Mapping[str, SceneAnnotation]) -> list[str]:
    if set(preds) != set(gts):
        missing = sorted(set(gts) - set(preds))[:3]
        extra = sorted(set(preds) - set(gts))[:3]
        raise DatasetError(f"dataset misalignment (missing {missing}, unexpected {extra})")
    return sorted(gts)


def _evaluate_all(preds, gts, categories="union", jobs: int = 1) -> list[ImageEvaluation]:
    ids = _aligned(preds, gts)
    pairs = [(preds[i], gts[i], categories) for i in ids]
    if jobs > 1 and len(pairs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_evaluate_pair, pairs, chunksize=max(1, len(pairs) // (4 * jobs))))
    return [_evaluate_pair(p) for p in pairs]


def _evaluate_pair(args) -> ImageEvaluation:
    return evaluate_image(*args)


def _pooled_ap(evals: Sequence[ImageEvaluation], kind: str, t: float) -> APResult:
    # evals are sorted by image id; within an image flags go by prediction index
    flags = []
    total_gt = 0
    for ev in evals:
        total_gt += ev.n_gt
        matched = {p for p, _, _ in ev.match(kind, t).pairs}
        flags.extend((ev.scores[p], p in matched) for p in range(ev.n_pred))
    return average_precision(flags, total_gt, t)


def _pcp(evals: Sequence[ImageEvaluation], t: float) -> float:
    total_gt = sum(ev.n_gt for ev in evals)
    if total_gt == 0:
        return 0.0
    return sum(ev.pcp_sum(t) for ev in evals) / total_gt


def _vol(values: Mapping[float, float]) -> float | None:
    picked = []
    for t in VOL_THRESHOLDS:
        hit = [v for k, v in values.items() if _same_threshold(k, t)]
        if not hit:
            return None
        picked.append(hit[0])
    return sum(picked) / len(picked)


def ap_p(preds, gts, t: float = 0.5, categories: str = "union") -> APResult:
    return _pooled_ap(_evaluate_all(preds, gts, categories), "part", t)


def ap_p_vol(preds, gts, categories: str = "union") -> float:
    evals = _evaluate_all(preds, gts, categories)
    return _vol({t: _pooled_ap(evals, "part", t).value for t in VOL_THRESHOLDS})


def pcp(preds, gts, t: float = 0.5, categories: str = "union") -> float:
    return _pcp(_evaluate_all(preds, gts, categories), t)


def ap_r(preds, gts, t: float = 0.5) -> APResult:
    return _pooled_ap(_evaluate_all(preds, gts), "region", t)


def ap_r_vol(preds, gts) -> float:
    evals = _evaluate_all(preds, gts)
    return _vol({t: _pooled_ap(evals, "region", t).value for t in VOL_THRESHOLDS})


@dataclass
class MetricReport:
    ap_p: dict[float, float] = field(default_factory=dict)
    ap_p_vol: float | None = None
    pcp: dict[float, float] = field(default_factory=dict)
    ap_r: dict[float, float] = field(default_factory=dict)
    ap_r_vol: float | None = None
    per_image: dict[str, dict] = field(default_factory=dict)
    subset: str = "all"
    n_images: int = 0
    n_gt: int = 0
    n_pred: int = 0

    def rows(self):
        """(metric, threshold, value) rows in a fixed order."""
        fmt = _fmt_t
        for name in ("ap_p", "pcp", "ap_r"):
            for t in sorted(getattr(self, name)):
                yield name, fmt(t), getattr(self, name)[t]
            vol = getattr(self, f"{name}_vol", None)
            if vol is not None:
                yield f"{name}_vol", "", vol

    def to_dict(self) -> dict:
        return {
            "ap_p": {_fmt_t(t): v for t, v in self.ap_p.items()},
            "ap_p_vol": self.ap_p_vol,
            "pcp": {_fmt_t(t): v for t, v in self.pcp.items()},
            "ap_r": {_fmt_t(t): v for t, v in self.ap_r.items()},
            "ap_r_vol": self.ap_r_vol,
            "per_image": self.per_image,
            "subset": self.subset,
            "n_images": self.n_images,
            "n_gt": self.n_gt,
            "n_pred": self.n_pred,
        }


def _fmt_t(t: float) -> str:
    return f"{t:.2f}"


def _trace(ev: ImageEvaluation, kinds: dict[str, str], thresholds) -> dict:
    matches = {}
    for metric, kind in kinds.items():
        matches[metric] = {
            _fmt_t(t): [[p, g, iou] for p, g, iou in ev.match(kind, t).pairs] for t in thresholds
        }
    return {"n_gt": ev.n_gt, "n_pred": ev.n_pred, "scores": list(ev.scores), "matches": matches}


def evaluate(preds: Mapping[str, ScoredScene], gts: Mapping[str, SceneAnnotation],
             thresholds: Sequence[float] = VOL_THRESHOLDS, metrics: Sequence[str] = METRICS,
             subset: Iterable[str] | None = None, label: str = "all",
             categories: str = "union", jobs: int = 1, traces: bool = True) -> MetricReport:
    """Compute the requested metrics at every threshold in one pass.

    ``subset`` restricts both sides to the given image ids before scoring.
    """
    unknown = set(metrics) - set(METRICS)
    if unknown:
        raise ValidationError(f"unknown metrics {sorted(unknown)}")
    for t in thresholds:
        if not 0.0 < t < 1.0:
            raise ValidationError(f"IoU threshold must lie in (0, 1), got {t}")
    if subset is not None:
        keep = set(subset)
        absent = keep - set(gts)
        if absent:
            raise DatasetError(f"subset ids not in ground truth: {sorted(absent)[:3]}")
        gts = {i: s for i, s in gts.items() if i in keep}
        preds = {i: s for i, s in preds.items() if i in keep}
    evals = _evaluate_all(preds, gts, categories, jobs)
    thresholds = sorted(set(float(t) for t in thresholds))
    report = MetricReport(subset=label, n_images=len(evals),
                          n_gt=sum(e.n_gt for e in evals), n_pred=sum(e.n_pred for e in evals))
    if "ap_p" in metrics:
        report.ap_p = {t: _pooled_ap(evals, "part", t).value for t in thresholds}
        report.ap_p_vol = _vol(report.ap_p)
    if "pcp" in metrics:
        report.pcp = {t: _pcp(evals, t) for t in thresholds}
    if "ap_r" in metrics:
        report.ap_r = {t: _pooled_ap(evals, "region", t).value for t in thresholds}
        report.ap_r_vol = _vol(report.ap_r)
    if traces:
        kinds = {}
        if "ap_p" in metrics or "pcp" in metrics:
            kinds["part"] = "part"
        if "ap_r" in metrics:
            kinds["region"] = "region"
        report.per_image = {ev.image_id: _trace(ev, kinds, thresholds) for ev in evals}
    return report


# -- interaction intensity and subsets --------------------------------------

def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    w = min(a.x_right, b.x_right) - max(a.x_left, b.x_left) + 1
    h = min(a.y_bottom, b.y_bottom) - max(a.y_top, b.y_top) + 1
    overlap = max(w, 0) * max(h, 0)
    return overlap / (a.area + b.area - overlap)


def interaction_intensity(scene: SceneAnnotation) -> float:
    """Mean box IoU over all unordered pairs of instances (0 with fewer than two)."""
    boxes = [bounding_box(m) for m in scene.instances]
    if len(boxes) < 2:
        return 0.0
    ious = [box_iou(boxes[i], boxes[j]) for i in range(len(boxes)) for j in range(i + 1, len(boxes))]
    return sum(ious) / len(ious)


def select_subset(gts: Mapping[str, SceneAnnotation], percent: float) -> list[str]:
    """Ids of the top ``percent`` % of images by interaction intensity."""
    if not 0 < percent <= 100:
        raise ValidationError(f"percent must lie in (0, 100], got {percent}")
    ranked = sorted(gts, key=lambda i: (-interaction_intensity(gts[i]), i))
    take = math.ceil(Fraction(str(percent)) * len(ranked) / 100)
    return ranked[:take]


# -- dataset statistics ------------------------------------------------------

@dataclass
class StatsReport:
    image_count: int
    instance_count: int
    category_occurrences: dict[str, int]
    category_pixels: dict[str, int]
    avg_categories_per_image: float
    avg_instances_per_image: float
    instance_histogram: dict[int, int]
    min_instances: int
    max_instances: int
    min_resolution: tuple[int, int]
    max_resolution: tuple[int, int]
    mean_resolution: tuple[float, float]
    splits: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "image_count": self.image_count,
            "instance_count": self.instance_count,
            "category_occurrences": self.category_occurrences,
            "category_pixels": self.category_pixels,
            "avg_categories_per_image": self.avg_categories_per_image,
            "avg_instances_per_image": self.avg_instances_per_image,
            "instance_histogram": {str(k): v for k, v in sorted(self.instance_histogram.items())},
            "instance_range": [self.min_instances, self.max_instances],
            "min_resolution": list(self.min_resolution),
            "max_resolution": list(self.max_resolution),
            "mean_resolution": list(self.mean_resolution),
            "splits": self.splits,
        }


def dataset_stats(gts: Mapping[str, SceneAnnotation] | Iterable[SceneAnnotation],
                  spec: LabelSpec = DEFAULT_LABELS) -> StatsReport:
    scenes = list(gts.values()) if isinstance(gts, Mapping) else list(gts)
    if not scenes:
        raise ValidationError("dataset_stats needs at least one image")
    occurrences = np.zeros(spec.count, dtype=np.int64)
    pixels = np.zeros(spec.count, dtype=np.int64)
    distinct_total = 0
    histogram: dict[int, int] = {}
    for scene in scenes:
        in_image = np.zeros(spec.count, dtype=bool)
        for inst in scene.instances:
            areas = np.bincount(inst.pixels.ravel(), minlength=spec.count)
            if len(areas) > spec.count:
                raise ValidationError(f"{scene.image_id}: category out of range")
            has = areas > 0
            has[0] = False
            occurrences += has
            pixels += areas
            in_image |= has
        distinct_total += int(in_image.sum())
        n = scene.person_count
        histogram[n] = histogram.get(n, 0) + 1
    sizes = [(s.size.width, s.size.height) for s in scenes]
    by_area = sorted(sizes, key=lambda wh: (wh[0] * wh[1], wh))
    names = spec.names
    return StatsReport(
        image_count=len(scenes),
        instance_count=sum(s.person_count for s in scenes),
        category_occurrences={names[c]: int(occurrences[c]) for c in range(1, spec.count)},
        category_pixels={names[c]: int(pixels[c]) for c in range(1, spec.count)},
        avg_categories_per_image=distinct_total / len(scenes),
        avg_instances_per_image=sum(s.person_count for s in scenes) / len(scenes),
        instance_histogram=histogram,
        min_instances=min(histogram),
        max_instances=max(histogram),
        min_resolution=by_area[0],
        max_resolution=by_area[-1],
        mean_resolution=(sum(w for w, _ in sizes) / len(sizes), sum(h for _, h in sizes) / len(sizes)),
    )
