"""Readers and writers for masks, predictions, location maps and reports.

On-disk layout::

    {image_id}_{N}_{k}.png    one 8-bit single-channel mask per person, k = 1..N
    {image_id}.pred.json      prediction manifest (mask file + score per entry)
    {image_id}.loc.f32        float32 little-endian location map, H x W x 4
    {image_id}.count.txt      instance count (decimal, possibly fractional)
    {image_id}.sem.png        instance-agnostic semantic map
"""

from __future__ import annotations

import csv
import io
import json
import os
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import DatasetError, ValidationError
from .labels import DEFAULT_LABELS, LabelSpec
from .scene import (
    ImageSize,
    InstanceMask,
    SceneAnnotation,
    ScoredScene,
    SemanticMap,
    check_scene,
)

SPLITS = ("train", "val", "test")
MASK_RE = re.compile(r"^(?P<id>.+)_(?P<n>\d+)_(?P<k>\d+)\.png$")
# subdirectory holding the masks in the MHP v2.0 distribution
_ANNOTATION_SUBDIRS = ("parsing_annos",)


def read_mask_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim == 3:
        # some distributions store indices replicated across RGB channels
        arr = arr[:, :, 0]
    return np.array(arr, dtype=np.uint8)


def write_mask_png(path, pixels: np.ndarray):
    arr = np.asarray(pixels)
    if arr.size and int(arr.max()) > 255:
        raise ValidationError(f"{path}: category ids above 255 cannot be stored as 8-bit PNG")
    Image.fromarray(arr.astype(np.uint8), mode="L").save(path, format="PNG", optimize=False)


def _mask_dir(root: Path) -> Path:
    for sub in _ANNOTATION_SUBDIRS:
        if (root / sub).is_dir():
            return root / sub
    return root


def _index_masks(directory: Path) -> dict[str, list[tuple[int, int, str]]]:
    index = defaultdict(list)
    for name in os.listdir(directory):
        m = MASK_RE.match(name)
        if m:
            index[m.group("id")].append((int(m.group("n")), int(m.group("k")), name))
    return index


@dataclass
class DatasetHandle:
    """A directory of per-instance masks, optionally split into train/val/test."""

    root: Path
    split: str = "all"
    image_ids: list[str] = field(default_factory=list)
    _files: dict = field(default_factory=dict, repr=False)

    @classmethod
    def open(cls, root, split: str = "all") -> "DatasetHandle":
        root = Path(root)
        if not root.is_dir():
            raise FileNotFoundError(f"dataset directory not found: {root}")
        if split not in SPLITS + ("all",):
            raise ValidationError(f"unknown split {split!r}")
        dirs = []
        split_dirs = [root / s for s in SPLITS if (root / s).is_dir()]
        if split == "all":
            dirs = [_mask_dir(d) for d in split_dirs] or [_mask_dir(root)]
        else:
            if not (root / split).is_dir():
                raise FileNotFoundError(f"split directory not found: {root / split}")
            dirs = [_mask_dir(root / split)]
        files = {}
        for d in dirs:
            for image_id, entries in _index_masks(d).items():
                if image_id in files:
                    raise DatasetError(f"image id {image_id!r} appears in more than one split")
                files[image_id] = (d, entries)
        return cls(root=root, split=split, image_ids=sorted(files), _files=files)

    def splits(self) -> dict[str, "DatasetHandle"]:
        """Per-split handles for the split directories that exist."""
        return {s: DatasetHandle.open(self.root, s) for s in SPLITS if (self.root / s).is_dir()}

    def __len__(self):
        return len(self.image_ids)

    def __iter__(self):
        return iter(self.image_ids)


def _load_indexed(image_id: str, directory: Path, entries, spec: LabelSpec, strict: bool) -> SceneAnnotation:
    counts = {n for n, _, _ in entries}
    if len(counts) != 1:
        raise DatasetError(f"{image_id}: inconsistent person count {sorted(counts)}")
    (n,) = counts
    by_k = {}
    for _, k, name in entries:
        if k in by_k:
            raise DatasetError(f"{image_id}: duplicate self-index {k}")
        by_k[k] = name
    if sorted(by_k) != list(range(1, n + 1)):
        raise DatasetError(f"{image_id}: incomplete instance set (have {sorted(by_k)}, expected 1..{n})")
    masks = [read_mask_png(directory / by_k[k]) for k in range(1, n + 1)]
    shapes = {m.shape for m in masks}
    if len(shapes) != 1:
        raise DatasetError(f"{image_id}: size mismatch between instance masks {sorted(shapes)}")
    scene = SceneAnnotation(image_id, tuple(InstanceMask(m) for m in masks))
    return check_scene(scene, spec, strict)


def load_scene(handle: DatasetHandle, image_id: str, spec: LabelSpec = DEFAULT_LABELS, strict: bool = False) -> SceneAnnotation:
    try:
        directory, entries = handle._files[image_id]
    except KeyError:
        raise DatasetError(f"image id {image_id!r} not found under {handle.root}") from None
    return _load_indexed(image_id, directory, entries, spec, strict)


def load_dataset(root, spec: LabelSpec = DEFAULT_LABELS, strict: bool = False, split: str = "all") -> dict[str, SceneAnnotation]:
    handle = DatasetHandle.open(root, split)
    return {i: load_scene(handle, i, spec, strict) for i in handle.image_ids}


def mask_filename(image_id: str, n: int, k: int) -> str:
    return f"{image_id}_{n}_{k}.png"


def save_scene(scene: SceneAnnotation, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n = scene.person_count
    written = []
    for k, inst in enumerate(scene.instances, start=1):
        path = directory / mask_filename(scene.image_id, n, k)
        write_mask_png(path, inst.pixels)
        written.append(path)
    return written


def save_dataset(scenes, directory) -> list[Path]:
    written = []
    for scene in _scene_values(scenes):
        written.extend(save_scene(scene, directory))
    return written


def _scene_values(scenes):
    return scenes.values() if isinstance(scenes, dict) else scenes


# -- predictions ------------------------------------------------------------

def manifest_path(directory, image_id: str) -> Path:
    return Path(directory) / f"{image_id}.pred.json"


def save_predictions(pred: ScoredScene, directory) -> list[Path]:
    """Write masks plus the ``.pred.json`` manifest; returns all written paths."""
    directory = Path(directory)
    written = save_scene(pred.scene, directory)
    manifest = {
        "image_id": pred.image_id,
        "size": [pred.size.width, pred.size.height],
        "entries": [{"mask": p.name, "score": s} for p, s in zip(written, pred.scores)],
    }
    path = manifest_path(directory, pred.image_id)
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return written + [path]


def load_predictions(directory, image_id: str, spec: LabelSpec = DEFAULT_LABELS, size: ImageSize | None = None) -> ScoredScene:
    directory = Path(directory)
    path = manifest_path(directory, image_id)
    doc = json.loads(path.read_text(encoding="utf-8"))
    entries = doc.get("entries", [])
    masks, scores = [], []
    for entry in entries:
        score = float(entry["score"])
        if not 0.0 <= score <= 1.0:
            raise ValidationError(f"{image_id}: score out of range: {score}")
        mask_file = directory / entry["mask"]
        if not mask_file.is_file():
            raise FileNotFoundError(f"{image_id}: missing mask file {mask_file}")
        masks.append(InstanceMask(read_mask_png(mask_file)))
        scores.append(score)
    if size is None and "size" in doc:
        size = ImageSize(*doc["size"])
    if not masks and size is None:
        raise DatasetError(f"{image_id}: empty prediction without a size")
    scene = SceneAnnotation(image_id, tuple(masks), size)
    problems = [p for p in _prediction_problems(scene, spec)]
    if problems:
        raise ValidationError(f"{image_id}: " + "; ".join(problems))
    return ScoredScene(scene, tuple(scores))


def _prediction_problems(scene: SceneAnnotation, spec: LabelSpec):
    for k, inst in enumerate(scene.instances):
        if inst.size != scene.size:
            yield f"instance {k}: size mismatch"
        elif inst.pixels.size and int(inst.pixels.max()) >= spec.count:
            yield f"instance {k}: category out of range"


def load_prediction_set(directory, spec: LabelSpec = DEFAULT_LABELS, sizes: dict | None = None) -> dict[str, ScoredScene]:
    """Load every prediction in ``directory``.

    Directories without any manifest are read as ground-truth layout with
    every score set to 1.0.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"prediction directory not found: {directory}")
    ids = sorted(p.name[: -len(".pred.json")] for p in directory.glob("*.pred.json"))
    if not ids:
        return {i: ScoredScene.certain(s) for i, s in load_dataset(directory, spec).items()}
    sizes = sizes or {}
    return {i: load_predictions(directory, i, spec, sizes.get(i)) for i in ids}


# -- location maps and instance counts --------------------------------------

LOC_DTYPE = np.dtype("<f4")


def save_location_map(vectors: np.ndarray, path) -> Path:
    arr = np.ascontiguousarray(vectors, dtype=LOC_DTYPE)
    if arr.ndim != 3 or arr.shape[2] != 4:
        raise ValidationError(f"location map must be H x W x 4, got {arr.shape}")
    Path(path).write_bytes(arr.tobytes(order="C"))
    return Path(path)


def load_location_map(path, size: ImageSize) -> np.ndarray:
    raw = Path(path).read_bytes()
    expected = size.width * size.height * 4 * LOC_DTYPE.itemsize
    if len(raw) != expected:
        raise DatasetError(f"truncated location map {path}: {len(raw)} bytes, expected {expected}")
    arr = np.frombuffer(raw, dtype=LOC_DTYPE).reshape(size.height, size.width, 4)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"non-finite values in location map {path}")
    return arr.astype(np.float32)


def save_count(value, path) -> Path:
    text = str(int(value)) if float(value).is_integer() else repr(float(value))
    Path(path).write_text(text + "\n", encoding="ascii")
    return Path(path)


def load_count(path) -> float:
    text = Path(path).read_text(encoding="ascii").strip()
    try:
        return float(text)
    except ValueError:
        raise DatasetError(f"bad instance count in {path}: {text!r}") from None


def save_semantic_map(semantic: SemanticMap, path) -> Path:
    write_mask_png(path, semantic.pixels)
    return Path(path)


def load_semantic_map(path) -> SemanticMap:
    return SemanticMap(read_mask_png(path))


# -- reports ----------------------------------------------------------------

CSV_COLUMNS = ("metric", "threshold", "value", "subset")


def format_threshold(t: float) -> str:
    return f"{t:.2f}"


def write_report(report, format: str = "json") -> bytes:
    """Serialize a MetricReport deterministically."""
    if format == "json":
        text = json.dumps(report.to_dict(), sort_keys=True, indent=2, allow_nan=False)
        return (text + "\n").encode("utf-8")
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for metric, threshold, value in report.rows():
            writer.writerow((metric, threshold, repr(float(value)), report.subset))
        return buf.getvalue().encode("utf-8")
    raise ValidationError(f"unknown report format {format!r}")


def write_json(doc, path) -> Path:
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n", encoding="utf-8")
    return Path(path)


def read_id_list(path) -> list[str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [line.strip() for line in lines if line.strip()]


def write_id_list(ids, path) -> Path:
    Path(path).write_text("".join(f"{i}\n" for i in ids), encoding="utf-8")
    return Path(path)
