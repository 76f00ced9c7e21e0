"""Command-line entry point.

Exit codes: 0 success, 1 validation failure, 2 I/O failure, 64 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path

from . import io as mio
from .clustering import ClusterConfig, LocationMap, cluster_instances, encode_locations, labeling_to_scene, round_instance_count
from .exceptions import MHPError, ValidationError
from .labels import DEFAULT_LABELS, load_label_spec
from .metrics import METRICS, VOL_THRESHOLDS, dataset_stats, evaluate, select_subset
from .scene import ImageSize, flatten
from .synth import OVERLAP_MODES, CorruptionSpec, SynthConfig, corrupt, synth_generate

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_USAGE = 0, 1, 2, 64

log = logging.getLogger("mhpbench")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def parse_thresholds(text: str) -> list[float]:
    """``A:B:STEP`` (inclusive) or a comma list of values."""
    if ":" in text:
        try:
            a, b, step = (Fraction(part) for part in text.split(":"))
        except ValueError:
            raise UsageError(f"bad threshold range {text!r}") from None
        if step <= 0 or b < a:
            raise UsageError(f"bad threshold range {text!r}")
        out, t = [], a
        while t <= b:
            out.append(float(t))
            t += step
        return out
    try:
        return [float(v) for v in text.split(",") if v]
    except ValueError:
        raise UsageError(f"bad thresholds {text!r}") from None


def parse_range(text: str) -> tuple[int, int]:
    try:
        lo, _, hi = text.partition(":")
        return int(lo), int(hi or lo)
    except ValueError:
        raise UsageError(f"bad range {text!r}") from None


def parse_grid(text: str) -> ImageSize:
    try:
        w, h = text.lower().split("x")
        return ImageSize(int(w), int(h))
    except ValueError:
        raise UsageError(f"bad grid {text!r}, expected WxH") from None


def _labels(args):
    return load_label_spec(args.labels) if getattr(args, "labels", None) else DEFAULT_LABELS


def _write(path, data: bytes):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(data)


# -- subcommands --------------------------------------------------------------

def cmd_evaluate(args):
    spec = _labels(args)
    gts = mio.load_dataset(args.gt, spec, strict=args.strict)
    sizes = {i: s.size for i, s in gts.items()}
    preds = mio.load_prediction_set(args.pred, spec, sizes)
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = set(metrics) - set(METRICS)
    if unknown:
        raise UsageError(f"unknown metrics: {', '.join(sorted(unknown))}")
    subset = mio.read_id_list(args.subset) if args.subset else None
    label = args.label or (Path(args.subset).stem if args.subset else "all")
    report = evaluate(preds, gts, thresholds=args.thresholds, metrics=metrics, subset=subset,
                      label=label, categories=args.categories, jobs=args.jobs)
    _write(args.out, mio.write_report(report, args.format))
    log.info("evaluated %d images (%d gt, %d predictions)", report.n_images, report.n_gt, report.n_pred)


def _semantic_maps(directory: Path, spec):
    found = sorted(directory.glob("*.sem.png"))
    if found:
        return {p.name[: -len(".sem.png")]: mio.load_semantic_map(p) for p in found}
    return {i: flatten(s) for i, s in mio.load_dataset(directory, spec).items()}


def _cluster_one(job):
    image_id, semantic, loc_path, count_path, cfg, max_n = job
    locations = LocationMap(mio.load_location_map(loc_path, semantic.size))
    n = round_instance_count(mio.load_count(count_path), max_n)
    labeling = cluster_instances(semantic, locations, n, cfg)
    return labeling_to_scene(labeling, semantic, 1.0, image_id)


def cmd_cluster(args):
    spec = _labels(args)
    semantic = _semantic_maps(Path(args.semantic), spec)
    loc_dir = Path(args.locations)
    count_dir = Path(args.counts) if args.counts else loc_dir
    cfg = ClusterConfig(encoding_mode=args.encoding, sample_cap=args.sample_cap, kmeans_seed=args.seed)
    jobs = []
    for image_id in sorted(semantic):
        loc = loc_dir / f"{image_id}.loc.f32"
        count = count_dir / f"{image_id}.count.txt"
        for p in (loc, count):
            if not p.is_file():
                raise FileNotFoundError(f"missing {p}")
        jobs.append((image_id, semantic[image_id], loc, count, cfg, args.max_instances))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_cluster_one, jobs))
    else:
        results = [_cluster_one(j) for j in jobs]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for pred in results:
        mio.save_predictions(pred, out)
    log.info("clustered %d images", len(results))


def cmd_encode(args):
    spec = _labels(args)
    gts = mio.load_dataset(args.gt, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for image_id, scene in gts.items():
        mio.save_location_map(encode_locations(scene, args.encoding).vectors, out / f"{image_id}.loc.f32")
        mio.save_count(scene.person_count, out / f"{image_id}.count.txt")
        mio.save_semantic_map(flatten(scene), out / f"{image_id}.sem.png")


def cmd_stats(args):
    spec = _labels(args)
    handle = mio.DatasetHandle.open(args.gt)
    scenes = {i: mio.load_scene(handle, i, spec) for i in handle.image_ids}
    if not scenes:
        raise ValidationError(f"no annotations found under {args.gt}")
    report = dataset_stats(scenes, spec)
    report.splits = {name: len(h) for name, h in handle.splits().items()}
    mio.write_json(report.to_dict(), args.out)


def cmd_subset(args):
    gts = mio.load_dataset(args.gt, _labels(args))
    mio.write_id_list(select_subset(gts, args.percent), args.out)


def cmd_synth(args):
    cfg = SynthConfig(seed=args.seed, image_count=args.images, grid=args.grid,
                      instances_per_image=args.instances, parts_per_instance=args.parts,
                      overlap_mode=args.overlap)
    mio.save_dataset(synth_generate(cfg), args.out)


def cmd_corrupt(args):
    spec = CorruptionSpec.from_json(args.spec)
    labels = _labels(args)
    gts = mio.load_dataset(args.gt, labels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for image_id in sorted(gts):
        mio.save_predictions(corrupt(gts[image_id], spec, labels.count), out)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mhpbench", description="Multi-human parsing benchmark toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--metrics", default=",".join(METRICS))
    p.add_argument("--thresholds", type=parse_thresholds, default=list(VOL_THRESHOLDS))
    p.add_argument("--subset")
    p.add_argument("--label")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--categories", choices=("union", "gt"), default="union")
    p.add_argument("--labels")
    p.add_argument("--strict", action="store_true", help="require >= 2 persons per gt image")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("cluster", help="cluster location maps into person instances")
    p.add_argument("--semantic", required=True)
    p.add_argument("--locations", required=True)
    p.add_argument("--counts")
    p.add_argument("--encoding", choices=("instance", "image"), default="instance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sample-cap", type=int, default=2048)
    p.add_argument("--max-instances", type=int, default=26)
    p.add_argument("--labels")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("encode-locations", help="write ground-truth location maps and counts")
    p.add_argument("--gt", required=True)
    p.add_argument("--encoding", choices=("instance", "image"), default="instance")
    p.add_argument("--labels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("stats", help="dataset statistics")
    p.add_argument("--gt", required=True)
    p.add_argument("--labels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("subset", help="top-percent interaction-intensity image ids")
    p.add_argument("--gt", required=True)
    p.add_argument("--percent", type=float, required=True)
    p.add_argument("--labels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_subset)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--images", type=int, required=True)
    p.add_argument("--grid", type=parse_grid, default=ImageSize(64, 64))
    p.add_argument("--instances", type=parse_range, default=(2, 5))
    p.add_argument("--parts", type=parse_range, default=(1, 4))
    p.add_argument("--overlap", choices=OVERLAP_MODES, default="disjoint")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("corrupt", help="degrade ground truth into scored predictions")
    p.add_argument("--gt", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--labels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_corrupt)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except UsageError as exc:
        print(f"mhpbench: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MHPError as exc:
        print(f"mhpbench: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"mhpbench: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
