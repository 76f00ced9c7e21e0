"""Acceptance suite: one recorded PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -s``; the lines are also printed in
the terminal summary of any pytest run that includes this module.
"""

import hashlib
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from mhpbench import io as mio
from mhpbench.cli import main
from mhpbench.clustering import ClusterConfig, cluster_instances, encode_locations, labeling_to_scene
from mhpbench.metrics import VOL_THRESHOLDS, average_precision, ap_r, evaluate, pcp
from mhpbench.oracle import oracle_evaluate
from mhpbench.scene import ImageSize, SceneAnnotation, ScoredScene, flatten, owner_map
from mhpbench.synth import CorruptionSpec, SynthConfig, corrupt_dataset, random_suite, synth_generate

from conftest import make_pred, make_scene

pytestmark = pytest.mark.slow


def _tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_criterion_1_oracle_equivalence(acceptance):
    n_suites, worst, worst_at = 200, 0.0, None
    start = time.perf_counter()
    for seed in range(n_suites):
        suite = random_suite(seed)
        fast = evaluate(suite.preds, suite.gts, traces=False)
        slow = oracle_evaluate(suite.preds, suite.gts, VOL_THRESHOLDS)
        pairs = [(f"ap_p@{t:.1f}", fast.ap_p[t], slow.ap_p[t]) for t in VOL_THRESHOLDS]
        pairs += [("ap_p_vol", fast.ap_p_vol, slow.ap_p_vol),
                  ("pcp@0.5", fast.pcp[0.5], slow.pcp[0.5]),
                  ("ap_r@0.5", fast.ap_r[0.5], slow.ap_r[0.5])]
        for name, a, b in pairs:
            if abs(a - b) >= worst:
                worst, worst_at = abs(a - b), (seed, name)
    elapsed = time.perf_counter() - start
    ok = worst < 1e-12 and elapsed <= 120
    acceptance("criterion 1 oracle equivalence", ok,
               f"{n_suites} suites, max |delta| {worst:.3g} at {worst_at}, {elapsed:.1f}s")
    assert ok


def test_criterion_2_perfect_predictions(acceptance):
    gts = {}
    for k, mode in enumerate(("disjoint", "mild", "heavy")):
        cfg = SynthConfig(seed=100 + k, image_count=17 if k < 2 else 16, overlap_mode=mode)
        gts.update({f"{mode}-{i}": s for i, s in synth_generate(cfg).items()})
    gts = {i: SceneAnnotation(i, s.instances, s.size) for i, s in gts.items()}
    preds = {i: ScoredScene.certain(s) for i, s in gts.items()}
    rep = evaluate(preds, gts, traces=False)
    bad = [f"ap_p@{t}" for t, v in rep.ap_p.items() if v != 1.0]
    bad += [] if rep.ap_p_vol == 1.0 else ["ap_p_vol"]
    bad += [] if rep.pcp[0.5] == 1.0 else ["pcp@0.5"]
    bad += [f"ap_r@{t}" for t in (0.5, 0.6, 0.7) if rep.ap_r[t] != 1.0]
    ok = len(gts) == 50 and not bad
    acceptance("criterion 2 perfect-prediction identity", ok, f"{len(gts)} scenes, non-exact: {bad or 'none'}")
    assert ok


def test_criterion_3_threshold_monotonicity(acceptance):
    violations = []
    for seed in range(1000, 1100):
        suite = random_suite(seed)
        values = evaluate(suite.preds, suite.gts, metrics=("ap_p",), traces=False).ap_p
        ordered = [values[t] for t in VOL_THRESHOLDS]
        violations += [(seed, t) for t, a, b in zip(VOL_THRESHOLDS[1:], ordered, ordered[1:]) if b > a]
    ok = not violations
    acceptance("criterion 3 threshold monotonicity", ok, f"100 suites, {len(violations)} violations")
    assert ok


def test_criterion_4_hand_ap_cases(acceptance):
    cases = [([(0.9, True)], 1.0), ([(0.9, False), (0.8, True)], 0.5), ([(0.9, True), (0.8, False)], 1.0)]
    got = [average_precision(flags, 1).value for flags, _ in cases]
    ok = got == [want for _, want in cases]
    acceptance("criterion 4 hand-computed AP", ok, f"got {got}")
    assert ok


def test_criterion_5_pcp_missed_person(acceptance):
    gt = np.zeros((4, 4), np.uint8)
    for r, cat in enumerate((1, 2, 3, 4)):
        gt[r] = cat
    pred = gt.copy()
    pred[2:, 2:] = 0  # categories 3 and 4 drop to IoU 0.5
    other = np.full((4, 4), 9, np.uint8)
    single = pcp({"a": make_pred("a", [pred], [1.0])}, {"a": make_scene("a", gt)}, 0.5)
    both = pcp({"a": make_pred("a", [pred], [1.0])}, {"a": make_scene("a", gt, other)}, 0.5)
    ok = single == 0.5 and both == single / 2
    acceptance("criterion 5 PCP missed person scores 0", ok, f"instance PCP {single}, two-gt PCP {both}")
    assert ok


def _partition_agreement(labels, owner):
    fg = owner >= 0
    a, b = labels[fg] - 1, owner[fg]
    table = np.zeros((a.max() + 1, b.max() + 1), dtype=np.int64)
    np.add.at(table, (a, b), 1)
    rows, cols = linear_sum_assignment(-table)
    return table[rows, cols].sum() / fg.sum()


def test_criterion_6_clustering_recovery(acceptance):
    cfg = SynthConfig(seed=600, image_count=100, instances_per_image=(1, 5), overlap_mode="disjoint")
    start = time.perf_counter()
    gts = synth_generate(cfg)
    preds, worst = {}, 1.0
    for i, scene in gts.items():
        sem = flatten(scene)
        lab = cluster_instances(sem, encode_locations(scene, "image"), scene.person_count,
                                ClusterConfig(encoding_mode="image"))
        worst = min(worst, _partition_agreement(lab.labels, owner_map(scene)))
        preds[i] = labeling_to_scene(lab, sem, 1.0, i)
    round_trip = ap_r(preds, gts, 0.5).value
    elapsed = time.perf_counter() - start
    ok = worst >= 0.99 and round_trip == 1.0 and elapsed <= 120
    acceptance("criterion 6 clustering recovery", ok,
               f"100 scenes, worst pixel agreement {worst:.4f}, ap_r@0.5 {round_trip}, {elapsed:.1f}s")
    assert ok


def test_criterion_7_determinism(acceptance, tmp_path):
    # at least four workers so the process pool is exercised on small machines too
    max_jobs = str(max(os.cpu_count() or 1, 4))
    digests = {}
    for run, jobs in enumerate(("1", max_jobs, max_jobs)):
        base = tmp_path / f"run{run}"
        gt, enc, pred = base / "gt", base / "enc", base / "pred"
        spec = base / "spec.json"
        codes = [main(["synth", "--seed", "7", "--images", "12", "--grid", "48x48", "--overlap", "heavy",
                       "--out", str(gt)])]
        base.mkdir(exist_ok=True)
        spec.write_text(json.dumps({"erode_radius": 1, "drop_prob": 0.2, "score_noise": 0.2, "seed": 4}))
        codes.append(main(["corrupt", "--gt", str(gt), "--spec", str(spec), "--out", str(pred)]))
        codes.append(main(["encode-locations", "--gt", str(gt), "--out", str(enc)]))
        codes.append(main(["cluster", "--semantic", str(enc), "--locations", str(enc), "--seed", "3",
                           "--sample-cap", "300", "--jobs", jobs, "--out", str(base / "clustered")]))
        for fmt in ("json", "csv"):
            codes.append(main(["evaluate", "--gt", str(gt), "--pred", str(pred), "--jobs", jobs,
                               "--format", fmt, "--out", str(base / f"report.{fmt}")]))
        assert codes == [0] * len(codes)
        digests[run] = {name: _tree_digest(base / name) for name in ("gt", "pred", "enc", "clustered")}
        digests[run].update({f"report.{f}": hashlib.sha256((base / f"report.{f}").read_bytes()).hexdigest()
                             for f in ("json", "csv")})
    differing = sorted(k for k in digests[0] if len({d[k] for d in digests.values()}) != 1)
    ok = not differing
    acceptance("criterion 7 determinism", ok,
               f"3 runs (jobs 1, {max_jobs}, {max_jobs}), differing artifacts: {differing or 'none'}")
    assert ok


def test_criterion_8_throughput(acceptance, tmp_path):
    cfg = SynthConfig(seed=800, image_count=100, grid=ImageSize(512, 512), instances_per_image=(2, 5),
                      overlap_mode="mild")
    gts = synth_generate(cfg)
    preds = corrupt_dataset(gts, CorruptionSpec(erode_radius=2, drop_prob=0.1, score_noise=0.2,
                                                merge_prob=0.1, seed=8))
    mio.save_dataset(gts, tmp_path / "gt")
    for p in preds.values():
        mio.save_predictions(p, tmp_path / "pred")
    start = time.perf_counter()
    code = main(["evaluate", "--gt", str(tmp_path / "gt"), "--pred", str(tmp_path / "pred"),
                 "--thresholds", "0.1:0.9:0.1", "--jobs", "1", "--out", str(tmp_path / "r.json")])
    elapsed = time.perf_counter() - start
    ok = code == 0 and elapsed <= 60
    acceptance("criterion 8 throughput", ok, f"100 scenes at 512x512, 9 thresholds, {elapsed:.1f}s incl. PNG decode")
    assert ok


EXPECTED_SPLITS = {"train": 15403, "val": 5000, "test": 5000}


def test_criterion_9_real_dataset_stats(acceptance, tmp_path):
    root = os.environ.get("MHP_V2_ROOT")
    if not root or not Path(root).is_dir():
        acceptance("criterion 9 real-data statistics", None, "MHP_V2_ROOT not set; real ground truth unavailable")
        pytest.skip("real ground truth not available")
    out = tmp_path / "stats.json"
    code = main(["stats", "--gt", root, "--out", str(out)])
    doc = json.loads(out.read_text()) if code == 0 else {}
    splits = doc.get("splits", {})
    problems = [f"{s}={n}" for s, n in splits.items() if n and n != EXPECTED_SPLITS.get(s)]
    # withheld test annotations leave that split empty
    expected_total = sum(EXPECTED_SPLITS[s] for s, n in splits.items() if n) if splits else 25403
    if doc.get("image_count") != expected_total:
        problems.append(f"image_count={doc.get('image_count')}")
    if doc.get("instance_range") != [2, 26]:
        problems.append(f"instance_range={doc.get('instance_range')}")
    mean = doc.get("avg_instances_per_image", 0)
    if abs(mean - 3) > 0.2:
        problems.append(f"mean instances={mean:.3f}")
    ok = code == 0 and not problems
    acceptance("criterion 9 real-data statistics", ok, f"exit {code}, mismatches: {problems or 'none'}")
    assert ok
