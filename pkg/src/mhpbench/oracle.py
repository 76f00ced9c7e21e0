"""Naive reference evaluator used to cross-check the metric engine.

Everything here is plain Python over pixel-coordinate sets: direct pixel
counting, an explicit greedy walk and an explicit precision/recall table.
Nothing from the metric engine is used apart from its result container.
AP is accumulated in exact rationals.
"""

from __future__ import annotations

from fractions import Fraction

from .exceptions import ValidationError
from .metrics import MetricReport  # result container only

MAX_SIDE = 64
MAX_INSTANCES = 6


def _pixel_sets(mask):
    """Map category -> set of (row, col), plus the foreground set."""
    by_cat = {}
    fg = set()
    for r, row in enumerate(mask.pixels.tolist()):
        for c, v in enumerate(row):
            if v != 0:
                by_cat.setdefault(v, set()).add((r, c))
                fg.add((r, c))
    return by_cat, fg


def _iou(a, b):
    union = len(a | b)
    if union == 0:
        return 1.0
    return len(a & b) / union


def _check_tractable(scene, what):
    size = scene.size
    if size.width > MAX_SIDE or size.height > MAX_SIDE:
        raise ValidationError(f"oracle refuses {what} {scene.image_id}: grid above {MAX_SIDE}x{MAX_SIDE}")
    if len(scene.instances) > MAX_INSTANCES:
        raise ValidationError(f"oracle refuses {what} {scene.image_id}: more than {MAX_INSTANCES} instances")


class _Pair:
    def __init__(self, pred_sets, gt_sets, categories):
        p_cat, p_fg = pred_sets
        g_cat, g_fg = gt_sets
        if categories == "union":
            cats = sorted(set(p_cat) | set(g_cat))
        else:
            cats = sorted(g_cat)
        values = [_iou(p_cat.get(c, set()), g_cat.get(c, set())) for c in cats]
        self.part = sum(values) / len(values) if values else 0.0
        self.region = _iou(p_fg, g_fg)
        self.gt_cat_ious = [_iou(p_cat.get(c, set()), g_cat[c]) for c in sorted(g_cat)]


def _walk(pairs, scores, n_gt, kind, t):
    """Return {pred_index: gt_index} from a greedy walk in score order."""
    order = list(range(len(scores)))
    # bubble-free explicit ordering: highest score first, lower index first on ties
    order.sort(key=lambda i: i)
    order.sort(key=lambda i: scores[i], reverse=True)
    taken = [False] * n_gt
    assignment = {}
    for p in order:
        best_g, best_v = None, None
        for g in range(n_gt):
            if taken[g]:
                continue
            v = getattr(pairs[p][g], kind)
            if best_v is None or v > best_v:
                best_g, best_v = g, v
        if best_g is not None and best_v > t:
            taken[best_g] = True
            assignment[p] = best_g
    return assignment


def _ap_from_table(rows, total_gt):
    """rows: list of (score, image_id, pred_index, is_tp)."""
    if total_gt == 0:
        return 0.0 if rows else 1.0
    rows = sorted(rows, key=lambda r: (-r[0], r[1], r[2]))
    table = []
    tp = fp = 0
    for _, _, _, hit in rows:
        if hit:
            tp += 1
        else:
            fp += 1
        table.append((Fraction(tp, total_gt), Fraction(tp, tp + fp)))
    ap = Fraction(0)
    prev_recall = Fraction(0)
    for recall, _ in table:
        best = max(p for r, p in table if r >= recall)
        ap += (recall - prev_recall) * best
        prev_recall = recall
    return float(ap)


def oracle_evaluate(preds, gts, thresholds, categories="union", label="all") -> MetricReport:
    if set(preds) != set(gts):
        raise ValidationError("dataset misalignment")
    images = []
    for image_id in sorted(gts):
        gt, pred = gts[image_id], preds[image_id]
        _check_tractable(gt, "ground truth")
        _check_tractable(pred.scene, "prediction")
        g_sets = [_pixel_sets(m) for m in gt.instances]
        p_sets = [_pixel_sets(m) for m in pred.instances]
        pairs = [[_Pair(ps, gs, categories) for gs in g_sets] for ps in p_sets]
        images.append((image_id, list(pred.scores), len(g_sets), pairs))

    total_gt = sum(n for _, _, n, _ in images)
    report = MetricReport(subset=label, n_images=len(images), n_gt=total_gt,
                          n_pred=sum(len(s) for _, s, _, _ in images))
    for t in thresholds:
        for kind, target in (("part", report.ap_p), ("region", report.ap_r)):
            rows = []
            for image_id, scores, n_gt, pairs in images:
                assignment = _walk(pairs, scores, n_gt, kind, t)
                for p, s in enumerate(scores):
                    rows.append((s, image_id, p, p in assignment))
            target[t] = _ap_from_table(rows, total_gt)
        pcp_total = 0.0
        for image_id, scores, n_gt, pairs in images:
            for p, g in _walk(pairs, scores, n_gt, "part", t).items():
                cat_ious = pairs[p][g].gt_cat_ious
                if cat_ious:
                    correct = len([v for v in cat_ious if v > t])
                    pcp_total += correct / len(cat_ious)
        report.pcp[t] = pcp_total / total_gt if total_gt else 0.0

    nine = [k / 10 for k in range(1, 10)]
    for name in ("ap_p", "ap_r"):
        values = getattr(report, name)
        found = [v for t in nine for k, v in values.items() if abs(k - t) < 1e-9]
        if len(found) == 9:
            setattr(report, f"{name}_vol", sum(found) / 9)
    return report
