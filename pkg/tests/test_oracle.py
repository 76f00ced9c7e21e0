import numpy as np
import pytest

from mhpbench.exceptions import ValidationError
from mhpbench.metrics import VOL_THRESHOLDS, evaluate
from mhpbench.oracle import oracle_evaluate
from mhpbench.scene import ImageSize, SceneAnnotation, ScoredScene
from mhpbench.synth import CorruptionSpec, SynthConfig, corrupt_dataset, random_suite, synth_generate

from conftest import block, make_pred, make_scene


def _close(a, b):
    for name in ("ap_p", "pcp", "ap_r"):
        x, y = getattr(a, name), getattr(b, name)
        assert sorted(x) == sorted(y)
        for t in x:
            assert abs(x[t] - y[t]) <= 1e-9, (name, t, x[t], y[t])


def test_oracle_perfect():
    gts = synth_generate(SynthConfig(seed=1, image_count=3, grid=ImageSize(24, 24), instances_per_image=(1, 4)))
    preds = {i: ScoredScene.certain(s) for i, s in gts.items()}
    rep = oracle_evaluate(preds, gts, VOL_THRESHOLDS)
    assert set(rep.ap_p.values()) == set(rep.pcp.values()) == set(rep.ap_r.values()) == {1.0}
    assert rep.ap_p_vol == 1.0


def test_oracle_empty_predictions():
    gts = synth_generate(SynthConfig(seed=1, image_count=2, grid=ImageSize(16, 16), instances_per_image=(1, 3)))
    preds = {i: ScoredScene(SceneAnnotation(i, (), s.size), ()) for i, s in gts.items()}
    rep = oracle_evaluate(preds, gts, [0.5])
    assert rep.ap_p[0.5] == rep.pcp[0.5] == rep.ap_r[0.5] == 0.0


def test_oracle_hand_case():
    gt = np.zeros((4, 4), np.uint8)
    gt[:2] = 1
    gt[2:] = 2
    pred = gt.copy()
    pred[3] = 0
    gts = {"a": make_scene("a", gt)}
    preds = {"a": make_pred("a", [pred], [1.0])}
    rep = oracle_evaluate(preds, gts, [0.5, 0.8])
    # part IoUs 1 and 1/2, mean 3/4; region 12/16
    assert rep.ap_p == {0.5: 1.0, 0.8: 0.0}
    assert rep.pcp == {0.5: 0.5, 0.8: 0.0}
    assert rep.ap_r == {0.5: 1.0, 0.8: 0.0}


def test_oracle_refuses_large_inputs():
    big = make_scene("a", block((65, 10), (0, 2), (0, 2)))
    with pytest.raises(ValidationError, match="refuses"):
        oracle_evaluate({"a": ScoredScene.certain(big)}, {"a": big}, [0.5])
    many = make_scene("b", *(block((8, 8), (k, k + 1), (0, 2)) for k in range(7)))
    with pytest.raises(ValidationError, match="refuses"):
        oracle_evaluate({"b": ScoredScene.certain(many)}, {"b": many}, [0.5])


@pytest.mark.parametrize("seed", [11, 12, 13, 14, 15])
def test_oracle_agrees_with_engine(seed):
    suite = random_suite(seed)
    fast = evaluate(suite.preds, suite.gts, traces=False)
    slow = oracle_evaluate(suite.preds, suite.gts, VOL_THRESHOLDS)
    _close(fast, slow)


@pytest.mark.parametrize("categories", ["union", "gt"])
def test_oracle_category_modes(categories):
    gts = synth_generate(SynthConfig(seed=3, image_count=3, grid=ImageSize(24, 24), instances_per_image=(2, 4),
                                     overlap_mode="heavy", category_pool=tuple(range(1, 9))))
    preds = corrupt_dataset(gts, CorruptionSpec(relabel_frac=0.1, erode_radius=1, score_noise=0.2, seed=2))
    fast = evaluate(preds, gts, categories=categories, traces=False)
    _close(fast, oracle_evaluate(preds, gts, VOL_THRESHOLDS, categories=categories))
