import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mhpbench.exceptions import ValidationError
from mhpbench.labels import DEFAULT_LABELS, LabelSpec, load_label_spec, pascal_person_part_labels
from mhpbench.scene import (
    ImageSize,
    InstanceMask,
    SceneAnnotation,
    bounding_box,
    flatten,
    owner_map,
    validate,
)

from conftest import make_scene


def test_default_label_spec():
    assert DEFAULT_LABELS.count == 59
    assert DEFAULT_LABELS.names[0] == "background"
    assert DEFAULT_LABELS.id_of("face") == 3
    assert DEFAULT_LABELS.names[-1] == "other-lower-body-clothes"
    assert pascal_person_part_labels().count == 7


def test_label_spec_file(tmp_path):
    p = tmp_path / "labels.txt"
    p.write_text("background\nhead\ntorso\n", encoding="utf-8")
    assert load_label_spec(p).names == ("background", "head", "torso")
    p.write_text("head\nbackground\n", encoding="utf-8")
    with pytest.raises(ValidationError):
        load_label_spec(p)


@pytest.mark.parametrize("names", [("background", "a", "a"), ("background", ""), ()])
def test_label_spec_rejects(names):
    with pytest.raises(ValidationError):
        LabelSpec(names)


def test_image_size_positive():
    with pytest.raises(ValidationError):
        ImageSize(0, 4)


def test_bounding_box_single_pixel():
    m = np.zeros((10, 10), dtype=np.uint8)
    m[7, 3] = 4
    box = bounding_box(InstanceMask(m))
    assert box.as_tuple() == (3, 7, 3, 7)
    assert box.width == box.height == 1


def test_bounding_box_full_frame():
    assert bounding_box(InstanceMask(np.ones((10, 10), dtype=np.uint8))).as_tuple() == (0, 0, 9, 9)


def test_bounding_box_two_pixels():
    m = np.zeros((12, 12), dtype=np.uint8)
    m[2, 2] = 1
    m[9, 5] = 1
    box = bounding_box(InstanceMask(m))
    assert box.as_tuple() == (2, 2, 5, 9)
    assert (box.width, box.height) == (4, 8)


def test_bounding_box_empty():
    with pytest.raises(ValidationError, match="empty instance"):
        bounding_box(InstanceMask(np.zeros((3, 3), dtype=np.uint8)))


@settings(max_examples=60, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=st.integers(0, 3)))
def test_bounding_box_is_tight(pixels):
    if not pixels.any():
        return
    box = bounding_box(InstanceMask(pixels))
    ys, xs = np.nonzero(pixels)
    assert xs.min() >= box.x_left and xs.max() <= box.x_right
    assert ys.min() >= box.y_top and ys.max() <= box.y_bottom
    inside = pixels[box.y_top:box.y_bottom + 1, box.x_left:box.x_right + 1] != 0
    assert inside[0].any() and inside[-1].any() and inside[:, 0].any() and inside[:, -1].any()


def test_flatten_single_instance_is_identity():
    m = np.array([[0, 3], [5, 0]], dtype=np.uint8)
    assert np.array_equal(flatten(make_scene("a", m)).pixels, m)


def test_flatten_empty_scene():
    scene = SceneAnnotation("a", (), ImageSize(3, 2))
    assert not flatten(scene).pixels.any()
    assert flatten(scene).pixels.shape == (2, 3)


def test_flatten_last_instance_wins():
    a = np.zeros((2, 2), dtype=np.uint8)
    b = np.zeros((2, 2), dtype=np.uint8)
    a[0, 0] = 3
    b[0, 0] = 5
    a[1, 1] = 3
    out = flatten(make_scene("a", a, b)).pixels
    assert out[0, 0] == 5
    assert out[1, 1] == 3
    assert owner_map(make_scene("a", a, b))[0, 0] == 1


def test_flatten_size_mismatch():
    scene = make_scene("a", np.ones((2, 2), np.uint8), np.ones((3, 2), np.uint8))
    with pytest.raises(ValidationError, match="size mismatch"):
        flatten(scene)


@st.composite
def disjoint_scenes(draw):
    h, w = draw(st.integers(2, 10)), draw(st.integers(2, 10))
    owner = draw(arrays(np.int8, (h, w), elements=st.integers(-1, 3)))
    cats = draw(arrays(np.uint8, (h, w), elements=st.integers(1, 9)))
    masks = []
    for k in range(4):
        m = np.where(owner == k, cats, 0).astype(np.uint8)
        if m.any():
            masks.append(m)
    return masks, (w, h)


@settings(max_examples=60, deadline=None)
@given(disjoint_scenes(), st.randoms(use_true_random=False))
def test_flatten_properties(data, rnd):
    masks, (w, h) = data
    scene = SceneAnnotation("s", tuple(InstanceMask(m) for m in masks), ImageSize(w, h))
    first = flatten(scene)
    assert first.pixels.tobytes() == flatten(scene).pixels.tobytes()
    shuffled = list(masks)
    rnd.shuffle(shuffled)
    other = SceneAnnotation("s", tuple(InstanceMask(m) for m in shuffled), ImageSize(w, h))
    assert np.array_equal(first.pixels, flatten(other).pixels)


def _two_instances():
    a = np.zeros((4, 4), np.uint8)
    b = np.zeros((4, 4), np.uint8)
    a[0, 0] = 1
    b[3, 3] = 2
    return a, b


def test_validate_clean():
    assert validate(make_scene("a", *_two_instances()), DEFAULT_LABELS, strict=True) == []


def test_validate_category_out_of_range():
    a, b = _two_instances()
    b[2, 2] = 200
    problems = validate(make_scene("a", a, b), DEFAULT_LABELS)
    assert len(problems) == 1 and "category out of range" in problems[0]


def test_validate_person_count_rule():
    a, _ = _two_instances()
    scene = make_scene("a", a)
    assert validate(scene, strict=True) == ["fewer than two instances"]
    assert validate(scene, strict=False) == []


def test_validate_empty_instance():
    a, b = _two_instances()
    problems = validate(make_scene("a", a, np.zeros_like(b)))
    assert problems == ["instance 1: empty instance"]


def test_masks_are_immutable():
    m = InstanceMask(np.ones((2, 2), np.uint8))
    with pytest.raises(ValueError):
        m.pixels[0, 0] = 3
