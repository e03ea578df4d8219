import numpy as np
import pytest
from hypothesis import given, strategies as st

from giw.errors import DomainError
from giw.synth import (BLUE, CASES, RED, BoxRegion, Dataset, SupportSpec, apply_class_prior_shift,
                       apply_label_noise, make_case_spec, make_grid_example, make_toy_validation,
                       make_validation, oot_boxes, sample)


def label_at(spec, side, x):
    hits = [b.label for b in spec.boxes(side) if b.contains(np.asarray(x)[None, :])[0]]
    assert len(hits) == 1
    return hits[0]


def test_grid_labels():
    al, cb = make_grid_example("aligned"), make_grid_example("checkerboard")
    assert label_at(al, "test", [0.5, 0.5]) == label_at(al, "test", [-0.5, 0.5]) == RED
    assert label_at(cb, "test", [0.5, 0.5]) == BLUE
    assert label_at(cb, "test", [0.5, -0.5]) == RED
    assert al.train == cb.train
    with pytest.raises(ValueError):
        make_grid_example("diagonal")


def test_train_sample_stays_left():
    spec = make_grid_example("aligned")
    d = sample(spec, "train", 200, seed=0)
    assert len(d) == 200 and np.all(d.X[:, 0] < -0.05)
    assert np.all(spec.in_support("train", d.X, d.y))


def test_train_class_frequencies():
    d = sample(make_grid_example("aligned"), "train", 4000, seed=3)
    # 4 standard errors of a fair binomial
    assert abs(d.y.mean() - 0.5) <= 4 * np.sqrt(0.25 / 4000)


def test_sample_deterministic():
    spec = make_case_spec("iv")
    a, b = sample(spec, "test", 50, seed=9), sample(spec, "test", 50, seed=9)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
    with pytest.raises(ValueError):
        sample(spec, "test", 0)


@given(case=st.sampled_from(CASES), side=st.sampled_from(["train", "test"]),
       seed=st.integers(0, 1000))
def test_points_in_exactly_one_box(case, side, seed):
    spec = make_case_spec(case)
    d = sample(spec, side, 100, seed)
    hits = np.sum([b.contains(d.X) & (d.y == b.label) for b in spec.boxes(side)], axis=0)
    assert np.all(hits == 1)


@pytest.mark.parametrize("variant", ["aligned", "checkerboard"])
def test_toy_validation(variant):
    spec = make_grid_example(variant)
    v = make_toy_validation(spec, seed=4)
    assert len(v) == 4
    assert np.all(spec.in_support("train", v.X[:2]))
    assert np.allclose(v.X[2:], [[0.55, 0.55], [0.55, -0.55]])
    assert np.all(spec.density("test", v.X, v.y) > 0)


def test_toy_validation_right_labels_flip():
    a = make_toy_validation(make_grid_example("aligned"), 0)
    c = make_toy_validation(make_grid_example("checkerboard"), 0)
    assert np.array_equal(a.y[2:], 1 - c.y[2:])
    assert np.array_equal(a.y[:2], c.y[:2])


def box_set(boxes):
    return {(b.lower, b.upper, b.label) for b in boxes}


def test_case_set_relations():
    sp = {c: make_case_spec(c) for c in CASES}
    assert box_set(sp["i"].train) == box_set(sp["i"].test)
    assert box_set(sp["ii"].test) < box_set(sp["ii"].train)
    assert box_set(sp["iii"].train) < box_set(sp["iii"].test)
    tr, te = box_set(sp["iv"].train), box_set(sp["iv"].test)
    assert tr & te and tr - te and te - tr
    assert len(oot_boxes(sp["iii"])) == 2 and oot_boxes(sp["i"]) == []


def test_spec_validation():
    b = BoxRegion((0, 0), (1, 1), 0, 1.0)
    with pytest.raises(ValueError):
        SupportSpec((BoxRegion((0, 0), (1, 1), 0, 0.5),), (b,))
    with pytest.raises(ValueError):
        SupportSpec((b, BoxRegion((0.5, 0.5), (2, 2), 1, 0.0)), (b,))
    with pytest.raises(ValueError):
        SupportSpec((BoxRegion((0, 0), (1, 1), 3, 1.0),), (b,))
    with pytest.raises(ValueError):
        BoxRegion((1, 0), (0, 1), 0, 1.0)


def test_validation_two_per_box():
    spec = make_case_spec("iii")
    v = make_validation(spec, 2, seed=0)
    assert len(v) == 8
    assert np.all(spec.in_support("test", v.X, v.y))


def test_label_noise():
    d = sample(make_grid_example("aligned"), "train", 10_000, seed=0)
    assert np.array_equal(apply_label_noise(d, 0.0, 1).y, d.y)
    noisy = apply_label_noise(d, 0.4, seed=1)
    assert abs(np.mean(noisy.y != d.y) - 0.4) <= 0.015
    with pytest.raises(ValueError):
        apply_label_noise(d, 1.0)


def test_label_noise_never_keeps_label_when_flipped():
    r = np.random.default_rng(0)
    d = Dataset(r.normal(size=(3000, 2)), r.integers(0, 5, 3000))
    noisy = apply_label_noise(d, 0.999999, seed=2, n_classes=5)
    assert np.all(noisy.y != d.y)
    assert set(np.unique(noisy.y)) == set(range(5))


def balanced(per_class, C=4):
    y = np.repeat(np.arange(C), per_class)
    return Dataset(np.zeros((len(y), 2)), y)


@pytest.mark.parametrize("rho,keep", [(10, 100), (100, 10), (3, 333)])
def test_class_prior_shift_counts(rho, keep):
    out = apply_class_prior_shift(balanced(1000), rho, minority=[2, 3], seed=0)
    counts = np.bincount(out.y, minlength=4)
    assert counts.tolist() == [1000, 1000, keep, keep]


def test_class_prior_shift_identity_and_errors():
    d = balanced(50)
    assert np.array_equal(apply_class_prior_shift(d, 1, [0, 1]).y, d.y)
    with pytest.raises(DomainError):
        apply_class_prior_shift(d, 100, [0])
    with pytest.raises(ValueError):
        apply_class_prior_shift(d, 0.5, [0])


def test_csv_round_trip(tmp_path):
    d = sample(make_case_spec("iv"), "test", 20, seed=1)
    text = d.to_csv(tmp_path / "d.csv")
    assert text.splitlines()[0] == "x1,x2,label"
    back = Dataset.from_csv(tmp_path / "d.csv")
    assert np.array_equal(back.X, d.X) and np.array_equal(back.y, d.y)


def test_dataset_row_mismatch():
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), [0, 1])
