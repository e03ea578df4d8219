"""Piecewise-uniform 2D distributions built from labelled boxes.

The toy layout is a 2x2 grid of unit squares centred on the origin with a
0.1 gap between neighbours.  Red is class 1, blue is class 0; the top row is
red on the left side.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError

RED, BLUE = 1, 0
GAP = 0.1
_H = GAP / 2

# (lower, upper) corners of the four unit squares
LEFT_TOP = ((-1 - _H, _H), (-_H, 1 + _H))
LEFT_BOTTOM = ((-1 - _H, -1 - _H), (-_H, -_H))
RIGHT_TOP = ((_H, _H), (1 + _H, 1 + _H))
RIGHT_BOTTOM = ((_H, -1 - _H), (1 + _H, -_H))

CASES = ("i", "ii", "iii", "iv")


@dataclass(frozen=True)
class BoxRegion:
    lower: tuple
    upper: tuple
    label: int
    mass: float

    def __post_init__(self):
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ValueError(f"box needs lower < upper per axis, got {self.lower}, {self.upper}")
        if self.mass < 0:
            raise ValueError("box mass must be non-negative")

    @property
    def area(self) -> float:
        return float(np.prod(np.subtract(self.upper, self.lower)))

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.lower, float) + np.asarray(self.upper, float)) / 2

    def contains(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        return np.all((X >= self.lower) & (X <= self.upper), axis=1)

    def overlap_area(self, other: "BoxRegion") -> float:
        lo = np.maximum(self.lower, other.lower)
        hi = np.minimum(self.upper, other.upper)
        return float(np.prod(np.clip(hi - lo, 0.0, None)))


def _boxes_disjoint(boxes: Sequence[BoxRegion]) -> bool:
    return all(a.overlap_area(b) == 0.0
               for i, a in enumerate(boxes) for b in boxes[i + 1:])


@dataclass(frozen=True)
class SupportSpec:
    """Exact training and test joint densities as lists of labelled boxes."""

    train: tuple
    test: tuple
    n_classes: int = 2
    name: str = ""

    def __post_init__(self):
        for side in ("train", "test"):
            boxes = getattr(self, side)
            if not boxes:
                raise ValueError(f"{side} side needs at least one box")
            total = sum(b.mass for b in boxes)
            if abs(total - 1.0) > 1e-12:
                raise ValueError(f"{side} masses sum to {total}, not 1")
            if not _boxes_disjoint(boxes):
                raise ValueError(f"{side} boxes overlap")
            if any(not 0 <= b.label < self.n_classes for b in boxes):
                raise ValueError(f"{side} box label out of range")

    def boxes(self, side: str) -> tuple:
        if side not in ("train", "test"):
            raise ValueError(f"side must be 'train' or 'test', got {side!r}")
        return getattr(self, side)

    def density(self, side: str, X, y) -> np.ndarray:
        """Joint density ``p_side(x, y)`` at each row."""
        X = np.atleast_2d(np.asarray(X, float))
        y = np.asarray(y).reshape(-1)
        out = np.zeros(len(X))
        for b in self.boxes(side):
            hit = b.contains(X) & (y == b.label)
            out[hit] += b.mass / b.area
        return out

    def in_support(self, side: str, X, y=None) -> np.ndarray:
        """Membership in the x-support (``y is None``) or the (x, y)-support."""
        X = np.atleast_2d(np.asarray(X, float))
        hit = np.zeros(len(X), dtype=bool)
        for b in self.boxes(side):
            inside = b.contains(X)
            if y is not None:
                inside &= np.asarray(y).reshape(-1) == b.label
            hit |= inside & (b.mass > 0)
        return hit

    def bounding_box(self, side: str = "test"):
        boxes = self.boxes(side)
        lo = np.min([b.lower for b in boxes], axis=0)
        hi = np.max([b.upper for b in boxes], axis=0)
        return lo, hi


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    tag: str = "train"

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, float))
        self.y = np.asarray(self.y, dtype=int).reshape(-1)
        if len(self.X) != len(self.y):
            raise ValueError(f"{len(self.X)} rows but {len(self.y)} labels")
        if self.X.size == 0:
            self.X = self.X.reshape(0, self.X.shape[1] if self.X.ndim == 2 else 2)

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx, tag: str | None = None) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.X[idx].reshape(len(idx), self.X.shape[1]), self.y[idx],
                       tag or self.tag)

    def to_csv(self, path=None) -> str:
        """Write ``x1,x2,...,label`` rows with 17 significant digits."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{k + 1}" for k in range(self.X.shape[1])] + ["label"])
        for row, label in zip(self.X, self.y):
            w.writerow([format(v, ".17g") for v in row] + [int(label)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path, tag: str = "train") -> "Dataset":
        return cls.parse_csv(Path(path).read_text(), tag)

    @classmethod
    def parse_csv(cls, text: str, tag: str = "train") -> "Dataset":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        if header[-1] != "label":
            raise ValueError("last CSV column must be 'label'")
        X = np.array([[float(v) for v in r[:-1]] for r in body]).reshape(len(body), len(header) - 1)
        y = np.array([int(r[-1]) for r in body], dtype=int)
        return cls(X, y, tag)


def _box(corners, label, mass) -> BoxRegion:
    return BoxRegion(tuple(corners[0]), tuple(corners[1]), label, mass)


def make_grid_example(variant: str = "aligned") -> SupportSpec:
    """The two 2x2-grid toys: train on the left column, test on all four squares.

    ``aligned`` keeps red on top on the right side as well; ``checkerboard``
    swaps the right-hand labels.
    """
    if variant not in ("aligned", "checkerboard"):
        raise ValueError(f"unknown grid variant {variant!r}")
    top_right, bottom_right = (RED, BLUE) if variant == "aligned" else (BLUE, RED)
    train = (_box(LEFT_TOP, RED, 0.5), _box(LEFT_BOTTOM, BLUE, 0.5))
    test = (_box(LEFT_TOP, RED, 0.25), _box(LEFT_BOTTOM, BLUE, 0.25),
            _box(RIGHT_TOP, top_right, 0.25), _box(RIGHT_BOTTOM, bottom_right, 0.25))
    return SupportSpec(train, test, 2, f"grid-{variant}")


def make_case_spec(case: str) -> SupportSpec:
    """Canonical layouts for the four support relationships (aligned labels).

    (i)   train = test = left column
    (ii)  train = all four squares, test = left column
    (iii) train = left column, test = all four squares
    (iv)  train = left column, test = right column + left-top square
    """
    lt, lb = (LEFT_TOP, RED), (LEFT_BOTTOM, BLUE)
    rt, rb = (RIGHT_TOP, RED), (RIGHT_BOTTOM, BLUE)

    def uniform(*squares):
        return tuple(_box(c, lab, 1.0 / len(squares)) for c, lab in squares)

    layouts = {
        "i": (uniform(lt, lb), uniform(lt, lb)),
        "ii": (uniform(lt, lb, rt, rb), uniform(lt, lb)),
        "iii": (uniform(lt, lb), uniform(lt, lb, rt, rb)),
        "iv": (uniform(lt, lb), uniform(rt, rb, lt)),
    }
    if case not in layouts:
        raise ValueError(f"case must be one of {CASES}, got {case!r}")
    train, test = layouts[case]
    return SupportSpec(train, test, 2, f"case-{case}")


def _sample_boxes(boxes: Sequence[BoxRegion], n: int, rng) -> tuple:
    masses = np.array([b.mass for b in boxes], float)
    which = rng.choice(len(boxes), size=n, p=masses / masses.sum())
    lo = np.array([b.lower for b in boxes], float)[which]
    hi = np.array([b.upper for b in boxes], float)[which]
    X = lo + (hi - lo) * rng.random((n, lo.shape[1]))
    y = np.array([b.label for b in boxes], int)[which]
    return X, y


def sample(spec: SupportSpec, side: str, n: int, seed=0, tag: str | None = None) -> Dataset:
    """Draw ``n`` i.i.d. labelled points from one side of ``spec``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    X, y = _sample_boxes(spec.boxes(side), n, rng)
    return Dataset(X, y, tag or side)


def oot_boxes(spec: SupportSpec) -> list:
    """Test boxes sharing no area (with the same label) with any training box."""
    return [b for b in spec.test
           if not any(b.overlap_area(t) > 0 and b.label == t.label for t in spec.train)]


def make_toy_validation(spec: SupportSpec, seed=0) -> Dataset:
    """One uniform point per training square plus the centre of each test-only square.

    Only training squares that are also part of the test support contribute a
    point, so every validation point follows the test distribution's labels.
    """
    rng = np.random.default_rng(seed)
    X, y = [], []
    for b in spec.train:
        if not spec.in_support("test", b.center[None, :])[0]:
            continue
        pt = np.asarray(b.lower) + (np.asarray(b.upper) - np.asarray(b.lower)) * rng.random(2)
        X.append(pt)
        y.append(_test_label(spec, pt))
    for b in oot_boxes(spec):
        X.append(b.center)
        y.append(b.label)
    return Dataset(np.array(X), np.array(y), "validation")


def _test_label(spec: SupportSpec, pt) -> int:
    for b in spec.test:
        if b.contains(pt[None, :])[0]:
            return b.label
    raise DomainError(f"point {pt} is outside the test support")


def make_validation(spec: SupportSpec, per_box: int = 2, seed=0) -> Dataset:
    """``per_box`` uniform points from every test box."""
    rng = np.random.default_rng(seed)
    X, y = [], []
    for b in spec.test:
        Xb, yb = _sample_boxes([b], per_box, rng)
        X.append(Xb)
        y.append(yb)
    return Dataset(np.vstack(X), np.concatenate(y), "validation")


def apply_label_noise(data: Dataset, rate: float, seed=0, n_classes: int | None = None) -> Dataset:
    """Symmetric noise: flip each label w.p. ``rate`` to a uniformly chosen other class."""
    if not 0 <= rate < 1:
        raise ValueError("noise rate must lie in [0, 1)")
    C = n_classes or int(data.y.max()) + 1
    if C < 2 and rate > 0:
        raise DomainError("label noise needs at least two classes")
    rng = np.random.default_rng(seed)
    flip = rng.random(len(data)) < rate
    shift = rng.integers(1, max(C, 2), size=len(data))
    y = data.y.copy()
    y[flip] = (y[flip] + shift[flip]) % C
    return Dataset(data.X.copy(), y, data.tag)


def apply_class_prior_shift(data: Dataset, rho: float, minority: Iterable[int], seed=0) -> Dataset:
    """Subsample ``minority`` classes to ``n_majority // rho`` examples each.

    ``n_majority`` is the largest per-class count among the remaining classes
    (or the class's own count when every class is a minority).  Kept rows
    retain their original order.
    """
    if rho < 1:
        raise ValueError("rho must be >= 1")
    minority = set(int(c) for c in minority)
    classes, counts = np.unique(data.y, return_counts=True)
    majority_counts = [c for k, c in zip(classes, counts) if k not in minority]
    rng = np.random.default_rng(seed)
    keep = np.ones(len(data), dtype=bool)
    for k, count in zip(classes, counts):
        if k not in minority:
            continue
        ref = max(majority_counts) if majority_counts else count
        n_keep = int(ref // rho)
        if n_keep < 1:
            raise DomainError(f"class {k} would be left with no examples at rho={rho}")
        idx = np.flatnonzero(data.y == k)
        drop = rng.choice(idx, size=max(len(idx) - n_keep, 0), replace=False)
        keep[drop] = False
    return data.subset(np.flatnonzero(keep))
