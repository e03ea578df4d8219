"""Exact and Monte-Carlo evaluation of the risk and the IW / GIW objectives.

For a box spec, the support fraction ``alpha`` and the importance ``w*``
are exact.  Loss integrals are estimated by plain Monte Carlo, each term
from its own independent random stream.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Union

import numpy as np

from .netcore import Mlp, cross_entropy, forward
from .ratio import true_ratios
from .synth import SupportSpec, _sample_boxes

Classifier = Union[Mlp, Callable[[np.ndarray], np.ndarray]]

N_SIGMA_EQUAL = 3.0
N_SIGMA_GAP = 5.0


@dataclass(frozen=True)
class Estimate:
    value: float
    se: float
    n: int

    def __iter__(self):
        yield self.value
        yield self.se


def combined_se(*ses: float) -> float:
    return float(np.sqrt(sum(s * s for s in ses)))


def _logits(f: Classifier, X) -> np.ndarray:
    return forward(f, X) if isinstance(f, Mlp) else np.asarray(f(X), float)


def _losses(f: Classifier, X, y) -> np.ndarray:
    return cross_entropy(_logits(f, X), y)


def _estimate(values: np.ndarray) -> Estimate:
    n = len(values)
    se = float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return Estimate(float(values.mean()), se, n)


def _rng(seed, stream: int):
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(stream + 1)[stream])


def exact_alpha(spec: SupportSpec) -> float:
    """Test mass of the part of the test support shared with the training support."""
    alpha = 0.0
    for b in spec.test:
        shared = sum(b.overlap_area(t) for t in spec.train if t.label == b.label and t.mass > 0)
        alpha += b.mass * shared / b.area
    return float(min(alpha, 1.0))


def exact_train_only_mass(spec: SupportSpec) -> float:
    """Training mass outside the test support."""
    out = 0.0
    for t in spec.train:
        shared = sum(t.overlap_area(b) for b in spec.test if b.label == t.label and b.mass > 0)
        out += t.mass * (1 - shared / t.area)
    return float(max(out, 0.0))


def classify_case(spec: SupportSpec, tol: float = 1e-12) -> str:
    """Support relationship of ``spec``: one of ``"i"``, ``"ii"``, ``"iii"``, ``"iv"``."""
    te_only = 1 - exact_alpha(spec) > tol
    tr_only = exact_train_only_mass(spec) > tol
    return {(False, False): "i", (False, True): "ii",
            (True, False): "iii", (True, True): "iv"}[(te_only, tr_only)]


def mc_risk(f: Classifier, spec: SupportSpec, n: int = 100_000, seed=0) -> Estimate:
    """Mean test loss ``E_te[loss(f(x), y)]``."""
    X, y = _sample_boxes(spec.test, n, _rng(seed, 0))
    return _estimate(_losses(f, X, y))


def mc_iw_objective(f: Classifier, spec: SupportSpec, n: int = 100_000, seed=0) -> Estimate:
    """``E_tr[w*(x, y) loss(f(x), y)]`` with the exact importance."""
    X, y = _sample_boxes(spec.train, n, _rng(seed, 1))
    w = true_ratios(spec, X, y)
    return _estimate(w * _losses(f, X, y))


def sample_oot(spec: SupportSpec, n: int, rng) -> tuple:
    """Rejection sampler for the test distribution restricted to the OOT part."""
    if 1 - exact_alpha(spec) <= 0:
        raise ValueError("spec has no out-of-training test mass")
    Xs, ys, got = [], [], 0
    while got < n:
        X, y = _sample_boxes(spec.test, max(2 * (n - got), 64), rng)
        keep = ~spec.in_support("train", X, y)
        Xs.append(X[keep])
        ys.append(y[keep])
        got += int(keep.sum())
    return np.vstack(Xs)[:n], np.concatenate(ys)[:n]


def mc_giw_objective(f: Classifier, spec: SupportSpec, n: int = 100_000, seed=0):
    """``alpha E_tr[w1 loss] + (1 - alpha) E_{s=0}[loss]``.

    ``w1 = p(x, y | s=1) / p_tr = w* / alpha`` is the importance of the
    normalised in-training part of the test density, which is what matching
    training data against in-training validation data estimates.

    Returns ``(estimate, term1, term2)``; a term is ``None`` when its part of
    the test support has no mass.
    """
    alpha = exact_alpha(spec)
    term1 = term2 = None
    value, parts = 0.0, []
    if alpha > 0:
        X, y = _sample_boxes(spec.train, n, _rng(seed, 2))
        term1 = _estimate(true_ratios(spec, X, y) / alpha * _losses(f, X, y))
        value += alpha * term1.value
        parts.append(alpha * term1.se)
    if alpha < 1:
        Xo, yo = sample_oot(spec, n, _rng(seed, 3))
        term2 = _estimate(_losses(f, Xo, yo))
        value += (1 - alpha) * term2.value
        parts.append((1 - alpha) * term2.se)
    return Estimate(value, combined_se(*parts), n), term1, term2


@dataclass(frozen=True)
class RiskReport:
    case: str
    alpha: float
    n: int
    risk: float
    risk_se: float
    iw: float
    iw_se: float
    giw: float
    giw_se: float
    iw_relation: str
    iw_pass: bool
    giw_pass: bool

    @property
    def passed(self) -> bool:
        return self.iw_pass and self.giw_pass

    def summary(self) -> str:
        mark = {True: "pass", False: "FAIL"}
        return f"{self.iw_relation}: {mark[self.iw_pass]}, J_G≈R: {mark[self.giw_pass]}"

    def to_record(self) -> str:
        """Flat ``key=value`` lines, one field per line."""
        out = []
        for k, v in asdict(self).items():
            if isinstance(v, float):
                v = format(v, ".17g")
            elif isinstance(v, bool):
                v = str(v).lower()
            out.append(f"{k}={v}")
        return "\n".join(out) + "\n"

    @classmethod
    def from_record(cls, text: str) -> "RiskReport":
        kv = dict(line.split("=", 1) for line in text.strip().splitlines() if "=" in line)
        kw = {}
        for name, ftype in cls.__dataclass_fields__.items():
            raw = kv[name]
            if ftype.type == "bool":
                kw[name] = raw == "true"
            elif ftype.type == "float":
                kw[name] = float(raw)
            elif ftype.type == "int":
                kw[name] = int(raw)
            else:
                kw[name] = raw
        return cls(**kw)


def consistency_report(f: Classifier, spec: SupportSpec, n: int = 100_000, seed=0) -> RiskReport:
    """Estimate R, J and J_G and check the relations expected for the spec's case.

    Cases (i)/(ii): ``|J - R| <= 3 se``; cases (iii)/(iv): ``R - J > 5 se``.
    Every case: ``|J_G - R| <= 3 se``, with ``se`` the combined standard error.
    """
    case = classify_case(spec)
    R = mc_risk(f, spec, n, seed)
    J = mc_iw_objective(f, spec, n, seed)
    JG, _, _ = mc_giw_objective(f, spec, n, seed)
    se_j = combined_se(R.se, J.se)
    if case in ("i", "ii"):
        relation, iw_ok = "J≈R", abs(J.value - R.value) <= N_SIGMA_EQUAL * se_j
    else:
        relation, iw_ok = "J<R", R.value - J.value > N_SIGMA_GAP * se_j
    giw_ok = abs(JG.value - R.value) <= N_SIGMA_EQUAL * combined_se(R.se, JG.se)
    return RiskReport(case, exact_alpha(spec), n, R.value, R.se, J.value, J.se,
                      JG.value, JG.se, relation, bool(iw_ok), bool(giw_ok))


def test_accuracy(f: Classifier, spec: SupportSpec, n: int = 100_000, seed=0) -> float:
    """Argmax accuracy on fresh test draws."""
    X, y = _sample_boxes(spec.test, n, _rng(seed, 4))
    return float(np.mean(np.argmax(_logits(f, X), axis=1) == y))


test_accuracy.__test__ = False  # not a pytest test despite the name


def box_classifier(spec: SupportSpec, side: str = "test", scale: float = 5.0,
                   n_classes: int | None = None):
    """Classifier whose logits are ``scale`` on the label of the box containing ``x``.

    Points outside every box get all-zero logits.  With ``side="test"`` this is
    a Bayes-optimal rule for the spec's test distribution.
    """
    C = n_classes or spec.n_classes
    boxes = spec.boxes(side)

    def f(X):
        X = np.atleast_2d(np.asarray(X, float))
        out = np.zeros((len(X), C))
        for b in boxes:
            out[b.contains(X), b.label] = scale
        return out

    return f
