import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from giw.netcore import Mlp
from giw.oracle import (RiskReport, box_classifier, classify_case, consistency_report, exact_alpha,
                        mc_giw_objective, mc_iw_objective, mc_risk, sample_oot, test_accuracy)
from giw.synth import CASES, make_case_spec, make_grid_example, sample

LN2 = math.log(2)


def zero_logits(X):
    return np.zeros((len(X), 2))


def test_exact_alpha_values():
    assert exact_alpha(make_case_spec("i")) == 1.0
    assert exact_alpha(make_case_spec("ii")) == 1.0
    assert exact_alpha(make_case_spec("iii")) == 0.5
    assert exact_alpha(make_case_spec("iv")) == pytest.approx(1 / 3)
    assert exact_alpha(make_grid_example("checkerboard")) == 0.5


@pytest.mark.parametrize("case", CASES)
def test_classify_case(case):
    assert classify_case(make_case_spec(case)) == case


@pytest.mark.parametrize("case", ["iii", "iv"])
def test_exact_alpha_vs_empirical_fraction(case):
    spec = make_case_spec(case)
    d = sample(spec, "test", 20_000, seed=5)
    frac = spec.in_support("train", d.X, d.y).mean()
    a = exact_alpha(spec)
    assert abs(frac - a) <= 4 * np.sqrt(a * (1 - a) / 20_000)


def test_constant_classifier_values():
    spec = make_case_spec("iii")
    R = mc_risk(zero_logits, spec, 5000)
    assert R.value == pytest.approx(LN2, abs=1e-12) and R.se == pytest.approx(0.0, abs=1e-12)
    J = mc_iw_objective(zero_logits, spec, 5000)
    assert J.value == pytest.approx(LN2 / 2, abs=1e-12)
    JG, t1, t2 = mc_giw_objective(zero_logits, spec, 5000)
    assert JG.value == pytest.approx(LN2, abs=1e-12)
    assert t1.value == pytest.approx(LN2, abs=1e-12) and t2.value == pytest.approx(LN2, abs=1e-12)


def test_bayes_classifier_beats_ln2():
    spec = make_grid_example("aligned")
    f = box_classifier(spec, "test")
    assert mc_risk(f, spec, 10_000).value < LN2
    assert test_accuracy(f, spec, 10_000) == 1.0


def test_two_seeds_agree(rng):
    spec = make_case_spec("iv")
    net = Mlp.init([2, 8, 2], seed=4)
    a, b = mc_risk(net, spec, 20_000, seed=1), mc_risk(net, spec, 20_000, seed=2)
    assert abs(a.value - b.value) <= 6 * math.hypot(a.se, b.se)


def test_unit_importance_gives_training_risk():
    spec = make_case_spec("i")
    net = Mlp.init([2, 8, 2], seed=2)
    J = mc_iw_objective(net, spec, 20_000, seed=0)
    R = mc_risk(net, spec, 20_000, seed=0)
    assert abs(J.value - R.value) <= 3 * math.hypot(J.se, R.se)


def test_case_i_giw_equals_iw():
    spec = make_case_spec("i")
    net = Mlp.init([2, 8, 2], seed=6)
    JG, _, t2 = mc_giw_objective(net, spec, 20_000, seed=0)
    J = mc_iw_objective(net, spec, 20_000, seed=0)
    assert t2 is None
    assert abs(JG.value - J.value) <= 3 * math.hypot(JG.se, J.se)


def test_oot_sampler_stays_outside_training_support(rng):
    spec = make_case_spec("iv")
    X, y = sample_oot(spec, 3000, rng)
    assert len(X) == 3000
    assert not spec.in_support("train", X, y).any()
    assert spec.in_support("test", X, y).all()
    with pytest.raises(ValueError):
        sample_oot(make_case_spec("i"), 10, rng)


@settings(max_examples=8)
@given(case=st.sampled_from(CASES), seed=st.integers(0, 10_000))
def test_giw_is_risk_consistent(case, seed):
    net = Mlp.init([2, 16, 2], seed=seed)
    rep = consistency_report(net, make_case_spec(case), 50_000, seed)
    assert rep.giw_pass
    assert rep.iw_pass


@pytest.mark.parametrize("case", ["iii", "iv"])
def test_iw_gap_equals_oot_loss_mass(case):
    spec = make_case_spec(case)
    net = Mlp.init([2, 16, 2], seed=1)
    R = mc_risk(net, spec, 100_000, 0)
    J = mc_iw_objective(net, spec, 100_000, 0)
    _, _, t2 = mc_giw_objective(net, spec, 100_000, 0)
    gap = (1 - exact_alpha(spec)) * t2.value
    se = math.sqrt(R.se**2 + J.se**2 + ((1 - exact_alpha(spec)) * t2.se) ** 2)
    assert R.value - J.value > 5 * math.hypot(R.se, J.se)
    assert abs((R.value - J.value) - gap) <= 3 * se


def test_trained_on_train_classifier_report():
    spec = make_case_spec("iii")
    rep = consistency_report(box_classifier(spec, "train"), spec, 100_000, 0)
    assert rep.summary() == "J<R: pass, J_G≈R: pass"
    assert RiskReport.from_record(rep.to_record()) == rep


def test_case_reports():
    net = Mlp.init([2, 16, 2], seed=3)
    assert consistency_report(net, make_case_spec("i"), 50_000, 0).summary().startswith("J≈R: pass")
    assert consistency_report(net, make_case_spec("iv"), 50_000, 0).summary() == \
        "J<R: pass, J_G≈R: pass"


def test_train_extended_linear_rule_on_checkerboard():
    spec = make_grid_example("checkerboard")

    def linear(X):
        return np.column_stack([-X[:, 1], X[:, 1]])

    assert abs(test_accuracy(linear, spec, 100_000) - 0.5) <= 0.02

    def inverted(X):
        return -linear(X)

    a = test_accuracy(linear, spec, 50_000, seed=3)
    assert test_accuracy(inverted, spec, 50_000, seed=3) == pytest.approx(1 - a)
