import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from countdesign.fisher import (Design, SingularInformationError,
                                closed_form_sensitivity_xi0, full_factorial, xi0)
from countdesign.model import ModelSpec, StandardizedParams, standardize
from countdesign.optimality import (AssumptionError, boundary_curve,
                                    d_efficiency, equal_effect_threshold,
                                    fullfactorial_min_efficiency,
                                    indifference_efficiency_xi0, kw_certify,
                                    lemma1_check, theorem1_check,
                                    xi0_indifference_closed_form)
from oracles import phi


def test_theorem1_holds_for_strong_effects():
    rep = theorem1_check(StandardizedParams([-2, -2, -2], 0.0))
    assert rep.holds and rep.violations == [] and rep.checked_count == 3
    # difficulty form: 7.389 >= (7.389 + 1) / (7.389 - 1)
    v = math.exp(2)
    assert v >= (v + 1) / (v - 1) == pytest.approx(1.313, abs=1e-3)


def test_theorem1_fails_for_weak_effects():
    rep = theorem1_check(StandardizedParams([-0.5] * 3, 0.0))
    assert not rep.holds
    assert [v.pair for v in rep.violations] == [(1, 2), (1, 3), (2, 3)]
    assert all(v.slack > 0 for v in rep.violations)
    v = math.exp(0.5)
    assert v == pytest.approx(1.6487, abs=1e-4)
    assert (v + 1) / (v - 1) == pytest.approx(4.083, abs=1e-3)


def test_theorem1_equal_effect_threshold_k2():
    assert theorem1_check(StandardizedParams([math.log(0.41)] * 2, 0.0)).holds
    assert not theorem1_check(StandardizedParams([math.log(0.42)] * 2, 0.0)).holds
    assert equal_effect_threshold(0.0) == pytest.approx(math.sqrt(2) - 1, rel=1e-14)


def test_tie_counts_as_satisfied():
    # b = 0, equal effects exactly at the root of u^2 - 2u - 1 = 0 (u = 3 is exact
    # for b = 1: 3 + 3 + 1... use the boundary curve u = (v+1+2b)/(v-1) at v = 3, b = 0)
    s = StandardizedParams([-math.log(3.0), -math.log(2.0)], 0.0)
    rep = theorem1_check(s)
    assert rep.max_slack == pytest.approx(0.0, abs=1e-12)


def test_positive_effect_rejected():
    with pytest.raises(AssumptionError):
        theorem1_check(StandardizedParams([-1, 0.1], 0.0))
    with pytest.raises(AssumptionError):
        lemma1_check(StandardizedParams([0.5, -1, -1], 0.0))


def test_lemma1_examples():
    rep = lemma1_check(StandardizedParams([-2, -2, -2], 0.0))
    assert rep.holds and rep.checked_count == 4
    rep = lemma1_check(StandardizedParams([-0.5] * 3, 0.0))
    assert not rep.holds
    witnesses = {v.witness: v.slack for v in rep.violations}
    assert (1, 1, 0) in witnesses
    assert witnesses[(1, 1, 0)] == pytest.approx(1 + 2 * math.exp(0.5) - math.e, rel=1e-12)
    assert 1 + 2 * math.exp(0.5) == pytest.approx(4.297, abs=1e-3)


@settings(max_examples=300, deadline=None)
@given(st.integers(2, 7), st.floats(0, 3), st.data())
def test_lemma1_pairs_match_theorem1(k, b, data):
    effects = data.draw(st.lists(st.floats(-5, 0), min_size=k, max_size=k))
    s = StandardizedParams(effects, b)
    t1 = theorem1_check(s)
    l1 = lemma1_check(s)
    pair_witnesses = {v.witness for v in t1.violations}
    lemma_pairs = {v.witness for v in l1.violations if sum(v.witness) == 2}
    assert pair_witnesses == lemma_pairs


@settings(max_examples=300, deadline=None)
@given(st.integers(3, 8), st.floats(0, 3), st.data())
def test_theorem1_implies_lemma1_and_certificate(k, b, data):
    floor = math.log(1 + math.sqrt(2 + 2 * b))
    effects = data.draw(st.lists(st.floats(-6, -floor * 0.9), min_size=k, max_size=k))
    s = StandardizedParams(effects, b)
    if theorem1_check(s).holds:
        assert lemma1_check(s).holds
    if lemma1_check(s).holds:
        assert kw_certify(xi0(k), s.to_model(), tol=1e-9).optimal


@settings(max_examples=500, deadline=None)
@given(st.floats(0, 3), st.lists(st.floats(1, 40), min_size=3, max_size=9))
def test_phi_recursion(b, z):
    assume(all(phi((zj, zk), b) <= 0 for i, zj in enumerate(z) for zk in z[i + 1:]))
    for m in range(2, len(z)):
        assert phi(z[:m + 1], b) <= phi(z[:m], b) + 1e-9 * (1 + abs(phi(z[:m], b)))
        assert phi(z[:m + 1], b) <= 1e-9 * float(np.prod(z))


@pytest.mark.parametrize("b, v, u", [(0, 3, 2), (1, 3, 3)])
def test_boundary_curve_examples(b, v, u):
    assert boundary_curve(b, [v]) == [(v, u)]


def test_boundary_curve_sentinel_and_fixed_point():
    assert boundary_curve(0, [1.0, 0.5]) == [(1.0, math.inf), (0.5, math.inf)]
    u_star = 1 + math.sqrt(2)
    (_, u_min), = boundary_curve(0, [u_star])
    assert u_min == pytest.approx(u_star, rel=1e-12)
    assert 1 / u_star == pytest.approx(0.414214, abs=1e-6)


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 3), st.floats(0, 5), st.floats(0, 5))
def test_boundary_region_symmetric_and_matches_pairwise(b, bj, bk):
    u, v = math.exp(bj), math.exp(bk)
    s = StandardizedParams([-bj, -bk], b)
    rep = theorem1_check(s)
    assume(abs(rep.max_slack) > 1e-9 * (1 + u * v))
    above_j = v > 1 and u >= boundary_curve(b, [v])[0][1]
    above_k = u > 1 and v >= boundary_curve(b, [u])[0][1]
    assert rep.holds == above_j == above_k


def test_kw_certify_xi0_strong_effects():
    cert = kw_certify(xi0(3), ModelSpec.poisson([-2, -2, -2]), 1e-6)
    assert cert.optimal
    assert cert.threshold == pytest.approx(4 * (1 + 1e-6))
    for _, sens in cert.per_support:
        assert sens == pytest.approx(4.0, rel=1e-12)


def test_kw_certify_full_factorial_indifference():
    assert kw_certify(full_factorial(3), ModelSpec.poisson([0, 0, 0]), 1e-6).optimal


def test_kw_certify_xi0_weak_effects():
    s = StandardizedParams([-0.5] * 3, 0.0)
    cert = kw_certify(xi0(3), s.to_model(), 1e-6)
    assert not cert.optimal
    # the triple-feature item is the worst one, above every two-feature item
    assert cert.worst_item == (1, 1, 1)
    assert cert.max_sensitivity == pytest.approx(
        closed_form_sensitivity_xi0((1, 1, 1), s), rel=1e-10)
    assert cert.max_sensitivity == pytest.approx(
        4 * math.exp(-1.5) * (4 + 3 * math.exp(0.5)), rel=1e-10)
    assert closed_form_sensitivity_xi0((1, 1, 0), s) == pytest.approx(6.3238, abs=1e-4)


def test_kw_certify_ties_pick_smallest_item():
    cert = kw_certify(full_factorial(2), ModelSpec.poisson([0, 0]))
    assert cert.worst_item == (0, 0)


def test_kw_certify_singular():
    with pytest.raises(SingularInformationError):
        kw_certify(Design.approximate([(0, 0)], [1.0]), ModelSpec.poisson([0, 0]))


def test_d_efficiency_identity_and_k2():
    m = ModelSpec.poisson([0, 0])
    assert d_efficiency(full_factorial(2), full_factorial(2), m) == pytest.approx(1.0)
    eff = d_efficiency(xi0(2), full_factorial(2), m)
    assert eff == pytest.approx((16 / 27) ** (1 / 3), rel=1e-12)
    assert eff == pytest.approx(0.8399, abs=1e-4)


def test_d_efficiency_warns_on_uncertified_reference():
    m = ModelSpec.poisson([0, 0])
    with pytest.warns(UserWarning):
        d_efficiency(full_factorial(2), xi0(2), m)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        d_efficiency(xi0(2), full_factorial(2), m)


def test_full_factorial_efficiency_for_strong_effects():
    m = ModelSpec.poisson([-8.0] * 3)
    assert d_efficiency(full_factorial(3), xi0(3), m) == pytest.approx(0.5, rel=0.02)


def test_indifference_efficiency():
    r2 = indifference_efficiency_xi0(2)
    assert r2.numeric == pytest.approx(0.8399, abs=1e-4)
    assert r2.closed_form == pytest.approx(2 ** (4 / 3) / 3, rel=1e-12)
    assert not r2.discrepant
    r3 = indifference_efficiency_xi0(3)
    assert r3.numeric == pytest.approx((64 / 256) ** 0.25, rel=1e-10)
    assert r3.numeric == pytest.approx(0.7071, abs=1e-4)
    assert r3.closed_form == pytest.approx(0.5946, abs=1e-4)
    assert r3.discrepant
    assert float(indifference_efficiency_xi0(1)) == pytest.approx(1.0, rel=1e-12)
    assert xi0_indifference_closed_form(6) == pytest.approx(0.3155, abs=1e-4)


@pytest.mark.parametrize("k, value", [(2, 0.75), (3, 0.5), (6, 7 / 64)])
def test_fullfactorial_min_efficiency(k, value):
    assert fullfactorial_min_efficiency(k) == value


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 5), st.floats(0.1, 10), st.floats(-3, 3), st.data())
def test_poisson_verdicts_invariant_to_theta0_and_beta0(k, theta0, beta0, data):
    effects = data.draw(st.lists(st.floats(-5, 0), min_size=k, max_size=k))
    m1 = ModelSpec.poisson(effects)
    m2 = ModelSpec.poisson(effects, theta0=theta0, beta0=beta0)
    s1, s2 = standardize(m1), standardize(m2)
    assert theorem1_check(s1).holds == theorem1_check(s2).holds
    assert lemma1_check(s1).holds == lemma1_check(s2).holds
    c1, c2 = kw_certify(xi0(k), m1), kw_certify(xi0(k), m2)
    assert c1.optimal == c2.optimal
    assert c1.max_sensitivity == pytest.approx(c2.max_sensitivity, rel=1e-9)
    e1 = d_efficiency(full_factorial(k), xi0(k), m1, check_reference=False)
    e2 = d_efficiency(full_factorial(k), xi0(k), m2, check_reference=False)
    assert e1 == pytest.approx(e2, rel=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 5), st.floats(0.1, 10), st.floats(-2, 2), st.floats(0.05, 3),
       st.data())
def test_poisson_gamma_verdicts_invariant_at_fixed_effective_scale(k, a, beta0, b0, data):
    # for Poisson-Gamma the intercept enters through b*exp(beta0)
    effects = data.draw(st.lists(st.floats(-5, 0), min_size=k, max_size=k))
    m1 = ModelSpec.poisson_gamma(effects, a=1 / b0, b=b0)
    m2 = ModelSpec.poisson_gamma(effects, a=a, b=b0 * math.exp(-beta0), beta0=beta0)
    assert standardize(m1).b_scale == pytest.approx(standardize(m2).b_scale, rel=1e-12)
    c1, c2 = kw_certify(xi0(k), m1), kw_certify(xi0(k), m2)
    assert c1.max_sensitivity == pytest.approx(c2.max_sensitivity, rel=1e-9)
    e1 = d_efficiency(full_factorial(k), xi0(k), m1, check_reference=False)
    e2 = d_efficiency(full_factorial(k), xi0(k), m2, check_reference=False)
    assert e1 == pytest.approx(e2, rel=1e-9)


def test_reports_serialize_with_stable_fields():
    rep = theorem1_check(StandardizedParams([-0.5, -0.5], 0.0))
    d = json.loads(rep.to_json())
    assert set(d) == {"holds", "violations", "checked_count", "max_slack"}
    assert set(d["violations"][0]) == {"witness", "slack", "pair"}
    cert = json.loads(kw_certify(xi0(2), ModelSpec.poisson([-1, -1])).to_json())
    assert set(cert) == {"max_sensitivity", "worst_item", "threshold", "optimal",
                         "per_support"}
