import math

import numpy as np
import pytest
import sympy as sp
from scipy import integrate, special

from swlab import fields, lab, opalg, quad
from swlab.fields import ClosedFormField, Term
from swlab.weights import SWParams

DIVFREE = SWParams(2, 1, 4 / 3, 1, 0.25, 0.25)
SCALAR = SWParams(2, 1, 4 / 3, 1, 0.0, 0.5)
ALPHA1 = SWParams(2, 1, 4 / 3, 1, 1.0, -0.5)


# --------------------------------------------------------------------------- independent radial oracle


def divfree_ratio_oracle(beta=0.25, q=4 / 3, alpha=0.25):
    """Ratio for the rotated gradient of the unit-mass radial bump, N=2, ell=1.

    The field is (d2 phi, -d1 phi), so |I_1 f| = |g'(|x|)| with g = I_1 phi
    radial.  The circle mean of 1/|x-y| is an elliptic integral, which gives g
    by a 1-D quadrature; everything else is 1-D as well.
    """
    mass = 2 * math.pi * integrate.quad(lambda r: math.exp(-1 / (1 - r * r)) * r, 0, 1, epsabs=0, epsrel=1e-13)[0]
    phi = lambda r: math.exp(-1 / (1 - r * r)) / mass if r < 1 else 0.0
    dphi = lambda r: phi(r) * (-2 * r / (1 - r * r) ** 2) if r < 1 else 0.0

    def circle_mean(r, rho):
        a, b = max(r, rho), min(r, rho)
        return special.ellipk((b / a) ** 2) * 2 / math.pi / a

    def g(rho):
        pts = [rho] if rho < 1 else None
        f = lambda r: phi(r) * r * circle_mean(r, rho)
        return 2 * math.pi * integrate.quad(f, 0, 1, points=pts, limit=400, epsabs=1e-14, epsrel=1e-12)[0]

    def dg(rho, h=1e-5):
        return (g(rho + h) - g(rho - h)) / (2 * h)

    integrand = lambda p: p ** (1 - beta * q) * abs(dg(p)) ** q
    lq = 0.0
    for lo, hi in ((0, 1), (1, 20), (20, 2000)):
        lq += 2 * math.pi * integrate.quad(integrand, lo, hi, limit=200, epsrel=1e-9)[0]
    # |g'| ~ 1/p^2 beyond: integrand ~ p^(-2), tail 1/2000
    lq += 2 * math.pi / 2000
    rhs = 2 * math.pi * integrate.quad(lambda r: r ** (alpha + 1) * abs(dphi(r)), 0, 1, epsrel=1e-12)[0]
    return lq ** (1 / q) / rhs


DIVFREE_RATIO = 3.26309  # frozen output of divfree_ratio_oracle()


def test_oracle_frozen_value():
    assert math.isclose(divfree_ratio_oracle(), DIVFREE_RATIO, rel_tol=1e-4)


# --------------------------------------------------------------------------- inequality_ratio


def test_divfree_ratio_matches_oracle():
    div = opalg.make_builtin("divergence", 2)
    rep = lab.inequality_ratio(fields.divfree_family(fields.make_bump(2), 1.0), DIVFREE, op=div)
    assert not rep.flags
    assert math.isclose(rep.ratio, DIVFREE_RATIO, rel_tol=0.03)
    assert math.isclose(rep.ratio, rep.lhs / rep.rhs, rel_tol=1e-12)


def test_zero_field_is_degenerate():
    f = fields.divfree_family(fields.make_bump(2), 1.0, amplitude=0.0)
    rep = lab.inequality_ratio(f, DIVFREE, n=64)
    assert rep.rhs == 0 and rep.ratio is None and "degenerate" in rep.flags


def test_ratio_invariant_under_amplitude():
    f1 = fields.divfree_family(fields.make_bump(2), 1.0)
    f2 = fields.divfree_family(fields.make_bump(2), 1.0, amplitude=2.0)
    g = quad.fit_grid(f1, 128, 4.0)
    r1 = lab.inequality_ratio(f1, DIVFREE, g)
    r2 = lab.inequality_ratio(f2, DIVFREE, g)
    assert math.isclose(r2.lhs, 2 * r1.lhs, rel_tol=1e-12)
    assert math.isclose(r2.ratio, r1.ratio, rel_tol=1e-12)


def test_inadmissible_parameters_raise():
    with pytest.raises(lab.ProbeError, match="inadmissible"):
        lab.inequality_ratio(fields.divfree_family(fields.make_bump(2), 1.0), SWParams(2, 1, 4 / 3, 1, 0.25, 0.5))


def test_constraint_violation_raises():
    f = fields.poly_bump_field(2, 2, 1, np.random.default_rng(5))
    with pytest.raises(lab.ProbeError, match="constraint"):
        lab.inequality_ratio(f, DIVFREE, op=opalg.make_builtin("divergence", 2), n=64)


def test_scale_suite_short_list():
    fam = lambda e: fields.divfree_family(fields.make_bump(2), e)
    tr = lab.scale_invariance_suite(fam, [0.5, 1.0, 2.0, 4.0], DIVFREE, n=128)
    assert tr.verdict == "bounded" and tr.law["spread"] < 0.02 and not tr.flags
    assert len(tr.rows()) == 4 and set(tr.rows()[0]) == {"param", "lhs", "rhs", "ratio", "fitted_law", "r2"}


def test_scale_suite_single_eps_is_degenerate():
    fam = lambda e: fields.divfree_family(fields.make_bump(2), e)
    tr = lab.scale_invariance_suite(fam, [1.0], DIVFREE, n=64)
    assert tr.verdict == "bounded" and "degenerate" in tr.flags


# --------------------------------------------------------------------------- scalar counterexample


def test_scalar_probe_log_slope():
    tr = lab.counterexample_scalar_probe(SCALAR, [1e-1, 1e-2, 1e-3, 1e-4])
    assert tr.verdict == "divergent"
    assert tr.law["kind"] == "log" and tr.law["r2"] > 0.99
    assert abs(tr.law["slope"] / (2 * math.pi) - 1) <= 0.05


def test_scalar_probe_eps_sweep_monotone_while_support_covers_annulus():
    # eps > a: the singular profile builds up inside the annulus
    tr = lab.counterexample_scalar_probe(SCALAR, [1e-3], eps_list=[0.5, 0.25, 0.1, 0.05, 0.02, 0.01])
    assert tr.law["increasing_as_eps_decreases"]


def test_scalar_probe_eps_sweep_approaches_limit_from_above():
    # support inside B(a): the circle means of 1/|x-y| exceed 1/|x| and shrink with eps
    tr = lab.counterexample_scalar_probe(SCALAR, [1e-2], eps_list=[1e-2, 5e-3, 2e-3, 1e-3])
    v = tr.observed["lhs"]
    assert all(a > b for a, b in zip(v, v[1:]))
    limit = (2 * math.pi * math.log(100)) ** 0.75
    assert abs(v[-1] / limit - 1) < 0.01


def test_scalar_control_is_bounded():
    p = SWParams(2, 1, 4 / 3, 1, 0.0, 0.125)
    tr = lab.counterexample_scalar_probe(p, [1e-3, 1e-4, 1e-5, 1e-6], enforce_scaling=False)
    assert tr.verdict == "bounded" and not tr.flags


def test_scalar_probe_rejects_mismatch():
    with pytest.raises(lab.ProbeError, match="mismatch"):
        lab.counterexample_scalar_probe(SWParams(2, 1, 4 / 3, 1, 0.0, 0.125), [0.1])
    with pytest.raises(lab.ProbeError, match="alpha = 0"):
        lab.counterexample_scalar_probe(DIVFREE, [0.1])


# --------------------------------------------------------------------------- alpha = 1 counterexample


def test_alpha1_probe_divergent_with_constant_rhs():
    tr = lab.counterexample_alpha1_probe(ALPHA1, [1e-1, 1e-2, 1e-3, 1e-4])
    assert tr.verdict == "divergent" and tr.law["r2"] > 0.99 and tr.law["slope"] > 0
    assert tr.law["rhs_spread"] < 0.01
    assert tr.law["exponent_readings"]["annulus_integrand_power"] == pytest.approx(-1.0)


def test_alpha1_control_bounded():
    tr = lab.counterexample_alpha1_probe(DIVFREE, [1e-2, 1e-3, 1e-4, 1e-5], enforce_alpha=False)
    assert tr.verdict == "bounded"


def test_alpha1_probe_rejections():
    with pytest.raises(lab.ProbeError, match="alpha = 1"):
        lab.counterexample_alpha1_probe(DIVFREE, [0.1])
    with pytest.raises(lab.ProbeError, match="mismatch"):
        lab.counterexample_alpha1_probe(SWParams(2, 1, 4 / 3, 1, 1.0, 0.0), [0.1])


# --------------------------------------------------------------------------- necessity and the kernel claim


def d1_first_component():
    return opalg.operator_from_dict(
        {"dim": 2, "order": 1, "fiber_in": 2, "fiber_out": 1, "coeffs": [[[1, 0], 0, 0, 1.0]]}
    )


@pytest.fixture(scope="module")
def necessity_report():
    return lab.necessity_probe(d1_first_component(), [1, 2, 4, 8, 16], SCALAR)


def test_necessity_lhs_grows_rhs_bounded(necessity_report):
    tr = necessity_report
    lhs = tr.observed["lhs"][1:]
    assert all(b > a for a, b in zip(lhs, lhs[1:]))
    assert tr.details["rhs_bounded"]
    assert max(tr.observed["rhs"]) <= 2 * tr.details["psi_l1"] * 1.02
    assert tr.verdict == "divergent" and tr.law["growth_consistent"]
    assert np.allclose(np.abs(tr.details["witness"]), [0.0, 1.0])


def test_necessity_lambda_one_degenerate(necessity_report):
    assert necessity_report.observed["lhs"][0] == 0.0 and "degenerate" in necessity_report.flags


def test_necessity_refuses_cocanceling():
    with pytest.raises(lab.ProbeError, match="cocanceling"):
        lab.necessity_probe(opalg.make_builtin("divergence", 2), [2, 4], SCALAR)


def test_claim_decay_at_large_lambda():
    tr = lab.claim_convergence_probe(quad.riesz_kernel(2, 1.0), [4, 8, 16, 32, 64], [[1.0, 0.0]])
    assert tr.law["decay_ok"] and tr.details["decreasing"] and not tr.flags


def test_claim_lambda_one_is_baseline():
    k = quad.riesz_kernel(2, 1.0)
    tr = lab.claim_convergence_probe(k, [1, 2, 4], [[1.0, 0.0], [0.0, 2.0]])
    assert tr.observed["error"][0] == pytest.approx(tr.details["baseline_K"], rel=1e-15)
    assert tr.details["baseline_K"][1] == pytest.approx(0.5)


def test_claim_rejects_origin_and_other_kernels():
    with pytest.raises(lab.ProbeError, match="origin"):
        lab.claim_convergence_probe(quad.riesz_kernel(2, 1.0), [2, 4], [[0.0, 0.0]])


def test_envelope_rescale():
    assert lab.envelope_rescale_check(quad.riesz_kernel(2, 1.0), 16.0, [1.0, 0.0])["ok"]


# --------------------------------------------------------------------------- duality estimate


LEMMA_GRID = quad.GridSpec(2, 6.0, 128)


@pytest.fixture(scope="module")
def div_maps():
    op = opalg.make_builtin("divergence", 2)
    return op, opalg.solve_projection_maps(op)


def test_lemma_constant_test_function_gives_zero(div_maps):
    op, km = div_maps
    one = Term((sp.Integer(1), sp.Integer(2)), (0.0, 0.0), (1.0, 1.0), (1.0, 1.0), None)
    phi = ClosedFormField(2, 2, (one,), "constant")
    f = fields.divfree_family(fields.make_bump(2, center=(0.5, 0.0)), 1.0)
    # the bump is Gevrey, not analytic: the grid sum of f needs h ~ 1/128 to vanish to 1e-12
    row = lab.lemma31_pair(op, km, phi, f, quad.GridSpec(2, 2.0, 512))
    assert row["rhs"] == 0.0 and row["lhs"] <= row["atol"] and not row["violated"]


def test_lemma_ratio_invariant_under_scaling(div_maps):
    op, km = div_maps
    rng = np.random.default_rng(1)
    phi = fields.poly_bump_field(2, 2, 2, rng, radius=2.0)
    f1 = fields.divfree_family(fields.make_bump(2, center=(0.3, -0.2)), 1.0)
    f10 = fields.divfree_family(fields.make_bump(2, center=(0.3, -0.2)), 1.0, amplitude=10.0)
    a = lab.lemma31_pair(op, km, phi, f1, LEMMA_GRID)
    b = lab.lemma31_pair(op, km, phi, f10, LEMMA_GRID)
    assert math.isclose(b["lhs"], 10 * a["lhs"], rel_tol=1e-12)
    assert math.isclose(b["ratio"], a["ratio"], rel_tol=1e-12)


def test_lemma_seeded_suite_no_violations(div_maps):
    op, km = div_maps
    tr = lab.lemma31_check(op, km, lab.random_lemma_pairs(10, seed=3), LEMMA_GRID)
    assert tr.law["violations"] == 0 and tr.law["value"] <= 1 and len(tr.params) == 10


def test_lemma_skips_constraint_violations(div_maps):
    op, km = div_maps
    rng = np.random.default_rng(2)
    pairs = [(fields.poly_bump_field(2, 2, 1, rng), fields.poly_bump_field(2, 2, 1, rng))]
    tr = lab.lemma31_check(op, km, pairs, LEMMA_GRID)
    assert "skipped_pairs" in tr.flags and tr.details["skipped"][0]["index"] == 0


def test_lemma_support_too_large(div_maps):
    op, km = div_maps
    phi = fields.poly_bump_field(2, 2, 1, np.random.default_rng(0), radius=10.0)
    f = fields.divfree_family(fields.make_bump(2), 1.0)
    with pytest.raises(lab.ProbeError, match="support"):
        lab.lemma31_pair(op, km, phi, f, LEMMA_GRID)


# --------------------------------------------------------------------------- constant estimator


def test_estimator_flat_objective():
    rep = lab.constant_estimator(lambda x: 3.0, {"eps": (0.25, 4.0)}, budget=20)
    assert rep.flat and rep.best_ratio == 3.0 and rep.evaluations <= 20


def test_estimator_max_property_and_determinism():
    obj = lambda x: -((math.log(x["eps"]) - 0.3) ** 2) - (x["center_radius"] - 1.2) ** 2
    bounds = {"eps": (0.25, 4.0), "center_radius": (0.0, 2.0)}
    a = lab.constant_estimator(obj, bounds, budget=100, seed=4)
    b = lab.constant_estimator(obj, bounds, budget=100, seed=4)
    assert a.to_dict() == b.to_dict()
    assert all(a.best_ratio >= h["value"] for h in a.history)
    assert a.evaluations <= 100 and not a.flat
    assert abs(a.argmax["center_radius"] - 1.2) < 0.05


def test_estimator_budget_incomplete():
    rep = lab.constant_estimator(lambda x: x["eps"], {"eps": (0.25, 4.0)}, budget=3)
    assert rep.incomplete and rep.evaluations == 3


def test_estimator_on_scale_invariant_family():
    div = opalg.make_builtin("divergence", 2)
    obj = lambda x: lab.inequality_ratio(lab.divfree_member(2, x["eps"]), DIVFREE, op=div, n=64).ratio
    rep = lab.constant_estimator(obj, {"eps": (0.25, 4.0)}, budget=6)
    assert rep.flat


# --------------------------------------------------------------------------- trend reports


def test_trend_report_short_sweep_flagged():
    tr = lab.TrendReport("a", [1, 2, 3], {}, {"kind": "none"}, "bounded")
    assert "degenerate" in tr.flags


def test_trend_report_rejects_bad_verdict():
    with pytest.raises(lab.ProbeError):
        lab.TrendReport("a", [1, 2, 3, 4], {}, {}, "maybe")


def test_bounded_law_spread():
    assert lab.bounded_law([1.0, 1.01, 0.99])["bounded"]
    assert not lab.bounded_law([1.0, 2.0])["bounded"]
