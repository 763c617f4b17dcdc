import math

import numpy as np
import pytest
from scipy import integrate
from scipy.special import roots_legendre

from swlab import lab, weights
from swlab.weights import Ball, PowerWeight, RadialWeight, SWParams

POINTWISE_NEG = 8.859  # frozen from the brute-force oracle below


# --------------------------------------------------------------------------- oracles


def pointwise_oracle(rho, a_u=-0.8, s=1.6):
    """``int |x|^a_u |x - y|^-s dx`` over the plane for ``|y| = rho`` by nested adaptive quadrature.

    The disc ``|x - y| < rho/2`` is integrated in polar coordinates about ``y``
    (algebraic endpoint weight), the rest in polar coordinates about 0.
    """
    def near_inner(t):
        f = lambda th: (rho**2 + t * t + 2 * rho * t * math.cos(th)) ** (a_u / 2)  # noqa: E731
        return 2 * integrate.quad(f, 0, math.pi, epsabs=0, epsrel=1e-11)[0]

    near = integrate.quad(near_inner, 0, rho / 2, weight="alg", wvar=(1 - s, 0), epsabs=0, epsrel=1e-10)[0]

    def far_inner(r):
        th0 = 0.0
        if abs(r - rho) < rho / 2:
            th0 = math.acos(min(1.0, (r * r + 0.75 * rho * rho) / (2 * r * rho)))
        f = lambda th: (r * r + rho * rho - 2 * r * rho * math.cos(th)) ** (-s / 2)  # noqa: E731
        return 2 * integrate.quad(f, th0, math.pi, epsabs=0, epsrel=1e-11)[0] * r ** (a_u + 1)

    cuts = [0, rho / 2, rho, 1.5 * rho, 10 * rho, np.inf]
    far = sum(integrate.quad(far_inner, a, b, epsabs=0, epsrel=1e-10, limit=200)[0] for a, b in zip(cuts[:-1], cuts[1:]))
    return near + far


def _ray_lengths(x, disks, m=1024):
    th = 2 * np.pi * (np.arange(m) + 0.5) / m
    d = np.stack([np.cos(th), np.sin(th)], -1)
    lo, hi = np.zeros(m), np.full(m, np.inf)
    for c, R in disks:
        y = x - np.asarray(c, float)
        b = d @ y
        disc = b * b - (y @ y - R * R)
        s = np.sqrt(np.maximum(disc, 0))
        lo = np.where(disc > 0, np.maximum(lo, -b - s), np.inf)
        hi = np.minimum(hi, -b + s)
    return np.maximum(hi - lo, 0).sum() * 2 * np.pi / m


def _lens_area(d, R1, R2):
    if d >= R1 + R2:
        return 0.0
    if d <= abs(R1 - R2):
        return math.pi * min(R1, R2) ** 2
    a = R1 * R1 * math.acos((d * d + R1 * R1 - R2 * R2) / (2 * d * R1))
    a += R2 * R2 * math.acos((d * d + R2 * R2 - R1 * R1) / (2 * d * R2))
    return a - 0.5 * math.sqrt((-d + R1 + R2) * (d + R1 - R2) * (d - R1 + R2) * (d + R1 + R2))


def sawyer_indicator_oracle(c, R, p=4 / 3, q=4.0, nr=40, nth=96):
    """Testing ratios for ``u = chi_B(0,1)``, ``v = 1``, ``ell = 1`` in the plane.

    In 2-D with ``ell = 1``, ``I chi_D(x)`` is the integral over directions of
    the chord length of ``D`` seen from ``x``.
    """
    pc, qc = p / (p - 1), q / (q - 1)
    c = np.asarray(c, float)
    t, w = roots_legendre(nr)
    r, wr = (t + 1) / 2 * R, w * R / 2
    th = 2 * np.pi * (np.arange(nth) + 0.5) / nth
    num1 = num2 = 0.0
    for ri, wi in zip(r, wr):
        for tj in th:
            x = c + ri * np.array([math.cos(tj), math.sin(tj)])
            dA = wi * ri * 2 * np.pi / nth
            num1 += _ray_lengths(x, [(c, R), ((0, 0), 1.0)]) ** pc * dA
            if np.linalg.norm(x) < 1:
                num2 += _ray_lengths(x, [(c, R)]) ** q * dA
    U, V = _lens_area(float(np.linalg.norm(c)), R, 1.0), math.pi * R * R
    return num1 ** (1 / pc) / U ** (1 / qc), num2 ** (1 / q) / V ** (1 / p)


# --------------------------------------------------------------------------- parameter conditions


def test_admissible_p_gt_1():
    assert weights.sw_admissible(SWParams(2, 4 / 3, 4.0, 1.0)).ok


def test_admissible_p_eq_1():
    assert weights.sw_admissible(SWParams(2, 1.0, 4 / 3, 1.0, 0.25, 0.25), "p_eq_1").ok


def test_alpha_one_rejected_with_reason():
    v = weights.sw_admissible(SWParams(2, 1.0, 2.0, 1.0, 1.0, 0.0), "p_eq_1")
    assert not v.ok and any("alpha < 1" in s for s in v.violations)


def test_params_validation():
    with pytest.raises(weights.WeightError, match="ell"):
        SWParams(2, 1.0, 1.0, 2.0)
    with pytest.raises(weights.WeightError, match="'q'"):
        SWParams.from_dict({"N": 2, "p": 1, "ell": 1})


# --------------------------------------------------------------------------- pointwise condition


@pytest.mark.parametrize("rho", [0.1, 0.5, 1.0, 3.0, 10.0])
def test_pointwise_oracle_is_frozen_value(rho):
    assert math.isclose(pointwise_oracle(rho) ** (1 / 1.6) / rho**-0.25, POINTWISE_NEG, rel_tol=1e-4)


def test_pointwise_negative_alpha_matches_oracle():
    # alpha = -1/4, beta = 1/2, N = 2, ell = 1: q = 8/5, u = |x|^(-4/5), v = |x|^(-1/4)
    rep = weights.pointwise_condition(PowerWeight(-0.8), PowerWeight(-0.25), 1.0, 1.6)
    assert rep.finite
    assert math.isclose(rep.constant, POINTWISE_NEG, rel_tol=0.02)


def test_pointwise_alpha_zero_diverges_logarithmically():
    rep = weights.pointwise_condition(PowerWeight(-2 / 3), PowerWeight(0.0), 1.0, 4 / 3)
    law = rep.divergence_law
    assert not rep.finite and law["divergent"] and law["kind"] == "log" and law["r2"] > 0.99
    assert math.isclose(law["slope"], 2 * math.pi, rel_tol=0.02)


def test_pointwise_zero_weight():
    rep = weights.pointwise_condition(PowerWeight(0.0, 0.0), PowerWeight(0.0), 1.0, 1.5)
    assert rep.finite and rep.constant == 0.0


def test_pointwise_rejects_nonintegrable_kernel():
    with pytest.raises(weights.WeightError, match="2.0"):
        weights.pointwise_condition(PowerWeight(-0.5), PowerWeight(0.0), 1.0, 2.0)


@pytest.mark.parametrize("s", [0.5, 2.0])
def test_pointwise_constant_invariant_under_sample_rescaling(s):
    ys = np.geomspace(0.1, 10, 5)
    a = weights.pointwise_condition(PowerWeight(-0.8), PowerWeight(-0.25), 1.0, 1.6, y_samples=ys)
    b = weights.pointwise_condition(PowerWeight(-0.8), PowerWeight(-0.25), 1.0, 1.6, y_samples=s * ys)
    assert math.isclose(a.constant, b.constant, rel_tol=0.02)


def test_pointwise_bound_dominates_inequality_ratio():
    # Minkowski: ||I f||_{L^q(u)} <= gamma * sup_y (...)^(1/q) / v(y) * ||f||_{L^1(v)}
    params = SWParams(2, 1.0, 1.6, 1.0, -0.25, 0.5)
    ratios = []
    for spec in ({"kind": "bump", "dim": 2}, {"kind": "bump", "dim": 2, "center": [0.6, -0.2], "radius": 0.4}):
        from swlab import fields

        rep = lab.inequality_ratio(fields.field_from_dict(spec), params, regime="p_eq_1_scalar", n=128)
        ratios.append(rep.ratio)
    assert max(ratios) <= POINTWISE_NEG * 1.05


# --------------------------------------------------------------------------- Hardy conditions


@pytest.mark.parametrize("alpha,q", [(0.0, 1.0), (0.5, 2.0)])
def test_hardy_example_weights_are_r_independent(alpha, q):
    N = 2
    rep = weights.hardy_constant(PowerWeight(-N - (1 - alpha) * q), PowerWeight(alpha - 1), q)
    expect = (2 * math.pi / ((1 - alpha) * q)) ** (1 / q)
    assert rep.finite and rep.details["r_independent"]
    assert math.isclose(rep.constant, expect, rel_tol=0.01)


def test_hardy_power_weights_negative_alpha_finite():
    # u |x|^-((N-ell)q) with alpha = -1/4, beta = 1/2 (q = 8/5)
    q = 1.6
    rep = weights.hardy_constant(PowerWeight(-0.5 * q - q), PowerWeight(-0.25), q)
    assert rep.finite and rep.details["r_independent"]


def test_hardy_power_weights_positive_alpha_reports_tail():
    # alpha = beta = 1/4 gives q = 4/3 and tail exponent alpha q = 1/3
    q = 4 / 3
    rep = weights.hardy_constant(PowerWeight(-0.25 * q - q), PowerWeight(0.25), q)
    assert not rep.finite
    assert math.isclose(rep.divergence_law["exponent"], 0.25 * q, rel_tol=1e-12)


def test_hardy_dual_variant():
    # int_{B(0,R)} |x|^-1 = 2 pi R and sup_{|x|>R} |x|^-1 = 1/R
    rep = weights.hardy_constant(PowerWeight(-1.0), PowerWeight(1.0), 1.0, variant="w4")
    assert rep.finite and math.isclose(rep.constant, 2 * math.pi, rel_tol=1e-3)


# --------------------------------------------------------------------------- testing conditions


SOBOLEV = SWParams(2, 4 / 3, 4.0, 1.0)


def test_sawyer_unweighted_is_scale_free():
    balls = [Ball((0.0, 0.0), 2.0**k) for k in range(-6, 7, 3)]
    rep = weights.sawyer_testing(PowerWeight(0.0), PowerWeight(0.0), SOBOLEV, balls)
    t1 = [b["T1"] for b in rep.details["balls"]]
    t2 = [b["T2"] for b in rep.details["balls"]]
    assert rep.finite and max(t1) / min(t1) - 1 < 1e-9 and max(t2) / min(t2) - 1 < 1e-9


def test_sawyer_indicator_matches_chord_oracle():
    balls = [Ball((0.0, 0.0), 0.5), Ball((0.0, 0.0), 2.0), Ball((1.0, 0.0), 1.0)]
    rep = weights.sawyer_testing(weights.BallIndicator(1.0), PowerWeight(0.0), SOBOLEV, balls)
    for b, row in zip(balls, rep.details["balls"]):
        t1, t2 = sawyer_indicator_oracle(b.center, b.radius)
        assert math.isclose(row["T1"], t1, rel_tol=0.01)
        assert math.isclose(row["T2"], t2, rel_tol=0.01)


def test_sawyer_zero_weight():
    rep = weights.sawyer_testing(PowerWeight(0.0, 0.0), PowerWeight(0.0), SOBOLEV, [Ball((0.0, 0.0), 1.0)])
    assert rep.constant == 0.0


def test_sawyer_needs_p_gt_1():
    with pytest.raises(weights.WeightError, match="p > 1"):
        weights.sawyer_testing(PowerWeight(0.0), PowerWeight(0.0), SWParams(2, 1.0, 2.0, 1.0))


def test_bump_unweighted_hand_value():
    # |B|^(1/2 + 1/4 - 3/4) = 1 and both averages are 1
    rep = weights.bump_condition(PowerWeight(0.0), PowerWeight(0.0), SOBOLEV, 2.0)
    assert rep.finite and math.isclose(rep.constant, 1.0, rel_tol=1e-9) and rep.details["spread"] < 1e-9
    lit = weights.bump_condition(PowerWeight(0.0), PowerWeight(0.0), SOBOLEV, 2.0, [Ball((0.0, 0.0), 2.0)], form="literal")
    # plain integral of 1 over B: (4 pi)^(1/(p' r)) with p' r = 8
    assert math.isclose(lit.constant, (4 * math.pi) ** (1 / 8), rel_tol=1e-9)


def test_bump_power_weights_finite_and_scale_invariant():
    # u = |x|^(-beta q), v = |x|^(alpha p) with alpha = 1/4, beta = 1/4, p = 4/3: 1/q = 3/4 - 1/4 = 1/2
    P = SWParams(2, 4 / 3, 2.0, 1.0, 0.25, 0.25)
    assert weights.sw_admissible(P).ok
    u, v = PowerWeight(-0.5), PowerWeight(1 / 3)
    balls = [Ball((0.0, 0.0), 2.0**k) for k in range(-2, 3)] + [Ball((1.0, 0.0), 2.0**k) for k in range(-2, 3)]
    base = weights.bump_condition(u, v, P, 1.05, balls)
    assert base.finite
    for s in (0.5, 2.0):
        sb = [Ball(tuple(s * c for c in b.center), s * b.radius) for b in balls]
        assert math.isclose(weights.bump_condition(u, v, P, 1.05, sb).constant, base.constant, rel_tol=0.02)


def test_bump_rejects_nonintegrable_v():
    rep = weights.bump_condition(PowerWeight(0.0), PowerWeight(4.0), SOBOLEV, 2.0)
    assert not rep.finite and rep.divergence_law["exponent"] <= -2


def test_bump_u3_unweighted_tail():
    # u = 1, N = 2, ell = 1, q = 2: tail = (pi / (4 y^2))^(1/2), so y * tail = sqrt(pi) / 2
    rep = weights.bump_u3(PowerWeight(0.0), 2.0, 1.0, 2.0)
    d = rep.details
    assert rep.finite and d["ball_spread"] < 1e-9 and d["chain_ok"]
    assert np.allclose(d["tail_times_y"], math.sqrt(math.pi) / 2, rtol=1e-6)
    assert np.allclose(d["tail_dyadic"], d["tail_direct"], rtol=0.05)


def test_bump_u3_singular_weight_finite():
    # |B|^(1/q + ell/N - 1) avg u^p with u = |x|^(-1/2), p = q = 1, ell = 1/2 is scale free on centred balls
    assert weights.bump_u3(PowerWeight(-0.5), 1.0, 0.5, 1.0).finite
    centred = [Ball((0.0, 0.0), 2.0**k) for k in range(-4, 5)]
    rep = weights.bump_u3(PowerWeight(-0.5), 1.0, 0.5, 1.0, balls=centred)
    assert rep.details["ball_spread"] < 1e-6


def test_bump_u3_zero_weight():
    rep = weights.bump_u3(PowerWeight(0.0, 0.0), 2.0, 1.0, 2.0)
    assert rep.finite and rep.constant == 0.0


def test_pesopeso_power_weights_y_independent():
    q = 4 / 3
    rep = weights.pesopeso_condition(PowerWeight(-0.25 * q), PowerWeight(0.25), 1.0, q)
    assert rep.finite and abs(rep.details["log_slope"]) < 1e-3


def test_pesopeso_unit_u_decided_by_exponent():
    # ratio ~ y^((2 - 8/3)/(4/3) + 1) / v(y) = y^(1/2) / v(y)
    q = 4 / 3
    grow = weights.pesopeso_condition(PowerWeight(0.0), PowerWeight(0.0), 1.0, q)
    assert not grow.finite and math.isclose(grow.divergence_law["slope"], 0.5, rel_tol=1e-3)
    flat = weights.pesopeso_condition(PowerWeight(0.0), PowerWeight(0.5), 1.0, q)
    assert flat.finite
    huge = weights.pesopeso_condition(PowerWeight(0.0), PowerWeight(0.0, 1e300), 1.0, q, y_samples=[1.0])
    assert huge.finite and huge.constant < 1e-290


# --------------------------------------------------------------------------- radial integrals and tails


def test_power_tails_match_closed_form_over_three_decades():
    for R in (1e-1, 1e0, 1e1, 1e2):
        val = weights.radial_moment(PowerWeight(-3.0), 1, R, math.inf, h=1e-2, T=10.0)
        assert math.isclose(val, 1 / R, rel_tol=5e-3)
        head = weights.radial_moment(PowerWeight(-0.5), 1, 0.0, R, h=1e-2 * R, T=10.0)
        assert math.isclose(head, R**1.5 / 1.5, rel_tol=5e-3)


def test_table_weight_tails_match_adaptive_quadrature():
    w = RadialWeight.from_function(lambda r: r**-0.5 / (1 + r), 1e-2, 1e1, 121)
    val = weights.radial_moment(w, 1, 1e-5, 1e4, h=1e-2, T=1e1)
    ref = integrate.quad(lambda t: float(w(np.array([math.exp(t)]))[0]) * math.exp(2 * t),
                         math.log(1e-5), math.log(1e4), epsabs=0, epsrel=1e-10, limit=400,
                         points=np.log(w.radii))[0]
    assert math.isclose(val, ref, rel_tol=5e-3)
    # 1/(1+r) is not yet a power law on the last decade of this short table
    assert not w.tail_consistency()["ok"]
    assert RadialWeight.from_function(lambda r: r**-0.5 / (1 + r), 1e-4, 1e4, 161).tail_consistency()["ok"]


def test_ball_integral_off_centre_matches_area():
    # unit weight: area; |x|^-1 on B((2,0),1) by adaptive 2-D quadrature
    assert math.isclose(weights.ball_integral(PowerWeight(0.0), 1.0, 1.5, 1.0, 2), math.pi, rel_tol=1e-9)
    ref = integrate.dblquad(lambda y, x: 1 / math.hypot(x, y), 1, 3, lambda x: -math.sqrt(max(0, 1 - (x - 2) ** 2)),
                            lambda x: math.sqrt(max(0, 1 - (x - 2) ** 2)), epsabs=1e-11)[0]
    assert math.isclose(weights.ball_integral(PowerWeight(-1.0), 1.0, 2.0, 1.0, 2), ref, rel_tol=1e-6)


def test_weight_from_dict_errors():
    with pytest.raises(weights.WeightError, match="unknown"):
        weights.weight_from_dict({"kind": "spline"})
    with pytest.raises(weights.WeightError, match="'exponent'"):
        weights.weight_from_dict({"kind": "power"})
    w = weights.weight_from_dict({"kind": "radial-table", "radii": [1, 2], "values": [1, 0.5], "tail0": 0, "tail_inf": -1})
    assert isinstance(w, RadialWeight)
