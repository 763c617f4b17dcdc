"""Radial weights and the finiteness conditions of two-weight potential inequalities.

All weights are radial; a weight is a callable on radii with tail exponents at
0 and infinity.  Improper radial integrals are computed on ``[h, T]`` by
adaptive quadrature with power-law tails attached analytically outside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import betainc, hyp2f1

from . import fit, quad

H_DEFAULT = 1e-4
T_DEFAULT = 1e4
DEFAULT_CENTERS = ((0.0, 0.0), (1.0, 0.0), (-2.0, 1.0))
DEFAULT_RADII = tuple(2.0**k for k in range(-6, 7))


class WeightError(ValueError):
    pass


# --------------------------------------------------------------------------- weight types


@dataclass(frozen=True)
class PowerWeight:
    """``scale * |x|^exponent``.  ``scale=0`` is the zero weight."""

    exponent: float
    scale: float = 1.0

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.scale == 0:
            return np.zeros_like(r)
        with np.errstate(divide="ignore"):
            return self.scale * r**self.exponent

    @property
    def tail0(self) -> float:
        return self.exponent

    @property
    def tail_inf(self) -> float:
        return self.exponent

    @property
    def is_zero(self) -> bool:
        return self.scale == 0

    def locally_integrable(self, N: int) -> bool:
        return self.exponent > -N

    def power(self, s: float) -> "PowerWeight":
        return PowerWeight(self.exponent * s, self.scale**s if self.scale else 0.0)

    def to_dict(self) -> dict:
        return {"kind": "power", "exponent": self.exponent, "scale": self.scale}


@dataclass(frozen=True)
class RadialWeight:
    """Tabulated radial profile, log-linear interpolation, power tails outside the table."""

    radii: tuple
    values: tuple
    tail0: float
    tail_inf: float

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if r.ndim != 1 or r.shape != v.shape or len(r) < 2:
            raise WeightError("radial table needs matching 1-D radii and values (>= 2 points)")
        if np.any(np.diff(r) <= 0) or r[0] <= 0:
            raise WeightError("radii must be positive and increasing")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise WeightError("weight values must be finite and nonnegative")

    @classmethod
    def from_function(cls, func, r_min=1e-4, r_max=1e4, n=161, tail0=None, tail_inf=None):
        r = np.geomspace(r_min, r_max, n)
        v = np.asarray(func(r), dtype=float)
        if tail0 is None:
            tail0 = float(np.log(v[1] / v[0]) / np.log(r[1] / r[0]))
        if tail_inf is None:
            tail_inf = float(np.log(v[-1] / v[-2]) / np.log(r[-1] / r[-2]))
        return cls(tuple(r), tuple(v), tail0, tail_inf)

    @property
    def is_zero(self) -> bool:
        return not np.any(np.asarray(self.values))

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        R = np.asarray(self.radii)
        V = np.asarray(self.values)
        out = np.empty_like(r)
        lo, hi = r < R[0], r > R[-1]
        mid = ~(lo | hi)
        with np.errstate(divide="ignore"):
            out[lo] = V[0] * (r[lo] / R[0]) ** self.tail0
            out[hi] = V[-1] * (r[hi] / R[-1]) ** self.tail_inf
        if np.all(V > 0):
            out[mid] = np.exp(np.interp(np.log(r[mid]), np.log(R), np.log(V)))
        else:
            out[mid] = np.interp(np.log(r[mid]), np.log(R), V)
        return out

    def tail_consistency(self) -> dict:
        """Worst relative mismatch between each tail model and the last sampled decade."""
        R = np.asarray(self.radii)
        V = np.asarray(self.values)
        res = {}
        for name, sel, anchor, e in (
            ("zero", R <= R[0] * 10, 0, self.tail0),
            ("inf", R >= R[-1] / 10, -1, self.tail_inf),
        ):
            if V[anchor] == 0 or not np.all(V[sel] > 0):
                res[name] = 0.0
                continue
            model = V[anchor] * (R[sel] / R[anchor]) ** e
            res[name] = float(np.max(np.abs(model - V[sel]) / V[sel]))
        res["ok"] = all(v <= 0.10 for v in res.values())
        return res

    def power(self, s: float) -> "RadialWeight":
        return RadialWeight(self.radii, tuple(np.asarray(self.values) ** s), self.tail0 * s, self.tail_inf * s)

    def to_dict(self) -> dict:
        return {"kind": "radial-table", "radii": list(self.radii), "values": list(self.values),
                "tail0": self.tail0, "tail_inf": self.tail_inf}


@dataclass(frozen=True)
class BallIndicator:
    """``chi_{B(0, radius)}``."""

    radius: float = 1.0
    tail0: float = 0.0
    tail_inf: float = -math.inf

    def __call__(self, r):
        return (np.asarray(r, dtype=float) < self.radius).astype(float)

    @property
    def is_zero(self) -> bool:
        return False

    def power(self, s: float) -> "BallIndicator":
        return self

    def to_dict(self) -> dict:
        return {"kind": "ball-indicator", "radius": self.radius}


def weight_from_dict(spec: dict):
    kind = spec.get("kind")
    if kind == "power":
        if "exponent" not in spec:
            raise WeightError("power weight missing key 'exponent'")
        return PowerWeight(float(spec["exponent"]), float(spec.get("scale", 1.0)))
    if kind == "radial-table":
        for key in ("radii", "values", "tail0", "tail_inf"):
            if key not in spec:
                raise WeightError(f"radial-table weight missing key {key!r}")
        return RadialWeight(tuple(spec["radii"]), tuple(spec["values"]), float(spec["tail0"]), float(spec["tail_inf"]))
    if kind == "ball-indicator":
        return BallIndicator(float(spec.get("radius", 1.0)))
    raise WeightError(f"unknown weight kind {kind!r}")


def _power(w, s: float):
    return w.power(s) if s != 1 else w


def _breaks(w) -> list[float]:
    if isinstance(w, BallIndicator):
        return [w.radius]
    if isinstance(w, RadialWeight):
        return list(w.radii)  # interpolation kinks
    return []


# --------------------------------------------------------------------------- parameters and reports


@dataclass(frozen=True)
class SWParams:
    N: int
    p: float
    q: float
    ell: float
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if self.N < 1:
            raise WeightError(f"N >= 1 violated: N={self.N}")
        if not 0 < self.ell < self.N:
            raise WeightError(f"0 < ell < N violated: ell={self.ell}, N={self.N}")
        if self.p < 1:
            raise WeightError(f"p >= 1 violated: p={self.p}")
        if self.q < 1:
            raise WeightError(f"q >= 1 violated: q={self.q}")

    @property
    def p_conj(self) -> float:
        return math.inf if self.p == 1 else self.p / (self.p - 1)

    @property
    def q_conj(self) -> float:
        return math.inf if self.q == 1 else self.q / (self.q - 1)

    def to_dict(self) -> dict:
        return {"N": self.N, "p": self.p, "q": self.q, "ell": self.ell, "alpha": self.alpha, "beta": self.beta}

    @classmethod
    def from_dict(cls, d: dict) -> "SWParams":
        try:
            return cls(int(d["N"]), float(d["p"]), float(d["q"]), float(d["ell"]),
                       float(d.get("alpha", 0.0)), float(d.get("beta", 0.0)))
        except KeyError as e:
            raise WeightError(f"params missing key {e.args[0]!r}") from None


@dataclass
class Verdict:
    ok: bool
    violations: list

    def to_dict(self) -> dict:
        return {"ok": self.ok, "violations": list(self.violations)}


def sw_admissible(params: SWParams, regime: str = "p_gt_1", tol: float = 1e-12) -> Verdict:
    """Check the parameter conditions of the weighted inequality.

    ``p_gt_1``: ``1 < p <= q``, ``alpha < N/p'``, ``beta < N/q``,
    ``alpha + beta >= 0``, ``1/q = 1/p + (alpha+beta-ell)/N``.
    ``p_eq_1``: ``p = 1``, ``N >= 2``, ``0 <= alpha < 1``, ``beta < N/q``,
    ``alpha + beta > 0``, ``1/q = 1 + (alpha+beta-ell)/N``.
    ``p_eq_1_scalar``: the unconstrained scalar case, which needs ``alpha < 0``
    in place of ``0 <= alpha < 1``.
    """
    P = params
    N, p, q, ell, a, b = P.N, P.p, P.q, P.ell, P.alpha, P.beta
    v = []
    if regime == "p_gt_1":
        if not p > 1:
            v.append(f"p > 1 violated (p={p})")
        if not p <= q:
            v.append(f"p <= q violated (p={p}, q={q})")
        if p > 1 and not a < N / P.p_conj:
            v.append(f"alpha < N/p' violated (alpha={a}, N/p'={N / P.p_conj})")
        if not b < N / q:
            v.append(f"beta < N/q violated (beta={b}, N/q={N / q})")
        if not a + b >= -tol:
            v.append(f"alpha + beta >= 0 violated (alpha+beta={a + b})")
        rel = 1 / p + (a + b - ell) / N
        if abs(1 / q - rel) > tol:
            v.append(f"1/q = 1/p + (alpha+beta-ell)/N violated (1/q={1 / q}, rhs={rel})")
    elif regime in ("p_eq_1", "p_eq_1_scalar"):
        if p != 1:
            v.append(f"p = 1 violated (p={p})")
        if regime == "p_eq_1":
            if N < 2:
                v.append(f"N >= 2 violated (N={N})")
            if not 0 <= a:
                v.append(f"0 <= alpha violated (alpha={a})")
            if not a < 1:
                v.append(f"alpha < 1 violated (alpha={a})")
        elif not a < 0:
            v.append(f"alpha < 0 violated (alpha={a})")
        if not b < N / q:
            v.append(f"beta < N/q violated (beta={b}, N/q={N / q})")
        if not a + b > 0:
            v.append(f"alpha + beta > 0 violated (alpha+beta={a + b})")
        rel = 1 + (a + b - ell) / N
        if abs(1 / q - rel) > tol:
            v.append(f"1/q = 1 + (alpha+beta-ell)/N violated (1/q={1 / q}, rhs={rel})")
    else:
        raise WeightError(f"unknown regime {regime!r}")
    return Verdict(not v, v)


@dataclass
class ConditionReport:
    finite: bool
    constant: float | None
    divergence_law: dict | None = None
    truncation: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.finite and (self.constant is None or not math.isfinite(self.constant)):
            raise WeightError("finite report needs a numeric constant")
        if not self.finite and self.divergence_law is None:
            raise WeightError("infinite report needs a divergence law")

    def to_dict(self) -> dict:
        return {
            "finite": self.finite,
            "constant": fit.finite_or_none(self.constant),
            "divergence_law": self.divergence_law,
            "truncation": self.truncation,
            "details": self.details,
        }


# --------------------------------------------------------------------------- radial integrals


def radial_moment(w, power: float, lo: float, hi: float, h: float = H_DEFAULT, T: float = T_DEFAULT) -> float:
    """``int_lo^hi w(r) r^power dr``: quadrature on ``[h, T]``, analytic power tails outside.

    Returns ``inf`` when a tail is not integrable.
    """
    if hi <= lo:
        return 0.0
    if getattr(w, "is_zero", False):
        return 0.0
    total = 0.0
    a, b = max(lo, h), min(hi, T)
    if b > a:
        cuts = [c for c in _breaks(w) if a < c < b]
        edges = [a] + cuts + [b]
        for e0, e1 in zip(edges[:-1], edges[1:]):
            total += _log_quad(lambda r: w(r) * r**power, e0, e1)
    if lo < h:
        e = w.tail0 + power
        top = min(h, hi)
        if lo == 0:
            if e <= -1:
                return math.inf
            total += float(w(np.array([top]))[0]) * top ** (power + 1) / (e + 1)
        else:
            total += float(w(np.array([top]))[0]) * top**power * _power_int(e, lo, top, top)
    if hi > T:
        e = w.tail_inf + power
        base = max(T, lo)
        wT = float(w(np.array([base]))[0])
        if wT == 0 or e == -math.inf:
            pass
        elif math.isinf(hi):
            if e >= -1:
                return math.inf
            total += wT * base ** (power + 1) / (-e - 1)
        else:
            total += wT * base**power * _power_int(e, base, hi, base)
    return total


def _power_int(e: float, a: float, b: float, anchor: float) -> float:
    """``int_a^b (r/anchor)^e dr``."""
    if abs(e + 1) < 1e-14:
        return anchor * math.log(b / a)
    return anchor * ((b / anchor) ** (e + 1) - (a / anchor) ** (e + 1)) / (e + 1)


def _log_quad(g, a: float, b: float) -> float:
    """``int_a^b g(r) dr`` in the variable ``log r``, split per decade."""
    ta, tb = math.log(a), math.log(b)
    n = max(1, int(math.ceil((tb - ta) / math.log(10))))
    edges = np.linspace(ta, tb, n + 1)
    s = 0.0
    for t0, t1 in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(lambda t: float(g(np.array([math.exp(t)]))[0]) * math.exp(t), t0, t1,
                                epsabs=0, epsrel=1e-11, limit=200)
        s += val
    return s


def ball_integral(w, power: float, center_dist: float, radius: float, N: int,
                  h: float = H_DEFAULT) -> float:
    """``int_{B(c, radius)} w(|x|)^power dx`` with ``|c| = center_dist``.

    Radial reduction: ``|S^{N-1}| int w^power r^{N-1} sigma(r) dr`` where
    ``sigma(r)`` is the fraction of the sphere of radius ``r`` inside the ball.
    """
    wp = _power(w, power)
    if getattr(wp, "is_zero", False):
        return 0.0
    d, R = float(center_dist), float(radius)
    S = quad.sphere_area(N)
    if d == 0:
        return S * radial_moment(wp, N - 1, 0.0, R, h=min(h, R * 1e-3), T=max(R, 1.0) * 10)

    def frac(r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.clip((r * r + d * d - R * R) / (2 * r * d), -1, 1)
        # fraction of the sphere with cos(angle to c) > t
        half = 0.5 * betainc((N - 1) / 2, 0.5, np.clip(1 - t * t, 0, 1))
        return np.where(t >= 0, half, 1 - half)

    lo, hi = max(0.0, d - R), d + R
    if lo == 0:
        # ball contains the origin: full spheres up to R - d
        inner = S * radial_moment(wp, N - 1, 0.0, R - d, h=min(h, (R - d) * 1e-3), T=max(R, 1.0) * 10)
        lo = R - d
    else:
        inner = 0.0
    edges = sorted({lo, hi, *[c for c in _breaks(w) if lo < c < hi]})
    val = 0.0
    for e0, e1 in zip(edges[:-1], edges[1:]):
        g = lambda r: float(wp(np.array([r]))[0] * r ** (N - 1) * frac(np.array([r]))[0])
        v, _ = integrate.quad(g, e0, e1, epsabs=0, epsrel=1e-10, limit=200)
        val += v
    return inner + S * val


def angular_mean_kernel(r, rho, s: float, N: int):
    """Mean of ``|x - y|^-s`` over ``|x| = r`` for fixed ``|y| = rho``."""
    r = np.asarray(r, dtype=float)
    big = np.maximum(r, rho)
    small = np.minimum(r, rho)
    return big ** (-s) * hyp2f1(s / 2, s / 2 - (N - 2) / 2, N / 2, (small / big) ** 2)


# --------------------------------------------------------------------------- pointwise condition


def _potential_of_weight(u, s: float, rho: float, N: int, h: float, T: float) -> float:
    """``int u(x) |x - y|^-s dx`` for ``|y| = rho``, truncated tails analytic."""
    S = quad.sphere_area(N)
    g = lambda r: u(r) * r ** (N - 1) * angular_mean_kernel(r, rho, s, N)
    total = 0.0
    edges = sorted({h, rho, T, *[c for c in _breaks(u) if h < c < T]})
    for e0, e1 in zip(edges[:-1], edges[1:]):
        if e1 <= e0:
            continue
        ta, tb = math.log(e0), math.log(e1)
        val, _ = integrate.quad(lambda t: float(g(np.array([math.exp(t)]))[0]) * math.exp(t), ta, tb,
                                epsabs=0, epsrel=1e-10, limit=400)
        total += val
    # below h the kernel is rho^-s to O(h/rho); beyond T it is r^-s
    head = radial_moment(u, N - 1, 0.0, h, h=h, T=T)
    total += head * rho ** (-s)
    tail_e = u.tail_inf + N - 1 - s
    if u.tail_inf != -math.inf:
        if tail_e >= -1:
            return math.inf
        uT = float(u(np.array([T]))[0])
        total += uT * T ** (N - s) / (-tail_e - 1)
    return S * total


def pointwise_condition(u, v, ell: float, q: float, N: int = 2, y_samples=None,
                        h: float = H_DEFAULT, T: float = T_DEFAULT, T_sweep=None) -> ConditionReport:
    """``sup_y (int u(x) |x-y|^-((N-ell) q) dx)^(1/q) / v(y)`` over radial ``y``."""
    s = (N - ell) * q
    if not 0 < ell < N:
        raise WeightError(f"0 < ell < N violated: ell={ell}, N={N}")
    if s >= N:
        raise WeightError(f"kernel exponent (N-ell)q = {s} is not locally integrable in dimension {N}")
    ys = np.geomspace(1e-2, 1e2, 9) if y_samples is None else np.asarray(y_samples, dtype=float)
    trunc = {"h": h, "T": T}
    if getattr(u, "is_zero", False):
        return ConditionReport(True, 0.0, truncation=trunc, details={"y": ys.tolist(), "ratios": [0.0] * len(ys)})
    if u.tail0 <= -N:
        raise WeightError(f"weight exponent {u.tail0} of u is not locally integrable in dimension {N}")
    growth = u.tail_inf + N - s
    if growth >= 0:
        Ts = np.geomspace(1e2, 1e6, 9) if T_sweep is None else np.asarray(T_sweep, dtype=float)
        vals = []
        for Tk in Ts:
            S = quad.sphere_area(N)
            g = lambda r: u(r) * r ** (N - 1) * angular_mean_kernel(r, 1.0, s, N)
            val = 0.0
            for e0, e1 in ((h, 1.0), (1.0, Tk)):
                v_, _ = integrate.quad(lambda t: float(g(np.array([math.exp(t)]))[0]) * math.exp(t),
                                       math.log(e0), math.log(e1), epsabs=0, epsrel=1e-10, limit=400)
                val += v_
            vals.append(S * val)
        law = fit.growth_law(Ts, vals)
        law["tail_growth_exponent"] = growth
        law["T"] = Ts.tolist()
        law["values"] = vals
        return ConditionReport(False, math.inf, law, trunc, {"y": [1.0]})
    ratios = []
    for rho in ys:
        F = _potential_of_weight(u, s, float(rho), N, h, T)
        vy = float(v(np.array([rho]))[0])
        ratios.append(F ** (1 / q) / vy if vy > 0 else math.inf)
    ratios = np.asarray(ratios)
    if not np.all(np.isfinite(ratios)):
        return ConditionReport(False, math.inf, {"kind": "pointwise", "reason": "v vanishes at a sample"}, trunc,
                               {"y": ys.tolist()})
    return ConditionReport(True, float(ratios.max()), None, trunc,
                           {"y": ys.tolist(), "ratios": ratios.tolist(), "spread": fit.relative_spread(ratios)})


# --------------------------------------------------------------------------- Hardy-type conditions


def _sup_inverse(w, lo: float, hi: float, h: float, T: float) -> float:
    """``sup_{lo < r < hi} 1/w(r)``; ``hi`` may be ``inf``."""
    if lo == 0 and w.tail0 > 0:
        return math.inf
    if math.isinf(hi) and w.tail_inf < 0:
        return math.inf
    a = max(lo, h) if lo == 0 else lo
    b = min(hi, T) if math.isinf(hi) else hi
    r = np.geomspace(a, b, 400) if b > a else np.array([a])
    with np.errstate(divide="ignore"):
        inv = 1 / np.asarray(w(r))
    best = float(np.max(inv))
    # power tails are monotone; the endpoints bound the sup on the attached parts
    return best


def hardy_constant(u_t, v_t, q: float, variant: str = "w2", R_grid=None, N: int = 2,
                   h: float = H_DEFAULT, T: float = T_DEFAULT) -> ConditionReport:
    """``sup_R (int_{|x|>R} u)^(1/q) sup_{|x|<R} 1/v`` (``w2``) or the reversed
    pairing ``(int_{|x|<R} u)^(1/q) sup_{|x|>R} 1/v`` (``w4``)."""
    if q < 1:
        raise WeightError(f"q >= 1 violated: q={q}")
    Rs = np.geomspace(1e-2, 1e2, 17) if R_grid is None else np.asarray(R_grid, dtype=float)
    S = quad.sphere_area(N)
    trunc = {"h": h, "T": T}
    if variant == "w2":
        growth = u_t.tail_inf + N
        if growth >= 0:
            return ConditionReport(False, math.inf, {"kind": "tail", "exponent": growth,
                                                     "reason": "integral over |x|>R diverges"}, trunc)
    elif variant == "w4":
        growth = u_t.tail0 + N
        if growth <= 0:
            return ConditionReport(False, math.inf, {"kind": "tail", "exponent": growth,
                                                     "reason": "integral over |x|<R diverges at 0"}, trunc)
    else:
        raise WeightError(f"unknown variant {variant!r}")
    prods = []
    for R in Rs:
        if variant == "w2":
            mass = S * radial_moment(u_t, N - 1, R, math.inf, h=h, T=max(T, 100 * R))
            sup = _sup_inverse(v_t, 0.0, R, h, T)
        else:
            mass = S * radial_moment(u_t, N - 1, 0.0, R, h=min(h, R * 1e-3), T=T)
            sup = _sup_inverse(v_t, R, math.inf, h, T)
        prods.append(mass ** (1 / q) * sup)
    prods = np.asarray(prods)
    if not np.all(np.isfinite(prods)):
        return ConditionReport(False, math.inf, {"kind": "sup", "reason": "1/v unbounded on the tested region",
                                                 "exponent": v_t.tail0 if variant == "w2" else v_t.tail_inf},
                               trunc, {"R": Rs.tolist()})
    spread = fit.relative_spread(prods)
    return ConditionReport(True, float(prods.max()), None, trunc,
                           {"R": Rs.tolist(), "products": prods.tolist(), "spread": spread,
                            "r_independent": spread < 0.01})


# --------------------------------------------------------------------------- ball families


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def to_dict(self) -> dict:
        return {"center": list(self.center), "radius": self.radius}


def ball_family(N: int = 2, centers=None, radii=None) -> list[Ball]:
    centers = DEFAULT_CENTERS if centers is None else centers
    radii = DEFAULT_RADII if radii is None else radii
    out = []
    for c in centers:
        c = tuple(float(x) for x in c) + (0.0,) * (N - len(c))
        for R in radii:
            out.append(Ball(c[:N], float(R)))
    return out


def _ball_lattice(ball: Ball, n: int):
    """Nodes of ``h Z^N`` (origin-aligned) in the ball's bounding box, with in-ball mask."""
    N = len(ball.center)
    h = 2 * ball.radius / n
    c = np.asarray(ball.center)
    k0 = np.floor((c - ball.radius) / h).astype(int)
    k1 = np.ceil((c + ball.radius) / h).astype(int)
    M = int(np.max(k1 - k0)) + 1
    axes = [h * (k0[j] + np.arange(M)) for j in range(N)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
    inside = np.linalg.norm(X - c, axis=-1) <= ball.radius
    return X, inside, h, k0, M


def _cell_masses(w, X: np.ndarray, h: float, k0, N: int) -> np.ndarray:
    """``int_cell w`` per node; power weights get exact cells near the origin."""
    r = np.linalg.norm(X, axis=-1)
    if isinstance(w, PowerWeight):
        if w.is_zero:
            return np.zeros(r.shape)
        with np.errstate(divide="ignore"):
            m = w.scale * h**N * r**w.exponent
        if w.exponent != 0:
            reach = 2
            near = quad.near_origin_cell_integrals(N, float(w.exponent), reach)
            idx = np.rint(X / h).astype(int)
            sel = np.all(np.abs(idx) <= reach, axis=-1)
            for pos in zip(*np.nonzero(sel)):
                k = idx[pos] + reach
                m[pos] = w.scale * h ** (N + w.exponent) * near[tuple(k)]
        return m
    return np.asarray(w(r)) * h**N


def _lattice_potential(masses: np.ndarray, h: float, ell: float, N: int) -> np.ndarray:
    M = masses.shape[0]
    kf = quad._unit_kernel_fft(N, float(ell), M)
    from scipy import fft as sfft

    conv = sfft.irfftn(sfft.rfftn(masses, s=(2 * M,) * N) * kf, s=(2 * M,) * N)
    return conv[(slice(0, M),) * N] * h ** (ell - N)


def _check_ball_integrable(w, ball: Ball, N: int, name: str):
    r0 = float(np.linalg.norm(ball.center))
    if r0 <= ball.radius and getattr(w, "tail0", 0.0) <= -N and not getattr(w, "is_zero", False):
        raise WeightError(f"weight {name} (exponent {w.tail0}) not integrable on ball "
                          f"center={list(ball.center)} radius={ball.radius}")


def sawyer_testing(u, v, params: SWParams, balls=None, n: int = 96) -> ConditionReport:
    """Both testing ratios over a ball family.

    ``T1 = (int_B I(chi_B u)^p' v)^(1/p') / (int_B u)^(1/q')``,
    ``T2 = (int_B I(chi_B v)^q u)^(1/q) / (int_B v)^(1/p)``,
    discretised on an origin-aligned lattice of ``n`` cells per diameter.
    """
    P = params
    if not P.p > 1:
        raise WeightError("testing conditions need p > 1")
    N, ell, p, q = P.N, P.ell, P.p, P.q
    pc, qc = P.p_conj, P.q_conj
    balls = ball_family(N) if balls is None else balls
    rows = []
    for B in balls:
        _check_ball_integrable(u, B, N, "u")
        _check_ball_integrable(v, B, N, "v")
        X, inside, h, k0, M = _ball_lattice(B, n)
        mu = np.where(inside, _cell_masses(u, X, h, k0, N), 0.0)
        mv = np.where(inside, _cell_masses(v, X, h, k0, N), 0.0)
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(mv))):
            raise WeightError(f"quadrature failed near a weight singularity on ball center={list(B.center)} "
                              f"radius={B.radius}")
        Iu = _lattice_potential(mu, h, ell, N)
        Iv = _lattice_potential(mv, h, ell, N)
        U, V = mu.sum(), mv.sum()
        if U == 0:
            t1 = 0.0
        else:
            num1 = np.sum(np.where(inside, Iu**pc * mv, 0.0)) ** (1 / pc)
            t1 = float(num1 / U ** (1 / qc)) if qc != math.inf else float(num1)
        if U == 0 or V == 0:
            t2 = 0.0
        else:
            num2 = np.sum(np.where(inside, Iv**q * mu, 0.0)) ** (1 / q)
            t2 = float(num2 / V ** (1 / p))
        rows.append({"ball": B.to_dict(), "T1": t1, "T2": t2})
    t1s = np.array([r["T1"] for r in rows])
    t2s = np.array([r["T2"] for r in rows])
    worst = int(np.argmax(np.maximum(t1s, t2s)))
    const = float(max(t1s.max(), t2s.max()))
    return ConditionReport(True, const, None, {"cells_per_diameter": n},
                           {"balls": rows, "worst_ball": rows[worst]["ball"], "max_T1": float(t1s.max()),
                            "max_T2": float(t2s.max())})


def bump_condition(u, v, params: SWParams, r: float, balls=None, form: str = "averaged") -> ConditionReport:
    """``|B|^(ell/N+1/q-1/p) (avg_B u^r)^(1/(rq)) (X_B v^((1-p') r))^(1/(p' r))``.

    ``X_B`` is the average over ``B`` (``form="averaged"``, scale invariant)
    or the plain integral (``form="literal"``).
    """
    P = params
    if not P.p > 1:
        raise WeightError("bump condition needs p > 1")
    if not r > 1:
        raise WeightError(f"r > 1 violated: r={r}")
    N, ell, p, q, pc = P.N, P.ell, P.p, P.q, P.p_conj
    balls = ball_family(N) if balls is None else balls
    ev = (1 - pc) * r
    if not getattr(v, "is_zero", False) and getattr(v, "tail0", 0.0) * ev <= -N:
        return ConditionReport(False, math.inf, {"kind": "singularity", "exponent": v.tail0 * ev,
                                                 "reason": "v^((1-p') r) not integrable at 0"}, {"r": r})
    if getattr(v, "is_zero", False):
        return ConditionReport(False, math.inf, {"kind": "singularity", "reason": "v vanishes identically"}, {"r": r})
    if not getattr(u, "is_zero", False) and getattr(u, "tail0", 0.0) * r <= -N:
        return ConditionReport(False, math.inf, {"kind": "singularity", "exponent": u.tail0 * r,
                                                 "reason": "u^r not integrable at 0"}, {"r": r})
    rows = []
    for B in balls:
        vol = quad.ball_volume(N, B.radius)
        d = float(np.linalg.norm(B.center))
        au = ball_integral(u, r, d, B.radius, N) / vol
        iv = ball_integral(v, ev, d, B.radius, N)
        xv = iv / vol if form == "averaged" else iv
        val = vol ** (ell / N + 1 / q - 1 / p) * au ** (1 / (r * q)) * xv ** (1 / (pc * r))
        rows.append({"ball": B.to_dict(), "value": float(val)})
    vals = np.array([x["value"] for x in rows])
    worst = int(np.argmax(vals))
    return ConditionReport(True, float(vals.max()), None, {"r": r, "form": form},
                           {"balls": rows, "worst_ball": rows[worst]["ball"], "spread": fit.relative_spread(vals)})


# --------------------------------------------------------------------------- tail conditions


def _tail_mass(u, ell: float, q: float, N: int, y: float, h: float, T: float) -> float:
    """``int_{|x| > 2y} u(x) |x|^-((N-ell+1) q) dx``."""
    return quad.sphere_area(N) * radial_moment(u, N - 1 - (N - ell + 1) * q, 2 * y, math.inf, h=h, T=max(T, 100 * y))


def bump_u3(u, p: float, ell: float, q: float, balls=None, y_samples=(0.25, 1.0, 4.0), N: int = 2,
            h: float = H_DEFAULT, T: float = T_DEFAULT) -> ConditionReport:
    """Ball condition ``|B|^(1/q+ell/N-1) (avg_B u^p)^(1/(pq)) <= C`` and the tail
    bound it implies, ``(int_{|x|>2|y|} u |x|^-((N-ell+1)q))^(1/q) <= C' / |y|``.

    The tail is evaluated directly, as an explicit dyadic shell sum, and through
    the chain: shell mass <= ball mass <= |B_k| (avg u^p)^(1/p) <= C^q |B_k|^(q(1-ell/N)).
    """
    balls = ball_family(N) if balls is None else balls
    ys = np.asarray(y_samples, dtype=float)
    trunc = {"h": h, "T": T}
    if getattr(u, "is_zero", False):
        return ConditionReport(True, 0.0, None, trunc, {"ball_sup": 0.0, "y": ys.tolist()})
    if u.tail0 * p <= -N:
        return ConditionReport(False, math.inf, {"kind": "singularity", "exponent": u.tail0 * p}, trunc)
    rows = []
    for B in balls:
        vol = quad.ball_volume(N, B.radius)
        d = float(np.linalg.norm(B.center))
        avg = ball_integral(u, p, d, B.radius, N) / vol
        rows.append(vol ** (1 / q + ell / N - 1) * avg ** (1 / (p * q)))
    rows = np.asarray(rows)
    C = float(rows.max())
    tail_e = u.tail_inf + N - (N - ell + 1) * q
    if tail_e >= 0:
        return ConditionReport(False, math.inf, {"kind": "tail", "exponent": tail_e}, trunc, {"ball_sup": C})
    S = quad.sphere_area(N)
    omega = quad.ball_volume(N)
    direct, dyadic, chain = [], [], []
    K = 60
    for y in ys:
        direct.append(_tail_mass(u, ell, q, N, y, h, T))
        shells, bound = 0.0, 0.0
        for k in range(K):
            a, b = 2 * y * 2.0**k, 2 * y * 2.0 ** (k + 1)
            shells += S * radial_moment(u, N - 1 - (N - ell + 1) * q, a, b, h=h, T=max(T, b))
            bound += a ** (-(N - ell + 1) * q) * C**q * (omega * b**N) ** (q * (1 - ell / N))
        shells += S * radial_moment(u, N - 1 - (N - ell + 1) * q, 2 * y * 2.0**K, math.inf, h=h, T=max(T, 2 * y * 2.0**K))
        dyadic.append(shells)
        chain.append(bound)
    direct = np.asarray(direct)
    scaled = direct ** (1 / q) * ys
    chain_ok = bool(np.all(np.asarray(direct) <= np.asarray(chain) * (1 + 1e-9)))
    spread = fit.relative_spread(scaled)
    return ConditionReport(True, float(max(C, scaled.max())), None, trunc,
                           {"ball_sup": C, "ball_spread": fit.relative_spread(rows), "y": ys.tolist(),
                            "tail_direct": direct.tolist(), "tail_dyadic": dyadic, "tail_chain_bound": chain,
                            "tail_times_y": scaled.tolist(), "tail_spread": spread, "chain_ok": chain_ok})


def pesopeso_condition(u, v, ell: float, q: float, y_samples=None, N: int = 2,
                       h: float = H_DEFAULT, T: float = T_DEFAULT, slope_tol: float = 0.05) -> ConditionReport:
    """``sup_y (int_{|x|>2|y|} u |x|^-((N-ell+1)q))^(1/q) |y| / v(y)``.

    Over log-spaced ``|y|`` a clear power trend (``|slope| > slope_tol`` with
    R^2 > 0.99) means the supremum is infinite.
    """
    ys = np.geomspace(1e-3, 1e3, 13) if y_samples is None else np.asarray(y_samples, dtype=float)
    trunc = {"h": h, "T": T}
    if getattr(u, "is_zero", False):
        return ConditionReport(True, 0.0, None, trunc, {"y": ys.tolist()})
    tail_e = u.tail_inf + N - (N - ell + 1) * q
    if tail_e >= 0:
        return ConditionReport(False, math.inf, {"kind": "tail", "exponent": tail_e}, trunc)
    ratios = np.array([_tail_mass(u, ell, q, N, y, h, T) ** (1 / q) * y / float(v(np.array([y]))[0]) for y in ys])
    slope, _, r2 = fit.linear_fit(np.log(ys), np.log(np.maximum(ratios, 1e-300)))
    details = {"y": ys.tolist(), "ratios": ratios.tolist(), "log_slope": slope, "r2": r2}
    if abs(slope) > slope_tol and r2 > fit.R2_MIN:
        return ConditionReport(False, math.inf, {"kind": "power", "slope": slope, "r2": r2}, trunc, details)
    return ConditionReport(True, float(ratios.max()), None, trunc, details)
