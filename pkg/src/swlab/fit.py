"""Least-squares growth-law fits used to call divergence or boundedness."""

from __future__ import annotations

import math

import numpy as np

R2_MIN = 0.99
SPREAD_MAX = 0.05


def linear_fit(x, y) -> tuple[float, float, float]:
    """Slope, intercept and R^2 of ``y ~ a x + b``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2:
        return 0.0, float(y[0]) if len(y) else 0.0, 0.0
    A = np.vstack([x, np.ones_like(x)]).T
    (a, b), *_ = np.linalg.lstsq(A, y, rcond=None)
    ss_res = float(np.sum((y - (a * x + b)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    return float(a), float(b), float(r2)


def is_monotone(values, increasing: bool = True) -> bool:
    d = np.diff(np.asarray(values, dtype=float))
    return bool(np.all(d > 0)) if increasing else bool(np.all(d < 0))


def relative_spread(values) -> float:
    v = np.abs(np.asarray(values, dtype=float))
    if v.size == 0 or v.max() == 0:
        return 0.0
    return float((v.max() - v.min()) / v.max())


def growth_law(params, values, r2_min: float = R2_MIN) -> dict:
    """Fit ``values`` against ``log(params)`` (log law) and ``log values`` against
    ``log(params)`` (power law); report the better fit and a divergence call.

    Divergent means: strictly increasing, best R^2 above ``r2_min`` and no
    saturation (slope over the last half at least half the overall slope).
    """
    t = np.log(np.asarray(params, dtype=float))
    v = np.asarray(values, dtype=float)
    slope, icpt, r2 = linear_fit(t, v)
    out = {"kind": "log", "slope": slope, "intercept": icpt, "r2": r2}
    if np.all(v > 0):
        ps, pi, pr2 = linear_fit(t, np.log(v))
        if pr2 > r2 + 1e-6 and abs(ps) > 1e-3:
            out = {"kind": "power", "slope": ps, "intercept": pi, "r2": pr2}
    half = len(t) // 2
    if len(t) >= 4:
        s_last, _, _ = linear_fit(t[half:], v[half:]) if out["kind"] == "log" else linear_fit(t[half:], np.log(v[half:]))
        saturating = s_last < 0.5 * out["slope"]
    else:
        saturating = False
    mono = is_monotone(v) if len(v) > 1 else False
    out["monotone"] = mono
    out["saturating"] = bool(saturating)
    out["points"] = int(len(v))
    out["divergent"] = bool(mono and out["r2"] > r2_min and out["slope"] > 0 and not saturating and len(v) >= 4)
    return out


def finite_or_none(x):
    return None if x is None or not math.isfinite(x) else float(x)
