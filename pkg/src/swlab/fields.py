"""Closed-form test fields, scaling families and band-limited fields.

A ``ClosedFormField`` is a finite sum of terms.  Each term holds sympy
expressions in unit coordinates ``z = (x - center) / scales``, an amplitude per
fibre component and an optional support radius in ``z``.  Derivatives are
symbolic, lambdified once and cached.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace

import numpy as np
import sympy as sp
from scipy import fft as sfft
from scipy import integrate

from . import quad
from .opalg import HomogeneousOperator, MultiIndex


class FieldError(ValueError):
    pass


def zsyms(N: int) -> tuple[sp.Symbol, ...]:
    return sp.symbols(f"z0:{N}", real=True)


@dataclass(frozen=True)
class Term:
    exprs: tuple  # one sympy expression per fibre component
    center: tuple
    scales: tuple
    amps: tuple
    support: float | None = None

    @property
    def dim(self) -> int:
        return len(self.center)

    def extent(self) -> float:
        if self.support is None:
            return math.inf
        return float(np.linalg.norm(self.center) + self.support * max(self.scales))


@functools.lru_cache(maxsize=512)
def _compiled(exprs: tuple, N: int, gamma: tuple):
    z = zsyms(N)
    out = []
    for e in exprs:
        d = e
        for k, g in enumerate(gamma):
            if g:
                d = sp.diff(d, z[k], g)
        out.append(d)
    fns = []
    for d in out:
        if d.is_zero:
            fns.append(None)
        else:
            fns.append(sp.lambdify(z, d, "numpy", cse=True))
    return fns


@dataclass(frozen=True)
class ClosedFormField:
    dim: int
    fiber: int
    terms: tuple
    family: str = "custom"
    params: dict = field(default_factory=dict, compare=False)
    max_order: int = 6

    def __post_init__(self):
        for t in self.terms:
            if t.dim != self.dim or len(t.exprs) != self.fiber or len(t.amps) != self.fiber:
                raise FieldError("term shape does not match field dim/fiber")

    def extent(self) -> float:
        return max((t.extent() for t in self.terms), default=0.0)

    def derivative(self, gamma, x) -> np.ndarray:
        """``d^gamma f(x)`` for ``x`` of shape ``(..., N)``; returns ``(..., fiber)``."""
        if isinstance(gamma, MultiIndex):
            gamma = gamma.exponents
        gamma = tuple(int(g) for g in gamma)
        if len(gamma) != self.dim:
            raise FieldError(f"multi-index length {len(gamma)} != dim {self.dim}")
        if sum(gamma) > self.max_order:
            raise FieldError(f"derivative order {sum(gamma)} exceeds max_order {self.max_order}")
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise FieldError(f"points have trailing length {x.shape[-1]}, need {self.dim}")
        out = np.zeros(x.shape[:-1] + (self.fiber,))
        for t in self.terms:
            z = (x - np.asarray(t.center)) / np.asarray(t.scales)
            if t.support is not None:
                mask = np.sum(z * z, axis=-1) < t.support**2
                zs = z[mask]
            else:
                mask = None
                zs = z.reshape(-1, self.dim)
            if zs.shape[0] == 0:
                continue
            fac = float(np.prod(np.asarray(t.scales, dtype=float) ** (-np.asarray(gamma))))
            fns = _compiled(t.exprs, self.dim, gamma)
            cols = np.zeros((zs.shape[0], self.fiber))
            args = [zs[:, k] for k in range(self.dim)]
            for i, fn in enumerate(fns):
                if fn is None or t.amps[i] == 0:
                    continue
                with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                    cols[:, i] = t.amps[i] * fac * np.broadcast_to(fn(*args), (zs.shape[0],))
            if mask is None:
                out += cols.reshape(out.shape)
            else:
                out[mask] += cols
        return out

    def value(self, x) -> np.ndarray:
        return self.derivative((0,) * self.dim, x)

    def __call__(self, x) -> np.ndarray:
        return self.value(x)

    def __add__(self, other: "ClosedFormField") -> "ClosedFormField":
        if (self.dim, self.fiber) != (other.dim, other.fiber):
            raise FieldError("cannot add fields of different shape")
        return ClosedFormField(self.dim, self.fiber, self.terms + other.terms, "sum", {},
                               min(self.max_order, other.max_order))


# --------------------------------------------------------------------------- bumps and families


def _bump_expr(N: int):
    z = zsyms(N)
    r2 = sum(v * v for v in z)
    return sp.exp(-1 / (1 - r2))


@functools.lru_cache(maxsize=8)
def bump_mass(N: int) -> float:
    """``int exp(-1/(1-|z|^2)) dz`` over the unit ball."""
    val, _ = integrate.quad(lambda r: math.exp(-1 / (1 - r * r)) * r ** (N - 1) if r < 1 else 0.0,
                            0, 1, epsabs=0, epsrel=1e-13, limit=200)
    return quad.sphere_area(N) * val


def make_bump(N: int, center=None, radius: float = 1.0, normalize: bool = True) -> ClosedFormField:
    """Smooth bump supported in ``B(center, radius)``; unit mass if ``normalize``."""
    if radius <= 0:
        raise FieldError("radius must be positive")
    c = tuple(float(v) for v in (np.zeros(N) if center is None else center))
    amp = 1 / (bump_mass(N) * radius**N) if normalize else 1.0
    t = Term((_bump_expr(N),), c, (float(radius),) * N, (amp,), 1.0)
    return ClosedFormField(N, 1, (t,), "bump", {"center": list(c), "radius": radius})


def rescale(f: ClosedFormField, eps: float, mass_preserving: bool = True) -> ClosedFormField:
    """``eps^-N f(x/eps)`` (or ``f(x/eps)``) as a closed-form field."""
    if eps <= 0:
        raise FieldError("scale must be positive")
    amp_fac = eps ** (-f.dim) if mass_preserving else 1.0
    terms = tuple(
        replace(t, center=tuple(eps * c for c in t.center), scales=tuple(eps * s for s in t.scales),
                amps=tuple(a * amp_fac for a in t.amps))
        for t in f.terms
    )
    return ClosedFormField(f.dim, f.fiber, terms, f.family, dict(f.params), f.max_order)


def mollifier_family(phi: ClosedFormField, eps: float) -> ClosedFormField:
    out = rescale(phi, eps)
    return replace(out, family="mollifier", params={"eps": eps})


def divfree_family(phi: ClosedFormField, eps: float, amplitude: float = 1.0) -> ClosedFormField:
    """Rotated gradient of ``amplitude * phi_eps``: ``(d_2 g, -d_1 g, 0, ...)``."""
    if phi.fiber != 1 or phi.dim < 2:
        raise FieldError("divfree_family needs a scalar potential in dim >= 2")
    N = phi.dim
    z = zsyms(N)
    terms = []
    for t in rescale(phi, eps).terms:
        g = t.exprs[0]
        a = amplitude * t.amps[0]
        exprs = (sp.diff(g, z[1]), -sp.diff(g, z[0])) + (sp.Integer(0),) * (N - 2)
        amps = (a / t.scales[1], a / t.scales[0]) + (0.0,) * (N - 2)
        terms.append(Term(exprs, t.center, t.scales, amps, t.support))
    return ClosedFormField(N, N, tuple(terms), "divfree", {"eps": eps}, phi.max_order - 1)


def gradient_field(phi: ClosedFormField) -> ClosedFormField:
    """``grad phi`` as an ``N``-component field (curl-free)."""
    if phi.fiber != 1:
        raise FieldError("gradient_field needs a scalar field")
    N = phi.dim
    z = zsyms(N)
    terms = []
    for t in phi.terms:
        g = t.exprs[0]
        exprs = tuple(sp.diff(g, z[k]) for k in range(N))
        amps = tuple(t.amps[0] / t.scales[k] for k in range(N))
        terms.append(Term(exprs, t.center, t.scales, amps, t.support))
    return ClosedFormField(N, N, tuple(terms), "gradient", dict(phi.params), phi.max_order - 1)


def polynomial_field(N: int, fiber: int, degree: int, rng: np.random.Generator, rational: bool = True) -> ClosedFormField:
    """Random polynomial field of total degree ``<= degree`` with rational coefficients."""
    z = zsyms(N)
    exprs = []
    for _ in range(fiber):
        e = sp.Integer(0)
        for m in range(degree + 1):
            for mi in MultiIndex.all_of_order(N, m):
                c = sp.Rational(int(rng.integers(-9, 10)), int(rng.integers(1, 5))) if rational else float(rng.normal())
                e += c * sp.Mul(*[z[k] ** p for k, p in enumerate(mi.exponents)])
        exprs.append(e)
    t = Term(tuple(exprs), (0.0,) * N, (1.0,) * N, (1.0,) * fiber, None)
    return ClosedFormField(N, fiber, (t,), "polynomial", {"degree": degree}, max_order=12)


def poly_bump_field(N: int, fiber: int, degree: int, rng: np.random.Generator, center=None, radius: float = 1.0) -> ClosedFormField:
    """Polynomial times a bump: a compactly supported test field."""
    poly = polynomial_field(N, fiber, degree, rng).terms[0]
    b = _bump_expr(N)
    c = tuple(float(v) for v in (np.zeros(N) if center is None else center))
    t = Term(tuple(e * b for e in poly.exprs), c, (float(radius),) * N, (1.0,) * fiber, 1.0)
    return ClosedFormField(N, fiber, (t,), "poly_bump", {"degree": degree, "radius": radius})


def random_divfree_field(N: int, rng: np.random.Generator, n_bumps: int = 3, spread: float = 2.0) -> ClosedFormField:
    """Sum of rotated gradients of randomly placed and scaled bumps."""
    out = None
    for _ in range(n_bumps):
        c = rng.uniform(-spread, spread, N)
        r = float(rng.uniform(0.5, 1.5))
        f = divfree_family(make_bump(N, c, r), 1.0, amplitude=float(rng.normal()))
        out = f if out is None else out + f
    return replace(out, family="divfree", params={"n_bumps": n_bumps})


def apply_operator(op: HomogeneousOperator, f: ClosedFormField, x) -> np.ndarray:
    """``L(D) f`` at points ``x``: ``sum_alpha b_alpha d^alpha f``."""
    if (f.dim, f.fiber) != (op.dim, op.fiber_in):
        raise FieldError("field shape does not match operator")
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1] + (op.fiber_out,), dtype=complex if op.is_complex else float)
    for alpha, b in op.coeffs.items():
        out = out + f.derivative(alpha, x) @ np.asarray(b).T
    return out


def constraint_residual(op: HomogeneousOperator, f: ClosedFormField, points) -> float:
    """``max|L(D) f| / max|D^m f|`` over the given points."""
    x = np.asarray(points, dtype=float).reshape(-1, f.dim)
    num = np.max(np.abs(apply_operator(op, f, x)))
    den = 0.0
    for mi in MultiIndex.all_of_order(f.dim, op.order):
        den = max(den, float(np.max(np.abs(f.derivative(mi, x)))))
    if den == 0:
        return 0.0 if num == 0 else math.inf
    return float(num / den)


# --------------------------------------------------------------------------- band-limited fields


def smooth_step(t):
    """0 for t <= 0, 1 for t >= 1, smooth in between."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(t > 0, np.exp(-1 / np.where(t > 0, t, 1)), 0.0)
        b = np.where(t < 1, np.exp(-1 / np.where(t < 1, 1 - t, 1)), 0.0)
    return a / (a + b)


def plateau(rho):
    """Radial profile of the low-pass symbol: 1 on ``|xi| <= 1``, 0 on ``|xi| >= 2``."""
    return smooth_step(2 - np.asarray(rho, dtype=float))


@dataclass
class BandLimitedField:
    grid: quad.GridSpec
    values: np.ndarray  # grid.shape + (fiber,)
    lam: float
    band: tuple  # annulus (low, high) in frequency containing the spectrum
    profile: np.ndarray | None = None  # scalar p_lambda on the nodes

    def samples(self) -> quad.FieldSamples:
        return quad.FieldSamples(self.grid, self.values)

    def spectrum(self, component: int = 0) -> np.ndarray:
        return sfft.fftn(self.values[..., component])


def check_band(grid: quad.GridSpec, lam: float) -> None:
    if lam < 1:
        raise FieldError(f"lambda must be >= 1, got {lam}")
    nyq = 1 / (2 * grid.h)
    if 2 * lam > nyq:
        raise FieldError(f"lambda={lam} too large for grid: band edge {2 * lam} beyond Nyquist {nyq}")
    dxi = 1 / (2 * grid.L)
    if lam > 1 and 1 / lam < 4 * dxi:
        raise FieldError(f"lambda={lam} too large for box: inner band edge {1 / lam} vs spacing {dxi}")


def _from_multiplier(grid: quad.GridSpec, mult: np.ndarray) -> np.ndarray:
    """Samples of the function whose transform is the radial ``mult``, origin at node n/2."""
    sign = (-1.0) ** np.arange(grid.n)  # exp(-2 pi i L xi_k) = (-1)^k
    phase = functools.reduce(np.multiply.outer, [sign] * grid.dim) if grid.dim > 1 else sign
    return sfft.ifftn(mult * phase).real / grid.cell_volume


def psi_samples(grid: quad.GridSpec) -> np.ndarray:
    """Spatial ``psi`` on the grid: inverse transform of the plateau multiplier."""
    rho = np.linalg.norm(grid.freq_mesh(), axis=-1)
    return _from_multiplier(grid, plateau(rho))


@functools.lru_cache(maxsize=8)
def psi_l1(grid: quad.GridSpec) -> float:
    return float(np.sum(np.abs(psi_samples(grid))) * grid.cell_volume)


def p_lambda_samples(grid: quad.GridSpec, lam: float) -> np.ndarray:
    """``lam^N psi(lam x) - lam^-N psi(x/lam)``; transform ``psi_hat(xi/lam) - psi_hat(lam xi)``."""
    check_band(grid, lam)
    rho = np.linalg.norm(grid.freq_mesh(), axis=-1)
    return _from_multiplier(grid, plateau(rho / lam) - plateau(rho * lam))


def p_lambda_family(grid: quad.GridSpec, lam: float, witness=None) -> BandLimitedField:
    """``u_lambda = p_lambda * witness`` (constant vector), spectrum in ``1/lam <= |xi| <= 2 lam``."""
    p = p_lambda_samples(grid, lam)
    f = np.ones(1) if witness is None else np.asarray(witness, dtype=float).reshape(-1)
    return BandLimitedField(grid, p[..., None] * f, lam, (1 / lam, 2 * lam), profile=p)


# radial realisation, for lambda beyond what a 2-D grid can hold


PSI_CUTOFF = 60.0


def psi_radial(r, N: int, n_nodes: int = 400) -> np.ndarray:
    """``psi(r)`` from the Hankel transform of the plateau on ``[0, 2]``.

    Set to 0 beyond ``PSI_CUTOFF`` where ``|psi| < 1e-13`` and the fixed
    Gauss rule stops resolving the Bessel oscillation.
    """
    from scipy.special import jv

    r = np.atleast_1d(np.asarray(r, dtype=float))
    t, w = np.polynomial.legendre.leggauss(n_nodes)
    rho = 1 + t  # [0, 2]
    nu = N / 2 - 1
    prof = plateau(rho) * rho ** (N / 2)
    out = np.empty_like(r)
    small = r < 1e-8
    out[r > PSI_CUTOFF] = 0.0
    big = np.flatnonzero(~small & (r <= PSI_CUTOFF))
    for s in range(0, len(big), 4096):
        idx = big[s : s + 4096]
        arg = 2 * np.pi * np.outer(r[idx], rho)
        out[idx] = 2 * np.pi * r[idx] ** (-nu) * (jv(nu, arg) @ (w * prof))
    if np.any(small):
        out[small] = quad.sphere_area(N) * np.sum(w * plateau(rho) * rho ** (N - 1))
    return out


def p_lambda_radial(r, N: int, lam: float) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return lam**N * psi_radial(lam * r, N) - lam ** (-N) * psi_radial(r / lam, N)


def radial_l1(profile, N: int, r_min: float = 1e-5, r_max: float = PSI_CUTOFF, n_r: int = 40000) -> float:
    """``|S^{N-1}| int |g(r)| r^(N-1) dr`` on a log grid, for a rapidly decaying ``g``."""
    t = np.linspace(math.log(r_min), math.log(r_max), n_r)
    r = np.exp(t)
    vals = np.abs(profile(r)) * r**N
    head = abs(profile(np.array([r_min]))[0]) * r_min**N / N
    return float(quad.sphere_area(N) * (integrate.simpson(vals, x=t) + head))


G_CUTOFF = 30.0


@functools.lru_cache(maxsize=8)
def _psi_potential_table(N: int, ell: float, n_nodes: int = 2000, n_r: int = 3000):
    from scipy.interpolate import CubicSpline
    from scipy.special import jv, roots_jacobi

    nu = N / 2 - 1
    b = N - 1 - ell
    x, w = roots_jacobi(n_nodes, 0.0, b)
    rho = 1 + x  # [0, 2], weight rho^b
    r = np.geomspace(1e-6, G_CUTOFF, n_r)
    vals = np.empty_like(r)
    base = w * plateau(rho) * rho ** (-nu)
    for s in range(0, n_r, 256):
        rs = r[s : s + 256]
        vals[s : s + 256] = 2 * np.pi * rs ** (-nu) * (jv(nu, 2 * np.pi * np.outer(rs, rho)) @ base)
    return CubicSpline(np.log(r), vals), float(vals[0])


def psi_potential_radial(r, N: int, ell: float) -> np.ndarray:
    """``I_ell psi`` at radius ``r`` via the Hankel transform of ``|xi|^-ell psi_hat``.

    Beyond ``G_CUTOFF`` the far-field law ``gamma r^(ell-N)`` is used; the
    difference is the transform of a smooth symbol and decays faster than any power.
    """
    spline, g0 = _psi_potential_table(N, float(ell))
    r = np.asarray(r, dtype=float)
    out = np.empty_like(r)
    lo = r < 1e-6
    hi = r > G_CUTOFF
    mid = ~(lo | hi)
    out[lo] = g0
    out[mid] = spline(np.log(r[mid]))
    out[hi] = quad.riesz_gamma(N, ell) * r[hi] ** (ell - N)
    return out


def p_lambda_potential_radial(r, N: int, ell: float, lam: float) -> np.ndarray:
    """``I_ell p_lambda(r) = lam^(N-ell) G(lam r) - lam^(ell-N) G(r/lam)`` with ``G = I_ell psi``."""
    r = np.asarray(r, dtype=float)
    return lam ** (N - ell) * psi_potential_radial(lam * r, N, ell) - lam ** (ell - N) * psi_potential_radial(r / lam, N, ell)


def riesz_system_field(u: quad.FieldSamples) -> tuple[quad.FieldSamples, float]:
    """``(R_1 u, ..., R_N u)`` and its relative curl residual."""
    comps = [quad.riesz_transform(u, j).values[..., 0] for j in range(u.grid.dim)]
    F = np.stack(comps, -1)
    g = u.grid
    num, den = 0.0, 0.0
    for i in range(g.dim):
        for j in range(g.dim):
            dij = quad.spectral_derivative(F[..., j], g, i)
            den = max(den, float(np.max(np.abs(dij))))
            if i < j:
                dji = quad.spectral_derivative(F[..., i], g, j)
                num = max(num, float(np.max(np.abs(dij - dji))))
    return quad.FieldSamples(g, F), (num / den if den else 0.0)


def field_from_dict(spec: dict) -> ClosedFormField:
    """Build a field from a config mapping (``kind`` = bump | mollifier | divfree)."""
    try:
        kind = spec["kind"]
        N = int(spec["dim"])
    except KeyError as e:
        raise FieldError(f"field config missing key {e.args[0]!r}") from None
    base = make_bump(N, spec.get("center"), float(spec.get("radius", 1.0)), bool(spec.get("normalize", True)))
    if kind == "bump":
        return base
    eps = float(spec.get("eps", 1.0))
    if kind == "mollifier":
        return mollifier_family(base, eps)
    if kind == "divfree":
        return divfree_family(base, eps, float(spec.get("amplitude", 1.0)))
    raise FieldError(f"unknown field kind {kind!r}")
