"""Constant-coefficient homogeneous differential operators.

An operator ``L(D) = sum_{|a|=m} b_a d^a`` is stored as a map from multi-indices
to coefficient matrices.  Its symbol is ``L(xi) = sum_a b_a xi^a`` (no factors
of ``i``), which is all that the structural checks need.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import yaml
from scipy import optimize
from scipy.special import ndtri
from scipy.stats import qmc

RANK_RTOL = 1e-10


class OperatorError(ValueError):
    """Malformed operator or argument of the wrong shape."""


class NoIdentityError(ArithmeticError):
    """No projection maps exist: the operator is not cocanceling."""

    def __init__(self, residual: float):
        super().__init__(f"sum_a k_a b_a = Id is not solvable (residual {residual:.3e})")
        self.residual = residual


class EllipticityError(ArithmeticError):
    def __init__(self, xi, sigma_min: float):
        xi = np.asarray(xi)
        super().__init__(f"symbol is not injective at xi={xi.tolist()} (sigma_min={sigma_min:.3e})")
        self.xi = xi
        self.sigma_min = sigma_min


# --------------------------------------------------------------------------- multi-indices


@dataclass(frozen=True, order=True)
class MultiIndex:
    exponents: tuple[int, ...]

    def __post_init__(self):
        exps = tuple(int(e) for e in self.exponents)
        if len(exps) < 1:
            raise OperatorError("multi-index needs at least one entry")
        if any(e < 0 for e in exps):
            raise OperatorError(f"negative exponent in multi-index {exps}")
        object.__setattr__(self, "exponents", exps)

    @property
    def dim(self) -> int:
        return len(self.exponents)

    @property
    def order(self) -> int:
        return sum(self.exponents)

    def factorial(self) -> int:
        return math.prod(math.factorial(e) for e in self.exponents)

    def leq(self, other: "MultiIndex") -> bool:
        """Componentwise ``self <= other`` (the dataclass ordering is lexicographic)."""
        return all(a <= b for a, b in zip(self.exponents, other.exponents))

    def __sub__(self, other: "MultiIndex") -> "MultiIndex":
        return MultiIndex(tuple(a - b for a, b in zip(self.exponents, other.exponents)))

    def binom(self, other: "MultiIndex") -> int:
        """Multi-binomial coefficient ``self choose other``."""
        return math.prod(math.comb(a, b) for a, b in zip(self.exponents, other.exponents))

    def monomial(self, x: np.ndarray) -> np.ndarray:
        """``x^a`` evaluated on the trailing axis of ``x``."""
        x = np.asarray(x)
        out = np.ones(x.shape[:-1], dtype=x.dtype if np.iscomplexobj(x) else float)
        for k, e in enumerate(self.exponents):
            if e:
                out = out * x[..., k] ** e
        return out

    def sub_indices(self, strict: bool = False):
        """All ``g <= self``; with ``strict`` the zero index is skipped."""
        for g in itertools.product(*(range(e + 1) for e in self.exponents)):
            if strict and not any(g):
                continue
            yield MultiIndex(g)

    @staticmethod
    def unit(dim: int, k: int, times: int = 1) -> "MultiIndex":
        e = [0] * dim
        e[k] = times
        return MultiIndex(tuple(e))

    @staticmethod
    def all_of_order(dim: int, order: int) -> list["MultiIndex"]:
        out = []
        for combo in itertools.combinations_with_replacement(range(dim), order):
            e = [0] * dim
            for k in combo:
                e[k] += 1
            out.append(MultiIndex(tuple(e)))
        return sorted(out, reverse=True)


def _as_index(key) -> MultiIndex:
    return key if isinstance(key, MultiIndex) else MultiIndex(tuple(key))


# --------------------------------------------------------------------------- operators


@dataclass(frozen=True)
class HomogeneousOperator:
    """Homogeneous operator of order ``order`` from ``C^fiber_in`` to ``C^fiber_out``."""

    dim: int
    order: int
    fiber_in: int
    fiber_out: int
    coeffs: Mapping[MultiIndex, np.ndarray]
    name: str = ""

    def __post_init__(self):
        if self.dim < 1:
            raise OperatorError("dimension must be >= 1")
        if self.order < 1:
            raise OperatorError("order must be >= 1")
        clean: dict[MultiIndex, np.ndarray] = {}
        for key, mat in self.coeffs.items():
            a = _as_index(key)
            if a.dim != self.dim:
                raise OperatorError(f"multi-index {a.exponents} has length != dim={self.dim}")
            if a.order != self.order:
                raise OperatorError(f"multi-index {a.exponents} has order {a.order}, operator order is {self.order}")
            m = np.array(mat, dtype=complex if np.iscomplexobj(mat) else float)
            m = np.atleast_2d(m)
            if m.shape != (self.fiber_out, self.fiber_in):
                raise OperatorError(
                    f"coefficient for {a.exponents} has shape {m.shape}, expected {(self.fiber_out, self.fiber_in)}"
                )
            m.setflags(write=False)
            clean[a] = m
        if not clean or all(not np.any(m) for m in clean.values()):
            raise OperatorError("operator has no nonzero coefficient")
        object.__setattr__(self, "coeffs", dict(sorted(clean.items(), reverse=True)))

    @property
    def keys(self) -> list[MultiIndex]:
        return list(self.coeffs)

    @property
    def is_complex(self) -> bool:
        return any(np.iscomplexobj(m) for m in self.coeffs.values())

    def stacked(self) -> np.ndarray:
        """Coefficient matrices stacked vertically, in key order."""
        return np.vstack(list(self.coeffs.values()))

    def symbol(self, xi) -> np.ndarray:
        return eval_symbol(self, xi)


def eval_symbol(op: HomogeneousOperator, xi) -> np.ndarray:
    """``L(xi) = sum_a b_a xi^a``; ``xi`` may carry leading batch axes."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1:] != (op.dim,):
        raise OperatorError(f"xi has trailing length {xi.shape[-1:]}, operator dim is {op.dim}")
    dtype = complex if op.is_complex else float
    out = np.zeros(xi.shape[:-1] + (op.fiber_out, op.fiber_in), dtype=dtype)
    for a, b in op.coeffs.items():
        out = out + a.monomial(xi)[..., None, None] * b
    return out


# --------------------------------------------------------------------------- subspaces


@dataclass(frozen=True)
class SubspaceBasis:
    matrix: np.ndarray  # orthonormal columns
    tol: float = RANK_RTOL

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def ambient(self) -> int:
        return self.matrix.shape[0]

    def distance(self, v: np.ndarray) -> float:
        """Euclidean distance from ``v`` to the subspace."""
        Q = self.matrix
        return float(np.linalg.norm(v - Q @ (Q.conj().T @ v)))


def nullspace(A: np.ndarray, rtol: float = RANK_RTOL) -> SubspaceBasis:
    A = np.atleast_2d(A)
    _, s, vh = np.linalg.svd(A)
    smax = s[0] if s.size else 0.0
    rank = int(np.sum(s > rtol * smax)) if smax > 0 else 0
    return SubspaceBasis(vh[rank:].conj().T, rtol)


def column_space(A: np.ndarray, rtol: float = RANK_RTOL) -> SubspaceBasis:
    A = np.atleast_2d(A)
    u, s, _ = np.linalg.svd(A)
    smax = s[0] if s.size else 0.0
    rank = int(np.sum(s > rtol * smax)) if smax > 0 else 0
    return SubspaceBasis(u[:, :rank], rtol)


def intersect(U: SubspaceBasis, W: SubspaceBasis, tol: float = 1e-8) -> SubspaceBasis:
    """Intersection of two subspaces given by orthonormal bases."""
    n = U.ambient
    if U.dim == 0 or W.dim == 0:
        return SubspaceBasis(np.zeros((n, 0), dtype=U.matrix.dtype), tol)
    Q, P = U.matrix, W.matrix
    resid = Q - P @ (P.conj().T @ Q)
    _, s, vh = np.linalg.svd(resid)
    s = np.concatenate([s, np.zeros(Q.shape[1] - s.size)])
    coeffs = vh.conj().T[:, s <= tol]
    if coeffs.shape[1] == 0:
        return SubspaceBasis(np.zeros((n, 0), dtype=Q.dtype), tol)
    basis, _ = np.linalg.qr(Q @ coeffs)
    return SubspaceBasis(basis, tol)


def sphere_directions(dim: int, n: int, seed: int = 0, sobol: bool = True) -> np.ndarray:
    """``n`` unit vectors: a scrambled Sobol half and a uniform-random half."""
    rng = np.random.default_rng(seed)
    n_low = n // 2 if sobol else 0
    parts = []
    if n_low:
        with warnings.catch_warnings():
            # prefixes that are not a power of two are fine for direction sampling
            warnings.filterwarnings("ignore", message=".*balance properties.*")
            pts = qmc.Sobol(d=dim, scramble=True, seed=rng).random(n_low)
        parts.append(ndtri(np.clip(pts, 1e-12, 1 - 1e-12)))
    parts.append(rng.standard_normal((n - n_low, dim)))
    v = np.vstack(parts)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


# --------------------------------------------------------------------------- structural checks


@dataclass
class PropertyReport:
    prop: str
    verdict: str  # confirmed | refuted | heuristic_pass | heuristic_fail
    witness: object = None
    evidence: dict = field(default_factory=dict)
    samples_used: int = 0

    def __post_init__(self):
        if self.verdict not in ("confirmed", "refuted", "heuristic_pass", "heuristic_fail"):
            raise ValueError(f"unknown verdict {self.verdict!r}")
        if self.verdict == "refuted" and (self.witness is None or np.size(self._witness_array()) == 0):
            raise ValueError("refuted verdicts need a witness")
        if self.verdict.startswith("heuristic") and self.samples_used <= 0:
            raise ValueError("heuristic verdicts need samples_used > 0")

    def _witness_array(self):
        w = self.witness
        return w.matrix if isinstance(w, SubspaceBasis) else np.asarray(w)

    @property
    def holds(self) -> bool:
        return self.verdict in ("confirmed", "heuristic_pass")

    def to_dict(self) -> dict:
        w = None if self.witness is None else _jsonable(self._witness_array())
        return {
            "property": self.prop,
            "verdict": self.verdict,
            "witness": w,
            "evidence": {k: _jsonable(v) for k, v in self.evidence.items()},
            "samples_used": self.samples_used,
        }


def _jsonable(v):
    if isinstance(v, np.ndarray):
        if np.iscomplexobj(v):
            if np.allclose(v.imag, 0):
                v = v.real
            else:
                return {"re": v.real.tolist(), "im": v.imag.tolist()}
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def cocanceling_check(op: HomogeneousOperator, rtol: float = RANK_RTOL) -> PropertyReport:
    """Exact decision: the intersection of ``ker L(xi)`` over ``xi != 0`` is the
    common nullspace of the coefficient matrices, since ``L(xi) v`` is a
    polynomial in ``xi`` whose coefficients are the ``b_a v``."""
    B = op.stacked()
    ns = nullspace(B, rtol)
    s = np.linalg.svd(B, compute_uv=False)
    evidence = {"sigma_min_stacked": float(s[-1]) if s.size >= op.fiber_in else 0.0, "kernel_dim": ns.dim}
    if ns.dim == 0:
        return PropertyReport("cocanceling", "confirmed", None, evidence)
    return PropertyReport("cocanceling", "refuted", ns, evidence)


def canceling_check(
    op: HomogeneousOperator, n_samples: int = 128, tol: float = RANK_RTOL, seed: int = 0
) -> PropertyReport:
    """Sampled intersection of the images ``A(xi)[E]``.

    A finite sample whose images already meet in ``{0}`` certifies canceling; a
    surviving candidate is only evidence against it.
    """
    if n_samples < op.fiber_out:
        raise OperatorError(f"n_samples={n_samples} < fiber_out={op.fiber_out}")
    dtype = complex if op.is_complex else float
    running = SubspaceBasis(np.eye(op.fiber_out, dtype=dtype), tol)
    dirs = sphere_directions(op.dim, n_samples, seed)
    for i, xi in enumerate(dirs, start=1):
        running = intersect(running, column_space(eval_symbol(op, xi), tol))
        if running.dim == 0:
            return PropertyReport("canceling", "confirmed", None, {"intersection_dim": 0}, samples_used=i)
    fresh = sphere_directions(op.dim, max(16, n_samples // 4), seed + 1, sobol=False)
    worst = 0.0
    for xi in fresh:
        img = column_space(eval_symbol(op, xi), tol)
        for v in running.matrix.T:
            worst = max(worst, img.distance(v))
    evidence = {"intersection_dim": running.dim, "worst_fresh_residual": worst}
    return PropertyReport("canceling", "heuristic_fail", running, evidence, samples_used=n_samples)


def _sigma_min(op: HomogeneousOperator, xi: np.ndarray) -> float:
    if op.fiber_out < op.fiber_in:
        return 0.0
    s = np.linalg.svd(eval_symbol(op, xi), compute_uv=False)
    return float(s[op.fiber_in - 1])


def ellipticity_check(
    op: HomogeneousOperator, n_samples: int = 128, refine: bool = True, tol: float = 1e-8, seed: int = 0
) -> PropertyReport:
    """Smallest singular value of ``A(xi)`` over sampled unit ``xi``.

    Verdicts stay heuristic: sampling cannot certify a strict inequality on the
    whole sphere.  ``tol`` is relative to the largest singular value seen.
    """
    dirs = sphere_directions(op.dim, n_samples, seed)
    sig = np.array([_sigma_min(op, xi) for xi in dirs])
    scale = max(float(np.linalg.norm(eval_symbol(op, xi), 2)) for xi in dirs)
    i = int(np.argmin(sig))
    best_xi, best = dirs[i], float(sig[i])
    n_used = n_samples
    if refine and op.dim > 1 and best > 0:
        res = optimize.minimize(
            lambda v: _sigma_min(op, v / max(np.linalg.norm(v), 1e-300)),
            best_xi,
            method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 400 * op.dim},
        )
        n_used += int(res.nfev)
        if res.fun < best:
            best_xi = res.x / np.linalg.norm(res.x)
            best = float(res.fun)
    evidence = {"sigma_min": best, "argmin_xi": best_xi, "sigma_scale": scale}
    if best > tol * scale:
        return PropertyReport("elliptic", "heuristic_pass", None, evidence, samples_used=n_used)
    kernel = nullspace(eval_symbol(op, best_xi))
    evidence["kernel_at_argmin"] = kernel.matrix
    return PropertyReport("elliptic", "heuristic_fail", best_xi, evidence, samples_used=n_used)


# --------------------------------------------------------------------------- projection maps


@dataclass(frozen=True)
class ProjectionMaps:
    maps: Mapping[MultiIndex, np.ndarray]  # each fiber_in x fiber_out
    residual: float

    def __getitem__(self, key) -> np.ndarray:
        return self.maps[_as_index(key)]


def solve_projection_maps(op: HomogeneousOperator, atol: float = 1e-10) -> ProjectionMaps:
    """Minimal-Frobenius-norm solution of ``sum_a k_a b_a = Id_F``.

    With ``B`` the stacked coefficients, ``K = [k_a ...]`` solves ``K B = I``
    and the pseudo-inverse ``B^+`` is the minimal-norm choice.
    """
    B = op.stacked()
    K = np.linalg.pinv(B, rcond=RANK_RTOL)
    residual = float(np.linalg.norm(K @ B - np.eye(op.fiber_in), 2))
    if residual > atol:
        raise NoIdentityError(residual)
    V = op.fiber_out
    maps = {a: K[:, i * V : (i + 1) * V] for i, a in enumerate(op.keys)}
    return ProjectionMaps(maps, residual)


def leibniz_constant(op: HomogeneousOperator, kmaps: ProjectionMaps) -> tuple[float, list[float]]:
    """Constant ``C`` with ``|T_phi(x)| <= C sum_j |x|^j |D^j phi(x)|``.

    ``C_j = sum_a |b_a| sum_{g<=a, |g|=j} binom(a,g) sum_{b>=a-g} |k_b|/(b-a+g)!``
    bounds the order-j part (each ``|x^{b-a+g}| <= |x|^j``); ``C`` is the max.
    """
    m = op.order
    per_order = []
    knorm = {a: np.linalg.norm(k, 2) for a, k in kmaps.maps.items()}
    for j in range(1, m + 1):
        cj = 0.0
        for a, b in op.coeffs.items():
            bn = np.linalg.norm(b, 2)
            for g in a.sub_indices(strict=True):
                if g.order != j:
                    continue
                eta = a - g
                inner = sum(knorm[beta] / (beta - eta).factorial() for beta in op.keys if eta.leq(beta))
                cj += bn * a.binom(g) * inner
        per_order.append(float(cj))
    return max(per_order), per_order


def p_derivative(op: HomogeneousOperator, kmaps: ProjectionMaps, eta: MultiIndex, x: np.ndarray) -> np.ndarray:
    """``d^eta P(x)`` for ``P(x) = sum_b x^b / b! k_b^*``; shape ``(..., V, F)``."""
    x = np.asarray(x, dtype=float)
    out = 0.0
    for beta, k in kmaps.maps.items():
        if eta.leq(beta):
            rest = beta - eta
            out = out + (rest.monomial(x) / rest.factorial())[..., None, None] * k.conj().T
    if np.isscalar(out):
        return np.zeros(x.shape[:-1] + (op.fiber_out, op.fiber_in))
    return out


def derivative_norm(phi, j: int, x: np.ndarray) -> np.ndarray:
    """``|D^j phi(x)|``: Euclidean norm over all distinct multi-indices of order j."""
    acc = 0.0
    for g in MultiIndex.all_of_order(phi.dim, j):
        acc = acc + np.sum(np.abs(phi.derivative(g, x)) ** 2, axis=-1)
    return np.sqrt(acc)


def tphi_eval(op: HomogeneousOperator, kmaps: ProjectionMaps, phi, x) -> tuple[np.ndarray, np.ndarray, float]:
    """Leibniz remainder ``T_phi(x) = L*(D)(P) phi - L*(D)(P phi)`` and its majorant.

    Returns ``(T, majorant, C)`` with ``T`` of shape ``(..., F)``.
    """
    m = op.order
    if getattr(phi, "max_order", m) < m:
        raise OperatorError(f"field provides derivatives up to order {phi.max_order}, need {m}")
    if phi.fiber != op.fiber_in:
        raise OperatorError(f"field fiber {phi.fiber} != operator fiber_in {op.fiber_in}")
    x = np.asarray(x, dtype=float)
    T = 0.0
    dphi = {}
    for a, b in op.coeffs.items():
        bh = b.conj().T
        for g in a.sub_indices(strict=True):
            if g not in dphi:
                dphi[g] = phi.derivative(g, x)
            dP = p_derivative(op, kmaps, a - g, x)
            term = np.einsum("...vf,...f->...v", dP, dphi[g])
            T = T - a.binom(g) * np.einsum("fv,...v->...f", bh, term)
    C, _ = leibniz_constant(op, kmaps)
    r = np.linalg.norm(x, axis=-1)
    major = sum(r**j * derivative_norm(phi, j, x) for j in range(1, m + 1))
    return np.asarray(T), C * major, C


# --------------------------------------------------------------------------- elliptic symbol inverse


def eval_H_symbol(A: HomogeneousOperator, ell: float, xi, tol: float = 1e-10) -> np.ndarray:
    """``H(xi) = |xi|^(nu-ell) (A* A)^{-1}(xi) A*(xi)``, homogeneous of degree ``-ell``."""
    xi = np.asarray(xi, dtype=float)
    if not 0 < ell < A.dim:
        raise OperatorError(f"ell={ell} outside (0, {A.dim})")
    Ax = eval_symbol(A, xi)
    s = np.linalg.svd(Ax, compute_uv=False)
    smin = float(s[A.fiber_in - 1]) if A.fiber_out >= A.fiber_in else 0.0
    if smin <= tol * max(float(s[0]), 1e-300):
        raise EllipticityError(xi, smin)
    Ah = Ax.conj().T
    return np.linalg.norm(xi) ** (A.order - ell) * np.linalg.solve(Ah @ Ax, Ah)


# --------------------------------------------------------------------------- built-ins and files


def _cross_matrix(a: np.ndarray) -> np.ndarray:
    return np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]], dtype=float)


def make_builtin(name: str, dim: int) -> HomogeneousOperator:
    """Divergence, curl, gradient or Laplacian on ``R^dim`` with integer coefficients.

    ``curl`` on ``R^3`` is the cross product ``f -> grad x f``; otherwise it is
    the exterior derivative of a 1-form, ``(df)_ij = d_i f_j - d_j f_i`` for ``i<j``.
    """
    N = int(dim)
    if N < 1:
        raise OperatorError(f"unsupported dimension {dim}")
    E = np.eye(N)
    if name == "divergence":
        coeffs = {MultiIndex.unit(N, j): E[j][None, :] for j in range(N)}
        return HomogeneousOperator(N, 1, N, 1, coeffs, name="divergence")
    if name == "gradient":
        coeffs = {MultiIndex.unit(N, j): E[j][:, None] for j in range(N)}
        return HomogeneousOperator(N, 1, 1, N, coeffs, name="gradient")
    if name == "laplacian":
        coeffs = {MultiIndex.unit(N, j, 2): np.ones((1, 1)) for j in range(N)}
        return HomogeneousOperator(N, 2, 1, 1, coeffs, name="laplacian")
    if name == "curl":
        if N < 2:
            raise OperatorError("curl needs dim >= 2")
        if N == 3:
            coeffs = {MultiIndex.unit(3, j): _cross_matrix(E[j]) for j in range(3)}
            return HomogeneousOperator(3, 1, 3, 3, coeffs, name="curl")
        pairs = list(itertools.combinations(range(N), 2))
        coeffs = {}
        for k in range(N):
            b = np.zeros((len(pairs), N))
            for row, (i, j) in enumerate(pairs):
                if k == i:
                    b[row, j] += 1
                if k == j:
                    b[row, i] -= 1
            coeffs[MultiIndex.unit(N, k)] = b
        return HomogeneousOperator(N, 1, N, len(pairs), coeffs, name="curl")
    raise OperatorError(f"unsupported operator {name!r} in dimension {N}")


def operator_from_dict(spec: Mapping) -> HomogeneousOperator:
    """Build an operator from a parsed definition.

    Either ``{builtin: name, dim: N}`` or ``{dim, order, fiber_in, fiber_out,
    coeffs: [[multi_index, row, col, re, im], ...]}``.
    """
    if "builtin" in spec:
        return make_builtin(spec["builtin"], spec.get("dim", 2))
    try:
        N, m = int(spec["dim"]), int(spec["order"])
        F, V = int(spec["fiber_in"]), int(spec["fiber_out"])
        entries = spec["coeffs"]
    except KeyError as exc:
        raise OperatorError(f"operator definition is missing key {exc.args[0]!r}") from None
    complex_ = any(len(e) > 4 and float(e[4]) != 0 for e in entries)
    coeffs: dict[MultiIndex, np.ndarray] = {}
    for entry in entries:
        if len(entry) not in (4, 5):
            raise OperatorError(f"coefficient entry {entry} is not (multi_index, row, col, re[, im])")
        idx, row, col, re = entry[:4]
        im = entry[4] if len(entry) == 5 else 0.0
        a = MultiIndex(tuple(idx))
        mat = coeffs.setdefault(a, np.zeros((V, F), dtype=complex if complex_ else float))
        mat[int(row), int(col)] += complex(re, im) if complex_ else float(re)
    return HomogeneousOperator(N, m, F, V, coeffs, name=str(spec.get("name", "")))


def operator_to_dict(op: HomogeneousOperator) -> dict:
    rows = []
    for a, b in op.coeffs.items():
        for (r, c), val in np.ndenumerate(b):
            if val != 0:
                rows.append([list(a.exponents), r, c, float(np.real(val)), float(np.imag(val))])
    return {
        "name": op.name,
        "dim": op.dim,
        "order": op.order,
        "fiber_in": op.fiber_in,
        "fiber_out": op.fiber_out,
        "coeffs": rows,
    }


def load_operator(path) -> HomogeneousOperator:
    with open(path) as fh:
        return operator_from_dict(yaml.safe_load(fh))
