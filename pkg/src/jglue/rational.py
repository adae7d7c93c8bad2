"""Based holomorphic maps S^2 -> P^n as tuples of monic polynomials.

A degree-k based map is stored exactly as its n+1 monic components, so root
divisors, affine reparametrization, and disk-based stabilization are algebra
on coefficients rather than anything numerical.  Companion-matrix roots with
a Newton polish connect polynomials to divisors; an exact Gaussian-integer
resultant is available for integer inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .projective import ProjectivePoint, canonicalize

_COMMON_ROOT_TOL = 1e-9


def _as_complex_tuple(values) -> tuple:
    return tuple(complex(v) for v in values)


@dataclass(frozen=True)
class MonicPolynomial:
    """Monic polynomial held by its ascending non-leading coefficients.

    coefficients[j] multiplies z^j; the z^degree coefficient is an implicit 1,
    so the empty tuple is the constant polynomial 1.
    """

    coefficients: tuple

    def __post_init__(self):
        object.__setattr__(
            self, "coefficients", _as_complex_tuple(self.coefficients)
        )

    @property
    def degree(self) -> int:
        return len(self.coefficients)

    def descending(self) -> np.ndarray:
        return np.concatenate(
            ([1.0 + 0.0j], np.asarray(self.coefficients[::-1], dtype=complex))
        )

    def eval_many(self, z):
        """Horner evaluation, vectorized."""
        z = np.asarray(z, dtype=complex)
        out = np.ones_like(z)
        for c in reversed(self.coefficients):
            out = out * z + c
        return out

    def derivative_eval_many(self, z):
        z = np.asarray(z, dtype=complex)
        k = self.degree
        out = np.full_like(z, k, dtype=complex)
        for j in range(k - 1, 0, -1):
            out = out * z + j * self.coefficients[j]
        return out if k > 0 else np.zeros_like(z)

    def __call__(self, z):
        return complex(self.eval_many(np.asarray([z], dtype=complex))[0])

    def roots(self) -> "RootDivisor":
        if self.degree == 0:
            return RootDivisor(())
        r = np.roots(self.descending()).astype(complex)
        # one Newton step against the exact coefficients, kept only when it
        # actually shrinks the residual
        pr = self.eval_many(r)
        dr = self.derivative_eval_many(r)
        safe = np.abs(dr) > 1e-30
        cand = r.copy()
        cand[safe] -= pr[safe] / dr[safe]
        better = np.abs(self.eval_many(cand)) < np.abs(pr)
        r = np.where(better, cand, r)
        return RootDivisor(tuple(r))

    @classmethod
    def from_roots(cls, roots) -> "MonicPolynomial":
        roots = [complex(r) for r in roots]
        if not roots:
            return cls(())
        desc = np.poly(np.asarray(roots, dtype=complex))
        return cls(tuple(desc[-1:0:-1]))


@dataclass(frozen=True)
class RootDivisor:
    """Multiset of complex roots, canonically ordered."""

    roots: tuple

    def __post_init__(self):
        rs = sorted(_as_complex_tuple(self.roots), key=lambda c: (c.real, c.imag))
        object.__setattr__(self, "roots", tuple(rs))

    @property
    def size(self) -> int:
        return len(self.roots)

    def polynomial(self) -> MonicPolynomial:
        return MonicPolynomial.from_roots(self.roots)

    def translated_scaled(self, center, scale) -> "RootDivisor":
        return RootDivisor(
            tuple(complex(center) + complex(scale) * r for r in self.roots)
        )

    def union(self, other: "RootDivisor") -> "RootDivisor":
        return RootDivisor(self.roots + other.roots)


@dataclass(frozen=True)
class RationalMap:
    """Based map [f_0 : ... : f_n] of equal-degree monic components.

    The common leading coefficients force value [1:...:1] at infinity; the
    constructor rejects component tuples sharing a root.
    """

    components: tuple

    def __post_init__(self):
        comps = tuple(
            c if isinstance(c, MonicPolynomial) else MonicPolynomial(tuple(c))
            for c in self.components
        )
        if len(comps) < 2:
            raise ValueError("need at least two components")
        k = comps[0].degree
        if any(c.degree != k for c in comps):
            raise ValueError("components must share one degree")
        object.__setattr__(self, "components", comps)
        if k > 0:
            for r in comps[0].roots().roots:
                others = max(
                    abs(c(r)) for c in comps[1:]
                )
                if others <= _COMMON_ROOT_TOL:
                    raise ValueError("components share a common root")

    @property
    def degree(self) -> int:
        return self.components[0].degree

    @property
    def n(self) -> int:
        return len(self.components) - 1

    def divisors(self) -> tuple:
        return tuple(c.roots() for c in self.components)

    def eval_homogeneous_many(self, z):
        """Canonical homogeneous values, (m, n+1); NaN/inf z means infinity."""
        z = np.asarray(z, dtype=complex)
        flat = z.reshape(-1)
        out = np.empty((flat.size, len(self.components)), dtype=complex)
        finite = np.isfinite(flat.real) & np.isfinite(flat.imag)
        near = finite & (np.abs(flat) <= 1.0)
        far = finite & ~near
        if np.any(near):
            for i, c in enumerate(self.components):
                out[near, i] = c.eval_many(flat[near])
        if np.any(far):
            w = 1.0 / flat[far]
            for i, c in enumerate(self.components):
                out[far, i] = _reversed_eval(c, w)
        if np.any(~finite):
            out[~finite] = 1.0
        return canonicalize(out)

    def at_points(self, z, chart=None):
        """Sampling interface: canonical homogeneous values at z.

        chart 0 reads z as the affine coordinate, chart 1 as its reciprocal
        (so 0 in chart 1 is the base point at infinity).
        """
        z = np.asarray(z, dtype=complex)
        if chart in (None, 0):
            return self.eval_homogeneous_many(z)
        flat = z.reshape(-1)
        out = np.empty((flat.size, len(self.components)), dtype=complex)
        for i, c in enumerate(self.components):
            out[:, i] = _reversed_eval(c, flat)
        return canonicalize(out)


def _reversed_eval(p: MonicPolynomial, w):
    """w^k p(1/w), the reversed polynomial 1 + c_{k-1} w + ... + c_0 w^k.

    Horner from the w^k end keeps the value exactly 1 at w = 0.
    """
    w = np.asarray(w, dtype=complex)
    if p.degree == 0:
        return np.ones_like(w)
    acc = np.full_like(w, p.coefficients[0])
    for c in p.coefficients[1:]:
        acc = acc * w + c
    return acc * w + 1.0


INFINITY = complex(np.inf, 0.0)


def eval_map(u: RationalMap, z) -> ProjectivePoint:
    """Value of u at an extended complex number; infinity hits [1:...:1]."""
    zc = complex(z)
    h = u.eval_homogeneous_many(np.array([zc]))[0]
    if u.n == 2:
        return ProjectivePoint(h)
    return h


def roots(p: MonicPolynomial) -> RootDivisor:
    return p.roots()


def from_roots(d) -> MonicPolynomial:
    if isinstance(d, RootDivisor):
        return d.polynomial()
    return MonicPolynomial.from_roots(d)


def mobius_act(u: RationalMap, a, b) -> RationalMap:
    """Precompose with z -> a z + b and renormalize to monic components."""
    a = complex(a)
    b = complex(b)
    if a == 0:
        raise ValueError("affine reparametrization needs nonzero scale")
    if a == 1.0 and b == 0.0:
        return u
    k = u.degree
    scale = a**k
    new_comps = []
    for comp in u.components:
        desc = comp.descending()
        acc = np.array([desc[0]], dtype=complex)
        for d in desc[1:]:
            shifted = np.zeros(len(acc) + 1, dtype=complex)
            shifted[:-1] += a * acc
            shifted[1:] += b * acc
            shifted[-1] += d
            acc = shifted
        acc = acc / scale
        new_comps.append(MonicPolynomial(tuple(acc[-1:0:-1])))
    return RationalMap(tuple(new_comps))


def segal_stabilize(u: RationalMap, v: RationalMap, mu) -> RationalMap:
    """Disk-pair stabilization: degree k + 1 map from (v, u) and two disks.

    Component i of the output has root divisor (first disk applied to v's
    component-i roots) union (second disk applied to u's); mu is anything
    with a two-entry .disks of (center, radius) pairs.
    """
    if v.degree != 1:
        raise ValueError("stabilization inserts a degree-one map")
    if len(u.components) != len(v.components):
        raise ValueError("target dimensions differ")
    disks = getattr(mu, "disks", None)
    if disks is None or len(disks) != 2:
        raise ValueError("stabilization needs exactly two disks")
    (c1, r1), (c2, r2) = [(complex(d[0]), complex(d[1])) for d in disks]
    comps = []
    for pv, pu in zip(v.components, u.components):
        dv = pv.roots().translated_scaled(c1, r1)
        du = pu.roots().translated_scaled(c2, r2)
        comps.append(dv.union(du).polynomial())
    return RationalMap(tuple(comps))


def embedding_check(u: RationalMap, resolution: int = 64) -> bool:
    """Sampled embedding test for degree-one maps.

    True iff the FS derivative norm stays positive on a two-chart grid and a
    capped subsample of values is pairwise distinct beyond grid tolerance.
    """
    if u.degree != 1:
        raise ValueError("embedding check requires a degree-one map")
    n1 = len(u.components)
    alpha = np.ones(n1, dtype=complex)
    beta = np.array([c.coefficients[0] for c in u.components])
    h = 2.4 / resolution
    axis = np.arange(-resolution // 2, resolution // 2 + 1) * h
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    zs = (gx + 1j * gy).reshape(-1)
    zs = zs[np.abs(zs) <= 1.2]

    def deriv_min(vecs, direction):
        nv = np.sum(np.abs(vecs) ** 2, axis=1)
        nd = float(np.sum(np.abs(direction) ** 2))
        ip = np.abs(vecs @ np.conj(direction)) ** 2
        return float(np.min((nd * nv - ip) / nv**2))

    vals0 = np.outer(zs, alpha) + beta
    vals1 = alpha + np.outer(zs, beta)  # w-chart: w u(1/w) = alpha + beta w
    if deriv_min(vals0, alpha) <= 1e-12 or deriv_min(vals1, beta) <= 1e-12:
        return False
    sub = np.concatenate([vals0, vals1])
    stride = max(1, sub.shape[0] // 500)
    sub = sub[::stride]
    sub = sub / np.linalg.norm(sub, axis=1)[:, None]
    grams = np.abs(sub @ np.conj(sub.T))
    np.fill_diagonal(grams, 0.0)
    # two sphere-grid samples at least h apart should not collide
    return bool(np.max(grams) < 1.0 - (1e-4 * h) ** 2 / 2)


@dataclass(frozen=True)
class LinearCurve:
    """Unbased degree-one curve z -> [A (z, 1)^T] from a rank-2 3x2 matrix.

    Unlike RationalMap this does not pin the value at infinity, which is the
    first column's class; used where glued pieces must hit prescribed values.
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex).reshape(3, 2).copy()
        s = np.linalg.svd(m, compute_uv=False)
        if s[-1] <= 1e-9 * max(1.0, s[0]):
            raise ValueError("degenerate linear curve")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_rational(cls, u: RationalMap) -> "LinearCurve":
        if u.degree != 1 or u.n != 2:
            raise ValueError("need a degree-one map to the plane")
        beta = [c.coefficients[0] for c in u.components]
        return cls(np.array([[1.0, b] for b in beta], dtype=complex))

    def at_points(self, z, chart=None):
        """Canonical homogeneous values; chart 1 reads z as a reciprocal."""
        z = np.asarray(z, dtype=complex).reshape(-1)
        if chart in (None, 0):
            finite = np.isfinite(z.real) & np.isfinite(z.imag)
            out = np.empty((z.size, 3), dtype=complex)
            zz = np.where(finite, z, 0.0)
            near = np.abs(zz) <= 1.0
            pair = np.stack([zz, np.ones_like(zz)], axis=1)
            out[:] = pair @ self.matrix.T
            far = finite & ~near
            if np.any(far):
                w = 1.0 / z[far]
                pairw = np.stack([np.ones_like(w), w], axis=1)
                out[far] = pairw @ self.matrix.T
            if np.any(~finite):
                out[~finite] = self.matrix[:, 0]
            return canonicalize(out)
        pairw = np.stack([np.ones_like(z), z], axis=1)
        return canonicalize(pairw @ self.matrix.T)

    def value_at_infinity(self) -> ProjectivePoint:
        return ProjectivePoint(self.matrix[:, 0])


class _GInt:
    """Exact Gaussian integer for fraction-free elimination."""

    __slots__ = ("a", "b")

    def __init__(self, a: int, b: int = 0):
        self.a = a
        self.b = b

    def __mul__(self, o):
        return _GInt(self.a * o.a - self.b * o.b, self.a * o.b + self.b * o.a)

    def __sub__(self, o):
        return _GInt(self.a - o.a, self.b - o.b)

    def exact_div(self, o):
        n = o.a * o.a + o.b * o.b
        ra = self.a * o.a + self.b * o.b
        rb = self.b * o.a - self.a * o.b
        qa, sa = divmod(ra, n)
        qb, sb = divmod(rb, n)
        if sa or sb:
            raise ArithmeticError("inexact division in elimination")
        return _GInt(qa, qb)

    def is_zero(self) -> bool:
        return self.a == 0 and self.b == 0

    def as_complex(self) -> complex:
        return complex(self.a, self.b)


def _gauss_int(c: complex) -> _GInt:
    re, im = complex(c).real, complex(c).imag
    if re != int(re) or im != int(im):
        raise ValueError("exact resultant requires integer coefficients")
    return _GInt(int(re), int(im))


def resultant_exact(p: MonicPolynomial, q: MonicPolynomial) -> complex:
    """Exact Sylvester resultant over the Gaussian integers.

    Zero exactly when p and q share a root; raises on non-integer inputs.
    Bareiss elimination keeps every intermediate an exact Gaussian integer.
    """
    dp, dq = p.degree, q.degree
    if dp == 0 or dq == 0:
        return complex(1.0)
    pc = [_gauss_int(c) for c in p.descending()]
    qc = [_gauss_int(c) for c in q.descending()]
    size = dp + dq
    zero = _GInt(0)
    m = [[zero for _ in range(size)] for _ in range(size)]
    for i in range(dq):
        for j, c in enumerate(pc):
            m[i][i + j] = c
    for i in range(dp):
        for j, c in enumerate(qc):
            m[dq + i][i + j] = c
    prev = _GInt(1)
    sign = 1
    for k in range(size - 1):
        if m[k][k].is_zero():
            swap = next(
                (r for r in range(k + 1, size) if not m[r][k].is_zero()), None
            )
            if swap is None:
                return complex(0.0)
            m[k], m[swap] = m[swap], m[k]
            sign = -sign
        for i in range(k + 1, size):
            for j in range(k + 1, size):
                num = m[i][j] * m[k][k] - m[i][k] * m[k][j]
                m[i][j] = num.exact_div(prev)
            m[i][k] = zero
        prev = m[k][k]
    out = m[size - 1][size - 1].as_complex()
    return out if sign > 0 else -out
