"""Fubini-Study geometry of CP^2.

Points are stored as canonical unit homogeneous vectors, tangent data lives in
the affine chart of the largest homogeneous coordinate, and geodesics come in
closed form through horizontal lifts to the unit sphere in C^3.  Compatible
almost complex structures are produced by a pointwise polar decomposition of
the fixed symplectic form against a perturbed metric.

The chart potential is log(1 + |zeta|^2), which gives every projective line
area pi, injectivity radius pi/2, and diameter pi/2.
"""

from __future__ import annotations

from dataclasses import dataclass, field as _dc_field
from typing import Callable, Sequence

import numpy as np
from scipy.special import betainc

INJECTIVITY_RADIUS = np.pi / 2.0

# slots of the two affine coordinates in each chart, ascending
_CHART_SLOTS = ((1, 2), (0, 2), (0, 1))
_PHASE_TOL = 1e-9


def smoothstep(u, order: int = 2):
    """C^order monotone ramp from 0 at u<=0 to 1 at u>=1.

    Realized as a regularized incomplete beta integral, so all derivatives up
    to `order` vanish at both ends and smoothstep(u) + smoothstep(1-u) = 1.
    """
    u = np.clip(u, 0.0, 1.0)
    return betainc(order + 1, order + 1, u)


# ---------------------------------------------------------------------------
# homogeneous-coordinate kernels, vectorized over (n, 3) arrays


def canonicalize(homog):
    """Unit-norm representatives with the first significant entry real positive.

    Accepts one vector or an (n, 3) array; idempotent.
    """
    z = np.asarray(homog, dtype=complex)
    squeeze = z.ndim == 1
    z = np.atleast_2d(z).copy()
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms < 1e-150):
        raise ValueError("zero homogeneous vector")
    # skip rows already unit to a couple of ulps so a second pass is an
    # exact no-op (the phase factor below is exactly 1 for canonical rows)
    off = np.abs(norms - 1.0) > 8e-16
    if np.any(off):
        z[off] /= norms[off, None]
    lead = np.argmax(np.abs(z) > _PHASE_TOL, axis=1)
    lv = np.take_along_axis(z, lead[:, None], axis=1)[:, 0]
    rot = (lv.imag != 0.0) | (lv.real <= 0.0)
    if np.any(rot):
        z[rot] *= (np.conj(lv[rot]) / np.abs(lv[rot]))[:, None]
    # pin the residual imaginary part of the leading slot so a second pass
    # reproduces the representative bit for bit
    rows = np.arange(z.shape[0])
    z[rows, lead] = z[rows, lead].real
    return z[0] if squeeze else z


def chart_of(homog):
    """Index of the largest-modulus slot per row (lowest index on ties)."""
    z = np.atleast_2d(np.asarray(homog, dtype=complex))
    out = np.argmax(np.abs(z), axis=1)
    return out if out.size > 1 or np.asarray(homog).ndim > 1 else int(out[0])


def coords_in_chart(homog, charts):
    """Affine coordinates (n, 2) of unit vectors in the given charts."""
    z = np.atleast_2d(np.asarray(homog, dtype=complex))
    charts = np.broadcast_to(np.asarray(charts, dtype=int), (z.shape[0],))
    lead = np.take_along_axis(z, charts[:, None], axis=1)[:, 0]
    if np.any(np.abs(lead) < 1e-12):
        raise ValueError("point not representable in requested chart")
    out = np.empty((z.shape[0], 2), dtype=complex)
    for c in range(3):
        m = charts == c
        if np.any(m):
            out[m] = z[np.ix_(m, _CHART_SLOTS[c])] / lead[m, None]
    return out


def from_chart_coords(zeta, charts):
    """Homogeneous unit vectors for affine coordinates in the given charts."""
    zeta = np.atleast_2d(np.asarray(zeta, dtype=complex))
    charts = np.broadcast_to(np.asarray(charts, dtype=int), (zeta.shape[0],))
    out = np.zeros((zeta.shape[0], 3), dtype=complex)
    for c in range(3):
        m = charts == c
        if np.any(m):
            out[m, c] = 1.0
            out[np.ix_(m, _CHART_SLOTS[c])] = zeta[m]
    return canonicalize(out)


def embed_chart_vector(vec, charts):
    """Place chart 2-vectors into the zero-padded 3-slot layout."""
    vec = np.atleast_2d(np.asarray(vec, dtype=complex))
    charts = np.broadcast_to(np.asarray(charts, dtype=int), (vec.shape[0],))
    out = np.zeros((vec.shape[0], 3), dtype=complex)
    for c in range(3):
        m = charts == c
        if np.any(m):
            out[np.ix_(m, _CHART_SLOTS[c])] = vec[m]
    return out


def extract_chart_vector(vec3, charts):
    """Inverse of embed_chart_vector; drops the chart slot."""
    vec3 = np.atleast_2d(np.asarray(vec3, dtype=complex))
    charts = np.broadcast_to(np.asarray(charts, dtype=int), (vec3.shape[0],))
    out = np.empty((vec3.shape[0], 2), dtype=complex)
    for c in range(3):
        m = charts == c
        if np.any(m):
            out[m] = vec3[np.ix_(m, _CHART_SLOTS[c])]
    return out


def slot_phase(points, charts):
    """Re-phase unit vectors so the chart slot is real positive."""
    z = np.atleast_2d(np.asarray(points, dtype=complex))
    charts = np.broadcast_to(np.asarray(charts, dtype=int), (z.shape[0],))
    lead = np.take_along_axis(z, charts[:, None], axis=1)[:, 0]
    mags = np.abs(lead)
    if np.any(mags < 1e-12):
        raise ValueError("chart slot vanishes")
    return z * (np.conj(lead) / mags)[:, None]


def distance_many(a, b):
    """FS distance between unit representatives, rowwise."""
    a = np.atleast_2d(np.asarray(a, dtype=complex))
    b = np.atleast_2d(np.asarray(b, dtype=complex))
    ip = np.sum(a * np.conj(b), axis=1)
    inner = np.abs(ip)
    out = np.arccos(np.clip(inner, 0.0, 1.0))
    near = inner > 0.7
    if np.any(near):
        # arccos keeps only half the digits at small separations; the
        # projection residual recovers them
        proj = a[near] - ip[near][:, None] * b[near]
        out[near] = np.arcsin(np.clip(np.linalg.norm(proj, axis=1), 0.0, 1.0))
    return out


def hermitian_metric(zeta):
    """FS Hermitian form (n, 2, 2) at chart coordinates zeta."""
    zeta = np.atleast_2d(np.asarray(zeta, dtype=complex))
    s = np.sum(np.abs(zeta) ** 2, axis=1)
    outer = np.conj(zeta)[:, :, None] * zeta[:, None, :]
    denom = (1.0 + s)[:, None, None]
    return (denom * np.eye(2) - outer) / denom**2


def hermitian_pair(zeta, u, v):
    """H(u, v) of chart vectors; g = Re, omega = -Im."""
    g = hermitian_metric(zeta)
    u = np.atleast_2d(np.asarray(u, dtype=complex))
    v = np.atleast_2d(np.asarray(v, dtype=complex))
    return np.einsum("nab,na,nb->n", g, u, np.conj(v))


def christoffel_contract(zeta, u, v):
    """Holomorphic-frame connection term Gamma(u, v), (n, 2) complex."""
    zeta = np.atleast_2d(np.asarray(zeta, dtype=complex))
    u = np.atleast_2d(np.asarray(u, dtype=complex))
    v = np.atleast_2d(np.asarray(v, dtype=complex))
    s = np.sum(np.abs(zeta) ** 2, axis=1)
    zu = np.sum(np.conj(zeta) * u, axis=1)
    zv = np.sum(np.conj(zeta) * v, axis=1)
    return -(u * zv[:, None] + v * zu[:, None]) / (1.0 + s)[:, None]


def exp_many(points, charts, vel):
    """Unit-time geodesic endpoints for chart velocities vel at points."""
    charts = np.broadcast_to(
        np.asarray(charts, dtype=int), (np.atleast_2d(points).shape[0],)
    )
    P = slot_phase(points, charts)
    lead = np.take_along_axis(P, charts[:, None], axis=1)[:, 0].real
    ins = embed_chart_vector(vel, charts)
    inner = np.sum(ins * np.conj(P), axis=1)
    V = (ins - inner[:, None] * P) * lead[:, None]
    theta = np.linalg.norm(V, axis=1)
    Q = np.cos(theta)[:, None] * P + np.sinc(theta / np.pi)[:, None] * V
    return canonicalize(Q)


def log_many(points, charts, targets):
    """Chart velocities whose exp reaches targets; raises at the cut locus."""
    charts = np.broadcast_to(
        np.asarray(charts, dtype=int), (np.atleast_2d(points).shape[0],)
    )
    P = slot_phase(points, charts)
    Q = np.atleast_2d(np.asarray(targets, dtype=complex))
    qn = np.linalg.norm(Q, axis=1)
    Q = Q / qn[:, None]
    c = np.sum(Q * np.conj(P), axis=1)
    ac = np.abs(c)
    if np.any(ac <= 1e-8):
        raise ValueError("outside injectivity radius")
    theta = np.arccos(np.clip(ac, 0.0, 1.0))
    Qt = Q * (np.conj(c) / ac)[:, None]
    W = Qt - np.cos(theta)[:, None] * P
    V = W / np.sinc(theta / np.pi)[:, None]
    lead = np.take_along_axis(P, charts[:, None], axis=1)[:, 0].real
    Vi = np.take_along_axis(V, charts[:, None], axis=1)[:, 0]
    num = V * lead[:, None] - P * Vi[:, None]
    return extract_chart_vector(num / (lead**2)[:, None], charts)


def transition_jacobian(points, charts_from, charts_to):
    """d(coords in charts_to)/d(coords in charts_from), (n, 2, 2) complex."""
    z = np.atleast_2d(np.asarray(points, dtype=complex))
    n = z.shape[0]
    cf = np.broadcast_to(np.asarray(charts_from, dtype=int), (n,))
    ct = np.broadcast_to(np.asarray(charts_to, dtype=int), (n,))
    zeta = coords_in_chart(z, cf)
    W = embed_chart_vector(zeta, cf)
    for c in range(3):
        W[cf == c, c] = 1.0
    Wj = np.take_along_axis(W, ct[:, None], axis=1)[:, 0]
    if np.any(np.abs(Wj) < 1e-12):
        raise ValueError("point not representable in target chart")
    jac = np.empty((n, 2, 2), dtype=complex)
    for a in range(2):
        for b in range(2):
            # slot of output coordinate a and of input coordinate b
            slot_a = np.array([_CHART_SLOTS[c][a] for c in range(3)])[ct]
            slot_b = np.array([_CHART_SLOTS[c][b] for c in range(3)])[cf]
            Wa = np.take_along_axis(W, slot_a[:, None], axis=1)[:, 0]
            jac[:, a, b] = (
                (slot_a == slot_b) * Wj - Wa * (slot_b == ct)
            ) / Wj**2
    return jac


# ---------------------------------------------------------------------------
# real 4x4 frames: chart vector v maps to (Re v1, Im v1, Re v2, Im v2)


def complex_to_real_vec(v):
    v = np.atleast_2d(np.asarray(v, dtype=complex))
    out = np.empty((v.shape[0], 4))
    out[:, 0::2] = v.real
    out[:, 1::2] = v.imag
    return out


def real_to_complex_vec(x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return x[:, 0::2] + 1j * x[:, 1::2]


def clinear_to_real(m):
    """Real 4x4 form of a C-linear chart map, batched."""
    m = np.asarray(m, dtype=complex)
    single = m.ndim == 2
    m = m.reshape((-1, 2, 2))
    out = np.zeros((m.shape[0], 4, 4))
    e, f = m.real, m.imag
    for a in range(2):
        for b in range(2):
            out[:, 2 * a, 2 * b] = e[:, a, b]
            out[:, 2 * a, 2 * b + 1] = -f[:, a, b]
            out[:, 2 * a + 1, 2 * b] = f[:, a, b]
            out[:, 2 * a + 1, 2 * b + 1] = e[:, a, b]
    return out[0] if single else out


def metric_real(g):
    """Real symmetric 4x4 of Re H for a Hermitian form array (n, 2, 2)."""
    g = np.asarray(g, dtype=complex).reshape((-1, 2, 2))
    out = np.zeros((g.shape[0], 4, 4))
    e, f = g.real, g.imag
    for a in range(2):
        for b in range(2):
            out[:, 2 * a, 2 * b] = e[:, a, b]
            out[:, 2 * a, 2 * b + 1] = f[:, a, b]
            out[:, 2 * a + 1, 2 * b] = -f[:, a, b]
            out[:, 2 * a + 1, 2 * b + 1] = e[:, a, b]
    return out


def omega_real(g):
    """Real antisymmetric 4x4 of -Im H for a Hermitian form array."""
    g = np.asarray(g, dtype=complex).reshape((-1, 2, 2))
    out = np.zeros((g.shape[0], 4, 4))
    e, f = g.real, g.imag
    for a in range(2):
        for b in range(2):
            out[:, 2 * a, 2 * b] = -f[:, a, b]
            out[:, 2 * a, 2 * b + 1] = e[:, a, b]
            out[:, 2 * a + 1, 2 * b] = -e[:, a, b]
            out[:, 2 * a + 1, 2 * b + 1] = -f[:, a, b]
    return out


J0_REAL = np.kron(np.eye(2), np.array([[0.0, -1.0], [1.0, 0.0]]))
J0_REAL.setflags(write=False)


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class ProjectivePoint:
    """Point of CP^2 held as its canonical unit homogeneous representative."""

    homogeneous: np.ndarray

    def __post_init__(self):
        h = canonicalize(self.homogeneous)
        h.setflags(write=False)
        object.__setattr__(self, "homogeneous", h)

    @property
    def chart(self) -> int:
        return int(np.argmax(np.abs(self.homogeneous)))

    @property
    def coords(self) -> np.ndarray:
        return coords_in_chart(self.homogeneous, self.chart)[0]

    def distance(self, other: "ProjectivePoint") -> float:
        return float(distance_many(self.homogeneous, other.homogeneous)[0])

    def close_to(self, other: "ProjectivePoint", tol: float = 1e-7) -> bool:
        # arccos near 1 amplifies ulp noise to ~2e-8, so tolerances below
        # that are not resolvable through the distance
        return self.distance(other) <= tol

    def __repr__(self):
        a, b, c = self.homogeneous
        return f"ProjectivePoint([{a:.6g} : {b:.6g} : {c:.6g}])"


BASE_POINT = ProjectivePoint(np.array([1.0, 1.0, 1.0], dtype=complex))


@dataclass(frozen=True)
class TangentVector:
    """Chart-coordinate tangent vector at a point.

    The chart is always the one selected by the base point's largest
    homogeneous coordinate; passing another chart index is an error.
    """

    base: ProjectivePoint
    value: np.ndarray
    chart: int = -1

    def __post_init__(self):
        v = np.asarray(self.value, dtype=complex).reshape(2).copy()
        v.setflags(write=False)
        object.__setattr__(self, "value", v)
        bc = self.base.chart
        if self.chart == -1:
            object.__setattr__(self, "chart", bc)
        elif self.chart != bc:
            raise ValueError("chart index inconsistent with base point")

    @property
    def norm(self) -> float:
        h = hermitian_pair(self.base.coords, self.value, self.value)[0]
        return float(np.sqrt(max(h.real, 0.0)))

    def scaled(self, c: float) -> "TangentVector":
        return TangentVector(self.base, c * self.value)


# ---------------------------------------------------------------------------
# operations


def fs_pair(p: ProjectivePoint, v: TangentVector, w: TangentVector):
    """(omega(v, w), g0(v, w)) for the standard structure at p."""
    if not (v.base.close_to(p) and w.base.close_to(p)):
        raise ValueError("mismatched base points")
    h = hermitian_pair(p.coords, v.value, w.value)[0]
    return float(-h.imag), float(h.real)


def exp_fs(p: ProjectivePoint, v: TangentVector) -> ProjectivePoint:
    """Endpoint of the unit-time FS geodesic from p with velocity v."""
    if not v.base.close_to(p):
        raise ValueError("mismatched base points")
    q = exp_many(p.homogeneous, p.chart, v.value)
    return ProjectivePoint(q[0])


def log_fs(p: ProjectivePoint, q: ProjectivePoint) -> TangentVector:
    """Inverse of exp_fs; q must lie inside the injectivity radius of p."""
    vel = log_many(p.homogeneous, p.chart, q.homogeneous)
    return TangentVector(p, vel[0])


# ---------------------------------------------------------------------------
# compatible almost complex structures


@dataclass(frozen=True)
class PerturbationMode:
    """One plane-wave component of a symmetric metric perturbation.

    wave holds four integer frequencies against the real chart-0 coordinates,
    sym_index picks one of the ten symmetric 4x4 basis matrices.
    """

    amplitude: float
    wave: tuple
    sym_index: int
    phase: float = 0.0

    def __post_init__(self):
        w = tuple(int(k) for k in self.wave)
        if len(w) != 4:
            raise ValueError("wave needs four integer frequencies")
        if not 0 <= int(self.sym_index) <= 9:
            raise ValueError("sym_index out of range")
        object.__setattr__(self, "wave", w)
        object.__setattr__(self, "sym_index", int(self.sym_index))
        object.__setattr__(self, "amplitude", float(self.amplitude))
        object.__setattr__(self, "phase", float(self.phase))


def _sym_basis():
    mats = []
    for i in range(4):
        m = np.zeros((4, 4))
        m[i, i] = 1.0
        mats.append(m)
    for i in range(4):
        for j in range(i + 1, 4):
            m = np.zeros((4, 4))
            m[i, j] = m[j, i] = 1.0
            mats.append(m)
    return np.stack(mats)


_SYM_BASIS = _sym_basis()
_SUPPORT_IN, _SUPPORT_OUT = 0.9, 1.4


def _perturbation_tensor(modes, points):
    """Symmetric perturbation (n, 4, 4) in each point's own chart frame.

    The field is authored in chart-0 coordinates, compactly supported in
    |zeta| <= 1.4, damped by the squared FS conformal factor so it stays
    dominated by the round metric, and pulled back to other charts as a
    covariant 2-tensor.
    """
    z = np.atleast_2d(np.asarray(points, dtype=complex))
    n = z.shape[0]
    out = np.zeros((n, 4, 4))
    if not modes:
        return out
    visible = np.abs(z[:, 0]) > 1e-8
    if not np.any(visible):
        return out
    idx = np.nonzero(visible)[0]
    zeta0 = coords_in_chart(z[idx], np.zeros(len(idx), dtype=int))
    s = np.sum(np.abs(zeta0) ** 2, axis=1)
    r = np.sqrt(s)
    chi = 1.0 - smoothstep((r - _SUPPORT_IN) / (_SUPPORT_OUT - _SUPPORT_IN), 3)
    envelope = chi / (1.0 + s) ** 2
    active = envelope > 1e-300
    if not np.any(active):
        return out
    idx = idx[active]
    x4 = complex_to_real_vec(zeta0[active])
    envelope = envelope[active]
    s_chart0 = np.zeros((len(idx), 4, 4))
    for mode in modes:
        wave = np.asarray(mode.wave, dtype=float)
        profile = mode.amplitude * np.cos(
            2.0 * np.pi * (x4 @ wave) + mode.phase
        )
        s_chart0 += (profile * envelope)[:, None, None] * _SYM_BASIS[
            mode.sym_index
        ]
    charts = chart_of(z[idx])
    charts = np.atleast_1d(charts)
    in_chart0 = charts == 0
    if np.any(in_chart0):
        out[idx[in_chart0]] = s_chart0[in_chart0]
    other = ~in_chart0
    if np.any(other):
        sub = idx[other]
        jac = transition_jacobian(z[sub], charts[other], 0)
        m = clinear_to_real(jac)
        out[sub] = np.einsum("nba,nbc,ncd->nad", m, s_chart0[other], m)
    return out


def _polar_structure(h_real, om_real):
    """J with J^2 = -id and om(., J.) = h, batched over (n, 4, 4)."""
    try:
        low = np.linalg.cholesky(h_real)
    except np.linalg.LinAlgError:
        raise ValueError(
            "perturbed form not positive definite at a queried point"
        ) from None
    a = -np.linalg.solve(h_real, om_real)
    lt = np.swapaxes(low, -1, -2)
    lt_inv = np.linalg.inv(lt)
    at = lt @ a @ lt_inv
    sq = -at @ at
    sq = 0.5 * (sq + np.swapaxes(sq, -1, -2))
    vals, vecs = np.linalg.eigh(sq)
    if np.any(vals <= 0.0):
        raise ValueError(
            "perturbed form not positive definite at a queried point"
        )
    root_inv = np.einsum(
        "nab,nb,ncb->nac", vecs, 1.0 / np.sqrt(vals), vecs
    )
    jt = at @ root_inv
    j = lt_inv @ jt @ lt
    defect = np.max(np.abs(j @ j + np.eye(4)))
    if defect > 1e-10:
        raise ValueError("almost complex structure invariant violated")
    return j


@dataclass(frozen=True)
class AlmostComplexStructure:
    """Pointwise 4x4 real matrix field J(p) on chart coordinates.

    kind is "standard" for the integrable structure or "perturbed" for a
    polar-decomposition structure; path values blend the defining metrics.
    The public callable attribute `field` maps a ProjectivePoint to J(p).
    """

    kind: str
    modes: tuple = ()
    blend: tuple = None
    field: Callable = _dc_field(init=False, default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "field", self.matrix)

    @property
    def is_standard(self) -> bool:
        return self.kind == "standard"

    def metric_real_many(self, points, charts=None):
        """Defining Riemannian metric as real 4x4 blocks per point."""
        z = np.atleast_2d(np.asarray(points, dtype=complex))
        charts = chart_of(z) if charts is None else charts
        charts = np.broadcast_to(np.asarray(charts, dtype=int), (z.shape[0],))
        if self.blend is not None:
            left, right, t = self.blend
            return (1.0 - t) * left.metric_real_many(z, charts) + (
                t * right.metric_real_many(z, charts)
            )
        zeta = coords_in_chart(z, charts)
        base = metric_real(hermitian_metric(zeta))
        if self.kind == "standard":
            return base
        return base + _perturbation_tensor(self.modes, z)

    def matrix_many(self, points, charts=None):
        """J as (n, 4, 4) in each point's own chart frame."""
        z = np.atleast_2d(np.asarray(points, dtype=complex))
        charts = chart_of(z) if charts is None else charts
        charts = np.broadcast_to(np.asarray(charts, dtype=int), (z.shape[0],))
        if self.kind == "standard":
            return np.broadcast_to(J0_REAL, (z.shape[0], 4, 4))
        zeta = coords_in_chart(z, charts)
        om = omega_real(hermitian_metric(zeta))
        h = self.metric_real_many(z, charts)
        return _polar_structure(h, om)

    def matrix(self, p: ProjectivePoint) -> np.ndarray:
        return self.matrix_many(p.homogeneous[None, :])[0]


STANDARD_J = AlmostComplexStructure(kind="standard")


def make_compatible_j(perturbation=None) -> AlmostComplexStructure:
    """Build a compatible structure from symmetric-field mode parameters.

    perturbation is a sequence of PerturbationMode or of mappings with keys
    amplitude, wave, sym_index and optional phase.  All-zero amplitudes give
    back the standard structure exactly.
    """
    modes = []
    for item in perturbation or ():
        if isinstance(item, PerturbationMode):
            modes.append(item)
        else:
            modes.append(
                PerturbationMode(
                    amplitude=item["amplitude"],
                    wave=tuple(item["wave"]),
                    sym_index=item["sym_index"],
                    phase=item.get("phase", 0.0),
                )
            )
    if all(m.amplitude == 0.0 for m in modes):
        return STANDARD_J
    return AlmostComplexStructure(kind="perturbed", modes=tuple(modes))


@dataclass(frozen=True)
class StructurePath:
    """Path of compatible structures between two endpoints.

    Intermediate values re-run the polar decomposition on the pointwise
    convex combination of the defining metrics, which keeps every value a
    valid compatible structure; interpolating J matrices directly would not.
    """

    start: AlmostComplexStructure
    end: AlmostComplexStructure

    def value(self, t: float) -> AlmostComplexStructure:
        if not 0.0 <= t <= 1.0:
            raise ValueError("path parameter outside [0, 1]")
        if t == 0.0:
            return self.start
        if t == 1.0:
            return self.end
        return AlmostComplexStructure(
            kind="perturbed", blend=(self.start, self.end, float(t))
        )

    def __call__(self, t: float) -> AlmostComplexStructure:
        return self.value(t)
