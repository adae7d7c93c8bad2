"""Configuration gluing: patched grids, the approximate glued map, and its
Newton correction to a holomorphic one.

A configuration is a background degree-one curve w, insertion points x_i in
the unit disk, and degree-one pieces u_i hitting w(x_i) at infinity.  The
approximate glued map equals w far from the insertions, a rescaled u_i deep
inside each, and a cutoff-blended exponential mix on annuli.  The grid adds
a log-polar annulus plus a Cartesian core patch per insertion so both the
neck and the rescaled bubble are resolved at their own scale.

The corrector treats the patches as an overset composite: every node
carries exactly one equation, either the discrete Cauchy-Riemann operator
where its own patch resolves the map with a full stencil, or an
interpolation tie to the patch that does, with one pinned node holding the
base point.  The square system keeps the discrete problem consistent, so
the iteration can drive the residual to solver precision instead of
stalling at the cross-patch truncation floor.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, gmres, splu

from .bundle import (
    GeneralizedDbarOperator,
    LineBundle,
    _equilibrate_rows,
    _evaluation_rows,
    _gap_guard,
)
from .field import DiscreteMap, SphereGrid, Subgrid, pou_profile, sample_map
from .projective import (
    INJECTIVITY_RADIUS,
    STANDARD_J,
    canonicalize,
    clinear_to_real,
    complex_to_real_vec,
    coords_in_chart,
    distance_many,
    exp_many,
    hermitian_metric,
    log_many,
    real_to_complex_vec,
    smoothstep,
    transition_jacobian,
)
from .rational import LinearCurve, RationalMap

_MATCH_TOL = 1e-8
_CORE_BAND = (0.95, 1.15)  # |zeta| handoff between core and annulus patches
_STENCIL8 = (
    (-4, 1.0 / 280.0),
    (-3, -4.0 / 105.0),
    (-2, 1.0 / 5.0),
    (-1, -4.0 / 5.0),
    (1, 4.0 / 5.0),
    (2, -1.0 / 5.0),
    (3, 4.0 / 105.0),
    (4, -1.0 / 280.0),
)
_MARGIN = 4  # lattice rings a full difference stencil needs on each side
_FINE = 2  # annulus step refinement relative to the base grids
_POU_EPS = 1e-14
_SLOT_TOL = 0.15
# eighth-difference background dissipation: centered derivative stencils are
# blind to the odd-even modes, so an O(h^7) term is mixed into the solved rows
# (never into the reported residual) to keep the linearization well posed
_DISS = 0.5
_TAPS8 = tuple(
    (k, dict(_STENCIL8).get(k, 0.0), d / 256.0)
    for k, d in zip(
        range(-4, 5), (1.0, -8.0, 28.0, -56.0, 70.0, -56.0, 28.0, -8.0, 1.0)
    )
)
# coarse correction levels run a one-ring stencil: centered first difference
# with second-difference dissipation, so one lattice ring of margin suffices
_DISS2 = 0.8
_TAPS2 = ((-1, -0.5, -0.25), (0, 0.0, 0.5), (1, 0.5, -0.25))
_COARSE_STOP = 2000  # stop coarsening below this many nodes and solve directly
_BOTTOM_DAMP = 1e-10  # relative Tikhonov weight of the bottom-level factorization


def _default_rho(z):
    """0 inside the unit circle, 1 outside radius 2, quintic in log radius."""
    r = np.abs(np.asarray(z, dtype=complex))
    with np.errstate(divide="ignore"):
        u = np.where(r > 0.0, np.log(np.maximum(r, 1e-300)), -1.0) / np.log(2.0)
    return smoothstep(u, 2)


def _check_rho(rho) -> None:
    lo = np.asarray(rho(np.array([0.5, 1.0], dtype=complex)), dtype=float)
    hi = np.asarray(rho(np.array([2.0, 3.0], dtype=complex)), dtype=float)
    mid = np.asarray(rho(np.linspace(1.0, 2.0, 9).astype(complex)), dtype=float)
    ok = (
        np.max(np.abs(lo)) <= 1e-9
        and np.max(np.abs(hi - 1.0)) <= 1e-9
        and np.all(np.diff(mid) >= -1e-9)
    )
    if not ok:
        raise ValueError(
            "cutoff must vanish inside the unit circle and equal one outside radius two"
        )


@dataclass(frozen=True)
class GluingParameters:
    """Scales of the gluing: separation epsilon, neck shape (delta, R), grid N."""

    epsilon: float
    delta: float
    R: float
    resolution: int = 64
    rho: Optional[Callable] = None

    def __post_init__(self):
        if (
            not (0.0 < self.delta < 1.0)
            or self.R <= 0.0
            or 2.0 / (self.delta * self.R) > self.epsilon + 1e-12
        ):
            raise ValueError("gluing parameters need 2/(delta R) <= epsilon and 0 < delta < 1")
        if self.rho is None:
            object.__setattr__(self, "rho", _default_rho)
        else:
            _check_rho(self.rho)

    @property
    def outer_radius(self) -> float:
        """|z - x_i| beyond which the glued map is exactly the background."""
        return 2.0 / (self.delta * self.R)

    @property
    def inner_radius(self) -> float:
        """|z - x_i| below which the glued map is exactly the rescaled piece."""
        return self.delta / (2.0 * self.R)


def _patch_scales(params: GluingParameters):
    """Derived radii of the patched grid around one insertion point.

    veto: base nodes own a Cauchy-Riemann row only beyond this distance,
    so their full stencil stays where the map is the unblended background.
    fade: the base partition weight ramps up across this band, placed just
    past veto so every weighted node owns a row.  reach: outermost extent
    of the annulus lattice, the exclusion radius for grid guards.
    """
    h = 2.4 / params.resolution
    ds = np.pi / (_FINE * params.resolution)
    veto = params.outer_radius + (_MARGIN + 0.02) * h
    fade_lo = veto + 0.125 * h
    fade_hi = fade_lo + 1.5 * h
    s_hi = np.log(fade_hi) + (_MARGIN + 1.0) * ds
    # the lattice rounds s_hi up by at most one step
    reach = fade_hi * np.exp((_MARGIN + 2.0) * ds) + 0.5 * h
    return veto, fade_lo, fade_hi, s_hi, reach


@dataclass(frozen=True)
class GluingConfiguration:
    """Background curve, separated insertion points, and matching pieces."""

    w: object
    points: tuple
    maps: tuple

    @property
    def k(self) -> int:
        return len(self.points)


def make_config(w, points, maps, params: GluingParameters) -> GluingConfiguration:
    """Validate separation, containment, and end matching; package the data."""
    pts = tuple(complex(p) for p in points)
    maps = tuple(maps)
    if len(maps) != len(pts):
        raise ValueError("need one glued piece per insertion point")
    for i in range(len(pts)):
        if abs(pts[i]) >= 1.0:
            raise ValueError("containment violation: insertion point outside the open unit disk")
        for j in range(i + 1, len(pts)):
            if abs(pts[i] - pts[j]) < params.epsilon - 1e-12:
                raise ValueError(
                    "epsilon violation: insertion points closer than the separation scale"
                )
    targets = canonicalize(np.asarray(w.at_points(np.array(pts), 0), dtype=complex))
    for i, u in enumerate(maps):
        end = canonicalize(np.asarray(u.at_points(np.array([0.0 + 0.0j]), 1), dtype=complex))[0]
        if float(distance_many(end[None, :], targets[i][None, :])[0]) > _MATCH_TOL:
            raise ValueError("matching violation: piece value at infinity misses the background")
        if getattr(u, "degree", 1) != 1:
            raise ValueError("glued pieces must have degree one")
    return GluingConfiguration(w, pts, maps)


# ---------------------------------------------------------------------------
# patched grid


class GluedGrid:
    """Sphere grid extended by a log-polar annulus and core patch per insertion.

    Subgrids: the two base charts first, then (annulus, core) pairs in
    insertion order.  Partition weights hand the base chart over to the
    annulus across the fade band past the stencil veto radius, and the
    annulus over to the core across |zeta| in [0.95, 1.15] with
    zeta = R^2 (z - x_i).
    """

    def __init__(self, params: GluingParameters, points):
        base = SphereGrid(params.resolution)
        self.params = params
        self.points = tuple(complex(p) for p in points)
        self.resolution = params.resolution
        self.h = base.h
        self.ds = np.pi / (_FINE * params.resolution)
        veto, fade_lo, fade_hi, s_hi, reach = _patch_scales(params)
        self.veto_radius = veto
        self.fade_band = (fade_lo, fade_hi)
        self.reach = reach
        for i, x in enumerate(self.points):
            if abs(x) + reach > 5.0 / 6.0 + 1e-12:
                raise ValueError("insertion too close to the unit circle for the patched grid")
            for y in self.points[:i]:
                if abs(x - y) < 2.0 * reach - 1e-12:
                    raise ValueError("insertions too close for the patched grid")

        subs = list(base.subgrids)
        s0 = subs[0]
        pou0 = s0.pou.copy()
        for x in self.points:
            pou0 = pou0 * self._base_fade(np.abs(s0.z - x))
        subs[0] = replace_subgrid_pou(s0, pou0)
        N = params.resolution
        ds = self.ds
        n_th = _FINE * N
        dth = 2.0 * np.pi / n_th
        R2 = params.R**2
        s_lo = np.log(_CORE_BAND[0] / R2) - (_MARGIN + 1.0) * ds
        n_s = int(np.ceil((s_hi - s_lo) / ds)) + 1
        hc = 2.8 / N
        half = int(np.ceil(1.5 / hc))
        for i, x in enumerate(self.points):
            s_ax = s_lo + ds * np.arange(n_s)
            th_ax = dth * np.arange(n_th)
            gs, gth = np.meshgrid(s_ax, th_ax, indexing="ij")
            xi_ann = (gs + 1j * gth).reshape(-1)
            offset = np.exp(xi_ann)
            subs.append(
                Subgrid(
                    name=f"annulus{i}",
                    kind="logpolar",
                    shape=(n_s, n_th),
                    step=(ds, dth),
                    x0=s_lo,
                    y0=0.0,
                    periodic=(False, True),
                    z_chart=0,
                    xi=xi_ann,
                    z=x + offset,
                    tprime=offset,
                    pou=self._ann_pou(np.abs(offset)),
                )
            )
            axis = (np.arange(2 * half + 1) - half) * hc
            gx, gy = np.meshgrid(axis, axis, indexing="ij")
            zeta = (gx + 1j * gy).reshape(-1)
            subs.append(
                Subgrid(
                    name=f"core{i}",
                    kind="cartesian",
                    shape=(2 * half + 1, 2 * half + 1),
                    step=(hc, hc),
                    x0=-half * hc,
                    y0=-half * hc,
                    periodic=(False, False),
                    z_chart=0,
                    xi=zeta,
                    z=x + zeta / R2,
                    tprime=np.full(zeta.size, 1.0 / R2, dtype=complex),
                    pou=self._core_pou(np.abs(zeta)),
                )
            )
        self.subgrids = tuple(subs)
        self.infinity = base.infinity

    # partition profiles, shared by construction and point queries ---------

    def _base_fade(self, r):
        lo, hi = self.fade_band
        return smoothstep((r - lo) / (hi - lo), 5)

    def _ann_pou(self, r_z):
        zeta = r_z * self.params.R**2
        lo = smoothstep((zeta - _CORE_BAND[0]) / (_CORE_BAND[1] - _CORE_BAND[0]), 5)
        return lo * (1.0 - self._base_fade(r_z))

    def _core_pou(self, r_zeta):
        return 1.0 - smoothstep((r_zeta - _CORE_BAND[0]) / (_CORE_BAND[1] - _CORE_BAND[0]), 5)

    def pou_of(self, idx: int, z) -> np.ndarray:
        """Partition weight of subgrid idx at chart-0 positions z (inf allowed)."""
        z = np.asarray(z, dtype=complex).reshape(-1)
        finite = np.isfinite(z.real) & np.isfinite(z.imag)
        zf = np.where(finite, z, 0.0)
        r = np.abs(zf)
        if idx == 0:
            out = pou_profile(r)
            for x in self.points:
                out = out * self._base_fade(np.abs(zf - x))
            return np.where(finite, out, 0.0)
        if idx == 1:
            with np.errstate(divide="ignore"):
                rr = np.where(r > 0.0, 1.0 / np.maximum(r, 1e-300), np.inf)
            return np.where(finite, pou_profile(rr), 1.0)
        i, kind = divmod(idx - 2, 2)
        dist = np.abs(zf - self.points[i])
        if kind == 0:
            return np.where(finite, self._ann_pou(dist), 0.0)
        return np.where(finite, self._core_pou(dist * self.params.R**2), 0.0)

    def local_of(self, idx: int, z) -> np.ndarray:
        """Local subgrid coordinate of chart-0 positions z."""
        z = np.asarray(z, dtype=complex).reshape(-1)
        if idx == 0:
            return z
        if idx == 1:
            out = np.zeros_like(z)
            finite = np.isfinite(z.real) & np.isfinite(z.imag)
            nz = finite & (z != 0)
            out[nz] = 1.0 / z[nz]
            return out
        i, kind = divmod(idx - 2, 2)
        offset = z - self.points[i]
        if kind == 0:
            return np.log(offset)
        return offset * self.params.R**2

    def owned_mask(self, idx: int, margin: int = _MARGIN) -> np.ndarray:
        """Nodes whose Cauchy-Riemann stencil this subgrid resolves.

        Base chart 0 defers to the annuli inside the veto radius; base
        chart 1 and the insertion patches own their full stencil interior.
        margin is the stencil reach in lattice rings of the level's taps.
        """
        sub = self.subgrids[idx]
        mask = sub.interior_mask(margin)
        if idx == 0:
            for x in self.points:
                mask = mask & (np.abs(sub.z - x) >= self.veto_radius)
        return mask

    def donor_of(self, z):
        """(subgrid index, local coordinate) of the patch that resolves z.

        Queries come from nodes that do not own their stencil, so the donor
        is always a different subgrid than the asker.
        """
        z = np.asarray(z, dtype=complex).reshape(-1)
        R2 = self.params.R**2
        core_cut = 1.05 / R2
        ann_cut = 0.5 * (self.veto_radius + self.fade_band[1])
        sub = np.where(np.abs(z) <= 1.0, 0, 1).astype(np.int64)
        xi = np.where(sub == 0, z, 0.0).astype(complex)
        far = sub == 1
        xi[far] = 1.0 / z[far]
        for i, x in enumerate(self.points):
            off = z - x
            r = np.abs(off)
            m_core = r <= core_cut
            m_ann = (r > core_cut) & (r <= ann_cut)
            if np.any(m_core):
                sub[m_core] = 3 + 2 * i
                xi[m_core] = off[m_core] * R2
            if np.any(m_ann):
                sub[m_ann] = 2 + 2 * i
                xi[m_ann] = np.log(off[m_ann])
        return sub, xi

    def route(self, z, chart=0):
        z = np.asarray(z, dtype=complex).reshape(-1)
        charts = np.broadcast_to(np.asarray(chart, dtype=int), z.shape)
        finite = np.isfinite(z.real) & np.isfinite(z.imag)
        pos = np.where(finite, z, 0.0).astype(complex)
        flip = (charts == 1) & finite & (z != 0)
        pos[flip] = 1.0 / z[flip]
        at_inf = (~finite) | ((charts == 1) & (z == 0))
        sub = np.where(np.abs(np.where(at_inf, 2.0, pos)) <= 1.0, 0, 1).astype(np.int64)
        xi = np.where(sub == 0, pos, 0.0).astype(complex)
        far = (sub == 1) & ~at_inf
        xi[far] = 1.0 / pos[far]
        R2 = self.params.R**2
        ann_cut = 0.5 * (self.veto_radius + self.fade_band[1])
        core_cut = 1.05 / R2
        for i, x in enumerate(self.points):
            off = np.where(at_inf, np.inf, pos - x)
            r = np.abs(off)
            m_core = r <= core_cut
            m_ann = (r > core_cut) & (r <= ann_cut)
            if np.any(m_core):
                sub[m_core] = 3 + 2 * i
                xi[m_core] = off[m_core] * R2
            if np.any(m_ann):
                sub[m_ann] = 2 + 2 * i
                xi[m_ann] = np.log(off[m_ann])
        return sub, xi

    def refined(self, factor: int) -> "GluedGrid":
        finer = replace(self.params, resolution=self.params.resolution * factor)
        return GluedGrid(finer, self.points)

    def coarsened(self) -> "GluedGrid":
        """Same patches with every second node per axis.

        The physical veto and fade scales are copied verbatim, so ownership
        agrees with the parent and no placement check reruns.  fine_index
        maps each coarse node to the parent node it sits on; the correction
        solver uses these grids as coarse levels.
        """
        g = object.__new__(GluedGrid)
        g.params = self.params
        g.points = self.points
        g.resolution = self.resolution // 2
        g.h = 2.0 * self.h
        g.ds = 2.0 * self.ds
        g.veto_radius = self.veto_radius
        g.fade_band = self.fade_band
        g.reach = self.reach
        pairs = [_subsample_subgrid(s) for s in self.subgrids]
        g.subgrids = tuple(p[0] for p in pairs)
        g.fine_index = tuple(p[1] for p in pairs)
        isub, inode = self.infinity
        pos = int(np.searchsorted(g.fine_index[isub], inode))
        if pos >= g.fine_index[isub].size or g.fine_index[isub][pos] != inode:
            raise RuntimeError("infinity node lost in coarsening")
        g.infinity = (isub, pos)
        return g


def _subsample_subgrid(sub: Subgrid):
    """Halve both axes of a patch, keeping the node nearest the axis origin.

    Periodic axes must have even length so the wrap survives.  Returns the
    new patch and the flat parent indices of the kept nodes.
    """
    nx, ny = sub.shape
    off = []
    for n, step, start, per in (
        (nx, sub.step[0], sub.x0, sub.periodic[0]),
        (ny, sub.step[1], sub.y0, sub.periodic[1]),
    ):
        if per:
            if n % 2:
                raise ValueError("cannot halve an odd periodic axis")
            off.append(0)
        else:
            i0 = int(round(min(max(-start / step, 0.0), n - 1.0)))
            off.append(i0 % 2)
    ix = np.arange(off[0], nx, 2)
    iy = np.arange(off[1], ny, 2)
    keep = (ix[:, None] * ny + iy[None, :]).reshape(-1)
    new = Subgrid(
        name=sub.name,
        kind=sub.kind,
        shape=(ix.size, iy.size),
        step=(2.0 * sub.step[0], 2.0 * sub.step[1]),
        x0=sub.x0 + off[0] * sub.step[0],
        y0=sub.y0 + off[1] * sub.step[1],
        periodic=sub.periodic,
        z_chart=sub.z_chart,
        xi=sub.xi[keep],
        z=sub.z[keep],
        tprime=sub.tprime[keep],
        pou=sub.pou[keep],
    )
    return new, keep


def replace_subgrid_pou(sub: Subgrid, pou: np.ndarray) -> Subgrid:
    return Subgrid(
        name=sub.name,
        kind=sub.kind,
        shape=sub.shape,
        step=sub.step,
        x0=sub.x0,
        y0=sub.y0,
        periodic=sub.periodic,
        z_chart=sub.z_chart,
        xi=sub.xi,
        z=sub.z,
        tprime=sub.tprime,
        pou=pou,
    )


# ---------------------------------------------------------------------------
# local vector fields and the glued map


@dataclass(frozen=True)
class LocalField:
    """Log field of a curve around a fixed base value, as chart tangent pairs."""

    base: np.ndarray
    chart: int
    curve: object

    def at(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex).reshape(-1)
        vals = canonicalize(np.asarray(self.curve.at_points(z, 0), dtype=complex))
        base = np.broadcast_to(self.base, vals.shape)
        return log_many(base, self.chart, vals)


def local_fields(cfg: GluingConfiguration, params: GluingParameters, i: int):
    """Log fields of the background and of piece i around w(x_i).

    The background field is valid for |z - x_i| <= 3/(delta R), the piece
    field for bubble coordinates |zeta| >= delta R / 3; sampled rings on
    both domains must stay inside the injectivity radius.
    """
    x = cfg.points[i]
    p = canonicalize(np.asarray(cfg.w.at_points(np.array([x]), 0), dtype=complex))[0]
    chart = int(np.argmax(np.abs(p)))
    dR = params.delta * params.R
    margin = 0.98 * INJECTIVITY_RADIUS
    angles = np.exp(2j * np.pi * np.arange(24) / 24)
    for frac in (0.3, 1.0, 2.0, 3.0):
        ring = x + (frac / dR) * angles
        vals = canonicalize(np.asarray(cfg.w.at_points(ring, 0), dtype=complex))
        if float(np.max(distance_many(np.broadcast_to(p, vals.shape), vals))) > margin:
            raise ValueError("gluing scale too coarse")
    for frac in (1.0 / 3.0, 1.0, 8.0, 64.0):
        ring = (frac * dR) * angles
        vals = canonicalize(np.asarray(cfg.maps[i].at_points(ring, 0), dtype=complex))
        if float(np.max(distance_many(np.broadcast_to(p, vals.shape), vals))) > margin:
            raise ValueError("gluing scale too coarse")
    return LocalField(p, chart, cfg.w), LocalField(p, chart, cfg.maps[i])


def glued_map_source(cfg: GluingConfiguration, params: GluingParameters) -> Callable:
    """The three-case gluing formula as an exact callable (z, chart) -> values."""
    fields = [local_fields(cfg, params, i) for i in range(cfg.k)]
    rho = params.rho
    r_in = params.inner_radius
    r_out = params.outer_radius
    R2 = params.R**2
    dR = params.delta * params.R

    def source(z, chart=0):
        z = np.asarray(z, dtype=complex).reshape(-1)
        out = canonicalize(np.asarray(cfg.w.at_points(z, chart), dtype=complex))
        charts = np.broadcast_to(np.asarray(chart, dtype=int), z.shape)
        finite = np.isfinite(z.real) & np.isfinite(z.imag)
        pos = np.where(finite, z, 0.0).astype(complex)
        flip = (charts == 1) & finite & (z != 0)
        pos[flip] = 1.0 / z[flip]
        usable = finite & ~((charts == 1) & (z == 0))
        for i, x in enumerate(cfg.points):
            off = pos - x
            r = np.where(usable, np.abs(off), np.inf)
            m_bub = r <= r_in
            if np.any(m_bub):
                out[m_bub] = canonicalize(
                    np.asarray(cfg.maps[i].at_points(off[m_bub] * R2, 0), dtype=complex)
                )
            m_ann = (r > r_in) & (r < r_out)
            if np.any(m_ann):
                W, U = fields[i]
                ramp_w = np.asarray(rho(dR * off[m_ann]), dtype=float)
                ramp_u = np.asarray(rho(params.delta / (params.R * off[m_ann])), dtype=float)
                vel = ramp_w[:, None] * W.at(pos[m_ann]) + ramp_u[:, None] * U.at(off[m_ann] * R2)
                base = np.broadcast_to(W.base, (vel.shape[0], 3))
                out[m_ann] = exp_many(base, W.chart, vel)
        return out

    return source


def approximate_glue(cfg: GluingConfiguration, params: GluingParameters) -> DiscreteMap:
    """Sample the three-case formula on the patched grid."""
    grid = GluedGrid(params, cfg.points)
    return sample_map(glued_map_source(cfg, params), grid)


# ---------------------------------------------------------------------------
# matching operator


def _point_tangent(p: np.ndarray, v: np.ndarray, chart: int) -> np.ndarray:
    """Chart-coordinate tangent at homogeneous p along homogeneous direction v."""
    slots = [s for s in range(3) if s != chart]
    pc = p[chart]
    return np.array([v[s] / pc - p[s] * v[chart] / pc**2 for s in slots], dtype=complex)


def _as_linear_curve(u) -> LinearCurve:
    if isinstance(u, LinearCurve):
        return u
    if isinstance(u, RationalMap):
        return LinearCurve.from_rational(u)
    raise ValueError("matching operator check needs algebraic degree-one pieces")


def _piece_frames(cfg: GluingConfiguration):
    """Tangent/normal frames of w at each x_i and of each u_i at infinity.

    Both frames live in the chart of the shared value w(x_i): the curve
    direction plus the projection of a constant complement vector, so the
    split line-bundle section values recombine into honest tangent vectors.
    """
    wline = _as_linear_curve(cfg.w)
    a0, a1 = wline.matrix[:, 0], wline.matrix[:, 1]
    comp_w = np.conj(np.cross(a0, a1))
    frames = []
    for i, x in enumerate(cfg.points):
        raw = x * a0 + a1
        p = canonicalize(raw)
        chart = int(np.argmax(np.abs(p)))
        e_t_w = _point_tangent(raw, a0, chart)
        e_n_w = _point_tangent(raw, comp_w, chart)
        uline = _as_linear_curve(cfg.maps[i])
        b0, b1 = uline.matrix[:, 0], uline.matrix[:, 1]
        comp_u = np.conj(np.cross(b0, b1))
        e_t_u = _point_tangent(b0, b1, chart)
        e_n_u = _point_tangent(b0, comp_u, chart)
        frames.append(
            {
                "chart": chart,
                "w": np.stack([e_t_w, e_n_w], axis=1),
                "u": np.stack([e_t_u, e_n_u], axis=1),
            }
        )
    return frames


def matching_operator_check(
    cfg: GluingConfiguration,
    rank_tolerance: float = 1e-6,
    extra_vanishing: int = 0,
):
    """Surjectivity of the product dbar operator on end-matched section tuples.

    Each degree-one piece contributes an O(2) + O(1) block pair through the
    tangent/normal splitting of its pullback bundle; constraint rows pin the
    background sections at infinity and tie each piece's value at infinity
    to the background value at its insertion point.  Returns (surjective,
    cokernel dimension) of the operator restricted to the constraint kernel.
    extra_vanishing appends that many synthetic point conditions per piece.
    """
    wline = _as_linear_curve(cfg.w)
    s = np.linalg.svd(wline.matrix, compute_uv=False)
    if s[-1] <= 1e-9:
        raise ValueError("background curve is not an immersion")
    frames = _piece_frames(cfg)
    op2 = GeneralizedDbarOperator(LineBundle(2), a=None, resolution=20)
    op1 = GeneralizedDbarOperator(LineBundle(1), a=None, resolution=20)
    A2 = _equilibrate_rows(op2.assemble())
    A1 = _equilibrate_rows(op1.assemble())
    k = cfg.k
    blocks = [A2, A1] * (k + 1)
    A = sp.block_diag(blocks, format="csr")
    ncols = A.shape[1]
    offs = np.cumsum([0] + [b.shape[1] for b in blocks])
    rows = []

    def add_complex(parts):
        """parts: list of (piece, which block, complex coefficient row)."""
        top = np.zeros(ncols)
        bot = np.zeros(ncols)
        for piece, which, crow in parts:
            off = offs[2 * piece + which]
            half = (offs[2 * piece + which + 1] - off) // 2
            top[off : off + half] += crow.real
            top[off + half : off + 2 * half] += -crow.imag
            bot[off : off + half] += crow.imag
            bot[off + half : off + 2 * half] += crow.real
        rows.append(top)
        rows.append(bot)

    inf2 = _evaluation_rows(op2, None)
    inf1 = _evaluation_rows(op1, None)
    add_complex([(0, 0, inf2)])
    add_complex([(0, 1, inf1)])
    for i, x in enumerate(cfg.points):
        at2 = _evaluation_rows(op2, x)
        at1 = _evaluation_rows(op1, x)
        Fw = frames[i]["w"]
        Fu = frames[i]["u"]
        for comp in range(2):
            add_complex(
                [
                    (0, 0, Fw[comp, 0] * at2),
                    (0, 1, Fw[comp, 1] * at1),
                    (i + 1, 0, -Fu[comp, 0] * inf2),
                    (i + 1, 1, -Fu[comp, 1] * inf1),
                ]
            )
    if extra_vanishing:
        probes = np.array([0.37 - 0.21j, -0.11 + 0.4j, 0.52 + 0.18j, -0.33 - 0.38j])
        for piece in range(k + 1):
            for q in range(extra_vanishing):
                which = q % 2
                opx = op2 if which == 0 else op1
                add_complex([(piece, which, _evaluation_rows(opx, complex(probes[q % 4])))])

    C = np.array(rows)
    Q = sla.null_space(C)
    rest = A @ Q
    svals = np.linalg.svd(rest, compute_uv=False)
    threshold = rank_tolerance * svals[0]
    _gap_guard(svals, threshold)
    rank = int(np.count_nonzero(svals >= threshold))
    coker_r = A.shape[0] - rank
    if coker_r % 2:
        raise RuntimeError(f"index consistency check failed: odd cokernel dimension {coker_r}")
    coker = coker_r // 2
    return coker == 0, coker


# ---------------------------------------------------------------------------
# Newton correction


@dataclass
class CorrectionField:
    """Tangent correction returned by the solver, with its convergence record."""

    values: tuple
    chart: tuple
    residual: float
    iterations: int
    trace: tuple


def _fs_cholesky_rows(zeta: np.ndarray) -> np.ndarray:
    """Conjugate-transposed Cholesky factors of the FS metric, (n, 2, 2)."""
    H = hermitian_metric(zeta)
    l11 = np.sqrt(np.maximum(H[:, 0, 0].real, 1e-300))
    l21 = H[:, 1, 0] / l11
    l22 = np.sqrt(np.maximum(H[:, 1, 1].real - np.abs(l21) ** 2, 1e-300))
    out = np.zeros_like(H)
    out[:, 0, 0] = l11
    out[:, 0, 1] = np.conj(l21)
    out[:, 1, 1] = l22
    return out


def _aligned_window(charts, rolled):
    slot = np.abs(rolled[np.arange(rolled.shape[0]), charts])
    if np.any(slot < _SLOT_TOL):
        raise ValueError("neighboring values straddle chart cut")
    return coords_in_chart(rolled, charts)


def _patch_symbol(sub: Subgrid, taps, diss: float) -> np.ndarray:
    """Lattice Fourier symbol of the frozen row operator on one patch.

    Constant-coefficient caricature: the level's derivative stencil at the
    standard complex structure plus its dissipation.  The magnitude is
    clamped away from zero so division is always safe; the clamped modes
    (the constant and its neighbors) are the coupled directions the outer
    iteration resolves.
    """
    nx, ny = sub.shape

    def axis_coeff(t):
        s = np.zeros_like(t)
        q = np.zeros_like(t)
        for k, cd, cq in taps:
            s += cd * np.sin(k * t)
            q += cq * np.cos(k * t)
        return 0.5 * s + diss * q

    tx = 2.0 * np.pi * np.arange(nx) / nx
    ty = 2.0 * np.pi * np.arange(ny) / ny
    a = axis_coeff(tx) / sub.step[0]
    b = axis_coeff(ty) / sub.step[1]
    sig = 1j * a[:, None] - b[None, :]
    mag = np.abs(sig)
    floor = 0.002 * mag.max()
    lift = np.maximum(mag, floor) / np.maximum(mag, 1e-300)
    sig = sig * lift
    sig[mag < 1e-300] = floor
    return sig


def _chart0_of(xi1):
    out = np.full(xi1.shape, np.inf, dtype=complex)
    nz = xi1 != 0
    out[nz] = 1.0 / xi1[nz]
    return out


def _owned_indices(grid, idx: int, margin: int = _MARGIN) -> np.ndarray:
    if hasattr(grid, "owned_mask"):
        return np.nonzero(grid.owned_mask(idx, margin))[0]
    return np.nonzero(grid.subgrids[idx].interior_mask(margin))[0]


def _donor_route(grid, z):
    if hasattr(grid, "donor_of"):
        return grid.donor_of(z)
    z = np.asarray(z, dtype=complex).reshape(-1)
    sub = np.where(np.abs(z) <= 1.0, 0, 1).astype(np.int64)
    xi = np.where(sub == 0, z, 0.0).astype(complex)
    far = sub == 1
    xi[far] = 1.0 / z[far]
    return sub, xi


_TAPS = 2 * _MARGIN  # interpolation points per axis


def _lagrange_row(t):
    offs = np.arange(1 - _MARGIN, _MARGIN + 1, dtype=float)
    w = np.ones((t.size, _TAPS))
    for a in range(_TAPS):
        for b in range(_TAPS):
            if a != b:
                w[:, a] *= (t - offs[b]) / (offs[a] - offs[b])
    return w


def _window(sub: Subgrid, xiq: np.ndarray):
    """Tensor interpolation stencil on a subgrid lattice, one order above
    the difference stencils.

    Returns (node ids, weights), both (q, _TAPS**2); the weights reproduce
    node values exactly when a query sits on the lattice.
    """
    nx, ny = sub.shape
    fx = (xiq.real - sub.x0) / sub.step[0]
    fy = (xiq.imag - sub.y0) / sub.step[1]
    if sub.periodic[1]:
        fy = np.mod(fy, ny)
    lo, hi = _MARGIN - 1, _MARGIN
    ax = np.clip(np.floor(fx).astype(np.int64), lo, nx - 1 - hi)
    ay_raw = np.floor(fy).astype(np.int64)
    ay = ay_raw if sub.periodic[1] else np.clip(ay_raw, lo, ny - 1 - hi)
    wx = _lagrange_row(fx - ax)
    wy = _lagrange_row(fy - ay)
    offs = np.arange(1 - _MARGIN, _MARGIN + 1)
    ox = np.clip(ax[:, None] + offs, 0, nx - 1)
    oy = ay[:, None] + offs
    oy = np.mod(oy, ny) if sub.periodic[1] else np.clip(oy, 0, ny - 1)
    ids = (ox[:, :, None] * ny + oy[:, None, :]).reshape(-1, _TAPS * _TAPS)
    wts = (wx[:, :, None] * wy[:, None, :]).reshape(-1, _TAPS * _TAPS)
    return ids, wts


def _hom_from(zeta, charts):
    n = zeta.shape[0]
    out = np.empty((n, 3), dtype=complex)
    for cval in np.unique(charts):
        m = charts == cval
        slots = [s for s in range(3) if s != cval]
        out[m, cval] = 1.0
        out[m, slots[0]] = zeta[m, 0]
        out[m, slots[1]] = zeta[m, 1]
    return out


def _window_value(vals, charts, ids, wts):
    """Interpolate homogeneous values through a window in a common chart."""
    q, taps = ids.shape
    center = ids[np.arange(q), np.argmax(np.abs(wts), axis=1)]
    c = charts[center].astype(np.int64)
    window = vals[ids]  # (q, taps, 3)
    flat = window.reshape(-1, 3)
    ct = np.repeat(c, taps)
    slot = np.abs(flat[np.arange(flat.shape[0]), ct]).reshape(q, taps)
    good = np.min(slot, axis=1) >= _SLOT_TOL
    out = np.empty((q, 3), dtype=complex)
    if np.any(good):
        gi = np.nonzero(good)[0]
        zeta = coords_in_chart(
            window[gi].reshape(-1, 3), np.repeat(c[gi], taps)
        ).reshape(len(gi), taps, 2)
        mix = np.einsum("qt,qtc->qc", wts[gi], zeta)
        out[gi] = canonicalize(_hom_from(mix, c[gi]))
    if np.any(~good):
        bi = np.nonzero(~good)[0]
        out[bi] = vals[center[bi]]
    return out


@dataclass(frozen=True)
class _FrozenMap:
    """Grid, values, and charts of a linearization point on one level."""

    grid: object
    values: tuple
    value_chart: tuple


def _can_coarsen(grid) -> bool:
    for sub in grid.subgrids:
        nx, ny = sub.shape
        for n, per in ((nx, sub.periodic[0]), (ny, sub.periodic[1])):
            if per and n % 2:
                return False
            if n // 2 < _TAPS:
                return False
    return True


class _NewtonSystem:
    """Frozen-frame Gauss-Newton data for one map on one overset grid.

    Unknowns are chart tangent pairs per node in the initial map's value
    charts.  Every node carries exactly one block of equations: a
    Cauchy-Riemann row of the level's stencil where its patch owns clean
    taps, an interpolation tie to the resolving donor patch otherwise,
    and a pin at the infinity node, so the assembled system is square and
    each equation block sits at its own node's slot.  The reported
    residual is the partition-weighted L2 of the Cauchy-Riemann rows
    alone.  Below the top level the same structure recurs on subsampled
    grids with a one-ring stencil; the chain ends in a damped direct
    factorization and supplies the V-cycle preconditioner.
    """

    def __init__(self, u0: DiscreteMap, J, taps=_TAPS8, diss: float = _DISS):
        self.grid = u0.grid
        self.J = J
        self.base_values = u0.values
        self.charts = u0.value_chart
        self.taps = taps
        self.diss = diss
        self.margin = max(abs(k) for k, _, _ in taps)
        self.nsub = len(self.grid.subgrids)
        self.offsets = np.cumsum([0] + [s.size for s in self.grid.subgrids])
        self.total = int(self.offsets[-1])
        isub_pin, inode_pin = self.grid.infinity
        self.dbar_sel = []
        self.solve_scale = []
        self.report_w = []
        for i, sub in enumerate(self.grid.subgrids):
            sel = _owned_indices(self.grid, i, self.margin)
            if i == isub_pin:
                sel = sel[sel != inode_pin]
            self.dbar_sel.append(sel)
            self.solve_scale.append(np.sqrt(sub.cell))
            self.report_w.append(sub.pou[sel] * sub.cell)
        self._match_tables()

        def slots_of(node_ids):
            return (4 * node_ids[:, None] + np.arange(4)).reshape(-1)

        self.dbar_slots = np.concatenate(
            [slots_of(self.dbar_sel[i] + self.offsets[i]) for i in range(self.nsub)]
        )
        mparts = [np.zeros(0, dtype=np.int64)]
        for i in range(self.nsub):
            for j, (sel, ids, wts) in self.match[i].items():
                mparts.append(slots_of(sel + self.offsets[i]))
        self.match_slots = np.concatenate(mparts)
        self.pin_slots = slots_of(np.array([inode_pin + self.offsets[isub_pin]]))
        self.symbol = [
            _patch_symbol(sub, self.taps, self.diss) for sub in self.grid.subgrids
        ]
        self.descale = None
        self.matrix = None
        self.bottom = None
        self.coarse = None
        if self.total > _COARSE_STOP and _can_coarsen(self.grid):
            cgrid = self.grid.coarsened()
            idx = cgrid.fine_index
            cu0 = _FrozenMap(
                cgrid,
                tuple(u0.values[i][idx[i]] for i in range(self.nsub)),
                tuple(u0.value_chart[i][idx[i]] for i in range(self.nsub)),
            )
            self.coarse = _NewtonSystem(cu0, J, taps=_TAPS2, diss=_DISS2)
            self.prolong = self._build_prolong()
            self.restrict = (0.5 * self.prolong.T).tocsr()

    def _match_tables(self):
        """For every non-owned node: donor patch, window ids, weights."""
        grid = self.grid
        isub_pin, inode_pin = grid.infinity
        self.match = []
        for i, sub in enumerate(grid.subgrids):
            mask = np.ones(sub.size, dtype=bool)
            mask[self.dbar_sel[i]] = False
            if i == isub_pin:
                mask[inode_pin] = False
            sel = np.nonzero(mask)[0]
            if sel.size == 0:
                self.match.append({})
                continue
            z = sub.z[sel] if sub.z_chart == 0 else _chart0_of(sub.z[sel])
            donor, xiq = _donor_route(grid, z)
            if np.any(donor == i):
                raise RuntimeError("node would interpolate from its own patch")
            groups = {}
            for j in np.unique(donor):
                pick = donor == j
                ids, wts = _window(grid.subgrids[int(j)], xiq[pick])
                groups[int(j)] = (sel[pick], ids, wts)
            self.match.append(groups)

    # ---- nonlinear evaluation -------------------------------------------

    def current_values(self, xi):
        return tuple(
            exp_many(self.base_values[i], self.charts[i], xi[i]) for i in range(self.nsub)
        )

    def dbar_residual(self, values):
        """Scaled dbar rows of this level; returns (solver rows, reported L2)."""
        parts = []
        total = 0.0
        for i, sub in enumerate(self.grid.subgrids):
            sel = self.dbar_sel[i]
            if sel.size == 0:
                continue
            vals = values[i]
            nx, ny = sub.shape
            v2 = vals.reshape(nx, ny, 3)
            c = self.charts[i][sel].astype(np.int64)
            dx = np.zeros((sel.size, 2), dtype=complex)
            dy = np.zeros((sel.size, 2), dtype=complex)
            qx = np.zeros((sel.size, 2), dtype=complex)
            qy = np.zeros((sel.size, 2), dtype=complex)
            for k, cd, cq in self.taps:
                east = np.roll(v2, -k, axis=0).reshape(-1, 3)[sel]
                north = np.roll(v2, -k, axis=1).reshape(-1, 3)[sel]
                ax = _aligned_window(c, east)
                ay = _aligned_window(c, north)
                if cd != 0.0:
                    dx += cd * ax
                    dy += cd * ay
                qx += cq * ax
                qy += cq * ay
            dx /= sub.step[0]
            dy /= sub.step[1]
            jm = self.J.matrix_many(vals[sel], charts=c)
            jdy = real_to_complex_vec(np.einsum("nab,nb->na", jm, complex_to_real_vec(dy)))
            eta = 0.5 * (dx + jdy)
            # phases i and -1 keep the dissipation symbol from cancelling the
            # derivative symbol anywhere on the lattice
            diss = self.diss * (1j * qx / sub.step[0] - qy / sub.step[1])
            zeta = coords_in_chart(vals[sel], c)
            LH = _fs_cholesky_rows(zeta)
            fs_rows = np.einsum("nab,nb->na", LH, eta)
            fs_solve = fs_rows + np.einsum("nab,nb->na", LH, diss)
            parts.append((fs_solve * self.solve_scale[i]).reshape(-1))
            total += float(np.sum(self.report_w[i] * np.sum(np.abs(fs_rows) ** 2, axis=1)))
        flat = np.concatenate(parts) if parts else np.zeros(0, dtype=complex)
        return flat, float(np.sqrt(total))

    def match_residual(self, values):
        """Log-vector tie rows between non-owned nodes and their donors."""
        parts = []
        for i in range(self.nsub):
            for j, (sel, ids, wts) in self.match[i].items():
                target = _window_value(values[j], self.charts[j], ids, wts)
                vel = log_many(values[i][sel], self.charts[i][sel].astype(np.int64), target)
                parts.append(vel.reshape(-1))
        return np.concatenate(parts) if parts else np.zeros(0, dtype=complex)

    def full_residual(self, values):
        dflat, l2 = self.dbar_residual(values)
        mflat = self.match_residual(values)
        y = np.zeros(self.total * 4)
        y[self.dbar_slots] = complex_to_real_vec(dflat.reshape(-1, 2)).reshape(-1)
        y[self.match_slots] = complex_to_real_vec(mflat.reshape(-1, 2)).reshape(-1)
        return y, l2

    # ---- frozen Jacobian -------------------------------------------------

    def build_matrix(self, values):
        rows_i = []
        cols_i = []
        data = []

        def put_blocks(row_global, col_global, blocks):
            # row placement by owning node keeps the diagonal intact, which
            # the fill-reducing ordering of the factorization depends on
            n = row_global.size
            rr = (row_global[:, None, None] * 4 + np.arange(4)[None, :, None]).astype(np.int64)
            cc = (col_global[:, None, None] * 4 + np.arange(4)[None, None, :]).astype(np.int64)
            rows_i.append(np.broadcast_to(rr, (n, 4, 4)).reshape(-1))
            cols_i.append(np.broadcast_to(cc, (n, 4, 4)).reshape(-1))
            data.append(blocks.reshape(-1))

        for i, sub in enumerate(self.grid.subgrids):
            sel = self.dbar_sel[i]
            if sel.size == 0:
                continue
            vals = values[i]
            charts = self.charts[i]
            nx, ny = sub.shape
            c = charts[sel].astype(np.int64)
            zeta = coords_in_chart(vals[sel], c)
            LH = clinear_to_real(_fs_cholesky_rows(zeta)) * self.solve_scale[i]
            jm = self.J.matrix_many(vals[sel], charts=c)
            Sx = 0.5 * LH
            Sy = 0.5 * np.einsum("nab,nbc->nac", LH, jm)
            flat_ids = np.arange(nx * ny).reshape(nx, ny)
            rot = clinear_to_real(1j * np.eye(2, dtype=complex)[None])[0]
            LHx = self.diss * np.einsum("nab,bc->nac", LH, rot)
            LHy = -self.diss * LH
            for axis in (0, 1):
                S = Sx if axis == 0 else Sy
                Q = LHx if axis == 0 else LHy
                step = sub.step[axis]
                for k, cd, cq in self.taps:
                    nb = np.roll(flat_ids, -k, axis=axis).reshape(-1)[sel]
                    M = transition_jacobian(vals[nb], charts[nb].astype(np.int64), c)
                    W = (cd * S + cq * Q) / step
                    B = np.einsum("nab,nbc->nac", W, clinear_to_real(M))
                    put_blocks(sel + self.offsets[i], nb + self.offsets[i], B)

        for i in range(self.nsub):
            for j, (sel, ids, wts) in self.match[i].items():
                n = sel.size
                eye = np.broadcast_to(-np.eye(4), (n, 4, 4))
                put_blocks(sel + self.offsets[i], sel + self.offsets[i], eye)
                ctr = self.charts[i][sel].astype(np.int64)
                for t in range(ids.shape[1]):
                    nb = ids[:, t]
                    M = transition_jacobian(
                        values[j][nb], self.charts[j][nb].astype(np.int64), ctr
                    )
                    B = clinear_to_real(M) * wts[:, t][:, None, None]
                    put_blocks(sel + self.offsets[i], nb + self.offsets[j], B)

        isub, inode = self.grid.infinity
        pin = np.array([inode + self.offsets[isub]])
        put_blocks(pin, pin, np.broadcast_to(np.eye(4), (1, 4, 4)).copy())

        self.matrix = sp.csr_matrix(
            (np.concatenate(data), (np.concatenate(rows_i), np.concatenate(cols_i))),
            shape=(self.total * 4, self.total * 4),
        )

        descale = []
        for i, sub in enumerate(self.grid.subgrids):
            zeta = coords_in_chart(values[i], self.charts[i].astype(np.int64))
            L = _fs_cholesky_rows(zeta)
            inv = np.zeros_like(L)
            inv[:, 0, 0] = 1.0 / L[:, 0, 0]
            inv[:, 0, 1] = -L[:, 0, 1] / (L[:, 0, 0] * L[:, 1, 1])
            inv[:, 1, 1] = 1.0 / L[:, 1, 1]
            descale.append(inv / np.sqrt(sub.cell))
        self.descale = descale

        if self.coarse is not None:
            idx = self.coarse.grid.fine_index
            self.coarse.build_matrix(
                tuple(values[i][idx[i]] for i in range(self.nsub))
            )
        else:
            # bottom of the chain: damped normal-equation factorization; the
            # damping bounds the solve along the near-kernel of the level
            at = self.matrix.T.tocsr()
            gram = (at @ self.matrix).tocsc()
            lam = _BOTTOM_DAMP * float(gram.diagonal().mean())
            lu = splu(gram + lam * sp.identity(gram.shape[0], format="csc"))
            self.bottom = lambda y: lu.solve(at @ y)

    def _build_prolong(self):
        """Patchwise bilinear map from coarse corrections to fine ones.

        Donor values may sit in a different chart than the fine node, so
        each weight carries the chart transition block at the donor.
        """
        coarse = self.coarse
        rows, cols, data = [], [], []
        for i, (sf, sc) in enumerate(zip(self.grid.subgrids, coarse.grid.subgrids)):
            nxf, nyf = sf.shape
            nxc, nyc = sc.shape
            fx = (sf.x0 + np.arange(nxf) * sf.step[0] - sc.x0) / sc.step[0]
            fy = (sf.y0 + np.arange(nyf) * sf.step[1] - sc.y0) / sc.step[1]
            fx = fx % nxc if sc.periodic[0] else np.clip(fx, 0.0, nxc - 1.0)
            fy = fy % nyc if sc.periodic[1] else np.clip(fy, 0.0, nyc - 1.0)
            ix0 = np.floor(fx).astype(np.int64)
            iy0 = np.floor(fy).astype(np.int64)
            tx = fx - ix0
            ty = fy - iy0
            ix1 = (ix0 + 1) % nxc if sc.periodic[0] else np.minimum(ix0 + 1, nxc - 1)
            iy1 = (iy0 + 1) % nyc if sc.periodic[1] else np.minimum(iy0 + 1, nyc - 1)
            fnode = np.arange(nxf * nyf)
            cf = self.charts[i].astype(np.int64)
            cc = coarse.charts[i].astype(np.int64)
            for ix, wx in ((ix0, 1.0 - tx), (ix1, tx)):
                for iy, wy in ((iy0, 1.0 - ty), (iy1, ty)):
                    cn = (ix[:, None] * nyc + iy[None, :]).reshape(-1)
                    w = (wx[:, None] * wy[None, :]).reshape(-1)
                    keep = w > 1e-12
                    fn = fnode[keep]
                    cn = cn[keep]
                    T = transition_jacobian(
                        coarse.base_values[i][cn], cc[cn], cf[fn]
                    )
                    B = clinear_to_real(T) * w[keep][:, None, None]
                    fr = 4 * (fn + self.offsets[i])
                    cr = 4 * (cn + coarse.offsets[i])
                    for a in range(4):
                        for b in range(4):
                            rows.append(fr + a)
                            cols.append(cr + b)
                            data.append(B[:, a, b])
        return sp.csr_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.total * 4, coarse.total * 4),
        )

    def _patch_solve(self, y):
        """Approximate solve of the frozen system, split by equation type.

        Interpolation ties and the pin are solved by their own diagonal
        first; their coupling into nearby stencil rows moves to the right
        hand side.  What is left is treated as a constant-coefficient
        operator per patch: descale rows by the metric factors, divide by
        the lattice symbol in Fourier space, transform back.
        """
        xh = np.zeros_like(y)
        xh[self.match_slots] = -y[self.match_slots]
        xh[self.pin_slots] = y[self.pin_slots]
        y2 = y - self.matrix @ xh
        y2[self.match_slots] = 0.0
        y2[self.pin_slots] = 0.0
        for i, sub in enumerate(self.grid.subgrids):
            sl = slice(4 * self.offsets[i], 4 * self.offsets[i + 1])
            yc = real_to_complex_vec(y2[sl].reshape(-1, 4))
            yc = np.einsum("nab,nb->na", self.descale[i], yc)
            nx, ny = sub.shape
            F = np.fft.fft2(yc.reshape(nx, ny, 2), axes=(0, 1))
            F /= self.symbol[i][:, :, None]
            xc = np.fft.ifft2(F, axes=(0, 1)).reshape(-1, 2)
            xh[sl] += complex_to_real_vec(xc).reshape(-1)
        return xh

    def precondition(self, y):
        """One V-cycle down the level chain, as an approximate inverse.

        Patchwise solves capture everything local; what they miss is the
        smooth cross-patch content, which the subsampled levels correct.
        """
        y = np.asarray(y, dtype=float)
        if self.coarse is None:
            return self.bottom(y)
        x = self._patch_solve(y)
        x += self.prolong @ self.coarse.precondition(
            self.restrict @ (y - self.matrix @ x)
        )
        x += self._patch_solve(y - self.matrix @ x)
        return x


def correct_map(
    u0: DiscreteMap,
    J=None,
    tol: float = 1e-8,
    max_iter: int = 25,
    _system: Optional[_NewtonSystem] = None,
):
    """Drive a discrete map to J-holomorphy by damped Gauss-Newton steps.

    Each step solves the frozen linearized system by a Krylov iteration
    preconditioned with the V-cycle; the damping at the bottom of the
    cycle keeps the step bounded along the deformation moduli of the
    current map, which the square system cannot pin down.  The correction
    is a tangent field in the initial map's frames; the infinity node is
    pinned so the base value never moves.  Returns the corrected map and
    the correction record; raises on stagnation or when the iteration cap
    is hit before the dbar rows reach tol in L2.
    """
    if J is None:
        J = STANDARD_J
    system = _NewtonSystem(u0, J) if _system is None else _system
    isub, inode = u0.grid.infinity
    xi = [np.zeros((v.shape[0], 2), dtype=complex) for v in u0.values]
    values = system.current_values(xi)
    full, l2 = system.full_residual(values)
    merit = float(np.linalg.norm(full))
    trace = [l2]
    iterations = 0
    fresh = False
    while l2 > tol:
        if iterations >= max_iter:
            raise ValueError(
                f"no convergence after {max_iter} iterations; residual trace {trace}"
            )
        if system.matrix is None:
            system.build_matrix(values)
            fresh = True
        opM = LinearOperator(system.matrix.shape, matvec=system.precondition)
        delta, _ = gmres(
            system.matrix,
            -full,
            rtol=1e-10,
            atol=0.0,
            restart=150,
            maxiter=3,
            M=opM,
        )
        step = 1.0
        improved = False
        for _ in range(9):
            cand = [
                xi[i]
                + step
                * real_to_complex_vec(
                    delta[4 * system.offsets[i] : 4 * system.offsets[i + 1]].reshape(-1, 4)
                )
                for i in range(system.nsub)
            ]
            cand[isub][inode] = 0.0
            cand_values = system.current_values(cand)
            cand_full, cand_l2 = system.full_residual(cand_values)
            cand_merit = float(np.linalg.norm(cand_full))
            if cand_merit < merit:
                improved = True
                break
            step *= 0.5
        if not improved:
            if fresh:
                raise ValueError(f"no convergence: stalled; residual trace {trace}")
            system.build_matrix(values)
            fresh = True
            continue
        slow = cand_merit > 0.3 * merit
        xi, values, full, l2, merit = cand, cand_values, cand_full, cand_l2, cand_merit
        trace.append(l2)
        iterations += 1
        fresh = False
        if slow and l2 > tol:
            system.build_matrix(values)
            fresh = True
    corrected = DiscreteMap(u0.grid, tuple(values), u0.value_chart, based=u0.based, source=None)
    record = CorrectionField(
        values=tuple(xi),
        chart=u0.value_chart,
        residual=l2,
        iterations=iterations,
        trace=tuple(trace),
    )
    return corrected, record


def newton_correct(
    cfg: GluingConfiguration,
    params: GluingParameters,
    J=None,
    tol: float = 1e-8,
    max_iter: int = 25,
    basin_threshold: float = 0.5,
):
    """Approximate-glue then correct: the full gluing map of a configuration."""
    if J is None:
        J = STANDARD_J
    gamma = approximate_glue(cfg, params)
    system = _NewtonSystem(gamma, J)
    _, l2 = system.dbar_residual(gamma.values)
    if l2 > basin_threshold:
        raise ValueError(
            "approximate gluing outside the solver basin: increase R / decrease delta"
        )
    return correct_map(gamma, J=J, tol=tol, max_iter=max_iter, _system=system)


def residual_sweep(cfg: GluingConfiguration, params_list):
    """Rows of (delta, R, L2 residual, sup residual, degree) per parameter set."""
    from .field import dbar_nl, degree_area

    rows = []
    for params in params_list:
        gamma = approximate_glue(cfg, params)
        eta = dbar_nl(gamma, STANDARD_J)
        _, deg = degree_area(gamma)
        rows.append(
            {
                "delta": params.delta,
                "R": params.R,
                "l2": eta.l2_norm(),
                "sup": eta.sup_norm(),
                "degree": deg,
            }
        )
    return rows


def random_configuration(rng, k: int, params: GluingParameters, w=None) -> GluingConfiguration:
    """Draw a valid configuration: separated points and matching linear pieces."""
    if w is None:
        # anchor the three branch constants apart so no chart rep carries a
        # small-residue pole near the sampled region
        anchors = np.array([1.0 + 0.0j, 0.0 + 0.0j, -1.0 + 0.0j])
        jitter = 0.25 * np.sqrt(rng.uniform(0.0, 1.0, 3)) * np.exp(
            2j * np.pi * rng.uniform(0.0, 1.0, 3)
        )
        w = RationalMap(tuple((complex(c),) for c in anchors + jitter))
    reach = _patch_scales(params)[4]
    fit = 5.0 / 6.0 - reach - 1e-9
    sep = max(params.epsilon, 2.0 * reach) + 1e-9
    if fit <= 0.0:
        raise ValueError("insertion too close to the unit circle for the patched grid")
    for _ in range(2000):
        pts = (
            fit
            * np.sqrt(rng.uniform(0.0, 1.0, size=k))
            * np.exp(2j * np.pi * rng.uniform(0.0, 1.0, size=k))
        )
        if all(abs(pts[i] - pts[j]) >= sep for i in range(k) for j in range(i + 1, k)):
            break
    else:
        # tight geometries: fall back to a jittered ring at a random rotation
        ring = 0.97 * fit
        if k > 1 and 2.0 * ring * np.sin(np.pi / k) < sep:
            raise ValueError("could not place separated insertion points")
        rot = 2.0 * np.pi * rng.uniform()
        angles = rot + 2.0 * np.pi * np.arange(k) / k
        pts = ring * np.exp(1j * angles)
    targets = canonicalize(np.asarray(w.at_points(pts, 0), dtype=complex))
    maps = []
    for i in range(k):
        m = None
        for _ in range(50):
            second = rng.normal(size=3) + 1j * rng.normal(size=3)
            m = np.stack([targets[i], second / np.linalg.norm(second)], axis=1)
            if np.linalg.svd(m, compute_uv=False)[-1] > 0.15:
                break
        maps.append(LinearCurve(m))
    return make_config(w, pts, maps, params)
