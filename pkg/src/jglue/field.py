"""Discretized maps from the sphere to CP^2 and their Cauchy-Riemann data.

The sphere is covered by two stereographic squares glued along |z| = 1 with a
logarithmically symmetric partition of unity; richer domains reuse the same
machinery by exposing extra subgrids.  Everything downstream (the nonlinear
and linearized dbar operators, symplectic-area degree, weighted norms) is
generic over that subgrid list, caring only about local steps, global chart
positions, and quadrature data.
"""

from __future__ import annotations

from dataclasses import dataclass, field as _dc_field
from typing import Callable, Optional

import numpy as np

from .projective import (
    canonicalize,
    christoffel_contract,
    complex_to_real_vec,
    coords_in_chart,
    distance_many,
    exp_many,
    from_chart_coords,
    hermitian_pair,
    real_to_complex_vec,
    smoothstep,
)

_POU_ORDER = 5  # keeps the two-chart quadrature of 1 at pi to ~1e-8 for N=64
_POU_LOG_HALF = np.log(1.2)
_STRADDLE_TOL = 0.2
_BASE_TOL = 1e-8


def pou_profile(r):
    """Radial partition value: 1 inside |z| <= 5/6, 0 outside |z| >= 1.2.

    Symmetric under r -> 1/r complementation, so the two charts sum to 1.
    """
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        u = (np.log(r) + _POU_LOG_HALF) / (2.0 * _POU_LOG_HALF)
    u = np.where(r <= 0.0, 0.0, u)
    return 1.0 - smoothstep(u, _POU_ORDER)


@dataclass(frozen=True)
class Subgrid:
    """One rectangular patch of nodes in a holomorphic local coordinate.

    xi = x + i y with x = x0 + i_x dx, y = y0 + i_y dy (row-major over
    shape); z is the node position in global chart z_chart and tprime is
    dz/dxi there, so FS-area weights and conversion factors follow.
    """

    name: str
    kind: str
    shape: tuple
    step: tuple
    x0: float
    y0: float
    periodic: tuple
    z_chart: int
    xi: np.ndarray
    z: np.ndarray
    tprime: np.ndarray
    pou: np.ndarray
    fs_weight: np.ndarray = _dc_field(init=False)
    conv: np.ndarray = _dc_field(init=False)

    def __post_init__(self):
        cell = self.step[0] * self.step[1]
        dens = (1.0 + np.abs(self.z) ** 2) ** 2
        object.__setattr__(
            self,
            "fs_weight",
            self.pou * cell * np.abs(self.tprime) ** 2 / dens,
        )
        object.__setattr__(
            self, "conv", (1.0 + np.abs(self.z) ** 2) / np.abs(self.tprime)
        )

    @property
    def cell(self) -> float:
        return self.step[0] * self.step[1]

    @property
    def size(self) -> int:
        return self.shape[0] * self.shape[1]

    def interior_mask(self, margin: int) -> np.ndarray:
        nx, ny = self.shape
        ok_x = np.ones(nx, dtype=bool)
        ok_y = np.ones(ny, dtype=bool)
        if not self.periodic[0]:
            ok_x[:margin] = ok_x[nx - margin :] = False
        if not self.periodic[1]:
            ok_y[:margin] = ok_y[ny - margin :] = False
        return np.outer(ok_x, ok_y).reshape(-1)


class SphereGrid:
    """Two-chart uniform discretization of the round sphere.

    Each chart is a square of spacing 2.4/N reaching a little past |z| = 1.2
    so every node carrying partition weight has full stencil margins; the
    infinity node is the center of the reciprocal chart.
    """

    def __init__(self, resolution: int):
        if resolution < 8 or resolution % 2:
            raise ValueError("resolution must be an even integer >= 8")
        self.resolution = resolution
        h = 2.4 / resolution
        self.h = h
        half = int(np.ceil(1.2 / h)) + 3
        axis = (np.arange(2 * half + 1) - half) * h
        gx, gy = np.meshgrid(axis, axis, indexing="ij")
        xi = (gx + 1j * gy).reshape(-1)
        pou = pou_profile(np.abs(xi))
        shape = (2 * half + 1, 2 * half + 1)
        ones = np.ones(xi.size)
        subs = []
        for idx, name in enumerate(("base0", "base1")):
            subs.append(
                Subgrid(
                    name=name,
                    kind="cartesian",
                    shape=shape,
                    step=(h, h),
                    x0=-half * h,
                    y0=-half * h,
                    periodic=(False, False),
                    z_chart=idx,
                    xi=xi,
                    z=xi,
                    tprime=ones.astype(complex),
                    pou=pou,
                )
            )
        self.subgrids = tuple(subs)
        center = half * shape[1] + half
        self.infinity = (1, center)

    def route(self, z, chart=0):
        """(subgrid index, local coordinate) for query points.

        chart says how z is expressed: 0 for the affine coordinate, 1 for
        its reciprocal; non-finite chart-0 input means the point at infinity.
        """
        z = np.asarray(z, dtype=complex).reshape(-1)
        charts = np.broadcast_to(np.asarray(chart, dtype=int), z.shape)
        finite = np.isfinite(z.real) & np.isfinite(z.imag)
        val = np.where(finite, z, 0.0)
        near = np.abs(val) <= 1.0
        sub = np.empty(z.size, dtype=np.int64)
        xi = np.empty(z.size, dtype=complex)
        own = near & finite
        sub[own] = np.where(charts[own] == 0, 0, 1)
        xi[own] = val[own]
        other = ~own
        flipped = np.empty(np.count_nonzero(other), dtype=complex)
        zo = z[other]
        fin = finite[other]
        flipped[fin] = 1.0 / zo[fin]
        flipped[~fin] = 0.0
        sub[other] = np.where(charts[other] == 0, 1, 0)
        xi[other] = flipped
        return sub, xi


# ---------------------------------------------------------------------------
# discrete maps


@dataclass
class DiscreteMap:
    """Node values of a sphere-to-CP^2 map over a grid's subgrids.

    values[i] holds canonical homogeneous rows for subgrid i and
    value_chart[i] the target chart each row's tangent data lives in; source,
    when present, is the exact callable the map was sampled from.
    """

    grid: object
    values: tuple
    value_chart: tuple
    based: bool = False
    source: Optional[Callable] = None

    def at_points(self, z, chart=0):
        """Canonical homogeneous values at arbitrary query points.

        Uses the exact source when available, cubic interpolation of node
        data otherwise.
        """
        z = np.asarray(z, dtype=complex).reshape(-1)
        if self.source is not None:
            return canonicalize(self.source(z, chart))
        sub_idx, xi = self.grid.route(z, chart)
        out = np.empty((z.size, 3), dtype=complex)
        for i, sub in enumerate(self.grid.subgrids):
            m = sub_idx == i
            if np.any(m):
                out[m] = _interp_projective(
                    sub, self.values[i], self.value_chart[i], xi[m]
                )
        return out

    def infinity_value(self):
        i, j = self.grid.infinity
        return self.values[i][j]


def sample_map(u, grid) -> DiscreteMap:
    """Evaluate a map object or callable on every node of the grid.

    u may expose .at_points(z, chart) or be a callable with that signature;
    the based flag records whether infinity lands on [1:1:1].
    """
    fn = u.at_points if hasattr(u, "at_points") else u
    values = []
    charts = []
    for sub in grid.subgrids:
        v = canonicalize(np.asarray(fn(sub.z, sub.z_chart), dtype=complex))
        values.append(v)
        charts.append(np.argmax(np.abs(v), axis=1).astype(np.int8))
    out = DiscreteMap(grid, tuple(values), tuple(charts), source=fn)
    base = out.infinity_value()
    out.based = bool(
        np.max(np.abs(base - np.ones(3) / np.sqrt(3.0))) < _BASE_TOL
    )
    return out


def _cubic_weights(t):
    """Catmull-Rom weights for offsets -1, 0, 1, 2 at fraction t."""
    t2 = t * t
    t3 = t2 * t
    return np.stack(
        [
            -0.5 * t + t2 - 0.5 * t3,
            1.0 - 2.5 * t2 + 1.5 * t3,
            0.5 * t + 2.0 * t2 - 1.5 * t3,
            -0.5 * t2 + 0.5 * t3,
        ],
        axis=-1,
    )


def _interp_projective(sub: Subgrid, vals, vchart, xiq):
    """Cubic interpolation of projective values at local coordinates xiq.

    The 4x4 window around each query is expressed in the chart of the
    window's nearest node before interpolating affine coordinates; windows
    too close to a target-chart boundary fall back to the nearest value.
    """
    nx, ny = sub.shape
    v2 = vals.reshape(nx, ny, 3)
    c2 = vchart.reshape(nx, ny)
    fx = (xiq.real - sub.x0) / sub.step[0]
    fy = (xiq.imag - sub.y0) / sub.step[1]
    if sub.periodic[1]:
        fy = np.mod(fy, ny)
    ax = np.clip(np.floor(fx).astype(np.int64), 1, nx - 3)
    ay_raw = np.floor(fy).astype(np.int64)
    ay = ay_raw if sub.periodic[1] else np.clip(ay_raw, 1, ny - 3)
    tx = fx - ax
    ty = fy - ay
    ox = ax[:, None] + np.arange(-1, 3)
    oy = ay[:, None] + np.arange(-1, 3)
    ox = np.clip(ox, 0, nx - 1)
    oy = np.mod(oy, ny) if sub.periodic[1] else np.clip(oy, 0, ny - 1)
    window = v2[ox[:, :, None], oy[:, None, :]]  # (q, 4, 4, 3)
    cx = np.clip(np.rint(fx).astype(np.int64), 0, nx - 1)
    cy = np.rint(fy).astype(np.int64)
    cy = np.mod(cy, ny) if sub.periodic[1] else np.clip(cy, 0, ny - 1)
    cq = c2[cx, cy].astype(np.int64)
    q = xiq.size
    flat = window.reshape(q * 16, 3)
    cq16 = np.repeat(cq, 16)
    slot = np.abs(flat[np.arange(q * 16), cq16]).reshape(q, 16)
    good = np.min(slot, axis=1) >= 0.15
    out = np.empty((q, 3), dtype=complex)
    if np.any(good):
        gi = np.nonzero(good)[0]
        sel = window[gi].reshape(-1, 3)
        zeta = coords_in_chart(sel, np.repeat(cq[gi], 16)).reshape(
            len(gi), 4, 4, 2
        )
        wx = _cubic_weights(tx[gi])
        wy = _cubic_weights(ty[gi])
        mix = np.einsum("qa,qb,qabc->qc", wx, wy, zeta)
        out[gi] = from_chart_coords(mix, cq[gi])
    if np.any(~good):
        bi = np.nonzero(~good)[0]
        out[bi] = v2[cx[bi], cy[bi]]
    return out


def overlap_error(u: DiscreteMap) -> float:
    """Worst FS distance between the charts' values on the seam band."""
    g = u.grid
    s0 = g.subgrids[0]
    r = np.abs(s0.z)
    band = (r >= 0.8) & (r <= 1.2)
    zq = s0.z[band]
    vals0 = u.values[0][band]
    via1 = _interp_projective(
        g.subgrids[1], u.values[1], u.value_chart[1], 1.0 / zq
    )
    return float(np.max(distance_many(vals0, via1)))


# ---------------------------------------------------------------------------
# one-forms and sections


@dataclass
class DiscreteOneForm:
    """Anti-linear one-form on the map's pullback bundle, one slot stored.

    values[i][n] is the form on the local d/dx at node n of subgrid i, as a
    complex pair in chart[i][n] at anchor point anchors[i][n]; the d/dy value
    is determined by anti-linearity.
    """

    grid: object
    values: tuple
    chart: tuple
    anchors: tuple

    def scaled(self, c) -> "DiscreteOneForm":
        return DiscreteOneForm(
            self.grid,
            tuple(c * v for v in self.values),
            self.chart,
            self.anchors,
        )

    def add(self, other: "DiscreteOneForm") -> "DiscreteOneForm":
        return DiscreteOneForm(
            self.grid,
            tuple(a + b for a, b in zip(self.values, other.values)),
            self.chart,
            self.anchors,
        )

    def pointwise_fs_norm(self, i: int) -> np.ndarray:
        """|form on d/dx|_FS at the anchors of subgrid i."""
        v = self.values[i]
        zeta = coords_in_chart(self.anchors[i], self.chart[i])
        return np.sqrt(
            np.maximum(hermitian_pair(zeta, v, v).real, 0.0)
        )

    def sup_norm(self) -> float:
        """Geometry-invariant sup over all partition-weighted nodes."""
        worst = 0.0
        for i, sub in enumerate(self.grid.subgrids):
            m = sub.pou > 1e-14
            if not np.any(m):
                continue
            n = self.pointwise_fs_norm(i)
            worst = max(worst, float(np.max(sub.conv[m] * n[m])))
        return worst

    def l2_norm(self) -> float:
        """Conformally invariant L^2 norm; no conversion factors needed."""
        total = 0.0
        for i, sub in enumerate(self.grid.subgrids):
            n = self.pointwise_fs_norm(i)
            total += float(np.sum(n * n * sub.pou) * sub.cell)
        return float(np.sqrt(total))


@dataclass
class DiscreteSection:
    """Tangent field along a map: complex pairs in the map's value charts."""

    grid: object
    values: tuple
    chart: tuple

    def scaled(self, c) -> "DiscreteSection":
        return DiscreteSection(
            self.grid, tuple(c * v for v in self.values), self.chart
        )

    def add(self, other: "DiscreteSection") -> "DiscreteSection":
        return DiscreteSection(
            self.grid,
            tuple(a + b for a, b in zip(self.values, other.values)),
            self.chart,
        )


def section_like(u: DiscreteMap, values) -> DiscreteSection:
    return DiscreteSection(u.grid, tuple(values), u.value_chart)


def zero_form_like(u: DiscreteMap) -> DiscreteOneForm:
    return DiscreteOneForm(
        u.grid,
        tuple(np.zeros((v.shape[0], 2), dtype=complex) for v in u.values),
        u.value_chart,
        u.values,
    )


# ---------------------------------------------------------------------------
# finite-difference kernels


def _roll2(arr2d, dx_steps, dy_steps):
    out = arr2d
    if dx_steps:
        out = np.roll(out, -dx_steps, axis=0)
    if dy_steps:
        out = np.roll(out, -dy_steps, axis=1)
    return out


def _aligned_coords(center_vals, charts, neighbor_vals):
    """Neighbor values as affine pairs in each center's target chart."""
    n = neighbor_vals.shape[0]
    slot = np.abs(neighbor_vals[np.arange(n), charts])
    if np.any(slot < _STRADDLE_TOL):
        raise ValueError("neighboring values straddle chart cut")
    return coords_in_chart(neighbor_vals, charts)


def _first_derivatives(sub: Subgrid, vals, charts, order: int):
    """Chart-aligned d/dx and d/dy of the map on the stencil interior.

    Returns (index array, dx_u, dy_u, zeta_center): complex pairs per
    interior node, all in the center's target chart.
    """
    nx, ny = sub.shape
    v2 = vals.reshape(nx, ny, 3)
    margin = 1 if order == 2 else 2
    idx = np.nonzero(sub.interior_mask(margin))[0]
    c = charts[idx].astype(np.int64)
    zeta_c = coords_in_chart(vals[idx], c)
    if order == 2:
        shifts = ((1, 0.5), (-1, -0.5))
    else:
        shifts = ((1, 2.0 / 3.0), (-1, -2.0 / 3.0), (2, -1.0 / 12.0), (-2, 1.0 / 12.0))
    dxu = np.zeros((idx.size, 2), dtype=complex)
    dyu = np.zeros((idx.size, 2), dtype=complex)
    for steps, coeff in shifts:
        east = _roll2(v2, steps, 0).reshape(-1, 3)[idx]
        north = _roll2(v2, 0, steps).reshape(-1, 3)[idx]
        dxu += coeff * _aligned_coords(vals[idx], c, east)
        dyu += coeff * _aligned_coords(vals[idx], c, north)
    return idx, dxu / sub.step[0], dyu / sub.step[1], zeta_c, c


def dbar_nl(u: DiscreteMap, J) -> DiscreteOneForm:
    """Nonlinear Cauchy-Riemann operator by centered differences.

    At each node the neighbors are expressed in the center value's chart and
    the form (du/dx + J(u) du/dy)/2 on the local d/dx is stored.
    """
    out_vals = []
    for i, sub in enumerate(u.grid.subgrids):
        vals = u.values[i]
        charts = u.value_chart[i]
        idx, dxu, dyu, _, c = _first_derivatives(sub, vals, charts, order=2)
        jm = J.matrix_many(vals[idx], charts=c)
        jdy = real_to_complex_vec(
            np.einsum("nab,nb->na", jm, complex_to_real_vec(dyu))
        )
        eta = np.zeros((vals.shape[0], 2), dtype=complex)
        eta[idx] = 0.5 * (dxu + jdy)
        out_vals.append(eta)
    return DiscreteOneForm(u.grid, tuple(out_vals), u.value_chart, u.values)


def linearize_dbar(
    u: DiscreteMap,
    J,
    xi: DiscreteSection,
    transport: str = "christoffel",
    step: float = 1e-5,
) -> DiscreteOneForm:
    """Directional derivative of dbar_nl along xi with geodesic transport.

    Centered in the path parameter, with the perturbed values' tangent data
    kept in the unperturbed charts; transport "christoffel" pulls the forms
    back along the exponential paths, "chart" compares raw chart components.
    """
    if transport not in ("christoffel", "chart"):
        raise ValueError("unknown transport convention")
    s = float(step)

    def shifted(sign):
        values = []
        for i in range(len(u.values)):
            moved = exp_many(
                u.values[i], u.value_chart[i], sign * s * xi.values[i]
            )
            values.append(moved)
        return DiscreteMap(u.grid, tuple(values), u.value_chart, u.based)

    eta_p = dbar_nl(shifted(+1.0), J)
    eta_m = dbar_nl(shifted(-1.0), J)
    out_vals = []
    for i in range(len(u.values)):
        ep, em = eta_p.values[i], eta_m.values[i]
        if transport == "christoffel":
            zeta = coords_in_chart(u.values[i], u.value_chart[i])
            ep = ep + s * christoffel_contract(zeta, xi.values[i], ep)
            em = em - s * christoffel_contract(zeta, xi.values[i], em)
        out_vals.append((ep - em) / (2.0 * s))
    return DiscreteOneForm(u.grid, tuple(out_vals), u.value_chart, u.values)


# ---------------------------------------------------------------------------
# degree and norms


def degree_area(u: DiscreteMap, refine: Optional[int] = None):
    """Degree as the symplectic area of the image over pi.

    With an exact source the computation reruns on a refine-times finer
    sphere grid (default 4) to beat quadrature kinks; returns the raw real
    value and its rounding, or raises when they disagree by more than 0.05.
    """
    if refine is None:
        refine = 4 if u.source is not None else 1
    if refine > 1 and u.source is not None:
        if isinstance(u.grid, SphereGrid):
            fine = sample_map(u.source, SphereGrid(u.grid.resolution * refine))
            return degree_area(fine, refine=1)
        if hasattr(u.grid, "refined"):
            fine = sample_map(u.source, u.grid.refined(refine))
            return degree_area(fine, refine=1)
    total = 0.0
    for i, sub in enumerate(u.grid.subgrids):
        idx, dxu, dyu, zeta_c, _ = _first_derivatives(
            sub, u.values[i], u.value_chart[i], order=4
        )
        dens = -hermitian_pair(zeta_c, dxu, dyu).imag
        total += float(np.sum(dens * sub.pou[idx]) * sub.cell)
    value = total / np.pi
    nearest = float(np.rint(value))
    if abs(value - nearest) > 0.05:
        raise ValueError("ambiguous degree")
    return value, int(nearest)


def norm_weighted(eta: DiscreteOneForm, p: float = 2.0, weights=None) -> float:
    """Weighted L^p norm of a one-form; weights default to 1 everywhere.

    weights may be a callable (z, chart) -> positive factors or a list of
    per-subgrid arrays matching the grid.
    """
    if p < 2.0:
        raise ValueError("norm order must be at least 2")
    total = 0.0
    for i, sub in enumerate(eta.grid.subgrids):
        n = eta.pointwise_fs_norm(i)
        invariant = sub.conv * n
        if weights is None:
            w = 1.0
        elif callable(weights):
            w = np.asarray(weights(sub.z, sub.z_chart), dtype=float)
        else:
            w = np.asarray(weights[i], dtype=float)
        total += float(np.sum(w * invariant**p * sub.fs_weight))
    return float(total ** (1.0 / p))


def dump_csv(u: DiscreteMap, out) -> None:
    """Write a map's node table as CSV rows of chart, x, y, and coordinates.

    Homogeneous coordinates are split into re/im pairs.  out is a path or a
    text file object; rows follow subgrid storage order so repeated dumps of
    the same map are byte-identical.
    """
    own = isinstance(out, (str, bytes)) or hasattr(out, "__fspath__")
    fh = open(out, "w", newline="") if own else out
    try:
        fh.write("chart,x,y,re0,im0,re1,im1,re2,im2\r\n")
        for i, sub in enumerate(u.grid.subgrids):
            vals = u.values[i]
            for j in range(sub.size):
                row = [str(sub.z_chart), repr(float(sub.z[j].real)), repr(float(sub.z[j].imag))]
                for s in range(3):
                    row.append(repr(float(vals[j, s].real)))
                    row.append(repr(float(vals[j, s].imag)))
                fh.write(",".join(row) + "\r\n")
    finally:
        if own:
            fh.close()
