"""Little 2-disks elements and their actions on roots, maps, and loops.

A disks element is an ordered tuple of disjoint closed sub-disks of the unit
disk, each an affine embedding z -> c + r z.  The same element acts three
ways: on root multisets (affine images), on based rational maps (per
component on root divisors), and on discretized loops (collapse of the
complement to the base point, with a fixed radial homeomorphism from the
unit disk onto the plane).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import DiscreteMap, sample_map
from .rational import MonicPolynomial, RationalMap, RootDivisor

_DISJOINT_TOL = 1e-12

# collapse sum used after the loop action when a post-composition map is
# supplied and no explicit pair of disks is given
DEFAULT_PAIR_DISKS = ((-0.5 + 0.0j, 0.25), (0.5 + 0.0j, 0.25))


@dataclass(frozen=True)
class LittleDisksElement:
    """Ordered disjoint closed disks inside the closed unit disk."""

    disks: tuple

    def __post_init__(self):
        clean = []
        for c, r in self.disks:
            c = complex(c)
            r = float(r)
            if not r > 0.0:
                raise ValueError("disk radius must be positive")
            if abs(c) + r > 1.0 + 1e-12:
                raise ValueError("disk escapes the unit disk")
            clean.append((c, r))
        for i in range(len(clean)):
            for j in range(i + 1, len(clean)):
                ci, ri = clean[i]
                cj, rj = clean[j]
                if abs(ci - cj) < ri + rj - _DISJOINT_TOL:
                    raise ValueError("disks overlap")
        object.__setattr__(self, "disks", tuple(clean))

    @property
    def arity(self) -> int:
        return len(self.disks)


UNIT_ELEMENT = LittleDisksElement(((0.0 + 0.0j, 1.0),))


def compose_disks(outer: LittleDisksElement, inners) -> LittleDisksElement:
    """Substitute one disks element into each disk of another."""
    inners = tuple(inners)
    if len(inners) != outer.arity:
        raise ValueError("arity mismatch between disks and operands")
    disks = []
    for (c, r), inner in zip(outer.disks, inners):
        for cp, rp in inner.disks:
            disks.append((c + r * cp, r * rp))
    return LittleDisksElement(tuple(disks))


def act_divisors(g: LittleDisksElement, divisors) -> RootDivisor:
    """Union of the affine images of each divisor under its disk."""
    divisors = tuple(divisors)
    if len(divisors) != g.arity:
        raise ValueError("arity mismatch between disks and operands")
    roots = []
    for (c, r), div in zip(g.disks, divisors):
        roots.extend(c + r * rho for rho in div.roots)
    return RootDivisor(tuple(roots))


def act_rational(g: LittleDisksElement, maps) -> RationalMap:
    """Juxtapose based maps by pushing component roots into the disks."""
    maps = tuple(maps)
    if len(maps) != g.arity:
        raise ValueError("arity mismatch between disks and operands")
    ncomp = len(maps[0].components)
    if any(len(u.components) != ncomp for u in maps):
        raise ValueError("maps target different projective spaces")
    components = []
    for slot in range(ncomp):
        divisor = act_divisors(g, tuple(u.components[slot].roots() for u in maps))
        components.append(MonicPolynomial.from_roots(divisor.roots))
    try:
        return RationalMap(tuple(components))
    except ValueError as exc:  # impossible for divisors carried by disjoint disks
        raise RuntimeError("disk action produced a common root") from exc


def disk_to_plane(zeta):
    """The fixed radial homeomorphism from the open unit disk onto the plane."""
    zeta = np.asarray(zeta, dtype=complex)
    denom = 1.0 - np.abs(zeta) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        out = zeta / denom
    return np.where(denom > 0.0, out, np.inf + 0.0j)


def _collapse_source(disks, evaluators):
    """Plane source for the collapse map: disk i plays loop i, rest is based."""

    base = np.ones(3, dtype=complex)

    def source(z, chart):
        z = np.asarray(z, dtype=complex).reshape(-1)
        if chart in (None, 0):
            plane = z
            finite = np.isfinite(z.real) & np.isfinite(z.imag)
        else:
            finite = np.abs(z) > 0.0
            with np.errstate(divide="ignore", invalid="ignore"):
                plane = np.where(finite, 1.0 / np.where(finite, z, 1.0), 0.0)
        out = np.tile(base, (z.size, 1))
        for (c, r), ev in zip(disks, evaluators):
            mask = finite & (np.abs(plane - c) < r)
            if not np.any(mask):
                continue
            local = disk_to_plane((plane[mask] - c) / r)
            out[mask] = ev(local)
        return out

    return source


def act_loops(
    g: LittleDisksElement,
    loops,
    post_map: RationalMap | None = None,
    mu: LittleDisksElement | None = None,
) -> DiscreteMap:
    """Collapse action on discretized based loops, optionally summed with a
    post-composition map on a separate pair of disks."""
    loops = tuple(loops)
    if len(loops) != g.arity:
        raise ValueError("arity mismatch between disks and operands")
    if not all(u.based for u in loops):
        raise ValueError("loop action needs maps based at the standard point")
    grid = loops[0].grid
    evaluators = [lambda w, u=u: u.at_points(w, chart=0) for u in loops]
    inner = _collapse_source(g.disks, evaluators)
    if post_map is None:
        return sample_map(inner, grid)
    if len(post_map.components[0].coefficients) != 1:
        raise ValueError("post-composition map must have degree one")
    if mu is None:
        mu = LittleDisksElement(DEFAULT_PAIR_DISKS)
    pair = tuple(mu.disks)
    if len(pair) != 2:
        raise ValueError("loop sum needs exactly two disks")
    outer = _collapse_source(
        pair,
        [
            lambda w: post_map.at_points(w, chart=0),
            lambda w: inner(w, 0),
        ],
    )
    return sample_map(outer, grid)


def disks_from_points(points, R: float) -> LittleDisksElement:
    """Equal disks of radius 1/R centered at the given points."""
    R = float(R)
    if not R > 0.0:
        raise ValueError("disk radius must be positive")
    return LittleDisksElement(tuple((complex(x), 1.0 / R) for x in points))


def to_json_obj(g: LittleDisksElement):
    return [
        {"center": [c.real, c.imag], "radius": r} for c, r in g.disks
    ]


def from_json_obj(obj) -> LittleDisksElement:
    disks = tuple(
        (complex(d["center"][0], d["center"][1]), float(d["radius"])) for d in obj
    )
    return LittleDisksElement(disks)
