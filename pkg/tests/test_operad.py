"""Disks elements, operad axioms, and the three gluing actions."""

import numpy as np
import pytest

from jglue import field as fd
from jglue import operad as op
from jglue import rational as rt
from jglue.rational import MonicPolynomial, RationalMap, RootDivisor

LINE = RationalMap(
    (MonicPolynomial((1.0,)), MonicPolynomial((0.0,)), MonicPolynomial((-1.0,)))
)
PAIR = op.LittleDisksElement(((-0.5 + 0.0j, 0.25), (0.5 + 0.0j, 0.25)))


def random_element(rng, arity=None, max_arity=4):
    k = int(arity if arity is not None else rng.integers(1, max_arity + 1))
    while True:
        centers = rng.uniform(-0.6, 0.6, k) + 1j * rng.uniform(-0.6, 0.6, k)
        radii = rng.uniform(0.05, 0.3, k)
        try:
            return op.LittleDisksElement(tuple(zip(centers, radii)))
        except ValueError:
            continue


def random_based_map(rng, degree):
    while True:
        comps = tuple(
            MonicPolynomial.from_roots(
                rng.normal(0, 0.5, degree) + 1j * rng.normal(0, 0.5, degree)
            )
            for _ in range(3)
        )
        try:
            return RationalMap(comps)
        except ValueError:
            continue


def disks_close(a, b, tol=1e-12):
    if a.arity != b.arity:
        return False
    return all(
        abs(ca - cb) <= tol and abs(ra - rb) <= tol
        for (ca, ra), (cb, rb) in zip(a.disks, b.disks)
    )


# --- element validation ----------------------------------------------------


def test_element_containment():
    with pytest.raises(ValueError, match="unit disk"):
        op.LittleDisksElement(((0.9 + 0.0j, 0.2),))
    with pytest.raises(ValueError, match="positive"):
        op.LittleDisksElement(((0.0j, 0.0),))


def test_element_disjointness():
    with pytest.raises(ValueError, match="overlap"):
        op.LittleDisksElement(((-0.1 + 0.0j, 0.2), (0.1 + 0.0j, 0.2)))
    # tangent disks are allowed
    op.LittleDisksElement(((-0.2 + 0.0j, 0.2), (0.2 + 0.0j, 0.2)))


# --- composition -----------------------------------------------------------


def test_compose_unit_laws():
    rng = np.random.default_rng(2)
    for _ in range(20):
        e = random_element(rng)
        left = op.compose_disks(op.UNIT_ELEMENT, [e])
        right = op.compose_disks(e, [op.UNIT_ELEMENT] * e.arity)
        assert disks_close(left, e) and disks_close(right, e)


def test_compose_pair_of_units():
    got = op.compose_disks(PAIR, [op.UNIT_ELEMENT, op.UNIT_ELEMENT])
    assert disks_close(got, PAIR)


def test_compose_arity_mismatch():
    with pytest.raises(ValueError, match="arity"):
        op.compose_disks(PAIR, [op.UNIT_ELEMENT])


def test_compose_associative():
    rng = np.random.default_rng(3)
    for _ in range(25):
        a = random_element(rng, max_arity=3)
        bs = [random_element(rng, max_arity=3) for _ in range(a.arity)]
        cs = [
            [random_element(rng, max_arity=2) for _ in range(b.arity)] for b in bs
        ]
        left = op.compose_disks(
            op.compose_disks(a, bs), [c for group in cs for c in group]
        )
        right = op.compose_disks(
            a, [op.compose_disks(b, group) for b, group in zip(bs, cs)]
        )
        assert disks_close(left, right)


def test_compose_equivariance():
    # permuting outer disks together with the operand blocks relabels the
    # composite without changing it as a multiset of disks
    rng = np.random.default_rng(4)
    for _ in range(15):
        a = random_element(rng, arity=3)
        bs = [random_element(rng, max_arity=2) for _ in range(3)]
        perm = rng.permutation(3)
        a_p = op.LittleDisksElement(tuple(a.disks[i] for i in perm))
        bs_p = [bs[i] for i in perm]
        plain = sorted(
            op.compose_disks(a, bs).disks, key=lambda d: (d[0].real, d[0].imag)
        )
        permuted = sorted(
            op.compose_disks(a_p, bs_p).disks, key=lambda d: (d[0].real, d[0].imag)
        )
        for (c1, r1), (c2, r2) in zip(plain, permuted):
            assert abs(c1 - c2) <= 1e-12 and abs(r1 - r2) <= 1e-12


# --- divisor action --------------------------------------------------------


def test_act_divisors_centers():
    d = op.act_divisors(PAIR, (RootDivisor((0.0,)), RootDivisor((0.0,))))
    assert d.roots == (-0.5 + 0.0j, 0.5 + 0.0j)


def test_act_divisors_empty():
    d = op.act_divisors(PAIR, (RootDivisor(()), RootDivisor(())))
    assert d.roots == ()


def test_act_divisors_equivariance():
    rng = np.random.default_rng(5)
    for _ in range(20):
        g = random_element(rng, arity=3)
        divs = [
            RootDivisor(tuple(rng.normal(0, 1, rng.integers(0, 4)) + 0.0j))
            for _ in range(3)
        ]
        perm = rng.permutation(3)
        g_p = op.LittleDisksElement(tuple(g.disks[i] for i in perm))
        divs_p = [divs[i] for i in perm]
        a = op.act_divisors(g, divs).roots
        b = op.act_divisors(g_p, divs_p).roots
        assert len(a) == len(b)
        assert np.allclose(np.asarray(a), np.asarray(b), atol=1e-12)


def test_act_divisors_arity_mismatch():
    with pytest.raises(ValueError, match="arity"):
        op.act_divisors(PAIR, (RootDivisor((0.0,)),))


# --- rational action -------------------------------------------------------


def test_act_rational_identity_disk():
    rng = np.random.default_rng(6)
    u = random_based_map(rng, 2)
    got = op.act_rational(op.UNIT_ELEMENT, (u,))
    for a, b in zip(got.components, u.components):
        assert np.max(np.abs(np.asarray(a.coefficients) - np.asarray(b.coefficients))) <= 1e-10


def test_act_rational_degree_additive():
    rng = np.random.default_rng(7)
    u = random_based_map(rng, 1)
    v = random_based_map(rng, 1)
    out = op.act_rational(PAIR, (u, v))
    assert out.degree == 2


def test_act_rational_coefficient_oracle():
    # independent coefficient-level route: push each map through its disk via
    # an affine reparameterization and multiply the component polynomials
    rng = np.random.default_rng(8)
    for _ in range(10):
        g = random_element(rng, arity=2)
        u = random_based_map(rng, 2)
        v = random_based_map(rng, 1)
        out = op.act_rational(g, (u, v))
        for slot in range(3):
            acc = np.array([1.0 + 0.0j])
            for (c, r), w in zip(g.disks, (u, v)):
                moved = rt.mobius_act(w, 1.0 / r, -c / r)
                acc = np.convolve(acc, np.asarray(moved.components[slot].descending()))
            want = acc[1:]  # drop the leading 1
            got = np.asarray(out.components[slot].descending())[1:]
            assert np.max(np.abs(got - want)) <= 1e-9


def test_act_rational_permutation_well_defined():
    rng = np.random.default_rng(9)
    for _ in range(10):
        g = random_element(rng, arity=3)
        maps = [random_based_map(rng, 1) for _ in range(3)]
        perm = rng.permutation(3)
        g_p = op.LittleDisksElement(tuple(g.disks[i] for i in perm))
        maps_p = [maps[i] for i in perm]
        a = op.act_rational(g, maps)
        b = op.act_rational(g_p, maps_p)
        for ca, cb in zip(a.components, b.components):
            assert np.max(
                np.abs(np.asarray(ca.coefficients) - np.asarray(cb.coefficients))
            ) <= 1e-10


# --- loop action -----------------------------------------------------------


@pytest.fixture(scope="module")
def loop_pair():
    grid = fd.SphereGrid(64)
    l1 = fd.sample_map(LINE, grid)
    l2 = fd.sample_map(rt.mobius_act(LINE, 1.0, 0.3), grid)
    return grid, l1, l2


def test_act_loops_identity_disk(loop_pair):
    grid, l1, _ = loop_pair
    out = op.act_loops(op.UNIT_ELEMENT, (l1,))
    rng = np.random.default_rng(10)
    z = rng.uniform(-0.7, 0.7, 50) + 1j * rng.uniform(-0.7, 0.7, 50)
    got = out.at_points(z, chart=0)
    want = LINE.at_points(op.disk_to_plane(z), chart=0)
    assert np.max(np.abs(got - want)) <= 1e-12


def test_act_loops_outside_is_base(loop_pair):
    grid, l1, l2 = loop_pair
    out = op.act_loops(PAIR, (l1, l2))
    base = np.ones(3, dtype=complex) / np.sqrt(3.0)
    s0 = grid.subgrids[0]
    far = np.abs(s0.z) > 1.0
    assert np.max(np.abs(out.values[0][far] - base)) == 0.0
    assert np.max(np.abs(out.values[1] - base[None, :])) == 0.0 or out.based
    # every subgrid-1 node outside the image of the disks is based too
    s1 = grid.subgrids[1]
    inner = np.abs(s1.z) > 0.0
    back = 1.0 / s1.z[inner]
    outside = np.ones(inner.sum(), dtype=bool)
    for c, r in PAIR.disks:
        outside &= np.abs(back - c) >= r
    vals = out.values[1][inner][outside]
    assert np.max(np.abs(vals - base)) == 0.0
    assert out.based


def test_act_loops_degree_additive(loop_pair):
    grid, l1, l2 = loop_pair
    out = op.act_loops(PAIR, (l1, l2))
    val, n = fd.degree_area(out)
    assert n == 2 and abs(val - 2.0) <= 0.05


def test_act_loops_post_map_degree(loop_pair):
    # the collapse composite needs a finer quadrature grid than the default:
    # nested disks shrink loop features to radius r1*r2
    grid, l1, l2 = loop_pair
    out = op.act_loops(PAIR, (l1, l2), post_map=LINE)
    val, n = fd.degree_area(out, refine=12)
    assert n == 3 and abs(val - 3.0) <= 0.05


def test_act_loops_errors(loop_pair):
    grid, l1, l2 = loop_pair
    with pytest.raises(ValueError, match="arity"):
        op.act_loops(PAIR, (l1,))
    unbased = fd.DiscreteMap(
        grid=grid, values=l1.values, value_chart=l1.value_chart, based=False
    )
    with pytest.raises(ValueError, match="based"):
        op.act_loops(PAIR, (unbased, l2))
    deg2 = op.act_rational(PAIR, (LINE, LINE))
    with pytest.raises(ValueError, match="degree one"):
        op.act_loops(PAIR, (l1, l2), post_map=deg2)
    with pytest.raises(ValueError, match="two disks"):
        op.act_loops(PAIR, (l1, l2), post_map=LINE, mu=op.UNIT_ELEMENT)


def test_rational_and_loop_routes_agree(loop_pair):
    # juxtaposition route: stabilize the disk action by a degree-one map;
    # collapse route: loop action post-composed with the same map.  The two
    # share degree and base point.
    grid, l1, l2 = loop_pair
    maps = (LINE, rt.mobius_act(LINE, 1.0, 0.3))
    mu = op.LittleDisksElement(op.DEFAULT_PAIR_DISKS)
    algebraic = rt.segal_stabilize(op.act_rational(PAIR, maps), LINE, mu)
    assert algebraic.degree == 3
    du = fd.sample_map(algebraic, fd.SphereGrid(64))
    assert du.based
    analytic = op.act_loops(PAIR, (l1, l2), post_map=LINE, mu=mu)
    assert analytic.based
    val, n = fd.degree_area(analytic, refine=12)
    assert n == 3


# --- disks from points -----------------------------------------------------


def test_disks_from_points_example():
    g = op.disks_from_points((-0.5, 0.5), 10.0)
    assert disks_close(
        g, op.LittleDisksElement(((-0.5 + 0.0j, 0.1), (0.5 + 0.0j, 0.1)))
    )


def test_disks_from_points_separated_never_errors():
    rng = np.random.default_rng(11)
    eps, delta = 0.4, 0.5
    R = 2.0 / (delta * eps)  # smallest admissible R
    count = 0
    while count < 50:
        pts = rng.uniform(-0.6, 0.6, 3) + 1j * rng.uniform(-0.6, 0.6, 3)
        d = np.abs(pts[:, None] - pts[None, :])
        if np.min(d[np.triu_indices(3, 1)]) < eps:
            continue
        op.disks_from_points(pts, R)
        count += 1


def test_disks_from_points_containment_error():
    with pytest.raises(ValueError, match="unit disk"):
        op.disks_from_points((0.95,), 10.0)


# --- serialization ---------------------------------------------------------


def test_json_roundtrip():
    obj = op.to_json_obj(PAIR)
    assert obj == [
        {"center": [-0.5, 0.0], "radius": 0.25},
        {"center": [0.5, 0.0], "radius": 0.25},
    ]
    back = op.from_json_obj(obj)
    assert disks_close(back, PAIR, tol=0.0)
