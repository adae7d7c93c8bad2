from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jglue import rational as rt
from jglue.projective import ProjectivePoint, canonicalize, distance_many

LINE = rt.RationalMap(
    (rt.MonicPolynomial((1.0,)), rt.MonicPolynomial((0.0,)), rt.MonicPolynomial((-1.0,)))
)


def random_map(rng, degree, n=2, spread=1.0):
    while True:
        comps = tuple(
            rt.MonicPolynomial(
                tuple(
                    spread * (rng.standard_normal(degree) + 1j * rng.standard_normal(degree))
                )
            )
            for _ in range(n + 1)
        )
        try:
            return rt.RationalMap(comps)
        except ValueError:
            continue


# ---------------------------------------------------------------------------
# polynomials and divisors


def test_from_roots_quadratic():
    p = rt.from_roots([1.0, 2.0])
    assert np.max(np.abs(np.array(p.coefficients) - np.array([2.0, -3.0]))) < 1e-12


def test_roots_of_z2_plus_1():
    p = rt.MonicPolynomial((1.0, 0.0))
    got = sorted(p.roots().roots, key=lambda c: c.imag)
    assert abs(got[0] + 1j) < 1e-12 and abs(got[1] - 1j) < 1e-12


def test_root_roundtrip_bulk():
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(1000):
        k = int(rng.integers(1, 9))
        radii = 10.0 * rng.uniform(0, 1, k) ** 0.5
        angles = rng.uniform(0, 2 * np.pi, k)
        rootset = radii * np.exp(1j * angles)
        p = rt.MonicPolynomial.from_roots(rootset)
        q = p.roots().polynomial()
        err = np.max(
            np.abs(np.array(p.coefficients) - np.array(q.coefficients))
        ) / max(1.0, np.max(np.abs(p.coefficients)))
        worst = max(worst, err)
    assert worst < 1e-8


@settings(deadline=None, max_examples=50)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=12))
def test_horner_matches_polyval(vals):
    if len(vals) % 2:
        vals = vals[:-1]
    coeffs = np.array(vals[0::2]) + 1j * np.array(vals[1::2])
    p = rt.MonicPolynomial(tuple(coeffs))
    z = np.array([0.3 - 0.7j, 1.9 + 0.2j, -2.0 + 0.1j])
    want = np.polyval(p.descending(), z)
    assert np.max(np.abs(p.eval_many(z) - want)) < 1e-9 * max(
        1.0, float(np.max(np.abs(want)))
    )


# ---------------------------------------------------------------------------
# rational maps


def test_eval_at_infinity_is_base_point():
    p = rt.eval_map(LINE, np.inf)
    assert np.max(np.abs(p.homogeneous - np.ones(3) / np.sqrt(3))) < 1e-15


def test_eval_at_zero():
    p = rt.eval_map(LINE, 0.0)
    want = ProjectivePoint(np.array([1.0, 0.0, -1.0]))
    assert np.max(np.abs(p.homogeneous - want.homogeneous)) < 1e-15


def test_common_root_rejected():
    with pytest.raises(ValueError, match="common root"):
        rt.RationalMap(
            (
                rt.MonicPolynomial((0.0,)),
                rt.MonicPolynomial((0.0,)),
                rt.MonicPolynomial((0.0,)),
            )
        )


def test_eval_consistent_across_chart_seam():
    rng = np.random.default_rng(7)
    u = random_map(rng, 3)
    z = 2.0 * np.exp(1j * rng.uniform(0, 2 * np.pi, 20))
    direct = canonicalize(
        np.stack([c.eval_many(z) for c in u.components], axis=1)
    )
    via = u.eval_homogeneous_many(z)
    assert np.max(np.abs(direct - via)) < 1e-12


def test_at_points_reciprocal_chart():
    rng = np.random.default_rng(8)
    u = random_map(rng, 2)
    w = 0.3 * (rng.standard_normal(10) + 1j * rng.standard_normal(10))
    w[0] = 0.0
    via_w = u.at_points(w, chart=1)
    assert np.max(np.abs(via_w[0] - np.ones(3) / np.sqrt(3))) < 1e-15
    via_z = u.eval_homogeneous_many(1.0 / w[1:])
    assert np.max(np.abs(via_w[1:] - via_z)) < 1e-12


# ---------------------------------------------------------------------------
# affine reparametrization


def test_mobius_identity_is_noop():
    assert rt.mobius_act(LINE, 1.0, 0.0) is LINE


def test_mobius_zero_scale_rejected():
    with pytest.raises(ValueError, match="nonzero scale"):
        rt.mobius_act(LINE, 0.0, 1.0)


def test_mobius_moves_roots_affinely():
    rng = np.random.default_rng(21)
    for _ in range(100):
        k = int(rng.integers(1, 5))
        u = random_map(rng, k)
        a = rng.standard_normal() + 1j * rng.standard_normal()
        if abs(a) < 0.1:
            a = 1.3 + 0.2j
        b = rng.standard_normal() + 1j * rng.standard_normal()
        v = rt.mobius_act(u, a, b)
        assert v.degree == u.degree
        for cu, cv in zip(u.components, v.components):
            want = sorted(
                ((r - b) / a for r in cu.roots().roots),
                key=lambda c: (c.real, c.imag),
            )
            got = cv.roots().roots
            assert np.max(np.abs(np.array(got) - np.array(want))) < 1e-9 * max(
                1.0, float(np.max(np.abs(want)))
            )


def test_mobius_preserves_base_point():
    rng = np.random.default_rng(22)
    u = random_map(rng, 3)
    v = rt.mobius_act(u, 0.7 - 0.4j, 1.1 + 0.2j)
    p = rt.eval_map(v, np.inf)
    assert np.max(np.abs(p.homogeneous - np.ones(3) / np.sqrt(3))) < 1e-12


# ---------------------------------------------------------------------------
# stabilization


def _mu(c1=-0.4 + 0.1j, r1=0.25, c2=0.45, r2=0.3):
    return SimpleNamespace(disks=((c1, r1), (c2, r2)))


def test_stabilize_degree_additivity():
    rng = np.random.default_rng(31)
    u = random_map(rng, 1)
    v = random_map(rng, 1)
    out = rt.segal_stabilize(u, v, _mu())
    assert out.degree == 2


def test_stabilize_root_structure():
    rng = np.random.default_rng(32)
    u = random_map(rng, 2)
    v = random_map(rng, 1)
    mu = _mu()
    out = rt.segal_stabilize(u, v, mu)
    (c1, r1), (c2, r2) = mu.disks
    for cu, cv, co in zip(u.components, v.components, out.components):
        want = sorted(
            [c1 + r1 * r for r in cv.roots().roots]
            + [c2 + r2 * r for r in cu.roots().roots],
            key=lambda c: (c.real, c.imag),
        )
        got = co.roots().roots
        assert np.max(np.abs(np.array(got) - np.array(want))) < 1e-8


def test_stabilize_bulk_validity():
    rng = np.random.default_rng(33)
    for _ in range(100):
        k = int(rng.integers(1, 4))
        u = random_map(rng, k, spread=0.5)
        v = random_map(rng, 1, spread=0.5)
        out = rt.segal_stabilize(u, v, _mu())
        assert out.degree == k + 1
        p = rt.eval_map(out, np.inf)
        assert np.max(np.abs(p.homogeneous - np.ones(3) / np.sqrt(3))) < 1e-12


def test_stabilize_rejects_bad_disk_data():
    rng = np.random.default_rng(34)
    u = random_map(rng, 1)
    v = random_map(rng, 1)
    with pytest.raises(ValueError, match="two disks"):
        rt.segal_stabilize(u, v, SimpleNamespace(disks=((0.0, 0.5),)))
    with pytest.raises(ValueError, match="degree-one"):
        rt.segal_stabilize(v, random_map(rng, 2), _mu())


# ---------------------------------------------------------------------------
# embedding check


def test_embedding_check_line_example():
    assert rt.embedding_check(LINE, 64) is True


def test_embedding_check_random_lines():
    rng = np.random.default_rng(41)
    for _ in range(10):
        u = random_map(rng, 1)
        assert rt.embedding_check(u, 64) is True


def test_embedding_check_rejects_higher_degree():
    rng = np.random.default_rng(42)
    with pytest.raises(ValueError, match="degree-one"):
        rt.embedding_check(random_map(rng, 2), 32)


# ---------------------------------------------------------------------------
# linear curves


def test_linear_curve_matches_rational_map():
    rng = np.random.default_rng(51)
    u = random_map(rng, 1)
    curve = rt.LinearCurve.from_rational(u)
    z = rng.standard_normal(12) + 1j * rng.standard_normal(12)
    z[3] = 3.7 - 2.0j
    got = curve.at_points(z)
    want = u.eval_homogeneous_many(z)
    assert np.max(np.abs(got - want)) < 1e-12
    inf_val = curve.value_at_infinity()
    assert np.max(np.abs(inf_val.homogeneous - np.ones(3) / np.sqrt(3))) < 1e-14


def test_linear_curve_rejects_rank_deficient():
    with pytest.raises(ValueError, match="degenerate"):
        rt.LinearCurve(np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]))


def test_linear_curve_reciprocal_chart():
    m = np.array([[1.0, 0.3j], [0.5, 1.0], [-0.2, 0.8 - 0.1j]])
    curve = rt.LinearCurve(m)
    w = np.array([0.0, 0.2 - 0.1j])
    got = curve.at_points(w, chart=1)
    assert np.max(np.abs(got[0] - canonicalize(m[:, 0]))) < 1e-14
    want = curve.at_points(np.array([1.0 / w[1]]))
    assert np.max(np.abs(got[1] - want[0])) < 1e-12


# ---------------------------------------------------------------------------
# exact resultant


def test_resultant_known_value():
    p = rt.MonicPolynomial((1, 0))   # z^2 + 1
    q = rt.MonicPolynomial((-1, 0))  # z^2 - 1
    assert rt.resultant_exact(p, q) == 4.0


def test_resultant_detects_shared_root_exactly():
    p = rt.MonicPolynomial((-1,))        # z - 1
    q = rt.MonicPolynomial((-1, 0))      # z^2 - 1
    assert rt.resultant_exact(p, q) == 0.0
    rng = np.random.default_rng(61)
    for _ in range(20):
        shared = complex(int(rng.integers(-3, 4)), int(rng.integers(-3, 4)))
        other = shared + 1 + 1j
        a = rt.MonicPolynomial.from_roots([shared, other])
        b = rt.MonicPolynomial.from_roots([shared, other + 2])
        ai = rt.MonicPolynomial(tuple(complex(round(c.real), round(c.imag)) for c in a.coefficients))
        bi = rt.MonicPolynomial(tuple(complex(round(c.real), round(c.imag)) for c in b.coefficients))
        assert rt.resultant_exact(ai, bi) == 0.0


def test_resultant_requires_integer_coefficients():
    with pytest.raises(ValueError, match="integer coefficients"):
        rt.resultant_exact(
            rt.MonicPolynomial((0.5,)), rt.MonicPolynomial((1.0,))
        )
