import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jglue import projective as pj
from jglue.projective import (
    AlmostComplexStructure,
    ProjectivePoint,
    StructurePath,
    TangentVector,
    exp_fs,
    fs_pair,
    log_fs,
    make_compatible_j,
)

import oracles

RNG = np.random.default_rng(20260822)


def random_points(n, rng=RNG):
    h = rng.standard_normal((n, 3)) + 1j * rng.standard_normal((n, 3))
    return pj.canonicalize(h)


# ---------------------------------------------------------------------------
# canonical representatives


def test_canonicalize_unit_norm_and_positive_lead():
    z = np.array([0.0, -2.0j, 1.0 + 1.0j])
    c = pj.canonicalize(z)
    assert abs(np.linalg.norm(c) - 1.0) < 1e-14
    lead = c[np.argmax(np.abs(c) > 1e-9)]
    assert lead.imag == 0.0 and lead.real > 0.0


def test_canonicalize_idempotent():
    h = random_points(50)
    again = pj.canonicalize(h)
    assert np.array_equal(h, again)


@settings(deadline=None, max_examples=60)
@given(
    st.lists(st.floats(-2, 2), min_size=6, max_size=6),
    st.floats(-3, 3),
    st.floats(-3, 3),
)
def test_canonicalize_scale_invariant(entries, lre, lim):
    z = np.array(entries[0::2]) + 1j * np.array(entries[1::2])
    lam = lre + 1j * lim
    if np.linalg.norm(z) < 0.3 or abs(lam) < 0.1:
        return
    assert np.max(np.abs(pj.canonicalize(z) - pj.canonicalize(lam * z))) < 1e-12


def test_point_chart_and_coords():
    p = ProjectivePoint(np.array([1.0, 0.0, 0.0]))
    assert p.chart == 0
    assert np.allclose(p.coords, 0.0)
    q = ProjectivePoint(np.array([1.0, 3.0, 0.5]))
    assert q.chart == 1
    assert np.allclose(q.coords, [1.0 / 3.0, 0.5 / 3.0])


def test_distance_between_axes():
    p = ProjectivePoint(np.array([1.0, 0.0, 0.0]))
    q = ProjectivePoint(np.array([0.0, 1.0, 0.0]))
    assert abs(p.distance(q) - np.pi / 2) < 1e-14
    assert p.distance(p) == 0.0


# ---------------------------------------------------------------------------
# metric and symplectic pairing


def test_fs_pair_at_origin():
    p = ProjectivePoint(np.array([1.0, 0.0, 0.0]))
    v = TangentVector(p, np.array([1.0, 0.0]))
    w = TangentVector(p, np.array([1.0j, 0.0]))
    om, g = fs_pair(p, v, v)
    assert abs(g - 1.0) < 1e-14 and abs(om) < 1e-14
    om2, g2 = fs_pair(p, v, w)
    assert abs(om2 - 1.0) < 1e-14 and abs(g2) < 1e-14


def test_fs_pair_mismatched_base():
    p = ProjectivePoint(np.array([1.0, 0.0, 0.0]))
    q = ProjectivePoint(np.array([1.0, 0.5, 0.0]))
    v = TangentVector(p, np.array([1.0, 0.0]))
    w = TangentVector(q, np.array([1.0, 0.0]))
    with pytest.raises(ValueError, match="mismatched base points"):
        fs_pair(p, v, w)


def test_metric_matches_fd_hessian_of_potential():
    rng = np.random.default_rng(7)
    for _ in range(5):
        zeta = rng.uniform(-0.9, 0.9, 4) @ np.array(
            [[1, 0], [1j, 0], [0, 1], [0, 1j]]
        )
        got = pj.hermitian_metric(zeta)[0]
        want = oracles.fd_hermitian_metric(zeta)
        assert np.max(np.abs(got - want)) < 1e-6


def test_real_forms_reproduce_hermitian_pairing():
    rng = np.random.default_rng(11)
    zeta = rng.standard_normal((8, 2)) + 1j * rng.standard_normal((8, 2))
    u = rng.standard_normal((8, 2)) + 1j * rng.standard_normal((8, 2))
    v = rng.standard_normal((8, 2)) + 1j * rng.standard_normal((8, 2))
    h = pj.hermitian_pair(zeta, u, v)
    g4 = pj.metric_real(pj.hermitian_metric(zeta))
    w4 = pj.omega_real(pj.hermitian_metric(zeta))
    ur = pj.complex_to_real_vec(u)
    vr = pj.complex_to_real_vec(v)
    assert np.max(np.abs(np.einsum("na,nab,nb->n", ur, g4, vr) - h.real)) < 1e-12
    assert np.max(np.abs(np.einsum("na,nab,nb->n", ur, w4, vr) + h.imag)) < 1e-12


def test_clinear_real_form_acts_correctly():
    rng = np.random.default_rng(12)
    m = rng.standard_normal((5, 2, 2)) + 1j * rng.standard_normal((5, 2, 2))
    v = rng.standard_normal((5, 2)) + 1j * rng.standard_normal((5, 2))
    direct = np.einsum("nab,nb->na", m, v)
    via_real = pj.real_to_complex_vec(
        np.einsum("nab,nb->na", pj.clinear_to_real(m), pj.complex_to_real_vec(v))
    )
    assert np.max(np.abs(direct - via_real)) < 1e-12


# ---------------------------------------------------------------------------
# exponential and logarithm


def test_exp_quarter_turn_reaches_next_axis():
    p = ProjectivePoint(np.array([1.0, 0.0, 0.0]))
    v = TangentVector(p, np.array([np.pi / 2, 0.0]))
    q = exp_fs(p, v)
    assert q.close_to(ProjectivePoint(np.array([0.0, 1.0, 0.0])), 1e-12)


def test_exp_zero_velocity_fixes_point():
    p = ProjectivePoint(np.array([0.3, 1.0 - 0.2j, -0.4j]))
    q = exp_fs(p, TangentVector(p, np.zeros(2)))
    assert np.max(np.abs(q.homogeneous - p.homogeneous)) < 1e-12


def test_log_along_real_circle():
    p = ProjectivePoint(np.array([1.0, 0.0, 0.0]))
    q = ProjectivePoint(np.array([np.cos(0.3), np.sin(0.3), 0.0]))
    v = log_fs(p, q)
    assert np.max(np.abs(v.value - np.array([0.3, 0.0]))) < 1e-12


def test_log_at_cut_locus_raises():
    p = ProjectivePoint(np.array([1.0, 0.0, 0.0]))
    q = ProjectivePoint(np.array([0.0, 1.0, 0.0]))
    with pytest.raises(ValueError, match="outside injectivity radius"):
        log_fs(p, q)


FROZEN_GEODESICS = [
    # start chart-0 coords, velocity, RK4 endpoint (independent integrator)
    (
        (0.3 + 0.1j, -0.2 + 0.25j),
        (0.55 - 0.15j, 0.2 + 0.4j),
        (
            0.620952598583855,
            0.606895765087103 - 0.186230936214695j,
            0.131538859647877 + 0.440580262188892j,
        ),
    ),
    (
        (-0.8 + 0.6j, 1.1 - 0.4j),
        (-0.3 - 0.35j, 0.45 + 0.1j),
        (
            0.467607265563437,
            -0.482040989174848 + 0.0564295218106261j,
            0.735213036014391 - 0.0725081422348164j,
        ),
    ),
]


def test_exp_matches_frozen_rk4_endpoints():
    for zeta0, vel0, endpoint in FROZEN_GEODESICS:
        p = ProjectivePoint(np.array([1.0, zeta0[0], zeta0[1]]))
        chart0_vel = np.array(vel0)
        if p.chart != 0:
            jac = pj.transition_jacobian(p.homogeneous, 0, p.chart)[0]
            vel = jac @ chart0_vel
        else:
            vel = chart0_vel
        q = exp_fs(p, TangentVector(p, vel))
        d = oracles.projective_distance(q.homogeneous, np.array(endpoint))
        assert d < 5e-8


def test_exp_matches_fresh_rk4_runs():
    rng = np.random.default_rng(31)
    for _ in range(2):
        zeta0 = tuple(rng.uniform(-0.7, 0.7, 2) + 1j * rng.uniform(-0.7, 0.7, 2))
        vel0 = tuple(rng.uniform(-0.5, 0.5, 2) + 1j * rng.uniform(-0.5, 0.5, 2))
        zend, _, drift = oracles.geodesic_rk4(zeta0, vel0, steps=1200)
        assert drift < 1e-9
        p = ProjectivePoint(np.array([1.0, zeta0[0], zeta0[1]]))
        vel = np.array(vel0)
        if p.chart != 0:
            vel = pj.transition_jacobian(p.homogeneous, 0, p.chart)[0] @ vel
        q = exp_fs(p, TangentVector(p, vel))
        d = oracles.projective_distance(
            q.homogeneous, oracles.homogeneous_from_chart0(zend)
        )
        assert d < 1e-7


def test_exp_log_roundtrip_bulk():
    rng = np.random.default_rng(5)
    n = 1000
    pts = random_points(n, rng)
    charts = pj.chart_of(pts)
    vel = rng.standard_normal((n, 2)) + 1j * rng.standard_normal((n, 2))
    zeta = pj.coords_in_chart(pts, charts)
    norms = np.sqrt(pj.hermitian_pair(zeta, vel, vel).real)
    target = rng.uniform(0.01, 1.45, n)
    vel *= (target / norms)[:, None]
    ends = pj.exp_many(pts, charts, vel)
    dist = pj.distance_many(pts, ends)
    assert np.max(np.abs(dist - target)) < 1e-9
    back = pj.log_many(pts, charts, ends)
    assert np.max(np.abs(back - vel)) < 1e-8


@settings(deadline=None, max_examples=40)
@given(st.lists(st.floats(-1.5, 1.5), min_size=10, max_size=10))
def test_exp_log_roundtrip_property(raw):
    h = np.array(raw[0:3]) + 1j * np.array(raw[3:6])
    if np.linalg.norm(h) < 0.3:
        return
    vel = np.array(raw[6:8]) + 1j * np.array(raw[8:10])
    p = ProjectivePoint(h)
    norm = TangentVector(p, vel).norm
    if norm < 1e-3:
        return
    vel = vel * (min(norm, 1.4) / norm)
    v = TangentVector(p, vel)
    q = exp_fs(p, v)
    back = log_fs(p, q)
    assert np.max(np.abs(back.value - v.value)) < 1e-8


def test_tangent_vector_chart_validation():
    p = ProjectivePoint(np.array([1.0, 0.2, 0.1]))
    ok = TangentVector(p, np.array([1.0, 2.0]), chart=0)
    assert ok.chart == 0
    with pytest.raises(ValueError, match="chart index inconsistent"):
        TangentVector(p, np.array([1.0, 2.0]), chart=2)


# ---------------------------------------------------------------------------
# chart transitions


def test_transition_jacobian_against_fd():
    rng = np.random.default_rng(9)
    for cf, ct in [(0, 1), (0, 2), (1, 2), (2, 0)]:
        zeta = rng.uniform(0.4, 1.1, 2) + 1j * rng.uniform(0.4, 1.1, 2)
        pts = pj.from_chart_coords(zeta, cf)
        jac = pj.transition_jacobian(pts, cf, ct)[0]
        h = 1e-6
        for b in range(2):
            step = np.zeros(2, dtype=complex)
            step[b] = h
            plus = pj.coords_in_chart(pj.from_chart_coords(zeta + step, cf), ct)[0]
            minus = pj.coords_in_chart(pj.from_chart_coords(zeta - step, cf), ct)[0]
            fd = (plus - minus) / (2 * h)
            assert np.max(np.abs(jac[:, b] - fd)) < 1e-6


def test_transition_jacobians_compose_to_identity():
    pts = random_points(40)
    keep = np.min(np.abs(pts), axis=1) > 0.05
    pts = pts[keep]
    fwd = pj.transition_jacobian(pts, 0, 1)
    bwd = pj.transition_jacobian(pts, 1, 0)
    prod = np.einsum("nab,nbc->nac", bwd, fwd)
    assert np.max(np.abs(prod - np.eye(2))) < 1e-10


# ---------------------------------------------------------------------------
# almost complex structures


def test_standard_structure_is_block_rotation():
    j = make_compatible_j(None)
    assert j.is_standard
    p = ProjectivePoint(np.array([0.3 + 0.1j, 1.0, -0.4]))
    assert np.array_equal(j.field(p), pj.J0_REAL)


def test_zero_amplitudes_collapse_to_standard():
    j = make_compatible_j(
        [{"amplitude": 0.0, "wave": (1, 0, 0, 0), "sym_index": 3}]
    )
    assert j.is_standard


PERTURBATION = [
    {"amplitude": 0.18, "wave": (1, 0, -1, 0), "sym_index": 0, "phase": 0.3},
    {"amplitude": 0.12, "wave": (0, 2, 0, 1), "sym_index": 5, "phase": 1.1},
    {"amplitude": 0.1, "wave": (1, 1, 0, 0), "sym_index": 9, "phase": -0.4},
]


def _check_structure(j: AlmostComplexStructure, pts):
    mats = j.matrix_many(pts)
    assert np.max(np.abs(np.einsum("nab,nbc->nac", mats, mats) + np.eye(4))) < 1e-10
    charts = np.broadcast_to(pj.chart_of(pts), (pts.shape[0],))
    zeta = pj.coords_in_chart(pts, charts)
    om = pj.omega_real(pj.hermitian_metric(zeta))
    gj = np.einsum("nab,nbc->nac", om, mats)
    assert np.max(np.abs(gj - np.swapaxes(gj, 1, 2))) < 1e-10
    eigs = np.linalg.eigvalsh(0.5 * (gj + np.swapaxes(gj, 1, 2)))
    assert np.min(eigs) > 0.0


def test_perturbed_structure_square_and_compatibility():
    j = make_compatible_j(PERTURBATION)
    assert not j.is_standard
    pts = random_points(100, np.random.default_rng(13))
    _check_structure(j, pts)


def test_perturbation_vanishes_away_from_support():
    j = make_compatible_j(PERTURBATION)
    far = pj.canonicalize(
        np.array(
            [
                [1.0, 2.0, 0.1],
                [0.0, 1.0, 0.0],
                [0.0, 1.0, 5.0],
                [1e-12, 1.0, 0.3],
            ],
            dtype=complex,
        )
    )
    mats = j.matrix_many(far)
    assert np.max(np.abs(mats - pj.J0_REAL)) < 1e-12


def test_indefinite_perturbation_raises():
    j = make_compatible_j(
        [{"amplitude": 3.0, "wave": (0, 0, 0, 0), "sym_index": 0, "phase": np.pi}]
    )
    p = ProjectivePoint(np.array([1.0, 0.0, 0.0]))
    with pytest.raises(ValueError, match="not positive definite"):
        j.field(p)


def test_structure_path_endpoints_and_interior():
    j0 = make_compatible_j(None)
    j1 = make_compatible_j(PERTURBATION)
    path = StructurePath(j0, j1)
    assert path.value(0.0) is j0
    assert path.value(1.0) is j1
    mid = path.value(0.5)
    pts = random_points(40, np.random.default_rng(17))
    _check_structure(mid, pts)
    with pytest.raises(ValueError, match="outside"):
        path.value(1.5)
