import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import crharmonic as ch
from crharmonic.kahler import DomainError
from crharmonic.maps import anti_cr, conjugate, constant_map, cr_inclusion, random_polynomial
from crharmonic.mapcalc import (
    UnsupportedError,
    b_tensor,
    classify,
    evaluate,
    first_jet,
    jet,
    p_operator,
    pairing,
    second_cov,
    tension,
)
from crharmonic.phmodel import Point, random_points

import oracles


def _hup(model, p):
    levi = np.asarray(model.levi(np.asarray(p.coords), p.chart_id))
    return np.linalg.inv(levi).T


def _p_norm2(P, hup):
    return float(np.real(np.einsum("ai,aj,ij->", P, np.conj(P), hup)))


# ---- first jets ---------------------------------------------------------------


def test_constant_map_jets_vanish(s5, ball3, s5_points):
    f = constant_map([0.1, 0.2j, -0.3], 3)
    for x in s5_points[:4]:
        p = s5.point(x)
        j = jet(s5, ball3, f, p)
        for arr in (j.first, j.second, j.third):
            assert np.max(np.abs(arr)) < 1e-13
        assert pairing(s5, ball3, f, p) == (0, 0, 0)


def test_cr_inclusion_is_cr(s3, ball2, s3_points):
    f = cr_inclusion(2, 0.5)
    for x in s3_points:
        hol, antihol, reeb = first_jet(s3, ball2, f, s3.point(x))
        assert np.max(np.abs(antihol)) < 1e-12
        assert np.max(np.abs(hol)) > 1e-3


def test_anti_cr_has_reeb_derivative(s3, ball2, s3_points):
    f = anti_cr(2, 0.5)
    for x in s3_points:
        hol, antihol, reeb = first_jet(s3, ball2, f, s3.point(x))
        assert np.max(np.abs(hol)) < 1e-12
        assert np.linalg.norm(reeb) > 0.1
        assert pairing(s3, ball2, f, s3.point(x))[2] > 0


def test_cr_inclusion_second_derivative_vanishes(s3, ball2, s3_points):
    for x in s3_points[:4]:
        antihol_hol, _, _ = second_cov(s3, ball2, cr_inclusion(2, 0.5), s3.point(x))
        assert np.max(np.abs(antihol_hol)) < 1e-12


# ---- tension and P against independent frame oracles -------------------------


def test_tension_matches_global_frame_oracle_flat(s3, flat2, cubic_s3, s3_points):
    for x in s3_points:
        np.testing.assert_allclose(tension(s3, flat2, cubic_s3, s3.point(x)), oracles.s3_tension_flat(cubic_s3, x), atol=1e-12)


def test_tension_matches_global_frame_oracle_bergman(s3, ball2, cubic_s3, s3_points):
    for x in s3_points:
        expected = oracles.s3_tension_with_target(cubic_s3, x, oracles.bergman_christoffel)
        np.testing.assert_allclose(tension(s3, ball2, cubic_s3, s3.point(x)), expected, atol=1e-8)


def test_p_operator_matches_oracle_norm_s3(s3, flat2, cubic_s3, s3_points):
    # P_i is a covector: compare the frame-independent norm
    for x in s3_points:
        p = s3.point(x)
        P = p_operator(s3, flat2, cubic_s3, p).values
        ref = oracles.s3_p_operator_flat(cubic_s3, x)
        assert _p_norm2(P, _hup(s3, p)) == pytest.approx(float(np.sum(np.abs(ref) ** 2)), rel=1e-9, abs=1e-14)


def test_heisenberg_fields_match_oracle(h2, flat2, rng):
    f = random_polynomial(2, 2, 3, 0.3, seed=7, with_t=True)
    fns = oracles.heisenberg_fields(f, 2)
    for x in rng.normal(size=(6, 5)) * 0.7:
        p = Point(0, x)
        ref = oracles.heisenberg_eval(fns, x, 2)
        np.testing.assert_allclose(tension(h2, flat2, f, p), ref["tau"], atol=1e-10)
        np.testing.assert_allclose(p_operator(h2, flat2, f, p).values, ref["P"], atol=1e-10)
        antihol_hol, _, _ = second_cov(h2, flat2, f, p)
        np.testing.assert_allclose(antihol_hol, ref["antihol_hol"], atol=1e-10)


def test_linear_heisenberg_map_second_derivative_is_plain(h1, flat2):
    f = random_polynomial(2, 1, 1, 0.5, seed=3, with_t=True)
    fns = oracles.heisenberg_fields(f, 1)
    x = np.array([0.3, -0.4, 1.1])
    antihol_hol, _, _ = second_cov(h1, flat2, f, Point(0, x))
    np.testing.assert_allclose(antihol_hol, oracles.heisenberg_eval(fns, x, 1)["antihol_hol"], atol=1e-12)


def test_anti_cr_energy_density_closed_form(s3, ball2, s3_points):
    for x in s3_points:
        e = pairing(s3, ball2, anti_cr(2, 0.5), s3.point(x))[2]
        assert e == pytest.approx(oracles.s3_energy_anti_cr_bergman(0.5), rel=1e-12)


# ---- B and P special cases ---------------------------------------------------


def test_b_tensor_zero_for_cr_pluriharmonic(s5, flat3, pluri_s5, s5_points):
    for x in s5_points:
        p = s5.point(x)
        assert np.max(np.abs(b_tensor(s5, flat3, pluri_s5, p).values)) < 1e-7
        assert np.linalg.norm(tension(s5, flat3, pluri_s5, p)) > 1e-3


def test_b_tensor_vanishes_when_m_is_one(s3, ball2, cubic_s3, s3_points):
    for x in s3_points[:4]:
        assert np.max(np.abs(b_tensor(s3, ball2, cubic_s3, s3.point(x)).values)) < 1e-14


def test_p_operator_vanishes_flat_pluriharmonic(s5, flat3, pluri_s5, s5_points):
    for x in s5_points:
        assert np.max(np.abs(p_operator(s5, flat3, pluri_s5, s5.point(x)).values)) < 1e-6


def test_tensor_shapes(s5, ball3, perturbed_s5, s5_points):
    p = s5.point(s5_points[0])
    assert b_tensor(s5, ball3, perturbed_s5, p).values.shape == (3, 2, 2)
    assert p_operator(s5, ball3, perturbed_s5, p).values.shape == (3, 2)
    assert tension(s5, ball3, perturbed_s5, p).shape == (3,)


def test_domain_error_names_node(s3, ball2):
    with pytest.raises(DomainError, match="node 0"):
        evaluate(s3, ball2, cr_inclusion(2, 1.2), random_points(s3, 3))


# ---- classification ----------------------------------------------------------


def test_classify_cr_inclusion(s5, ball3, s5_points):
    c = classify(s5, ball3, cr_inclusion(3, 0.5), sample_points=s5_points)
    assert c.flags == {"harmonic": True, "dbar_pluriharmonic": True, "cr_pluriharmonic": True, "cr": True, "anti_cr": False}
    assert c.consistent


def test_classify_constant_is_everything(s5, ball3, s5_points):
    c = classify(s5, ball3, constant_map([0.1, 0, 0], 3), sample_points=s5_points)
    assert all(c.flags.values())


def test_classify_generic_is_nothing(s5, ball3, s5_points):
    f = random_polynomial(3, 3, 2, 0.1, seed=9)
    c = classify(s5, ball3, f, tol=1e-6, sample_points=s5_points)
    assert not any(c.flags.values())
    assert c.consistent


def test_classify_m1_rejects_cr_pluriharmonic(s3, ball2, s3_points):
    with pytest.raises(UnsupportedError):
        classify(s3, ball2, cr_inclusion(2), sample_points=s3_points, flags=["cr_pluriharmonic"])
    assert "cr_pluriharmonic" not in classify(s3, ball2, cr_inclusion(2), sample_points=s3_points).flags


# ---- properties ---------------------------------------------------------------

_S5 = ch.make_sphere(2)
_BALL3 = ch.make_bergman_ball(3)
_FLAT3 = ch.make_flat(3)


def _random_case(seed):
    x = random_points(_S5, 1, seed=seed)[0]
    f = random_polynomial(3, 3, 2, 0.12, seed=seed)
    return _S5.point(x), f


@given(st.integers(0, 10_000))
def test_energy_and_b_norm_nonnegative(seed):
    p, f = _random_case(seed)
    _, bn, e = pairing(_S5, _BALL3, f, p)
    assert e >= 0 and bn >= 0


@given(st.integers(0, 10_000))
def test_b_tensor_is_trace_free(seed):
    p, f = _random_case(seed)
    B = b_tensor(_S5, _BALL3, f, p).values
    assert np.max(np.abs(np.einsum("aij,ij->a", B, _hup(_S5, p)))) < 1e-9


@given(st.integers(0, 10_000))
def test_conjugation_symmetry(seed):
    p, f = _random_case(seed)
    a = jet(_S5, _FLAT3, f, p).conjugate()
    b = jet(_S5, _FLAT3, conjugate(f), p)
    for u, v in [(a.value, b.value), (a.first, b.first), (a.second, b.second), (a.third, b.third)]:
        np.testing.assert_allclose(u, v, atol=1e-12)


@given(st.floats(0.0, 2 * np.pi), st.floats(0.0, 2 * np.pi), st.floats(0.9, 1.1))
def test_invariants_independent_of_chart(a, b, ratio):
    z = np.array([np.exp(1j * a), ratio * np.exp(1j * b)])
    z /= np.linalg.norm(z)
    x = np.concatenate([z.real, z.imag])
    f = random_polynomial(2, 2, 3, 0.08, seed=1)
    ball = _BALL2
    p0, p1 = Point(0, x), Point(1, x)
    np.testing.assert_allclose(tension(_S3, ball, f, p0), tension(_S3, ball, f, p1), atol=1e-11)
    np.testing.assert_allclose(pairing(_S3, ball, f, p0), pairing(_S3, ball, f, p1), atol=1e-11)


_S3 = ch.make_sphere(1)
_BALL2 = ch.make_bergman_ball(2)
