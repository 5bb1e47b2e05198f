import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import crharmonic as ch
from crharmonic.kahler import (
    DomainError,
    bergman_curvature_closed_form,
    christoffel_from_metric,
    curvature,
    curvature_rearrangement,
    negated_curvature,
    order_k_sum,
    rank_condition,
    sample_negativity_order_k,
    sample_strong_negativity,
    siu_form,
    with_christoffel_offset,
)

import oracles


def _ball_point(rng, n, radius=0.7):
    w = rng.normal(size=n) + 1j * rng.normal(size=n)
    return radius * rng.uniform() * w / np.linalg.norm(w)


def test_bergman_curvature_at_origin_frozen(ball3):
    R = curvature(ball3, np.zeros(3))
    d = np.eye(3)
    np.testing.assert_allclose(R, np.einsum("ab,cd->abcd", d, d) + np.einsum("ad,cb->abcd", d, d), atol=1e-12)


def test_bergman_metric_and_curvature_match_symbolic(ball2, rng):
    for _ in range(4):
        w = _ball_point(rng, 2)
        np.testing.assert_allclose(np.asarray(ball2.metric(jnp.asarray(w))), oracles.bergman_metric(w), atol=1e-12)
        np.testing.assert_allclose(curvature(ball2, w), oracles.bergman_curvature(w), atol=1e-10)
        np.testing.assert_allclose(curvature(ball2, w), bergman_curvature_closed_form(w), atol=1e-10)


def test_bergman_christoffel_closed_form_matches_metric(ball3, rng):
    for _ in range(3):
        w = _ball_point(rng, 3)
        closed = np.asarray(ball3.christoffel(jnp.asarray(w)))
        np.testing.assert_allclose(closed, np.asarray(christoffel_from_metric(ball3, jnp.asarray(w))), atol=1e-12)
        np.testing.assert_allclose(closed, oracles.bergman_christoffel(w), atol=1e-7)


def test_flat_target_has_zero_curvature(flat3):
    w = np.array([0.3, -1.0j, 2.0])
    assert np.max(np.abs(curvature(flat3, w))) == 0.0
    assert np.max(np.abs(np.asarray(flat3.christoffel(jnp.asarray(w))))) == 0.0


@given(st.integers(0, 10_000))
def test_curvature_symmetries(seed):
    rng = np.random.default_rng(seed)
    R = curvature(_BALL2, _ball_point(rng, 2))
    # Kahler symmetry in holomorphic and antiholomorphic slots, and Hermitian symmetry
    np.testing.assert_allclose(R, np.transpose(R, (2, 1, 0, 3)), atol=1e-10)
    np.testing.assert_allclose(R, np.transpose(R, (0, 3, 2, 1)), atol=1e-10)
    np.testing.assert_allclose(R, np.conj(np.transpose(R, (1, 0, 3, 2))), atol=1e-10)


_BALL2 = ch.make_bergman_ball(2)


def test_domain_check(ball2):
    with pytest.raises(DomainError):
        curvature(ball2, np.array([0.8, 0.7]))
    assert ball2.in_domain(np.array([0.5, 0.5]))


def test_fixtures_modify_only_what_they_name(ball2):
    w = np.array([0.2, 0.1j])
    neg = negated_curvature(ball2)
    np.testing.assert_allclose(curvature(neg, w), -curvature(ball2, w))
    bad = with_christoffel_offset(ball2, 1e-3)
    diff = np.asarray(bad.christoffel(jnp.asarray(w))) - np.asarray(ball2.christoffel(jnp.asarray(w)))
    np.testing.assert_allclose(diff, 1e-3, atol=1e-15)


def test_bergman_is_strongly_negative(ball3):
    v = sample_strong_negativity(ball3, np.array([0.1, 0.2, -0.3j]), 5000, seed=1)
    assert v.kind == "strongly-negative-sample-pass"
    assert v.worst_value < 0


def test_flat_is_semi_negative_with_worst_zero(flat3):
    v = sample_strong_negativity(flat3, np.zeros(3), 1000)
    assert v.kind == "semi-negative-sample-pass"
    assert v.worst_value == 0.0


def test_negated_bergman_fails_with_witness(ball3):
    v = sample_strong_negativity(negated_curvature(ball3), np.zeros(3), 1000)
    assert v.kind == "fail" and not v.passed
    A, B, C, D = v.witness
    xi = np.outer(A, np.conj(B)) - np.outer(C, np.conj(D))
    R = curvature(negated_curvature(ball3), np.zeros(3))
    assert -np.real(siu_form(R, xi)) / np.sum(np.abs(xi) ** 2) == pytest.approx(v.worst_value)


def test_bergman_negative_of_order_two(ball3):
    v = sample_negativity_order_k(ball3, np.array([0.2, 0.0, 0.1]), 2, 2000, seed=3)
    assert v.kind == "strongly-negative-sample-pass"


def test_order_one_is_degenerate(ball3):
    # xi_11 = A_1 B_1bar^T - A_1 B_1bar^T vanishes identically, so no strict negativity
    v = sample_negativity_order_k(ball3, np.zeros(3), 1, 200)
    assert v.kind == "fail"
    assert v.worst_value == 0.0


def test_flat_not_negative_of_order_two(flat3):
    assert sample_negativity_order_k(flat3, np.zeros(3), 2, 200).kind == "fail"


def test_order_k_bounds(ball3):
    with pytest.raises(ValueError):
        sample_negativity_order_k(ball3, np.zeros(3), 4, 10)
    with pytest.raises(ValueError):
        sample_strong_negativity(ball3, np.zeros(3), 0)


def test_rank_condition_examples():
    e = np.eye(3)
    assert rank_condition(e[:, :2], np.zeros((3, 2))) == 4
    assert rank_condition(e[:, :1], e[:, :1]) == 1  # A = B = e1: [[e1, e1], [e1, e1]]
    assert rank_condition(e[:, :1], 1j * e[:, :1]) == 1  # rows (1, i) and (-i, 1)
    assert rank_condition(e[:, :1], e[:, 1:2]) == 2
    with pytest.raises(ValueError):
        rank_condition(e[:, :1], e[:, :2])


def test_order_k_sum_matches_explicit_loop(ball2, rng):
    R = curvature(ball2, np.array([0.3, 0.1j]))
    A = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    B = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    total = 0.0
    for i in range(2):
        for j in range(2):
            xi = np.outer(A[:, i], np.conj(B[:, j])) - np.outer(A[:, j], np.conj(B[:, i]))
            total += np.real(np.einsum("abcd,ab,dc->", R, xi, np.conj(xi)))
    assert order_k_sum(R, A, B) == pytest.approx(total, rel=1e-12)


def test_curvature_rearrangement_identity(ball3, rng):
    R = curvature(ball3, np.array([0.1, -0.2, 0.3j]))
    for m in (1, 2):
        X = rng.normal(size=(3, m)) + 1j * rng.normal(size=(3, m))
        Y = rng.normal(size=(3, m)) + 1j * rng.normal(size=(3, m))
        L = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))
        levi = L @ L.conj().T + np.eye(m)
        lhs, rhs = curvature_rearrangement(R, X, Y, levi)
        assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))
