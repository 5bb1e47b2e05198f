import numpy as np
import pytest

from crharmonic.kahler import negated_curvature
from crharmonic.maps import anti_cr, cr_inclusion, random_polynomial
from crharmonic.mapcalc import UnsupportedError
from crharmonic.integrate import (
    PreconditionError,
    QuadratureRule,
    energy,
    energy_with_error,
    make_rule,
    positivity_check,
    siu_identity_residuals,
    sphere_volume,
)

import oracles

ANTI_CR_BERGMAN_ENERGY = 13.159472534785811  # frozen: 4 pi^2 r^2 / (1 - r^2) at r = 1/2


def test_s3_volume_matches_symbolic(s3_rule):
    exact = float(oracles.s3_contact_volume())
    assert exact == pytest.approx(4 * np.pi**2, rel=1e-15)
    assert s3_rule.total == pytest.approx(exact, rel=1e-8)
    assert sphere_volume(1) == pytest.approx(exact, rel=1e-15)


def test_s5_monte_carlo_total_is_volume(s5):
    rule = make_rule(s5, 1000, seed=3)
    assert rule.is_monte_carlo and rule.size == 1000
    assert rule.total == pytest.approx(8 * np.pi**3, rel=1e-12)
    assert sphere_volume(2) == pytest.approx(8 * np.pi**3, rel=1e-15)
    np.testing.assert_allclose(np.linalg.norm(rule.points, axis=1), 1.0, atol=1e-14)


def test_product_rule_integrates_polynomials(s3):
    # int |z1|^2 over S^3 is half the volume by symmetry
    rule = make_rule(s3, 8)
    z1 = rule.points[:, 0] + 1j * rule.points[:, 2]
    assert rule.integrate(np.abs(z1) ** 2) == pytest.approx(2 * np.pi**2, rel=1e-13)


def test_anti_cr_energy_frozen(s3, ball2, s3_rule):
    assert ANTI_CR_BERGMAN_ENERGY == pytest.approx(4 * np.pi**2 * oracles.s3_energy_anti_cr_bergman(0.5), rel=1e-15)
    assert energy(s3, ball2, anti_cr(2, 0.5), s3_rule) == pytest.approx(ANTI_CR_BERGMAN_ENERGY, rel=1e-10)


def test_energy_examples(s3, flat2, ball2, s3_rule):
    assert energy(s3, flat2, anti_cr(2, 0.5), s3_rule) == pytest.approx(np.pi**2, rel=1e-10)
    assert abs(energy(s3, ball2, cr_inclusion(2, 0.5), s3_rule)) < 1e-20


def test_monte_carlo_estimates_agree_across_seeds(s5, ball3):
    f = random_polynomial(3, 3, 2, 0.15, seed=5)
    a = energy_with_error(s5, ball3, f, make_rule(s5, 2000, seed=1))
    b = energy_with_error(s5, ball3, f, make_rule(s5, 2000, seed=2))
    assert a.stderr > 0
    assert abs(a.real - b.real) < 4 * np.hypot(a.stderr, b.stderr)


def test_product_rule_has_no_error_estimate(s3, flat2, s3_rule):
    assert energy_with_error(s3, flat2, anti_cr(2, 0.5), s3_rule).stderr == 0.0


@pytest.mark.parametrize("target_name", ["flat2", "ball2"])
def test_integrated_identities_balance(request, s3, cubic_s3, s3_rule, target_name):
    target = request.getfixturevalue(target_name)
    res = siu_identity_residuals(s3, target, cubic_s3, s3_rule, tol=1e-3, divergence_check=True)
    assert set(res) == {"b-tensor-identity", "tension-identity", "divergence-E-integral", "divergence-F-integral"}
    for name, r in res.items():
        assert r["passed"], (name, r)
    assert abs(res["tension-identity"]["lhs"]) > 1e-3  # not a trivial balance


def test_residual_drops_on_refinement(s3, ball2, cubic_s3):
    coarse = siu_identity_residuals(s3, ball2, cubic_s3, make_rule(s3, 8))["tension-identity"]["residual"]
    fine = siu_identity_residuals(s3, ball2, cubic_s3, make_rule(s3, 16))["tension-identity"]["residual"]
    assert fine <= coarse / 4


def test_identities_need_closed_model(h1, flat2, cubic_s3, s3_rule):
    with pytest.raises(UnsupportedError):
        make_rule(h1, 8)
    with pytest.raises(UnsupportedError):
        siu_identity_residuals(h1, flat2, cubic_s3, s3_rule)


@pytest.fixture(scope="module")
def s5_mc(s5):
    return make_rule(s5, 1024, seed=7)


def test_generic_map_pairing_is_negative(s5, ball3, s5_mc):
    f = random_polynomial(3, 3, 2, 0.1, seed=11)
    res = positivity_check(s5, ball3, f, s5_mc, negativity_trials=500)
    assert res.verdict == "negative" and res.passed
    assert res.value < -3 * res.stderr
    assert res.negativity == "strongly-negative-sample-pass"


def test_cr_inclusion_equality_branch(s5, ball3, s5_mc):
    res = positivity_check(s5, ball3, cr_inclusion(3, 0.5), s5_mc, negativity_trials=500)
    assert res.verdict == "zero"
    assert res.cr_pluriharmonic is True


def test_pluriharmonic_into_flat_is_zero(s5, flat3, pluri_s5, s5_mc):
    res = positivity_check(s5, flat3, pluri_s5, s5_mc, negativity_trials=200)
    assert res.verdict == "zero" and res.cr_pluriharmonic
    assert res.negativity == "semi-negative-sample-pass"


def test_positivity_preconditions(s3, s5, ball2, ball3, s3_rule, s5_mc):
    with pytest.raises(UnsupportedError):
        positivity_check(s3, ball2, cr_inclusion(2), s3_rule)
    with pytest.raises(PreconditionError):
        positivity_check(s5, negated_curvature(ball3), cr_inclusion(3, 0.5), s5_mc, negativity_trials=200)


def test_conformal_rule_carries_volume_density(s5, s5_hat, sigma):
    base = make_rule(s5, 200, seed=4)
    hat = make_rule(s5_hat, 200, seed=4)
    np.testing.assert_allclose(base.points, hat.points)
    s = np.array([float(sigma.bind(s5)(x)) for x in base.points])
    np.testing.assert_allclose(hat.weights, base.weights * np.exp(6 * s), rtol=1e-12)


@pytest.mark.parametrize("suffix", [".npz", ".csv"])
def test_rule_save_load_roundtrip(s3, tmp_path, suffix):
    rule = make_rule(s3, 6)
    path = tmp_path / f"rule{suffix}"
    rule.save(path)
    back = QuadratureRule.load(path)
    np.testing.assert_allclose(back.points, rule.points, rtol=1e-15)
    np.testing.assert_allclose(back.weights, rule.weights, rtol=1e-15)
    np.testing.assert_array_equal(back.charts, rule.charts)


def test_rule_cache(s3, tmp_path):
    a = make_rule(s3, 5, cache_dir=tmp_path)
    assert list(tmp_path.glob("*.npz"))
    b = make_rule(s3, 5, cache_dir=tmp_path)
    np.testing.assert_array_equal(a.weights, b.weights)
