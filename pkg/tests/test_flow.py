import csv
import json

import numpy as np
import pytest

from crharmonic.flow import (
    FlowSettings,
    MapAnsatz,
    discrete_energy_and_gradient,
    gradient_check,
    minimize,
)
from crharmonic.integrate import energy, make_rule
from crharmonic.maps import anti_cr, cr_inclusion, perturbed_cr


@pytest.fixture(scope="module")
def rule(s3):
    return make_rule(s3, 8)


@pytest.fixture(scope="module")
def start():
    return MapAnsatz.containing(perturbed_cr(2, 0.5, 0.1, seed=0), 2)


def test_ansatz_roundtrips(start):
    u = start.flat()
    assert u.size == start.size
    np.testing.assert_array_equal(start.with_flat(u).coefficients, start.coefficients)
    back = MapAnsatz.from_json(json.loads(json.dumps(start.to_json())))
    assert back.fmap.exponents == start.fmap.exponents
    np.testing.assert_array_equal(back.coefficients, start.coefficients)


def test_containing_rejects_outside_basis():
    with pytest.raises(ValueError):
        MapAnsatz.containing(perturbed_cr(2, 0.5, 0.1, degree=3), 2)


def test_discrete_energy_matches_quadrature(s3, ball2, rule, start):
    E, g = discrete_energy_and_gradient(start, s3, ball2, rule)
    assert E == pytest.approx(energy(s3, ball2, start.fmap, rule), rel=1e-12)
    assert g.shape == (start.size,)


def test_gradient_matches_finite_differences(s3, ball2, rule, start):
    assert gradient_check(start, s3, ball2, rule) < 1e-5


def test_cr_start_is_stationary(s3, ball2, rule):
    ansatz = MapAnsatz.containing(cr_inclusion(2, 0.5), 2)
    out, trace = minimize(ansatz, s3, ball2, rule)
    assert trace.converged and len(trace.steps) == 1
    assert trace.steps[0].E == 0.0


def test_perturbed_start_descends_to_cr(s3, ball2, rule, start, tmp_path):
    out, trace = minimize(start, s3, ball2, rule, out_dir=tmp_path)
    first, last = trace.steps[0], trace.steps[-1]
    assert trace.monotone and trace.converged and not trace.stalled
    assert last.E < 0.01 * first.E
    assert last.e_max < 0.01 * first.e_max
    assert trace.gradient_check_start < 1e-5 and trace.gradient_check_end < 1e-5
    assert out.max_image_norm(s3, rule) <= out.rho_max

    rows = list(csv.DictReader(open(tmp_path / "flow_trace.csv")))
    assert len(rows) == len(trace.steps)
    assert float(rows[-1]["E"]) == last.E
    saved = MapAnsatz.from_json(json.loads((tmp_path / "flow_coefficients.json").read_text()))
    np.testing.assert_array_equal(saved.coefficients, out.coefficients)


def test_first_step_agrees_with_plain_descent(s3, ball2, rule, start):
    _, trace = minimize(start, s3, ball2, rule, FlowSettings(max_iter=1))
    s = trace.steps[1].step
    _, g = discrete_energy_and_gradient(start, s3, ball2, rule)
    plain = start.with_flat(start.flat() - s * g)
    assert trace.steps[1].E == pytest.approx(energy(s3, ball2, plain.fmap, rule), rel=1e-12)
    assert trace.message.startswith("stopped at max_iter")


def test_anti_cr_start_is_monotone(s3, ball2, rule):
    ansatz = MapAnsatz.containing(anti_cr(2, 0.5), 2)
    _, trace = minimize(ansatz, s3, ball2, rule, FlowSettings(max_iter=8))
    assert trace.monotone
    assert trace.energies[-1] < trace.energies[0]


def test_initial_image_must_fit(s3, ball2, rule):
    with pytest.raises(ValueError):
        minimize(MapAnsatz.containing(cr_inclusion(2, 0.95), 2), s3, ball2, rule)


def test_stall_is_reported(s3, ball2, rule, start):
    _, trace = minimize(start, s3, ball2, rule, FlowSettings(max_halvings=1, initial_step=1e6, max_iter=3))
    assert trace.stalled and "line search failed" in trace.message
