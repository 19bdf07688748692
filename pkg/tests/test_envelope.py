import csv

import numpy as np
import pytest

from hjidecomp.core.envelope import (EnvelopeField, IncompatibleFieldsError, Verdict, active_set, check_conditions,
                                     compare_fields, convex_weights, envelope_value, sigma_set, simplex_lattice,
                                     verify_viscosity)
from hjidecomp.core.grid import AnalyticField, ReducedField, build_grid
from hjidecomp.games import P2Params, P3Oracle, make_p2

CROSSING = [0.0, 1.0, -1.0]
ONE_SIDED = [0.0, 1.0, 5.0]


@pytest.fixture
def oracle():
    return P3Oracle(0.5)


@pytest.fixture
def env(oracle):
    return oracle.envelope_field(spacing=0.05)


def constant(value, dim=1):
    return AnalyticField(lambda x: np.full(np.shape(x)[:-1], float(value)), dim, 0.1, transformed=False)


def p1_pair_envelope():
    """
    Closed-form reduced values of one pursuer (speed 1) against two evaders (speed 0.5), capture radius 0.1
    """
    def reduced(y):
        return np.maximum(0.0, np.abs(y[..., 1] - y[..., 0]) - 0.1) / 0.5
    return EnvelopeField([ReducedField(AnalyticField(reduced, 2, 0.02, label=str(i + 1)), (i, 2), 3)
                          for i in range(2)])


def test_envelope_value_p3(env):
    assert envelope_value(env, ONE_SIDED) == pytest.approx(2.0)
    assert envelope_value(env, CROSSING) == pytest.approx(2.0)
    assert envelope_value(env, [0.0, 0.0, 5.0]) == 0.0
    values = envelope_value(env, np.array([ONE_SIDED, CROSSING]))
    assert values.shape == (2,)


def test_envelope_of_identical_components(oracle):
    field = oracle.component_fields(0.05)[0]
    twice = EnvelopeField([field, field])
    points = np.random.default_rng(0).uniform(-1.0, 1.0, (20, 3))
    assert np.array_equal(twice.evaluate(points), field.evaluate(points))


def test_envelope_is_below_every_component(env):
    points = np.random.default_rng(1).uniform(-2.0, 2.0, (100, 3))
    values = env.evaluate(points)
    assert np.all(values <= env.component_values(points).min(axis=0) + 1e-12)


def test_active_set(env):
    assert active_set(env, ONE_SIDED) == (0,)
    assert active_set(env, CROSSING) == (0, 1)
    assert active_set(EnvelopeField([constant(1.0)]), [0.3]) == (0,)


def test_envelope_validation(oracle):
    with pytest.raises(IncompatibleFieldsError):
        EnvelopeField([])
    with pytest.raises(IncompatibleFieldsError):
        EnvelopeField([constant(1.0, dim=1), constant(1.0, dim=2)])
    with pytest.raises(IncompatibleFieldsError):
        EnvelopeField([constant(1.0, dim=3), oracle.component_fields(0.05)[0]])
    with pytest.raises(ValueError):
        EnvelopeField([constant(1.0)], tol_eq=0.0)


def test_default_equality_tolerance(env):
    assert env.tol_eq == pytest.approx(4.0 * 0.05)
    assert env.labels == ["2", "3"]


def test_sigma_set_p3(env):
    query = build_grid([(-1.0, 1.0)], [9], dim=3)
    sigma = sigma_set(env, query)
    assert any(np.allclose(x, [0.0, 0.5, -0.5]) for x in sigma)
    values = env.component_values(sigma)
    assert np.all(np.abs(values[0] - values[1]) <= env.tol_eq + 1e-12)
    assert not np.any(env.in_target(sigma))


def test_sigma_set_disjoint_ranges():
    env = EnvelopeField([constant(0.0), constant(5.0)])
    assert len(sigma_set(env, build_grid([(-1.0, 1.0)], [11]))) == 0


def test_sigma_set_of_a_1d_kink():
    env = EnvelopeField([AnalyticField(lambda x: x[..., 0], 1, 0.1, transformed=False),
                         AnalyticField(lambda x: -x[..., 0], 1, 0.1, transformed=False)], tol_eq=0.1)
    sigma = sigma_set(env, build_grid([(-1.0, 1.0)], [21]))
    assert sigma.shape == (1, 1)
    assert sigma[0, 0] == pytest.approx(0.0, abs=1e-12)


def test_simplex_lattice():
    pairs = simplex_lattice(2, 10)
    assert pairs.shape == (11, 2)
    assert np.allclose(pairs.sum(axis=1), 1.0)
    assert [0.5, 0.5] in pairs.tolist()
    triples = simplex_lattice(3, 2)
    assert triples.shape == (6, 3)
    many = convex_weights(5, 10, np.random.default_rng(0))
    assert many.shape == (200, 5)
    assert np.allclose(many.sum(axis=1), 1.0)


def test_conditions_with_closed_form_gradients(env, oracle, p3):
    gradients = {0: [oracle.gradient_u2(CROSSING)], 1: [oracle.gradient_u3(CROSSING)]}
    report = check_conditions(env, p3.full, CROSSING, gradients=gradients)
    assert report.active == ["2", "3"]
    assert report.residual_E == pytest.approx(1.0, abs=1e-12)
    assert report.residual_C == pytest.approx(1.0, abs=1e-12)
    assert report.weights_tried == 11
    assert report.verdict_E is Verdict.VIOLATED
    assert report.verdict is Verdict.VIOLATED


def test_conditions_with_estimated_gradients(env, p3):
    report = check_conditions(env, p3.full, CROSSING)
    assert report.verdict is Verdict.VIOLATED
    assert 0.7 <= report.residual_E <= 1.3
    record = report.to_dict()
    assert {"point", "active", "residual_C", "residual_E", "verdict", "samples"} <= set(record)


def test_conditions_with_a_single_active_component(env, p3):
    report = check_conditions(env, p3.full, ONE_SIDED)
    assert report.active == ["2"]
    assert report.verdict is Verdict.HOLDS
    assert report.residual_C == 0.0 and report.residual_E == 0.0


def test_conditions_inside_a_target(env, p3):
    report = check_conditions(env, p3.full, [0.0, 0.0, 1.0])
    assert report.verdict is Verdict.HOLDS
    assert report.diagnostic


def test_conditions_inconclusive_without_smooth_samples(p3):
    nowhere = AnalyticField(lambda x: np.full(np.shape(x)[:-1], np.inf), 3, 0.05)
    report = check_conditions(EnvelopeField([nowhere, nowhere]), p3.full, CROSSING)
    assert report.verdict is Verdict.INCONCLUSIVE


def test_conditions_hold_for_one_pursuer_many_evaders(p1):
    env = p1_pair_envelope()
    for x in ([-1.0, 1.0, 0.0], [0.5, -0.3, 0.1], [0.9, -0.9, 0.0]):
        report = check_conditions(env, p1.full, x)
        assert len(report.active) == 2
        assert report.verdict is Verdict.HOLDS
        assert report.residual_C <= report.threshold


@pytest.mark.parametrize("capture_time, velocities", [(2.0, (0.0, 0.3)), (2.0, (-0.3, 0.3)), (3.0, (0.4, 0.0))])
def test_conditions_hold_for_two_damped_pursuers(capture_time, velocities):
    params = P2Params(damping="linear")
    family = make_p2(params, control_samples=3)
    env = family.oracle.envelope_field(spacing=0.05)
    x = family.oracle.crossing_state(capture_time, velocities)
    assert active_set(env, x) == (0, 1)

    exact = check_conditions(env, family.full, x, gradients={j: [c.gradient(x)] for j, c in enumerate(env.components)})
    # both evader velocity costates are positive, so the mixed Hamiltonian is the mix of the Hamiltonians
    assert exact.verdict is Verdict.HOLDS
    assert abs(exact.residual_C) <= 1e-9

    estimated = check_conditions(env, family.full, x)
    assert estimated.verdict is Verdict.HOLDS
    assert estimated.residual_C <= estimated.threshold


def test_verify_viscosity_exact_eikonal(eikonal_1d, line_grid):
    exact = AnalyticField(lambda x: np.abs(x[..., 0]) - 0.1, 1, line_grid.h_max, target_fn=eikonal_1d.in_target,
                          transformed=False)
    report = verify_viscosity(exact, eikonal_1d, line_grid)
    assert report.sub_violations == 0 and report.super_violations == 0
    sub, sup = report.max_residuals("SMOOTH")
    assert abs(sub) <= 1e-6 and abs(sup) <= 1e-6


def test_verify_viscosity_p3_envelope(env, p3, tmp_path):
    query = build_grid([(-1.0, 1.0)], [5], dim=3)
    report = verify_viscosity(env, p3.full, query, points=[CROSSING, ONE_SIDED])
    kinds = [row.kind for row in report.rows]
    assert kinds == ["CONCAVE", "SMOOTH"]
    assert report.super_violations == 0
    assert report.sub_violations == 1
    assert report.rows[0].sub_residual == pytest.approx(1.0, abs=0.05)

    filename = tmp_path / "viscosity.csv"
    assert report.dump_csv(filename) == 2
    with open(filename, newline="") as f:
        header = next(csv.reader(f))
    assert header == ["x1", "x2", "x3", "kind", "sub_residual", "super_residual", "sub_ok", "super_ok"]


def test_compare_fields(env, oracle):
    query = build_grid([(-1.0, 1.0)], [9], dim=3)
    same = compare_fields(env, env, query)
    assert same.linf == 0.0 and same.l1 == 0.0 and same.argmin_agreement == 1.0

    gap = compare_fields(env, oracle.true_field(0.05), query)
    assert gap.linf_natural == pytest.approx(1.0)
    assert gap.argmin_agreement is None
    assert gap.count > 0
