import logging

import numpy as np
import pytest

from hjidecomp.core.envelope import simplex_lattice
from hjidecomp.core.model import hamiltonian_upper
from hjidecomp.games import (FAMILIES, P1Oracle, P1Params, P2Oracle, P2Params, P3Oracle, P3Params,
                             UnsupportedFamilyError, build_family, get_family, make_p1, make_p2, make_p2_relative,
                             make_p3, p1_reduced_value, p2_hamiltonian_split, p2_nearest_pursuer,
                             p3_condition_E_residual, p3_values, register_family)


@pytest.mark.parametrize("x, expected, sandwiched", [
    ([0.0, 1.0, -1.0], {"u2": 2.0, "u3": 2.0, "envelope": 2.0, "true_u": 1.0}, True),
    ([0.0, 1.0, 5.0], {"u2": 2.0, "u3": 10.0, "envelope": 2.0, "true_u": 2.0}, False),
    ([0.0, 2.0, -1.0], {"u2": 4.0, "u3": 2.0, "envelope": 2.0, "true_u": 1.5}, True),
])
def test_p3_values(x, expected, sandwiched):
    values = p3_values(P3Oracle(0.5), x)
    assert values.pop("in_D") is sandwiched
    assert values == pytest.approx(expected)


def test_p3_region_needs_opposite_sides_and_comparable_gaps():
    oracle = P3Oracle(0.5)
    assert not oracle.in_D([0.0, 1.0, 2.0])
    assert not oracle.in_D([0.0, 1.0, -4.0])
    assert oracle.in_D([0.0, -1.0, 2.0])


def test_p3_true_value_below_envelope():
    oracle = P3Oracle(0.5)
    points = np.random.default_rng(2).uniform(-3.0, 3.0, (500, 3))
    assert np.all(oracle.true_u(points) <= oracle.envelope(points) + 1e-12)
    inside = oracle.in_D(points)
    assert np.any(inside)
    assert np.all(oracle.true_u(points[inside]) < oracle.envelope(points[inside]))


def test_p3_thickened_targets():
    oracle = P3Oracle(0.5, eps=0.05)
    assert oracle.u2([0.0, 1.0, 5.0]) == pytest.approx(1.9)
    assert oracle.u2([0.0, 0.04, 5.0]) == 0.0


@pytest.mark.parametrize("lam, expected", [(0.5, 1.0), (0.0, 0.0), (0.25, 0.5), (1.0, 0.0), (0.75, 0.5)])
def test_p3_condition_E_residual(lam, expected):
    assert p3_condition_E_residual(lam, 0.5) == pytest.approx(expected)


def test_p3_condition_E_residual_ranges():
    with pytest.raises(ValueError):
        p3_condition_E_residual(1.5, 0.5)
    with pytest.raises(ValueError):
        p3_condition_E_residual(0.5, 1.0)


@pytest.mark.parametrize("z", [1.0, 2.0])
def test_p3_residual_matches_hamiltonian(p3, z):
    oracle = P3Oracle(0.5)
    x = np.array([0.0, z, -z])
    for lam, _ in simplex_lattice(2, 10):
        p = lam * oracle.gradient_u2(x) + (1.0 - lam) * oracle.gradient_u3(x)
        assert hamiltonian_upper(p3.full, x, 2.0 * z, p) == pytest.approx(p3_condition_E_residual(lam, 0.5))


def test_p3_components_solve_the_full_equation(p3):
    oracle = P3Oracle(0.5)
    points = np.random.default_rng(4).uniform(-2.0, 2.0, (50, 3))
    for gradient in (oracle.gradient_u2, oracle.gradient_u3):
        f = hamiltonian_upper(p3.full, points, oracle.envelope(points), gradient(points))
        assert np.allclose(f, 0.0)


def test_make_p3_layout(p3):
    assert p3.full.state_dim == 3
    assert [g.projection for g in p3.reduced] == [(0, 1), (0, 2)]
    assert [g.label for g in p3.reduced] == ["2", "3"]
    assert len(p3.full.control_set_b) == 9
    assert p3.full.target_index(np.array([0.0, 0.03, 1.0])) == 0
    assert make_p3(0.4).params.alpha == 0.4


def test_p3_parameter_checks():
    with pytest.raises(ValueError):
        P3Params(alpha=1.0)
    with pytest.raises(ValueError):
        P3Params(target_eps=-0.1)
    with pytest.raises(ValueError):
        P3Oracle(0.0)


def test_p1_oracle():
    params = P1Params(m=2, alpha=(0.5, 0.5), beta=1.0, r=0.1)
    assert p1_reduced_value(params, 0, 0.0, 1.0) == pytest.approx(1.8)
    assert P1Oracle(params).value(np.array([-1.0, 2.0, 0.0])) == pytest.approx(1.8)
    assert P1Oracle(params, pure_control=True).reduced_value(0, 0.0, 1.0) == pytest.approx(0.9)
    assert p1_reduced_value(params, 1, 0.0, 0.05) == 0.0


def test_p1_layout(p1):
    assert p1.full.state_dim == 3
    assert [g.projection for g in p1.reduced] == [(0, 2), (1, 2)]
    assert p1.full.target_index(np.array([0.0, 2.0, 0.05])) == 0
    pure = make_p1(P1Params(m=2), control_samples=3, pure_control=True)
    assert len(pure.full.control_set_a) == 1


def test_p1_single_evader_is_its_own_reduction():
    single = make_p1(P1Params(m=1, alpha=0.5), control_samples=3)
    assert single.full.state_dim == 2
    assert len(single.reduced) == 1
    assert single.reduced[0].projection == (0, 1)
    x = np.array([0.3, -0.9])
    assert single.oracle.value(x) == pytest.approx(single.oracle.reduced_value(0, x[0], x[1]))


def test_p1_parameter_checks():
    assert P1Params(m=3, alpha=0.2).alpha == (0.2, 0.2, 0.2)
    with pytest.raises(ValueError):
        P1Params(alpha=1.0, beta=1.0)
    with pytest.raises(ValueError):
        P1Params(r=-1.0)
    with pytest.raises(ValueError):
        P1Params(m=0)


def test_p2_damping():
    clamp = P2Params()
    assert clamp.bounded_damping
    assert clamp.damping_fn()(np.array([5.0, -5.0, 0.1])).tolist() == [0.2, -0.2, 0.1]
    linear = P2Params(damping="linear")
    assert not linear.bounded_damping
    assert linear.damping_fn()(5.0) == 5.0


def test_p2_linear_damping_warns(caplog):
    with caplog.at_level(logging.WARNING):
        P2Params(damping="linear")
    assert "unbounded" in caplog.text


def test_p2_parameter_checks():
    with pytest.raises(ValueError):
        P2Params(beta=(0.7, 1.0))
    assert not P2Params(beta=(0.7, 1.0), enforce_constraints=False).constraints_hold()
    with pytest.raises(ValueError):
        P2Params(damping="quadratic")
    assert P2Params(m=3, beta=1.5).beta == (1.5, 1.5, 1.5)


def test_p2_layout():
    family = make_p2(P2Params(), control_samples=3)
    assert family.full.state_dim == 6
    assert [g.projection for g in family.reduced] == [(0, 1, 2, 3), (0, 1, 4, 5)]
    assert [g.label for g in family.reduced] == ["2", "3"]
    assert family.relative == []
    assert family.oracle is None
    # pursuer 3 has overtaken, pursuer 2 has not
    assert family.full.target_index(np.array([0.0, 0.0, -1.0, 0.0, 0.5, 0.0])) == 1
    with pytest.raises(NotImplementedError):
        make_p2_relative(P2Params(), 0)


def test_p2_oracle_capture_time():
    oracle = make_p2(P2Params(damping="linear"), control_samples=3).oracle
    assert oracle.closing_speed(0) == pytest.approx(0.6)
    y = np.array([oracle.gap_for(0, 2.0, 0.3), 0.3])
    t = oracle.capture_time(0, y)
    assert t == pytest.approx(2.0, abs=1e-9)
    assert y[0] - 0.6 * t + 0.9 * (1.0 - np.exp(-t)) == pytest.approx(0.0, abs=1e-9)
    assert oracle.capture_time(0, np.array([[-0.1, 1.0], [0.0, 0.0]])).tolist() == [0.0, 0.0]
    # a larger lead or a larger relative velocity only delays capture
    times = [oracle.capture_time(0, y) for y in ([1.0, 0.5], [1.0, 0.0], [0.5, 0.0])]
    assert times[0] > times[1] > times[2]


def test_p2_oracle_gradient_matches_differences():
    oracle = P2Oracle(P2Params(damping="linear"))
    y = np.array([0.8, 0.1])
    step = 1e-6
    numeric = [(oracle.capture_time(0, y + step * e) - oracle.capture_time(0, y - step * e)) / (2.0 * step)
               for e in np.eye(2)]
    assert np.allclose(oracle.capture_gradient(0, y), numeric, rtol=1e-5)
    assert np.all(oracle.capture_gradient(0, y) > 0.0)
    assert oracle.capture_gradient(0, [-0.5, 0.0]).tolist() == [0.0, 0.0]


def test_p2_crossing_state():
    oracle = P2Oracle(P2Params(damping="linear"))
    x = oracle.crossing_state(2.5, (0.0, 0.5), evader=(1.0, 0.2))
    assert x[:2].tolist() == [1.0, 0.2]
    for i in range(2):
        assert oracle.capture_time(i, x @ oracle.matrices[i].T) == pytest.approx(2.5, abs=1e-9)
    assert oracle.value(x) == pytest.approx(2.5, abs=1e-9)
    with pytest.raises(ValueError):
        oracle.crossing_state(1.5, (0.0, 2.0))
    with pytest.raises(ValueError):
        oracle.crossing_state(2.0, (0.0,))
    with pytest.raises(NotImplementedError):
        P2Oracle(P2Params())


def test_p2_nearest_pursuer():
    assert p2_nearest_pursuer([0.0, 0.0, -0.5, -1.0, -1.0, 2.0]) == "2"
    assert p2_nearest_pursuer([0.0, 0.0, -0.5, 0.0, -0.2, 0.0]) == "3"
    # a pursuer level with or ahead of the evader is not behind it
    assert p2_nearest_pursuer([0.0, 0.0, 0.5, 0.0, -1.0, 0.0]) == "3"


def test_p2_relative_game_tracks_the_full_game():
    params = P2Params(damping="linear")
    family = make_p2(params, control_samples=3)
    assert len(family.relative) == 2
    rng = np.random.default_rng(5)
    for game in family.relative:
        k = int(game.label) - 2
        for _ in range(10):
            x = rng.uniform(-2.0, 2.0, 6)
            a = family.full.control_set_a.points[rng.integers(3)]
            b = family.full.control_set_b.points[rng.integers(9)]
            y = game.projection @ x
            expected = game.spec.velocity(y, a, b[k:k + 1])
            assert np.allclose(game.projection @ family.full.velocity(x, a, b), expected)
            assert bool(game.spec.in_target(y)) == bool(family.full.targets[k].contains(x))


def test_p2_hamiltonian_split():
    params = P2Params()
    family = make_p2(params, control_samples=3)
    rng = np.random.default_rng(6)
    x = rng.uniform(-1.0, 1.0, (20, 6))
    p = rng.uniform(-2.0, 2.0, (20, 6))
    f21, f22 = p2_hamiltonian_split(params, x, p)
    assert np.allclose(f21 + f22, hamiltonian_upper(family.full, x, 0.0, p))
    # at rest only the control part remains
    f21, f22 = p2_hamiltonian_split(params, np.zeros(6), np.array([0.0, 1.0, 0.0, 1.0, 0.0, 0.0]))
    assert f21 == 0.0
    assert f22 == pytest.approx(-0.4 + 1.0 - 1.0)


def test_registry():
    assert set(FAMILIES) >= {"p1", "p2", "p3"}
    family = build_family("p3", {"alpha": 0.3}, control_samples=3)
    assert family.name == "p3"
    assert family.oracle.alpha == 0.3
    assert build_family("p2", {"damping": "linear"}, control_samples=3).relative
    with pytest.raises(ValueError):
        build_family("p3", {"speed": 1.0})
    with pytest.raises(UnsupportedFamilyError):
        get_family("p9")
    with pytest.raises(KeyError):
        build_family("p9")
    with pytest.raises(ValueError):
        register_family("p3", P3Params, make_p3)


def test_register_family():
    register_family("p3-narrow", P3Params, make_p3, "p3 with a narrow evader")
    try:
        family = build_family("p3-narrow", {"alpha": 0.1}, control_samples=3)
        assert family.params.alpha == 0.1
    finally:
        FAMILIES.pop("p3-narrow")
