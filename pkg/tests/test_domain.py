import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_instance
from habitat.errors import PreconditionError, RoutingError
from habitat.domain import (in_dual_cone, in_effective_domain, in_enlarged_domain, price_bounds,
                            price_bounds_global, require_effective_domain)
from habitat.habit import HabitSpec, weights
from habitat.market import build_scenario, density_from_conditionals, vertex_densities


def test_deterministic_drift_is_replicable():
    tree = build_scenario("trinomial", N=3, moves=[2, 1, 0.5], T=1.5)
    habit = HabitSpec.per_epoch(tree, [0.1, 0.2, 0.3], [0.5, 0.2, 0.9])
    b = price_bounds(tree, habit)
    w = weights(tree, habit).w
    expected = sum(w[tree.nodes_at(k)[0]] * tree.dts[k] for k in range(tree.horizon))
    assert b.replicable
    assert b.p_bar == pytest.approx(expected, rel=1e-12)
    assert b.p_low == pytest.approx(expected, rel=1e-12)


def test_complete_binomial_with_stochastic_habit_is_replicable():
    tree = build_scenario("binomial", N=3, u=1.8, d=0.6)
    habit = HabitSpec(np.linspace(0.0, 0.4, tree.n_nodes), np.linspace(1.0, 0.0, tree.n_nodes))
    assert price_bounds(tree, habit).replicable


def test_stochastic_intensity_opens_a_gap(trinomial_stochastic):
    tree, habit = trinomial_stochastic
    b = price_bounds(tree, habit)
    assert not b.replicable
    assert b.p_bar > b.p_low
    # brute force over every vertex-generated density
    Y = vertex_densities(tree, 10_000)
    w = weights(tree, habit).w
    vals = ((tree.path_prob * tree.node_dt * w) @ Y)
    assert b.p_bar == pytest.approx(vals.max(), rel=1e-12)
    assert b.p_low == pytest.approx(vals.min(), rel=1e-12)


def test_two_period_stochastic_intensity_stays_replicable():
    # with two periods only the root intensity reaches a consumption node
    tree = build_scenario("trinomial", N=2, moves=[2, 1, 0.5])
    delta = np.zeros(tree.n_nodes)
    delta[tree.nodes_at(1)] = [0.0, 2.0, 0.0]
    assert price_bounds(tree, HabitSpec(np.full(tree.n_nodes, 0.3), delta)).replicable


def test_attaining_measures_reported_with_interior_flag(trinomial_stochastic):
    tree, habit = trinomial_stochastic
    b = price_bounds(tree, habit)
    assert set(b.argmax) == set(int(n) for n in tree.consumption_nodes)
    # linear objectives are maximised at vertices of the closed polytope
    assert not b.argmax_interior
    dens = density_from_conditionals(tree, b.argmax)
    w = weights(tree, habit).w
    assert (tree.path_prob * tree.node_dt * w) @ dens.Y == pytest.approx(b.p_bar, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_dynamic_programme_matches_global_lp(seed):
    tree, habit, _, _ = random_instance(np.random.default_rng(seed))
    b = price_bounds(tree, habit)
    hi, lo = price_bounds_global(tree, habit)
    assert abs(b.p_bar - hi) <= 1e-9 * (1 + abs(hi))
    assert abs(b.p_low - lo) <= 1e-9 * (1 + abs(lo))
    assert b.p_low <= b.p_bar and b.p_low > 0


def test_effective_domain_examples(trinomial_stochastic):
    b = price_bounds(*trinomial_stochastic)
    assert in_effective_domain(1.0, 0.0, b)
    assert not in_effective_domain(b.p_bar, 1.0, b)
    assert in_effective_domain(b.p_bar * 1.01, 1.0, b)
    assert in_effective_domain(b.p_bar, 1.0, b, closure=True)
    assert not in_effective_domain(1.0, -0.5, b)
    with pytest.raises(PreconditionError):
        require_effective_domain(0.5 * b.p_bar, 1.0, b)


def test_enlarged_domain_examples(trinomial_stochastic):
    b = price_bounds(*trinomial_stochastic)
    assert in_enlarged_domain(1.0, 0.0, b)
    assert in_enlarged_domain(-b.p_low / 2, -1.0, b)
    assert not in_enlarged_domain(0.5 * (b.p_low + b.p_bar), 1.0, b)


def test_dual_cone_examples(trinomial_stochastic):
    b = price_bounds(*trinomial_stochastic)
    assert in_dual_cone(1.0, 0.5 * (b.p_bar + b.p_low), b)
    assert not in_dual_cone(1.0, b.p_bar, b)
    assert in_dual_cone(1.0, b.p_bar, b, closure=True)
    assert not in_dual_cone(0.0, 0.0, b)


def test_dual_cone_routes_replicable_markets():
    tree = build_scenario("binomial", N=2, u=2, d=0.5)
    b = price_bounds(tree, HabitSpec.constant(tree, 0.2, 0.5))
    with pytest.raises(RoutingError):
        in_dual_cone(1.0, 2.0, b)


def test_cone_polarity_and_homogeneity(trinomial_stochastic):
    b = price_bounds(*trinomial_stochastic)
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 1000:
        x, z = rng.uniform(-3, 3, 2)
        y, r = rng.uniform(-1, 3), rng.uniform(-3, 4)
        s = rng.uniform(0.01, 100)
        in_h, in_r = in_enlarged_domain(x, z, b), in_dual_cone(y, r, b)
        assert in_enlarged_domain(s * x, s * z, b) == in_h
        assert in_dual_cone(s * y, s * r, b) == in_r
        if in_h and in_r:
            assert x * y - z * r > 0
            checked += 1
