import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from habitat.errors import ArbitrageError, ContractViolation, PreconditionError
from habitat.market import (EventTree, arbitrage_portfolio, build_scenario, density_from_conditionals,
                            is_complete, mass_system, node_masses, node_polytope, physical_conditionals,
                            sample_conditionals, tree_to_dict, validate_tree)


def one_step(prices, probs=None):
    k = len(prices)
    probs = probs or [1.0 / k] * k
    return EventTree(times=[0.0, 1.0], parent=[-1] + [0] * k, prob=[1.0] + list(probs),
                     prices=[[1.0]] + [[p] for p in prices], time_index=[0] + [1] * k)


def test_binomial_one_step_is_clean():
    assert validate_tree(one_step([2.0, 0.5])) == []


def test_all_up_moves_is_arbitrage():
    issues = validate_tree(one_step([2.0, 1.5]))
    assert any("arbitrage" in s for s in issues)


def test_bad_normalization_reported():
    tree = EventTree(times=[0.0, 1.0], parent=[-1, 0, 0], prob=[1.0, 0.5, 0.4],
                     prices=[[1.0], [2.0], [0.5]], time_index=[0, 1, 1])
    issues = validate_tree(tree)
    assert any("normalization" in s or "sum to" in s for s in issues)


def test_binomial_polytope_singleton():
    poly = node_polytope(one_step([2.0, 0.5]), 0)
    assert poly.is_singleton
    np.testing.assert_allclose(poly.vertices[0], [1 / 3, 2 / 3], atol=1e-12)


def test_trinomial_polytope_segment():
    poly = node_polytope(one_step([2.0, 1.0, 0.5]), 0)
    got = sorted(map(tuple, np.round(poly.vertices, 12)))
    assert got == sorted([(0.0, 1.0, 0.0), (round(1 / 3, 12), 0.0, round(2 / 3, 12))])


def test_two_assets_complete_node():
    tree = build_scenario("multinomial", N=1, moves=[[2, 1, 0.5], [1.5, 0.8, 1.2]])
    assert node_polytope(tree, 0).is_singleton
    assert is_complete(tree)


def test_arbitrage_error_carries_portfolio():
    tree = one_step([2.0, 1.5])
    with pytest.raises(ArbitrageError) as info:
        node_polytope(tree, 0)
    H = info.value.portfolio
    payoff = np.array([[1.0], [0.5]]) @ np.atleast_1d(H)
    assert np.all(payoff >= -1e-12) and payoff.max() > 0
    assert arbitrage_portfolio(one_step([2.0, 0.5]), 0) is None


def test_identity_density():
    # physical measure chosen to be a martingale measure: 2/6 + 1/2 + 0.5/3 = 1
    tree = build_scenario("trinomial", N=2, moves=[2, 1, 0.5], probs=[1 / 6, 1 / 2, 1 / 3])
    np.testing.assert_allclose(density_from_conditionals(tree, physical_conditionals(tree)).Y, 1.0, atol=1e-15)


def test_binomial_density_values():
    tree = build_scenario("binomial", N=1, u=2, d=0.5, p=0.5)
    Y = density_from_conditionals(tree, {0: [1 / 3, 2 / 3]}).Y
    np.testing.assert_allclose(Y, [1.0, 2 / 3, 4 / 3], atol=1e-15)


def test_boundary_vertex_density_not_interior():
    tree = build_scenario("trinomial", N=1, moves=[2, 1, 0.5])
    dens = density_from_conditionals(tree, {0: [0.0, 1.0, 0.0]})
    assert not dens.interior
    assert (dens.Y[1:] == 0).sum() == 2


def test_density_outside_polytope_rejected():
    tree = build_scenario("binomial", N=1, u=2, d=0.5)
    with pytest.raises(PreconditionError):
        density_from_conditionals(tree, {0: [0.5, 0.5]})


def test_completeness_flags():
    assert is_complete(build_scenario("binomial", N=3, u=1.5, d=0.7))
    assert not is_complete(build_scenario("trinomial", N=1, moves=[2, 1, 0.5]))


def test_generator_sizes():
    assert build_scenario("binomial", N=2, u=2, d=0.5, p=0.5).n_nodes == 7
    assert build_scenario("trinomial", N=1, moves=[2, 1, 0.5]).n_nodes == 4


@pytest.mark.parametrize("params", [dict(u=0.9, d=0.5), dict(u=2, d=1.1), dict(u=2, d=0.5, p=1.2), dict(u=2, d=0.5, N=0)])
def test_generator_rejects_bad_parameters(params):
    kw = dict(N=2, p=0.5)
    kw.update(params)
    with pytest.raises(ContractViolation):
        build_scenario("binomial", **kw)


def test_custom_round_trip():
    tree = build_scenario("trinomial", N=2, moves=[1.7, 1.0, 0.6], probs=[0.2, 0.3, 0.5], T=1.3)
    again = build_scenario("custom", tree=tree_to_dict(tree))
    assert tree_to_dict(again) == tree_to_dict(tree)
    np.testing.assert_array_equal(again.prob, tree.prob)
    np.testing.assert_array_equal(again.prices, tree.prices)


def _brute_vertices(D):
    """Basic feasible solutions of {q >= 0, D q = e1} by enumerating supports."""
    rows, k = D.shape
    rhs = np.zeros(rows)
    rhs[0] = 1.0
    found = []
    for size in range(1, k + 1):
        for support in itertools.combinations(range(k), size):
            sub = D[:, support]
            if np.linalg.matrix_rank(sub) < size:
                continue
            q_s, *_ = np.linalg.lstsq(sub, rhs, rcond=None)
            if np.abs(sub @ q_s - rhs).max() > 1e-10 or q_s.min() < -1e-12:
                continue
            q = np.zeros(k)
            q[list(support)] = q_s
            if not any(np.allclose(q, f, atol=1e-10) for f in found):
                found.append(q)
    return found


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_polytope_vertices_match_support_enumeration(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 5))
    # moves straddling 1 keep the node arbitrage-free
    moves = np.sort(np.concatenate([rng.uniform(1.05, 2.0, 1), rng.uniform(0.5, 0.95, 1), rng.uniform(0.5, 2.0, k - 2)]))
    tree = one_step(list(moves))
    poly = node_polytope(tree, 0)
    D = np.vstack([np.ones(k), moves - 1.0])
    brute = _brute_vertices(D)
    assert len(brute) == len(poly.vertices)
    for v in poly.vertices:
        assert np.abs(D @ v - [1.0, 0.0]).max() <= 1e-10
        assert any(np.allclose(v, b, atol=1e-9) for b in brute)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_density_expectation_is_one_each_epoch(seed):
    rng = np.random.default_rng(seed)
    tree = build_scenario("trinomial", N=3, moves=[rng.uniform(1.1, 2), 1.0, rng.uniform(0.5, 0.9)],
                          probs=rng.dirichlet(np.ones(3)) * 0.9 + 0.1 / 3)
    dens = density_from_conditionals(tree, sample_conditionals(tree, rng))
    assert dens.interior
    for k in range(tree.horizon + 1):
        nodes = tree.nodes_at(k)
        assert abs(tree.path_prob[nodes] @ dens.Y[nodes] - 1.0) <= 1e-10
    # conditional martingale property
    for n in tree.consumption_nodes:
        ch = list(tree.children(int(n)))
        assert abs(tree.prob[ch] @ dens.Y[ch] - dens.Y[n]) <= 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_density_injective_on_interior(seed):
    rng = np.random.default_rng(seed)
    tree = build_scenario("trinomial", N=2, moves=[2, 1, 0.5])
    a, b = sample_conditionals(tree, rng), sample_conditionals(tree, rng)
    if all(np.allclose(a[n], b[n], atol=1e-12) for n in a):
        return
    Ya = density_from_conditionals(tree, a).Y
    Yb = density_from_conditionals(tree, b).Y
    assert np.abs(Ya - Yb).max() > 0


def test_mass_system_accepts_measure_masses():
    rng = np.random.default_rng(5)
    tree = build_scenario("trinomial", N=3, moves=[2, 1, 0.5])
    nodes, A, b = mass_system(tree)
    Q = node_masses(tree, sample_conditionals(tree, rng))
    assert np.abs(A @ Q[nodes] - b).max() <= 1e-12


def test_tree_rejects_non_bfs_order():
    with pytest.raises(ContractViolation):
        EventTree(times=[0.0, 1.0], parent=[-1, 0, 0], prob=[1.0, 0.5, 0.5],
                  prices=[[1.0], [2.0], [0.5]], time_index=[0, 2, 1])
