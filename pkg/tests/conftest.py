import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.special import lambertw

from habitat.habit import HabitSpec
from habitat.market import build_scenario, density_from_conditionals, sample_conditionals
from habitat.scenario import bundled_scenarios, parse_scenario
from habitat.utility import make_utility


@pytest.fixture(scope="session")
def bundled():
    """Parsed bundled scenarios keyed by file stem."""
    return {name: parse_scenario(path) for name, path in bundled_scenarios().items()}


@pytest.fixture(scope="session")
def binomial2():
    return build_scenario("binomial", N=2, u=2.0, d=0.5, p=0.5)


@pytest.fixture(scope="session")
def trinomial_stochastic():
    """Three-period trinomial where habit formation only runs at the middle node of epoch 1."""
    tree = build_scenario("trinomial", N=3, moves=[2.0, 1.0, 0.5], probs=[0.25, 0.5, 0.25], T=1.0)
    delta = np.zeros(tree.n_nodes)
    delta[tree.nodes_at(1)] = [0.0, 2.0, 0.0]
    return tree, HabitSpec(np.full(tree.n_nodes, 0.3), delta)


def random_instance(rng, max_periods=3, deterministic=False):
    """Random (tree, habit, z, density) with trees of branching <= 3."""
    N = int(rng.integers(1, max_periods + 1))
    T = float(rng.uniform(0.5, 2.0))
    if rng.random() < 0.5:
        u = float(rng.uniform(1.1, 2.0))
        tree = build_scenario("binomial", N=N, u=u, d=float(rng.uniform(0.5, 0.95)), p=float(rng.uniform(0.2, 0.8)), T=T)
    else:
        probs = rng.dirichlet(np.ones(3)) * 0.9 + 0.1 / 3
        tree = build_scenario("trinomial", N=N, moves=[float(rng.uniform(1.1, 2.0)), 1.0, float(rng.uniform(0.5, 0.9))],
                              probs=probs, T=T)
    limit = 0.95 / tree.dts.max()
    if deterministic:
        a_ep = rng.uniform(0, limit, tree.horizon)
        d_ep = rng.uniform(0, 2, tree.horizon)
        idx = np.minimum(tree.time_index, tree.horizon - 1)
        habit = HabitSpec(a_ep[idx], d_ep[idx])
    else:
        habit = HabitSpec(rng.uniform(0, limit, tree.n_nodes), rng.uniform(0, 2, tree.n_nodes))
    Y = density_from_conditionals(tree, sample_conditionals(tree, rng))
    return tree, habit, float(rng.uniform(0, 1)), Y


def inverse_exponential_utility():
    """``U(x) = -exp(1/x)`` with its conjugate via the Lambert W function."""

    def inverse(t, y):
        return 1.0 / (2.0 * np.real(lambertw(np.sqrt(np.asarray(y, dtype=float)) / 2.0)))

    def utility(t, x):
        return -np.exp(1.0 / np.asarray(x, dtype=float))

    return make_utility(
        "custom",
        utility=utility,
        marginal=lambda t, x: np.exp(1.0 / np.asarray(x, dtype=float)) / np.asarray(x, dtype=float) ** 2,
        inverse_marginal=inverse,
        conjugate=lambda t, y: utility(t, inverse(t, y)) - np.asarray(y, dtype=float) * inverse(t, y),
        conjugate_slope=lambda t, y: -inverse(t, y),
    )


def x_over_log_utility():
    """``U(x) = x / log x`` on its concave increasing branch; inverse marginal by root finding."""

    def utility(t, x):
        x = np.asarray(x, dtype=float)
        return x / np.log(x)

    def marginal(t, x):
        lx = np.log(np.asarray(x, dtype=float))
        return (lx - 1.0) / lx ** 2

    def _inv(y):
        # marginal in log-coordinates decreases on (2, inf) from 1/4 to 0
        if not 0 < y < 0.25:
            return np.nan
        root = brentq(lambda L: (L - 1.0) / L ** 2 - y, 2.0, 1e6, xtol=1e-14)
        return np.exp(root)

    inverse = np.vectorize(_inv, otypes=[float])
    return make_utility(
        "custom",
        utility=utility,
        marginal=marginal,
        inverse_marginal=lambda t, y: inverse(np.asarray(y, dtype=float)),
        conjugate=lambda t, y: utility(t, inverse(np.asarray(y, dtype=float))) - np.asarray(y, dtype=float) * inverse(np.asarray(y, dtype=float)),
        conjugate_slope=lambda t, y: -inverse(np.asarray(y, dtype=float)),
    )
