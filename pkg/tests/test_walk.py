from __future__ import annotations

import math

import networkx as nx
import numpy as np
import pytest
from numpy.testing import assert_allclose

from qmath.workbench.exceptions import InvalidInputError, UnreachablePairError
from qmath.workbench.walk import (
    RegularGraph,
    balanced_signs,
    conditional_mean,
    conditional_means,
    fit_decay_exponent,
    girth,
    random_regular_graph,
    second_eigenvalue,
    sign_observable,
    two_time_correlation,
)


def petersen() -> RegularGraph:
    outer = [(i, (i + 1) % 5) for i in range(5)]
    spokes = [(i, i + 5) for i in range(5)]
    inner = [(5 + i, 5 + (i + 2) % 5) for i in range(5)]
    return RegularGraph.from_edges(10, outer + spokes + inner)


@pytest.mark.parametrize(
    ("graph", "expected"),
    [
        (RegularGraph.cycle(3), 3),
        (RegularGraph.cycle(6), 6),
        (RegularGraph.cycle(11), 11),
        (RegularGraph(np.ones((4, 4), dtype=int) - np.eye(4, dtype=int)), 3),
        (petersen(), 5),
        (RegularGraph.from_edges(4, [(0, 1), (2, 3)]), math.inf),
    ],
)
def test_girth(graph: RegularGraph, expected: float) -> None:
    assert girth(graph) == expected


def test_regular_graph() -> None:
    graph = petersen()
    assert graph.V == 10
    assert graph.degree == 3
    assert graph.is_connected
    assert graph.neighbors[0] == [1, 4, 5]
    assert_allclose(graph.transition.sum(axis=1), 1.0)
    assert_allclose(graph.power(2), graph.transition @ graph.transition)
    assert second_eigenvalue(graph) == pytest.approx(2 / 3)

    assert not RegularGraph.from_edges(4, [(0, 1), (2, 3)]).is_connected


@pytest.mark.parametrize(
    "adjacency",
    [
        np.zeros((2, 3)),
        [[0, 2], [2, 0]],
        [[0, 1], [0, 0]],
        [[1, 1], [1, 1]],
        [[0, 1, 1], [1, 0, 0], [1, 0, 0]],
    ],
)
def test_regular_graph_invalid(adjacency: list) -> None:
    with pytest.raises(InvalidInputError):
        RegularGraph(np.array(adjacency))


def test_random_regular_graph() -> None:
    graph = random_regular_graph(60, 3, seed=1)
    assert graph.V == 60
    assert (graph.adjacency.sum(axis=1) == 3).all()
    assert graph.is_connected
    assert 0 < second_eigenvalue(graph) < 1

    again = random_regular_graph(60, 3, seed=1)
    assert np.array_equal(graph.adjacency, again.adjacency)


@pytest.mark.parametrize(
    ("v", "degree"),
    [
        (7, 3),
        (4, 4),
        (4, 0),
        (5000, 4),
    ],
)
def test_random_regular_graph_invalid(v: int, degree: int) -> None:
    with pytest.raises(InvalidInputError):
        random_regular_graph(v, degree)


def test_conditional_mean() -> None:
    graph = RegularGraph.cycle(6)
    g = np.array([1, -1, 1, -1, 1, 1])

    # two-step walks from 0 to 2 pass through 1
    assert conditional_mean(graph, g, 0, 2, 1) == pytest.approx(-1.0)
    # 0 -> 0 returns through 1 or 5
    assert conditional_mean(graph, g, 0, 0, 1) == pytest.approx(0.0)
    assert conditional_mean(graph, g, 3, 3, 0) == pytest.approx(-1.0)

    means, reachable = conditional_means(graph, g, 1)
    assert means[0, 2] == pytest.approx(-1.0)
    assert not reachable[0, 1]


def test_conditional_mean_unreachable() -> None:
    graph = RegularGraph.cycle(4)
    with pytest.raises(UnreachablePairError):
        conditional_mean(graph, np.ones(4), 0, 1, 1)
    with pytest.raises(InvalidInputError):
        conditional_mean(graph, np.zeros(4), 0, 2, 1)


def test_two_time_correlation_at_zero() -> None:
    graph = petersen()
    g = balanced_signs(10, seed=3)
    obs = sign_observable(graph, g, 0)
    assert two_time_correlation(graph, obs) == pytest.approx(1.0)


@pytest.mark.parametrize("tau", [1, 2, 3, 4])
def test_two_time_correlation_nonnegative(tau: int) -> None:
    graph = random_regular_graph(40, 3, seed=2)
    g = balanced_signs(40, seed=tau)
    obs = sign_observable(graph, g, tau)

    assert obs.tau == tau
    assert set(np.unique(obs.f).tolist()) <= {-1, 1}
    assert two_time_correlation(graph, obs) >= -1e-12


def test_sign_observable_invalid() -> None:
    with pytest.raises(InvalidInputError):
        sign_observable(RegularGraph.cycle(4), np.ones(4), -1)


def test_fit_decay_exponent() -> None:
    taus = [1, 2, 4, 8]
    assert fit_decay_exponent(taus, [t**-2.0 for t in taus]) == pytest.approx(2.0)
    assert fit_decay_exponent(taus, [3 * t**-0.5 for t in taus]) == pytest.approx(0.5)
    assert math.isnan(fit_decay_exponent([1, 2], [1.0, 0.0]))


def test_balanced_signs() -> None:
    g = balanced_signs(7, seed=0)
    assert g.shape == (7,)
    assert np.count_nonzero(g < 0) == 3
    assert np.array_equal(g, balanced_signs(7, seed=0))


def test_networkx_conversion() -> None:
    graph = petersen()
    g = graph.to_networkx()
    assert nx.is_isomorphic(g, nx.petersen_graph())
    assert np.array_equal(RegularGraph.from_networkx(g).adjacency, graph.adjacency)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_random_regular_graph_matches_networkx(seed: int) -> None:
    graph = random_regular_graph(200, 3, seed=seed)
    g = graph.to_networkx()
    assert nx.is_connected(g)
    assert all(degree == 3 for _, degree in g.degree())
    assert g.number_of_edges() == 300
    assert girth(graph) == nx.girth(g)
