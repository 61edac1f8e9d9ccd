from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import TYPE_CHECKING

import networkx as nx
import numpy as np

from qmath.workbench.exceptions import GenerationFailure, InvalidInputError, UnreachablePairError
from qmath.workbench.linalg import SeedLike, rng_from

if TYPE_CHECKING:
    from collections.abc import Sequence

log = logging.getLogger(__name__)

MAX_DENSE_VERTICES = 4000


class RegularGraph:
    """A simple undirected regular graph with its random walk.

    The transition matrix is ``adjacency / degree``; the uniform distribution is stationary. Powers of the transition
    matrix are cached per exponent since the two-time correlation of a walk reuses them.
    """

    def __init__(self, adjacency: np.ndarray):
        adjacency = np.asarray(adjacency)
        if adjacency.ndim != 2 or adjacency.shape[0] != adjacency.shape[1]:
            raise InvalidInputError(f"Adjacency must be square, got shape {adjacency.shape}")
        if not np.isin(adjacency, (0, 1)).all():
            raise InvalidInputError("Adjacency must be a 0/1 matrix")
        if (adjacency != adjacency.T).any():
            raise InvalidInputError("Adjacency must be symmetric")
        if np.diag(adjacency).any():
            raise InvalidInputError("Graph has self-loops")

        degrees = adjacency.sum(axis=1)
        if len(set(degrees.tolist())) != 1:
            raise InvalidInputError("Graph is not regular")

        self.adjacency = adjacency.astype(np.int8)
        self.V = adjacency.shape[0]
        self.degree = int(degrees[0])
        self._powers = {}

    def __repr__(self) -> str:
        return f"<RegularGraph V={self.V} degree={self.degree}>"

    @classmethod
    def from_edges(cls, v: int, edges: Sequence[tuple[int, int]]) -> RegularGraph:
        adjacency = np.zeros((v, v), dtype=np.int8)
        for a, b in edges:
            adjacency[a, b] = adjacency[b, a] = 1
        return cls(adjacency)

    @classmethod
    def cycle(cls, v: int) -> RegularGraph:
        return cls.from_edges(v, [(i, (i + 1) % v) for i in range(v)])

    @classmethod
    def from_networkx(cls, g: nx.Graph) -> RegularGraph:
        """Dense adjacency of ``g``, vertices in the order ``0 .. V - 1``."""
        return cls(nx.to_numpy_array(g, nodelist=list(range(g.number_of_nodes())), dtype=np.int8))

    def to_networkx(self) -> nx.Graph:
        return nx.from_numpy_array(self.adjacency)

    @cached_property
    def neighbors(self) -> list[list[int]]:
        return [np.flatnonzero(row).tolist() for row in self.adjacency]

    @cached_property
    def transition(self) -> np.ndarray:
        return self.adjacency / float(self.degree)

    @property
    def is_connected(self) -> bool:
        return nx.is_connected(self.to_networkx())

    def power(self, tau: int) -> np.ndarray:
        """Transition matrix to the power ``tau``."""
        if tau < 0:
            raise InvalidInputError(f"Number of steps must be nonnegative, got {tau}")
        if tau not in self._powers:
            self._powers[tau] = np.linalg.matrix_power(self.transition, tau)
        return self._powers[tau]


def random_regular_graph(v: int, degree: int, seed: SeedLike = None, *, max_tries: int = 100) -> RegularGraph:
    """Sample a connected simple ``degree``-regular graph on ``v`` vertices.

    Each attempt draws a graph with :func:`networkx.random_regular_graph`, seeded from ``seed``. Disconnected draws
    are discarded.
    """
    if (v * degree) % 2:
        raise InvalidInputError(f"V * d must be even, got V={v}, d={degree}")
    if not 0 < degree < v:
        raise InvalidInputError(f"Need 0 < d < V, got V={v}, d={degree}")
    if v > MAX_DENSE_VERTICES:
        raise InvalidInputError(f"Dense walks are limited to V <= {MAX_DENSE_VERTICES}, got {v}")

    rng = rng_from(seed)
    for attempt in range(max_tries):
        g = nx.random_regular_graph(degree, v, seed=int(rng.integers(2**32)))
        if nx.is_connected(g):
            return RegularGraph.from_networkx(g)
        log.debug("Attempt %d gave a disconnected graph, retrying", attempt)

    raise GenerationFailure(f"No connected {degree}-regular graph on {v} vertices after {max_tries} attempts")


def girth(graph: RegularGraph) -> float:
    """Length of the shortest cycle, ``math.inf`` for a forest."""
    value = nx.girth(graph.to_networkx())
    return value if value == math.inf else int(value)


def second_eigenvalue(graph: RegularGraph) -> float:
    """Largest modulus among the non-trivial eigenvalues of the transition matrix."""
    values = np.linalg.eigvalsh(graph.transition)
    return float(max(abs(values[0]), abs(values[-2])))


def _check_sign_vector(g: np.ndarray, v: int) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.shape != (v,) or not np.isin(g, (-1.0, 1.0)).all():
        raise InvalidInputError("Observable g must assign -1 or +1 to every vertex")
    return g


def conditional_mean(graph: RegularGraph, g: np.ndarray, v: int, w: int, tau: int) -> float:
    """Average of ``g`` at the midpoint of walks of ``2 tau`` steps from ``v`` to ``w``."""
    g = _check_sign_vector(g, graph.V)
    p = graph.power(tau)
    total = graph.power(2 * tau)[v, w]
    if total <= 0.0:
        raise UnreachablePairError(f"Vertex {w} is not reachable from {v} in {2 * tau} steps")
    return float(np.dot(p[v] * g, p[:, w]) / total)


@dataclass(frozen=True)
class TwoTimeObservable:
    """Observables ``f(x(-tau), x(+tau))`` and ``g(x(0))`` of a walk.

    ``ties`` counts the endpoint pairs whose conditional mean is zero or undefined, for which ``f`` was set to +1.
    """

    g: np.ndarray
    f: np.ndarray
    tau: int
    ties: int = 0


def conditional_means(graph: RegularGraph, g: np.ndarray, tau: int) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint averages for all endpoint pairs, and the mask of reachable pairs."""
    g = _check_sign_vector(g, graph.V)
    p = graph.power(tau)
    numerator = (p * g) @ p
    total = graph.power(2 * tau)
    reachable = total > 0.0
    means = np.divide(numerator, total, out=np.zeros_like(numerator), where=reachable)
    return means, reachable


def sign_observable(graph: RegularGraph, g: np.ndarray, tau: int) -> TwoTimeObservable:
    """Choose ``f`` as the sign of the conditional mean of ``g``, which maximizes the correlation."""
    if tau < 0:
        raise InvalidInputError(f"Number of steps must be nonnegative, got {tau}")

    means, reachable = conditional_means(graph, g, tau)
    f = np.where(means < 0.0, -1, 1).astype(np.int8)
    ties = int(np.count_nonzero(reachable & (means == 0.0)))
    if ties:
        log.info("%d endpoint pairs have a zero conditional mean at tau=%d", ties, tau)
    return TwoTimeObservable(np.asarray(g, dtype=float), f, tau, ties)


def two_time_correlation(graph: RegularGraph, obs: TwoTimeObservable) -> float:
    """Connected correlation ``E[f g] - E[f] E[g]`` of a walk started from the uniform distribution."""
    if obs.tau < 0:
        raise InvalidInputError(f"Number of steps must be nonnegative, got {obs.tau}")

    g = _check_sign_vector(obs.g, graph.V)
    f = np.asarray(obs.f, dtype=float)
    p = graph.power(obs.tau)

    joint = float(np.sum(f * ((p * g) @ p))) / graph.V
    mean_f = float(np.sum(f * graph.power(2 * obs.tau))) / graph.V
    return joint - mean_f * float(g.mean())


def fit_decay_exponent(
    taus: Sequence[int], values: Sequence[float], window: tuple[float, float] | None = None
) -> float:
    """Exponent ``a`` of a least squares fit ``value ~ tau^-a`` on log-log scale.

    Only points with ``window[0] <= tau <= window[1]`` enter the fit when a window is given. Fewer than two usable
    points give NaN.
    """
    taus = np.asarray(taus, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = (taus > 0) & (values > 0)
    if window is not None:
        mask &= (taus >= window[0]) & (taus <= window[1])
    if mask.sum() < 2:
        return math.nan
    slope, _ = np.polyfit(np.log(taus[mask]), np.log(values[mask]), 1)
    return float(-slope)


def decay_taus(girth_value: float, least: int = 4) -> list[int]:
    """Walk lengths ``2 .. max(girth // 3, least)``.

    Below a third of the girth the walk sees a tree. Random cubic graphs of desk size have short cycles, so the sweep
    is extended to ``least`` steps.
    """
    top = least if girth_value == math.inf else max(int(girth_value) // 3, least)
    return list(range(2, top + 1))


def balanced_signs(v: int, seed: SeedLike = None) -> np.ndarray:
    """A random vector with ``v // 2`` entries -1 and the rest +1."""
    g = np.ones(v)
    g[: v // 2] = -1.0
    return rng_from(seed).permutation(g)
