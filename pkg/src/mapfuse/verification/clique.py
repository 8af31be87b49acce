"""Maximum clique search on small consistency graphs.

Graphs are boolean adjacency matrices. Vertex sets are compared first by
size, then lexicographically on their sorted ids, so every search returns a
unique answer.
"""
from __future__ import annotations

import numpy as np

from ..errors import ParameterError


def check_adjacency(adj):
    adj = np.asarray(adj, dtype=bool)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ParameterError("adjacency must be a square matrix")
    if not np.array_equal(adj, adj.T):
        raise ParameterError("adjacency must be symmetric")
    adj = adj.copy()
    np.fill_diagonal(adj, True)
    return adj


def is_clique(adj, vertices):
    v = list(vertices)
    return bool(np.all(np.asarray(adj, dtype=bool)[np.ix_(v, v)]))


def _masks(adj):
    n = len(adj)
    return [sum(1 << j for j in range(n) if adj[i, j] and j != i) for i in range(n)]


def exact_max_clique(adj):
    """Branch and bound over vertices in ascending id order.

    Cliques are enumerated in lexicographic order and the incumbent only
    changes on a strict size improvement, so among all maximum cliques the
    lexicographically smallest one is returned.
    """
    adj = check_adjacency(adj)
    n = len(adj)
    if n == 0:
        return []
    nbr = _masks(adj)
    best = []

    def expand(clique, cand):
        nonlocal best
        if len(clique) > len(best):
            best = list(clique)
        while cand:
            if len(clique) + bin(cand).count("1") <= len(best):
                return
            v = (cand & -cand).bit_length() - 1
            cand &= ~(1 << v)
            clique.append(v)
            expand(clique, cand & nbr[v])
            clique.pop()

    expand([], (1 << n) - 1)
    return best


def _degree_order(adj):
    deg = adj.sum(axis=1)
    return sorted(range(len(adj)), key=lambda v: (-deg[v], v))


def greedy_clique(adj, seed=None, order=None):
    """Add vertices in ``order`` (default: degree descending, id ascending) while they stay adjacent."""
    adj = check_adjacency(adj)
    order = _degree_order(adj) if order is None else list(order)
    clique = [] if seed is None else [seed]
    for v in order:
        if v not in clique and all(adj[v, u] for u in clique):
            clique.append(v)
    return sorted(clique)


def _better(a, b):
    """Larger wins; equal sizes go to the lexicographically smaller id list."""
    return len(a) > len(b) or (len(a) == len(b) and a < b)


def _local_swaps(adj, clique, order, max_rounds=50):
    """(1, k)-swaps: drop one member if that lets at least two outsiders in."""
    clique = sorted(clique)
    for _ in range(max_rounds):
        improved = False
        members = set(clique)
        for v in order:
            if v in members:
                continue
            missing = [u for u in clique if not adj[v, u]]
            if len(missing) != 1:
                continue
            trial = greedy_clique(adj, None, [u for u in clique if u != missing[0]] + [v] + order)
            if len(trial) > len(clique):
                clique, improved = trial, True
                break
        if not improved:
            return clique
    return clique


def heuristic_max_clique(adj):
    """Greedy growth from every seed followed by local swaps.

    The degree-ordered greedy clique is one of the candidates, so the result
    is never smaller than it.
    """
    adj = check_adjacency(adj)
    n = len(adj)
    if n == 0:
        return []
    order = _degree_order(adj)
    best = greedy_clique(adj, None, order)
    for seed in order:
        cand = _local_swaps(adj, greedy_clique(adj, seed, order), order)
        if _better(cand, best):
            best = cand
    return best


def max_clique(adj, exact_limit: int = 20):
    """Exact search up to ``exact_limit`` vertices, heuristic beyond."""
    adj = check_adjacency(adj)
    if len(adj) <= exact_limit:
        return exact_max_clique(adj)
    return heuristic_max_clique(adj)
