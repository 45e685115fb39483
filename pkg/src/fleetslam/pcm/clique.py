"""Approximate and exact maximum-clique search over a consistency graph.

The approximate search is a degree-ordered multi-start greedy descent
with the classic pruning rules: starts are processed in decreasing degree
order, any vertex whose degree cannot support a clique larger than the
incumbent is skipped, and a branch is abandoned when clique size plus
candidates cannot beat the incumbent.  The incremental variant restricts
the search to cliques containing at least one frontier vertex and seeds
the incumbent with the previous clique, so nothing is re-searched when no
larger clique exists.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .consistency import ConsistencyGraph

__all__ = [
    "CliqueResult",
    "SearchBudgetExhausted",
    "max_clique_batch",
    "max_clique_incremental",
    "brute_force_max_clique",
]


@dataclass(frozen=True)
class CliqueResult:
    members: frozenset  # candidate ids
    size: int
    is_exact: bool
    explored_nodes: int
    budget_exhausted: bool = False


class _Search:
    """Shared bookkeeping: incumbent clique with deterministic
    lowest-lexicographic tie-breaking, plus the explored-node budget."""

    def __init__(self, adjacency: np.ndarray, budget: int | None):
        self.adj = adjacency
        self.deg = adjacency.sum(axis=1).astype(np.int64)
        self.budget = budget
        self.explored = 0
        self.exhausted = False
        self.best: tuple[int, ...] = ()
        self.in_best = np.zeros(adjacency.shape[0], dtype=bool)

    def charge(self) -> bool:
        """Account one search node; True when the budget just ran out."""
        self.explored += 1
        if self.budget is not None and self.explored >= self.budget:
            self.exhausted = True
            return True
        return False

    def consider(self, clique: list[int]):
        key = tuple(sorted(clique))
        if len(key) > len(self.best) or (len(key) == len(self.best) and key < self.best):
            self.best = key
            self.in_best[:] = False
            self.in_best[list(key)] = True

    def greedy_dive(self, start: list[int], cand: np.ndarray):
        """Greedy max-degree descent from a partial clique."""
        clique = list(start)
        cand = cand.copy()
        while True:
            remaining = int(cand.sum())
            if remaining == 0:
                break
            if len(clique) + remaining <= len(self.best):
                return  # cannot beat the incumbent
            if self.charge():
                return
            u = int(np.argmax(np.where(cand, self.deg, -1)))
            clique.append(u)
            cand &= self.adj[u]
        self.consider(clique)

    def branched_dives(self, v: int, cand: np.ndarray, width: int):
        """Greedy dives from `v`, branching over the `width` highest-degree
        second members; recovers from a single bad greedy pick."""
        idxs = np.flatnonzero(cand)
        if idxs.size == 0:
            self.consider([v])
            return
        top = idxs[np.lexsort((idxs, -self.deg[idxs]))[:width]]
        for u in top:
            if self.exhausted:
                return
            if len(self.best) >= 1 + int(cand.sum()):
                return
            self.greedy_dive([v, int(u)], cand & self.adj[u])

    def exact_expand(self, clique: list[int], cand: np.ndarray):
        """Exhaustive branch and bound (used on small graphs and as the
        exact mode of both search paths)."""
        idxs = np.flatnonzero(cand)
        if idxs.size == 0:
            self.consider(clique)
            return
        cand = cand.copy()
        for u in idxs:
            if len(clique) + int(cand.sum()) <= len(self.best):
                return
            if self.exhausted or self.charge():
                return
            cand[u] = False
            self.exact_expand(clique + [int(u)], cand & self.adj[u])

    def polish(self, protected: np.ndarray | None = None, max_rounds: int = 200):
        """Deterministic (1,2)-swap local search on the incumbent: add any
        vertex adjacent to every member, else trade one member for two
        new ones.  Stabilizes the heuristic on dense quasi-cliques, where
        single greedy dives land on near-ties of varying size.

        `protected` marks vertices of which at least one must stay in the
        clique (the incremental search's frontier guarantee)."""
        if not self.best:
            return
        n = self.adj.shape[0]
        members = np.zeros(n, dtype=bool)
        members[list(self.best)] = True
        size = int(members.sum())
        for _ in range(max_rounds):
            # neighbors inside the clique, per vertex
            cnt = self.adj[:, np.flatnonzero(members)].sum(axis=1, dtype=np.int64)
            addable = np.flatnonzero(~members & (cnt == size))
            if addable.size:
                v = addable[np.lexsort((addable, -self.deg[addable]))[0]]
                members[v] = True
                size += 1
                continue
            swapped = False
            ones = np.flatnonzero(~members & (cnt == size - 1))
            ones = ones[np.lexsort((ones, -self.deg[ones]))]
            for v in ones:
                missing = np.flatnonzero(members & ~self.adj[v])
                u = int(missing[0])
                if protected is not None and protected[u]:
                    kept = members & protected
                    kept[u] = False
                    if not kept.any():
                        continue  # would drop the last frontier member
                # after swapping u -> v, w joins if it is adjacent to v and
                # to every member except u
                w_ok = (
                    ~members
                    & self.adj[v]
                    & (cnt - self.adj[:, u].astype(np.int64) == size - 1)
                )
                w_ok[v] = False
                ws = np.flatnonzero(w_ok)
                if ws.size:
                    w = ws[np.lexsort((ws, -self.deg[ws]))[0]]
                    members[u] = False
                    members[v] = True
                    members[w] = True
                    size += 1
                    swapped = True
                    break
            if not swapped:
                break
        self.consider([int(i) for i in np.flatnonzero(members)])


def _result(cg: ConsistencyGraph, search: _Search, exact: bool) -> CliqueResult:
    ids = cg.ids()
    members = frozenset(ids[i] for i in search.best)
    return CliqueResult(
        members=members,
        size=len(members),
        is_exact=exact and not search.exhausted,
        explored_nodes=search.explored,
        budget_exhausted=search.exhausted,
    )


def max_clique_batch(
    cg: ConsistencyGraph,
    *,
    exact: bool = False,
    node_budget: int | None = None,
    branch_width: int = 4,
) -> CliqueResult:
    """Search the whole graph from scratch.

    Heuristic by default; `exact=True` switches both this and the
    incremental search to exhaustive branch and bound so the two can be
    compared oracle-style on small graphs.
    """
    n = len(cg)
    search = _Search(cg.adjacency, node_budget)
    if n == 0:
        return _result(cg, search, exact)
    order = np.lexsort((np.arange(n), -search.deg))
    for v in order:
        if search.deg[v] + 1 <= len(search.best):
            break  # order is by degree: every later start is pruned too
        if search.exhausted:
            break
        if not exact and search.in_best[v]:
            continue  # a dive from an incumbent member just re-finds it
        cand = cg.adjacency[v] & (search.deg >= len(search.best))
        if exact:
            search.exact_expand([int(v)], cand & (np.arange(n) > v))
        else:
            search.branched_dives(int(v), cand, branch_width)
    if not exact:
        search.polish()
    return _result(cg, search, exact)


def max_clique_incremental(
    cg: ConsistencyGraph,
    prev: CliqueResult,
    *,
    exact: bool = False,
    node_budget: int | None = None,
    branch_width: int = 4,
) -> CliqueResult:
    """Update `prev` after new candidates arrived (the frontier).

    Any clique strictly larger than the previous maximum must contain at
    least one frontier vertex, so only cliques through frontier vertices
    are searched, with the incumbent seeded at |prev|.  Returns `prev`
    unchanged when nothing larger is found.  Clears the frontier.
    """
    frontier_ids = sorted(cg.frontier)
    ids = np.array(cg.ids())
    prev_ids = np.array(sorted(prev.members), dtype=np.int64)
    prev_idx = np.searchsorted(ids, prev_ids)
    if np.any(prev_idx >= len(ids)) or not np.array_equal(ids[prev_idx], prev_ids):
        raise ValueError("prev clique contains unknown candidate ids")
    if set(prev.members) & set(frontier_ids):
        raise ValueError("prev clique may not contain frontier vertices")
    adj = cg.adjacency
    if len(prev_idx):
        sub = adj[np.ix_(prev_idx, prev_idx)]
        if not (sub | np.eye(len(prev_idx), dtype=bool)).all():
            raise ValueError("prev is not a clique in the current graph")
    prev_idx = [int(i) for i in prev_idx]

    search = _Search(adj, node_budget)
    search.best = tuple(prev_idx)
    search.in_best[prev_idx] = True
    baseline = len(prev_idx)
    frontier_idx = [cg.index_of(i) for i in frontier_ids]
    for k, f in enumerate(frontier_idx):
        if search.exhausted:
            break
        if search.deg[f] < len(search.best):
            continue  # cannot be part of anything larger
        if not exact and search.in_best[f]:
            continue  # an earlier frontier dive already put f in the best
        cand = adj[f] & (search.deg >= len(search.best))
        if exact:
            # avoid re-enumerating cliques whose lowest frontier member
            # was already processed
            cand[frontier_idx[:k]] = False
            search.exact_expand([int(f)], cand)
        else:
            search.branched_dives(int(f), cand, branch_width)
    if not exact and len(search.best) > baseline:
        protected = np.zeros(len(cg), dtype=bool)
        protected[frontier_idx] = True
        search.polish(protected=protected)

    cg.frontier.clear()
    if len(search.best) <= baseline:
        return CliqueResult(
            members=prev.members,
            size=prev.size,
            is_exact=prev.is_exact and exact and not search.exhausted,
            explored_nodes=search.explored,
            budget_exhausted=search.exhausted,
        )
    result = _result(cg, search, exact)
    return CliqueResult(
        members=result.members,
        size=result.size,
        is_exact=prev.is_exact and exact and not search.exhausted,
        explored_nodes=search.explored,
        budget_exhausted=search.exhausted,
    )


_BRUTE_FORCE_LIMIT = 30


def brute_force_max_clique(cg: ConsistencyGraph) -> CliqueResult:
    """Exact maximum clique by exhaustive bitmask enumeration.

    Test oracle only: exponential, gated to graphs of at most
    30 vertices.  Independent of the production search above.
    """
    n = len(cg)
    if n > _BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force gated to {_BRUTE_FORCE_LIMIT} vertices, got {n}")
    adj = cg.adjacency
    bits = [0] * n
    for i in range(n):
        row = 0
        for j in np.flatnonzero(adj[i]):
            row |= 1 << int(j)
        bits[i] = row

    best: list[int] = []
    explored = 0

    def expand(clique: list[int], cand: int):
        nonlocal best, explored
        if cand == 0:
            if len(clique) > len(best):
                best = clique
            return
        while cand:
            if len(clique) + cand.bit_count() <= len(best):
                return
            v = (cand & -cand).bit_length() - 1
            cand &= cand - 1
            explored += 1
            expand(clique + [v], cand & bits[v])

    expand([], (1 << n) - 1)
    ids = cg.ids()
    members = frozenset(ids[i] for i in best)
    return CliqueResult(
        members=members, size=len(members), is_exact=True, explored_nodes=explored
    )
