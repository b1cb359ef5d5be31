"""Independent reference implementations used as test oracles."""

from __future__ import annotations

from collections import defaultdict, deque


def first_cycle_by_prefix_toposort(edges: list[tuple[str, str]]) -> int | None:
    """Index of the first edge whose prefix is not topologically sortable."""
    adjacency: dict[str, list[str]] = defaultdict(list)
    indegree: dict[str, int] = defaultdict(int)
    for k, (u, v) in enumerate(edges):
        adjacency[u].append(v)
        indegree[v] += 1
        indegree.setdefault(u, 0)
        remaining = dict(indegree)
        queue = deque(n for n, deg in remaining.items() if deg == 0)
        sorted_count = 0
        while queue:
            n = queue.popleft()
            sorted_count += 1
            for m in adjacency.get(n, ()):
                remaining[m] -= 1
                if remaining[m] == 0:
                    queue.append(m)
        if sorted_count < len(remaining):
            return k
    return None
