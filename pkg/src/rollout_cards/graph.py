"""Cycle detection for a dependency graph that grows one edge at a time."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Iterable


class IncrementalDag:
    """Directed graph that refuses edges which would close a cycle.

    Each insertion searches for a path from the new edge's target back to
    its source; that path plus the new edge is the witness cycle.
    """

    def __init__(self):
        self._succ: dict[Hashable, list[Hashable]] = {}

    def _path(self, start, goal) -> list | None:
        if start == goal:
            return [start]
        parent = {start: None}
        stack = [start]
        while stack:
            node = stack.pop()
            for nxt in self._succ.get(node, ()):
                if nxt in parent:
                    continue
                parent[nxt] = node
                if nxt == goal:
                    path = [nxt]
                    while parent[path[-1]] is not None:
                        path.append(parent[path[-1]])
                    path.reverse()
                    return path
                stack.append(nxt)
        return None

    def add(self, source, target) -> list | None:
        """Insert ``source -> target``; return a witness cycle instead if it would close one."""
        witness = self._path(target, source)
        if witness is not None:
            return witness
        self._succ.setdefault(source, []).append(target)
        return None


@dataclass(frozen=True)
class AcyclicResult:
    acyclic: bool
    index: int | None = None
    witness: tuple = ()


def check_acyclic_incremental(edges: Iterable) -> AcyclicResult:
    """Find the first edge (by position) whose insertion creates a cycle.

    ``edges`` holds ``(source, target)`` pairs or edge rows, already in
    creation order.
    """
    dag = IncrementalDag()
    for index, edge in enumerate(edges):
        if isinstance(edge, tuple):
            source, target = edge
        else:
            source, target = edge.source_node_id, edge.target_node_id
        witness = dag.add(source, target)
        if witness is not None:
            return AcyclicResult(False, index, tuple(witness))
    return AcyclicResult(True)
