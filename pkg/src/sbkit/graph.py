"""Immutable directed graphs for causal analysis: DAGs, SWIGs, and m-graphs.

Conventions that differ from a plain DAG library:

* Nodes carry a *kind*. ``FIXED`` nodes are intervention constants produced
  by node splitting; they never have incoming edges and they block every
  path through them during d-separation (they are treated as
  always-conditioned constants). ``SELECTION`` nodes are binary sample
  indicators, ``INDICATOR``/``PROXY`` nodes are missingness machinery, and
  ``LATENT`` nodes are declared fully-unobserved variables. All non-fixed
  kinds traverse identically in d-separation.

* Nodes carry a counterfactual *label*: the set of fixed-node names they are
  descendants of. A node ``Y`` with label ``{b1, b2}`` renders as
  ``Y^{b1,b2}``.

* Edges may carry a *guard* ``(ref, value)``: the edge is present only in
  contexts where node ``ref`` takes ``value``. Any operation on a graph that
  contains guarded edges requires an explicit guard context resolving every
  guard it may touch; querying without one raises ``GuardContextError``
  rather than silently unioning edges.

Graphs are immutable after construction and all operations are pure
functions, so concurrent readers are safe.
"""

from __future__ import annotations

import hashlib
import heapq
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

DEFAULT_PATH_LIMIT = 10_000


class GraphError(Exception):
    """Base class for graph construction and query errors."""


class CycleError(GraphError):
    def __init__(self, cycle: Sequence[str]):
        self.cycle = tuple(cycle)
        super().__init__("cycle detected: " + " -> ".join(self.cycle))


class UnknownNodeError(GraphError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unknown node: {name!r}")


class DisjointSetsError(GraphError):
    """Raised when d-separation argument sets overlap."""


class PathLimitError(GraphError):
    def __init__(self, limit: int):
        self.limit = limit
        super().__init__(f"path enumeration exceeded limit of {limit}")


class GuardContextError(GraphError):
    """A guarded edge could not be resolved by the supplied context."""


class NodeKind(Enum):
    RANDOM = "random"
    FIXED = "fixed"
    SELECTION = "selection"
    INDICATOR = "missingness-indicator"
    PROXY = "proxy"
    LATENT = "latent"


@dataclass(frozen=True, order=True)
class Node:
    name: str
    kind: NodeKind = NodeKind.RANDOM
    label: frozenset[str] = frozenset()

    def display(self) -> str:
        if not self.label:
            return self.name
        return f"{self.name}^{{{','.join(sorted(self.label))}}}"


@dataclass(frozen=True, order=True)
class Edge:
    src: str
    dst: str
    guard: Optional[tuple[str, int]] = None


@dataclass(frozen=True, order=True)
class Sample:
    """A selection indicator together with the variables observed when it is 1."""

    selection: str
    observes: frozenset[str] = frozenset()


@dataclass(frozen=True, order=True)
class ExposureRole:
    """An exposure node and the fixed-node name its split component will use."""

    name: str
    fixed_id: str
    order: int = 0


GuardContext = Mapping[str, int]


class Graph:
    """An immutable directed graph with kinds, labels, guards, and samples."""

    def __init__(
        self,
        nodes: Iterable[Node],
        edges: Iterable[Edge] = (),
        samples: Iterable[Sample] = (),
        subsets: Iterable[tuple[str, str]] = (),
        exposures: Iterable[ExposureRole] = (),
        outcome: Optional[str] = None,
        name: str = "g",
    ):
        self.name = name
        self._nodes: dict[str, Node] = {}
        for n in nodes:
            if not n.name:
                raise GraphError("node names must be non-empty")
            if n.name in self._nodes:
                raise GraphError(f"duplicate node: {n.name!r}")
            self._nodes[n.name] = n
        self.edges: tuple[Edge, ...] = tuple(sorted(set(edges)))
        self.samples: tuple[Sample, ...] = tuple(sorted(samples))
        self.subsets: tuple[tuple[str, str], ...] = tuple(sorted(subsets))
        self.exposures: tuple[ExposureRole, ...] = tuple(
            sorted(exposures, key=lambda e: (e.order, e.name))
        )
        self.outcome = outcome
        self._validate()
        self._parents: dict[str, tuple[Edge, ...]] = {n: () for n in self._nodes}
        self._children: dict[str, tuple[Edge, ...]] = {n: () for n in self._nodes}
        by_parent: dict[str, list[Edge]] = {n: [] for n in self._nodes}
        by_child: dict[str, list[Edge]] = {n: [] for n in self._nodes}
        for e in self.edges:
            by_parent[e.src].append(e)
            by_child[e.dst].append(e)
        for n in self._nodes:
            self._children[n] = tuple(by_parent[n])
            self._parents[n] = tuple(by_child[n])

    # -- validation -----------------------------------------------------

    def _validate(self) -> None:
        for e in self.edges:
            if e.src not in self._nodes:
                raise UnknownNodeError(e.src)
            if e.dst not in self._nodes:
                raise UnknownNodeError(e.dst)
            if e.src == e.dst:
                raise GraphError(f"self-loop on {e.src!r}")
            if self._nodes[e.dst].kind is NodeKind.FIXED:
                raise GraphError(f"fixed node {e.dst!r} cannot have incoming edges")
            if e.guard is not None and e.guard[0] not in self._nodes:
                raise UnknownNodeError(e.guard[0])
        for n in self._nodes.values():
            if n.kind is NodeKind.FIXED and n.label:
                raise GraphError(f"fixed node {n.name!r} must not carry a label")
        for s in self.samples:
            node = self._nodes.get(s.selection)
            if node is None:
                raise UnknownNodeError(s.selection)
            if node.kind is not NodeKind.SELECTION:
                raise GraphError(f"sample node {s.selection!r} is not selection-kind")
            for v in s.observes:
                if v not in self._nodes:
                    raise UnknownNodeError(v)
        sample_names = {s.selection for s in self.samples}
        for sub, sup in self.subsets:
            if sub not in sample_names or sup not in sample_names:
                raise GraphError(f"subset relation on undeclared samples: {sub!r} of {sup!r}")
        if self.outcome is not None and self.outcome not in self._nodes:
            raise UnknownNodeError(self.outcome)
        for ex in self.exposures:
            if ex.name not in self._nodes:
                raise UnknownNodeError(ex.name)
        # Acyclicity over the union of all guarded edges. This is strictly
        # sufficient for acyclicity under every guard assignment.
        order = _kahn(self._nodes, self.edges)
        if order is None:
            raise CycleError(_find_cycle(self._nodes, self.edges))
        # Subset relations must themselves be acyclic.
        sub_nodes = {s: Node(s) for s in sample_names}
        sub_edges = [Edge(sup, sub) for sub, sup in self.subsets]
        if sample_names and _kahn(sub_nodes, sub_edges) is None:
            raise GraphError("subset relations between samples form a cycle")

    # -- basic accessors -------------------------------------------------

    def node(self, name: str) -> Node:
        try:
            return self._nodes[name]
        except KeyError:
            raise UnknownNodeError(name) from None

    def has_node(self, name: str) -> bool:
        return name in self._nodes

    def nodes(self) -> tuple[Node, ...]:
        return tuple(self._nodes[k] for k in sorted(self._nodes))

    def node_names(self) -> tuple[str, ...]:
        return tuple(sorted(self._nodes))

    def sample(self, selection: str) -> Sample:
        for s in self.samples:
            if s.selection == selection:
                return s
        raise UnknownNodeError(selection)

    def observed_in(self, name: str) -> frozenset[str]:
        """Names of the samples whose observes-set contains ``name``."""
        self.node(name)
        return frozenset(s.selection for s in self.samples if name in s.observes)

    def subset_closure(self) -> frozenset[tuple[str, str]]:
        """Transitive closure of the declared (subsample, supersample) pairs."""
        closure = set(self.subsets)
        changed = True
        while changed:
            changed = False
            for a, b in list(closure):
                for c, d in list(closure):
                    if b == c and (a, d) not in closure:
                        closure.add((a, d))
                        changed = True
        return frozenset(closure)

    def exposure_for_fixed(self, fixed_id: str) -> Optional[ExposureRole]:
        for ex in self.exposures:
            if ex.fixed_id == fixed_id:
                return ex
        return None

    def exposure(self, name: str) -> Optional[ExposureRole]:
        for ex in self.exposures:
            if ex.name == name:
                return ex
        return None

    # -- guards ----------------------------------------------------------

    def has_guards(self) -> bool:
        return any(e.guard is not None for e in self.edges)

    def _active_edges(self, context: Optional[GuardContext]) -> tuple[Edge, ...]:
        if not self.has_guards():
            return self.edges
        if context is None:
            raise GuardContextError(
                "graph has guarded edges; an explicit guard context is required"
            )
        active = []
        for e in self.edges:
            if e.guard is None:
                active.append(e)
                continue
            ref, val = e.guard
            if ref not in context:
                raise GuardContextError(f"guard context does not resolve {ref!r}")
            if context[ref] == val:
                active.append(e)
        return tuple(active)

    def _union_edges(self) -> tuple[Edge, ...]:
        # Internal: guard-agnostic superset view, used for construction-time
        # bookkeeping (decompositions built without a context).
        return self.edges

    # -- derived builders -------------------------------------------------

    def replace(
        self,
        nodes: Optional[Iterable[Node]] = None,
        edges: Optional[Iterable[Edge]] = None,
        samples: Optional[Iterable[Sample]] = None,
        subsets: Optional[Iterable[tuple[str, str]]] = None,
        exposures: Optional[Iterable[ExposureRole]] = None,
        outcome: Optional[str] = None,
        name: Optional[str] = None,
    ) -> "Graph":
        return Graph(
            nodes=self.nodes() if nodes is None else nodes,
            edges=self.edges if edges is None else edges,
            samples=self.samples if samples is None else samples,
            subsets=self.subsets if subsets is None else subsets,
            exposures=self.exposures if exposures is None else exposures,
            outcome=self.outcome if outcome is None else outcome,
            name=self.name if name is None else name,
        )

    def structural_digest(self) -> str:
        h = hashlib.sha256()
        for n in self.nodes():
            h.update(f"n:{n.name}:{n.kind.value}:{','.join(sorted(n.label))};".encode())
        for e in self.edges:
            g = "" if e.guard is None else f"{e.guard[0]}={e.guard[1]}"
            h.update(f"e:{e.src}->{e.dst}:{g};".encode())
        for s in self.samples:
            h.update(f"s:{s.selection}:{','.join(sorted(s.observes))};".encode())
        for a, b in self.subsets:
            h.update(f"sub:{a}<{b};".encode())
        for ex in self.exposures:
            h.update(f"x:{ex.name}:{ex.fixed_id}:{ex.order};".encode())
        h.update(f"y:{self.outcome};".encode())
        return h.hexdigest()

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Graph) and self.structural_digest() == other.structural_digest()

    def __hash__(self) -> int:
        return hash(self.structural_digest())

    # -- structural queries ------------------------------------------------

    def parents(self, name: str, context: Optional[GuardContext] = None) -> tuple[str, ...]:
        self.node(name)
        active = set(self._active_edges(context))
        return tuple(sorted(e.src for e in self._parents[name] if e in active))

    def children(self, name: str, context: Optional[GuardContext] = None) -> tuple[str, ...]:
        self.node(name)
        active = set(self._active_edges(context))
        return tuple(sorted(e.dst for e in self._children[name] if e in active))

    def out_edges(self, name: str) -> tuple[Edge, ...]:
        self.node(name)
        return self._children[name]

    def topological_order(self, context: Optional[GuardContext] = None) -> tuple[str, ...]:
        """Nodes in a topological order, ties broken lexicographically."""
        edges = self._active_edges(context)
        order = _kahn(self._nodes, edges)
        if order is None:
            raise CycleError(_find_cycle(self._nodes, edges))
        return order

    def reachability(
        self,
        name: str,
        direction: str = "descendants",
        context: Optional[GuardContext] = None,
    ) -> frozenset[str]:
        """Reflexive-transitive closure along (reversed) active edges."""
        if direction not in ("descendants", "ancestors"):
            raise ValueError(f"direction must be 'descendants' or 'ancestors', got {direction!r}")
        self.node(name)
        edges = self._active_edges(context)
        step: dict[str, list[str]] = {n: [] for n in self._nodes}
        for e in edges:
            if direction == "descendants":
                step[e.src].append(e.dst)
            else:
                step[e.dst].append(e.src)
        seen = {name}
        queue = deque([name])
        while queue:
            v = queue.popleft()
            for w in step[v]:
                if w not in seen:
                    seen.add(w)
                    queue.append(w)
        return frozenset(seen)

    def descendants(self, name: str, context: Optional[GuardContext] = None) -> frozenset[str]:
        return self.reachability(name, "descendants", context)

    def ancestors(self, name: str, context: Optional[GuardContext] = None) -> frozenset[str]:
        return self.reachability(name, "ancestors", context)

    def directed_paths(
        self,
        src: str,
        dst: str,
        context: Optional[GuardContext] = None,
        limit: int = DEFAULT_PATH_LIMIT,
    ) -> tuple[tuple[str, ...], ...]:
        """All simple directed paths from ``src`` to ``dst``.

        Diagnostics only; condition checks use reachability. Enumeration is
        capped at ``limit`` paths and raises ``PathLimitError`` beyond it.
        """
        self.node(src)
        self.node(dst)
        edges = self._active_edges(context)
        children: dict[str, list[str]] = {n: [] for n in self._nodes}
        for e in edges:
            children[e.src].append(e.dst)
        for n in children:
            children[n].sort()
        paths: list[tuple[str, ...]] = []
        stack: list[str] = []

        def dfs(v: str) -> None:
            stack.append(v)
            if v == dst:
                if len(paths) >= limit:
                    raise PathLimitError(limit)
                paths.append(tuple(stack))
            else:
                for w in children[v]:
                    if w not in stack:
                        dfs(w)
            stack.pop()

        dfs(src)
        return tuple(paths)

    # -- d-separation ------------------------------------------------------

    def d_separated(
        self,
        xs: Iterable[str],
        ys: Iterable[str],
        zs: Iterable[str] = (),
        context: Optional[GuardContext] = None,
    ) -> bool:
        """True iff every path between ``xs`` and ``ys`` is blocked given ``zs``.

        Fixed-kind nodes other than the endpoints are treated as observed
        constants: every path through them is blocked.
        """
        xs = frozenset(xs)
        ys = frozenset(ys)
        zs = frozenset(zs)
        for v in xs | ys | zs:
            self.node(v)
        if xs & ys or xs & zs or ys & zs:
            raise DisjointSetsError("d-separation argument sets must be disjoint")
        fixed = {
            n.name
            for n in self._nodes.values()
            if n.kind is NodeKind.FIXED and n.name not in xs and n.name not in ys
        }
        blocked = zs | fixed
        edges = self._active_edges(context)
        return not _trail_reachable(self._nodes, edges, xs, ys, blocked)


def _kahn(nodes: Mapping[str, Node], edges: Iterable[Edge]) -> Optional[tuple[str, ...]]:
    indeg = {n: 0 for n in nodes}
    children: dict[str, list[str]] = {n: [] for n in nodes}
    for e in set(edges):
        indeg[e.dst] += 1
        children[e.src].append(e.dst)
    heap = [n for n, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order: list[str] = []
    while heap:
        v = heapq.heappop(heap)
        order.append(v)
        for w in sorted(children[v]):
            indeg[w] -= 1
            if indeg[w] == 0:
                heapq.heappush(heap, w)
    if len(order) != len(nodes):
        return None
    return tuple(order)


def _find_cycle(nodes: Mapping[str, Node], edges: Iterable[Edge]) -> list[str]:
    children: dict[str, list[str]] = {n: [] for n in nodes}
    for e in set(edges):
        children[e.src].append(e.dst)
    for n in children:
        children[n].sort()
    color: dict[str, int] = {}
    stack: list[str] = []

    def dfs(v: str) -> Optional[list[str]]:
        color[v] = 1
        stack.append(v)
        for w in children[v]:
            if color.get(w, 0) == 1:
                return stack[stack.index(w):] + [w]
            if color.get(w, 0) == 0:
                found = dfs(w)
                if found:
                    return found
        stack.pop()
        color[v] = 2
        return None

    for n in sorted(nodes):
        if color.get(n, 0) == 0:
            found = dfs(n)
            if found:
                return found
    return []


def _trail_reachable(
    nodes: Mapping[str, Node],
    edges: Iterable[Edge],
    xs: frozenset[str],
    ys: frozenset[str],
    observed: frozenset[str] | set[str],
) -> bool:
    """Active-trail reachability (Bayes-ball style, Koller & Friedman alg. 3.1)."""
    parents: dict[str, list[str]] = {n: [] for n in nodes}
    children: dict[str, list[str]] = {n: [] for n in nodes}
    for e in set(edges):
        parents[e.dst].append(e.src)
        children[e.src].append(e.dst)
    # Ancestors of the observed set, needed to open colliders.
    an_obs = set(observed)
    queue = deque(observed)
    while queue:
        v = queue.popleft()
        for p in parents[v]:
            if p not in an_obs:
                an_obs.add(p)
                queue.append(p)
    # Trail walk: "up" = arrived from a child (moving against edges),
    # "down" = arrived from a parent.
    visited: set[tuple[str, str]] = set()
    todo: deque[tuple[str, str]] = deque((x, "up") for x in sorted(xs))
    while todo:
        v, d = todo.popleft()
        if (v, d) in visited:
            continue
        visited.add((v, d))
        if v not in observed and v in ys:
            return True
        if d == "up" and v not in observed:
            for p in sorted(parents[v]):
                todo.append((p, "up"))
            for c in sorted(children[v]):
                todo.append((c, "down"))
        elif d == "down":
            if v not in observed:
                for c in sorted(children[v]):
                    todo.append((c, "down"))
            if v in an_obs:
                for p in sorted(parents[v]):
                    todo.append((p, "up"))
    return False
