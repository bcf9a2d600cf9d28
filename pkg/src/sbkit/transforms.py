"""Graph surgeries: exposure decomposition, node splitting, sequential
multi-exposure SWIG construction, and m-graph augmentation.

The decomposition of an exposure ``A`` with respect to a target ``Y``
partitions its outgoing edges into a component ``B`` (edges lying on some
directed path to the target) and a component ``C`` (the rest), so that every
causal path from ``A`` to the target passes through ``B``. The abbreviated
SWIG keeps ``A`` as the random half of a split node ``(A | b)``: incoming
edges and the ``C``-edges stay on ``A``, while a new fixed node ``b`` takes
the ``B``-edges. Every non-fixed descendant of ``b`` gains ``b`` in its
counterfactual label.

With several exposures the surgery must run in reverse topological order;
``build_b_swig`` does so by construction and offers a diagnostic mode that
accepts a user-supplied order and reports deviations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

from .graph import (
    Edge,
    ExposureRole,
    Graph,
    GraphError,
    GuardContext,
    Node,
    NodeKind,
    UnknownNodeError,
)


@dataclass(frozen=True)
class Decomposition:
    """Partition of an exposure's outgoing edges into B- and C-components."""

    exposure: str
    b_node: str
    c_node: str
    b_edges: tuple[tuple[str, str], ...]
    c_edges: tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class SwigStep:
    exposure: str
    fixed_id: str
    decomposition: Decomposition
    graph: Graph


@dataclass(frozen=True)
class SwigBuildTrace:
    steps: tuple[SwigStep, ...]
    graph: Graph
    exposure_order: tuple[str, ...]
    order_warning: Optional[str] = None

    def intervention_map(self) -> dict[str, tuple[str, frozenset[str]]]:
        """fixed id -> (exposure, heads of its B-edges); drives the oracle."""
        return {
            s.fixed_id: (s.exposure, frozenset(dst for _src, dst in s.decomposition.b_edges))
            for s in self.steps
        }

    def graph_for_interventions(self, fixed_ids: frozenset[str]) -> Optional[Graph]:
        """The single-world graph whose intervention set is exactly ``fixed_ids``."""
        if not fixed_ids:
            return None
        done: set[str] = set()
        for step in self.steps:
            done.add(step.fixed_id)
            if done == set(fixed_ids):
                return step.graph
        return None


def _descendants_union(g: Graph, name: str) -> frozenset[str]:
    # Guard-agnostic descent over the union of edges; used when a
    # decomposition is built without a guard context (resolution is then
    # deferred to query time).
    seen = {name}
    stack = [name]
    while stack:
        v = stack.pop()
        for e in g.out_edges(v):
            if e.dst not in seen:
                seen.add(e.dst)
                stack.append(e.dst)
    return frozenset(seen)


def _partition_edges(
    g: Graph, a: str, target: str, context: Optional[GuardContext]
) -> tuple[list[Edge], list[Edge]]:
    b_edges: list[Edge] = []
    c_edges: list[Edge] = []
    for e in sorted(g.out_edges(a)):
        if context is None:
            on_path = target in _descendants_union(g, e.dst)
        else:
            on_path = target in g.descendants(e.dst, context)
        (b_edges if on_path else c_edges).append(e)
    return b_edges, c_edges


def expand_exposure(
    g: Graph,
    a: str,
    target: str,
    context: Optional[GuardContext] = None,
    b_name: Optional[str] = None,
    c_name: Optional[str] = None,
) -> tuple[Graph, Decomposition]:
    """Insert deterministic components B and C between ``a`` and its children.

    Each outgoing edge of ``a`` whose head lies on a directed path to
    ``target`` is rerouted through B, the rest through C; either component
    may end up childless. Totality (every directed path ``a`` -> ``target``
    passes through B) holds by construction.
    """
    g.node(a)
    g.node(target)
    b_name = b_name or f"B_{a}"
    c_name = c_name or f"C_{a}"
    for fresh in (b_name, c_name):
        if g.has_node(fresh):
            raise GraphError(f"node {fresh!r} already exists")
    b_edges, c_edges = _partition_edges(g, a, target, context)
    nodes = list(g.nodes()) + [Node(b_name, NodeKind.RANDOM), Node(c_name, NodeKind.RANDOM)]
    edges = [e for e in g.edges if e.src != a]
    edges.append(Edge(a, b_name))
    edges.append(Edge(a, c_name))
    edges += [Edge(b_name, e.dst, e.guard) for e in b_edges]
    edges += [Edge(c_name, e.dst, e.guard) for e in c_edges]
    out = g.replace(nodes=nodes, edges=edges)
    decomp = Decomposition(
        exposure=a,
        b_node=b_name,
        c_node=c_name,
        b_edges=tuple((e.src, e.dst) for e in b_edges),
        c_edges=tuple((e.src, e.dst) for e in c_edges),
    )
    return out, decomp


def split_node(g: Graph, n: str, fixed_name: str) -> Graph:
    """The node-splitting operation: ``n`` keeps incoming edges, a new fixed
    node takes the outgoing ones, and every non-fixed descendant of the fixed
    node gains it in its counterfactual label."""
    node = g.node(n)
    if node.kind is NodeKind.FIXED:
        raise GraphError(f"cannot split fixed node {n!r}")
    if g.has_node(fixed_name):
        raise GraphError(f"node {fixed_name!r} already exists")
    moved = [e for e in g.out_edges(n)]
    edges = [e for e in g.edges if e.src != n]
    edges += [Edge(fixed_name, e.dst, e.guard) for e in moved]
    # Guards that referenced the split node now reference its fixed half:
    # the intervention value is what resolves the context from here on.
    edges = [
        Edge(e.src, e.dst, (fixed_name, e.guard[1]))
        if e.guard is not None and e.guard[0] == n
        else e
        for e in edges
    ]
    nodes = list(g.nodes()) + [Node(fixed_name, NodeKind.FIXED)]
    tmp = g.replace(nodes=nodes, edges=edges)
    labelled = _descendants_union(tmp, fixed_name) - {fixed_name}
    relabelled = []
    for nd in tmp.nodes():
        if nd.name in labelled and nd.kind is not NodeKind.FIXED:
            relabelled.append(Node(nd.name, nd.kind, nd.label | {fixed_name}))
        else:
            relabelled.append(nd)
    return tmp.replace(nodes=relabelled)


def build_a_swig(g: Graph, exposure: Optional[str] = None, fixed_name: Optional[str] = None) -> Graph:
    """SWIG for intervening on the full exposure (no decomposition)."""
    if exposure is None:
        if len(g.exposures) != 1:
            raise GraphError("an exposure name is required when there is not exactly one")
        exposure = g.exposures[0].name
    if fixed_name is None:
        fixed_name = _fresh_lower(g, exposure)
    return split_node(g, exposure, fixed_name)


def build_y_swig(g: Graph, fixed_name: Optional[str] = None) -> Graph:
    """SWIG for intervening on the outcome (used by case-control analyses)."""
    if g.outcome is None:
        raise GraphError("graph has no declared outcome")
    if fixed_name is None:
        fixed_name = _fresh_lower(g, g.outcome)
    return split_node(g, g.outcome, fixed_name)


def _fresh_lower(g: Graph, name: str) -> str:
    base = name.lower()
    candidate = base
    i = 0
    while g.has_node(candidate):
        i += 1
        candidate = f"{base}_{i}"
    return candidate


def reverse_topological_exposures(g: Graph) -> tuple[str, ...]:
    order = _kahn_union(g)
    exposure_names = {e.name for e in g.exposures}
    return tuple(v for v in reversed(order) if v in exposure_names)


def _kahn_union(g: Graph) -> tuple[str, ...]:
    # Topological order over the union of guarded edges (validated acyclic).
    indeg = {n: 0 for n in g.node_names()}
    children: dict[str, list[str]] = {n: [] for n in g.node_names()}
    for e in g.edges:
        indeg[e.dst] += 1
        children[e.src].append(e.dst)
    import heapq

    heap = [n for n, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    out: list[str] = []
    while heap:
        v = heapq.heappop(heap)
        out.append(v)
        for w in sorted(children[v]):
            indeg[w] -= 1
            if indeg[w] == 0:
                heapq.heappush(heap, w)
    return tuple(out)


def build_b_swig(
    g: Graph,
    context: Optional[GuardContext] = None,
    order: Optional[Iterable[str]] = None,
) -> SwigBuildTrace:
    """Abbreviated b-SWIG: decompose and split every exposure, latest first.

    Exposures are processed in reverse topological order of the input graph;
    at each step the decomposition target is the current (possibly already
    labelled) outcome node. Passing ``order`` switches to diagnostic mode:
    the supplied order is used as-is and any deviation from reverse
    topological order is reported in ``order_warning``.
    """
    if not g.exposures:
        raise GraphError("graph declares no exposures")
    if g.outcome is None:
        raise GraphError("graph has no declared outcome")
    canonical = reverse_topological_exposures(g)
    warning: Optional[str] = None
    if order is not None:
        chosen = tuple(order)
        if set(chosen) != {e.name for e in g.exposures}:
            raise GraphError("diagnostic order must list every exposure exactly once")
        if chosen != canonical:
            warning = (
                "exposure order "
                + " -> ".join(chosen)
                + " deviates from reverse topological order "
                + " -> ".join(canonical)
            )
    else:
        chosen = canonical
    steps: list[SwigStep] = []
    current = g
    for name in chosen:
        role = current.exposure(name)
        assert role is not None
        fid = role.fixed_id
        b_edges, c_edges = _partition_edges(current, name, current.outcome, context)
        # Abbreviated split: C-edges stay on the random half, B-edges move to
        # the fixed node directly; B and C are never materialized.
        edges = [e for e in current.edges if not (e.src == name and e in b_edges)]
        edges += [Edge(fid, e.dst, e.guard) for e in b_edges]
        edges = [
            Edge(e.src, e.dst, (fid, e.guard[1]))
            if e.guard is not None and e.guard[0] == name
            else e
            for e in edges
        ]
        nodes = list(current.nodes()) + [Node(fid, NodeKind.FIXED)]
        tmp = current.replace(nodes=nodes, edges=edges)
        labelled = _descendants_union(tmp, fid) - {fid}
        relabelled = [
            Node(nd.name, nd.kind, nd.label | {fid})
            if nd.name in labelled and nd.kind is not NodeKind.FIXED
            else nd
            for nd in tmp.nodes()
        ]
        current = tmp.replace(nodes=relabelled)
        decomp = Decomposition(
            exposure=name,
            b_node=f"B_{name}",
            c_node=f"C_{name}",
            b_edges=tuple((e.src, e.dst) for e in b_edges),
            c_edges=tuple((e.src, e.dst) for e in c_edges),
        )
        steps.append(SwigStep(name, fid, decomp, current))
    return SwigBuildTrace(tuple(steps), current, chosen, warning)


def build_m_graph(
    g: Graph,
    missing: Iterable[str],
    h_parents: Mapping[str, Iterable[str]] = {},
) -> Graph:
    """Add a missingness indicator H_V and proxy V_star for each missing V.

    H_V gets the supplied parents; V_star gets parents ``{V, H_V}``. The
    original variable is then treated as unobserved.
    """
    missing = sorted(set(missing))
    nodes = list(g.nodes())
    edges = list(g.edges)
    for v in missing:
        node = g.node(v)
        if node.kind not in (NodeKind.RANDOM, NodeKind.LATENT):
            raise GraphError(f"only base variables can be missing, not {v!r} ({node.kind.value})")
        h_name, p_name = f"H_{v}", f"{v}_star"
        for fresh in (h_name, p_name):
            if g.has_node(fresh):
                raise GraphError(f"node {fresh!r} already exists")
        nodes.append(Node(h_name, NodeKind.INDICATOR))
        nodes.append(Node(p_name, NodeKind.PROXY))
        edges.append(Edge(v, p_name))
        edges.append(Edge(h_name, p_name))
        for parent in sorted(set(h_parents.get(v, ()))):
            if not g.has_node(parent) and parent not in {f"H_{m}" for m in missing}:
                raise UnknownNodeError(parent)
            edges.append(Edge(parent, h_name))
    return g.replace(nodes=nodes, edges=edges)
