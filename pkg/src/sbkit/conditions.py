"""Named graphical conditions for selection-bias analysis, plus search for
satisfying conditioning sets.

Every check is evaluated graphically, at the level of the graph's implied
independence model: a condition "holds" when the corresponding d-separations
hold. Distribution-level conditions that hold without graphical support
(unfaithful distributions) are out of scope.

Reports carry machine-readable justifications (the d-separation queries or
violating paths) so that derivation engines can cite them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Optional, Sequence, Union

from .graph import Graph, GraphError, GuardContext, NodeKind


class ConditionError(GraphError):
    """Base class for condition-check failures that are errors, not 'false'."""


class PreconditionError(ConditionError):
    def __init__(self, message: str, offenders: Sequence[str] = ()):
        self.offenders = tuple(sorted(offenders))
        super().__init__(message + (": " + ", ".join(self.offenders) if self.offenders else ""))


class IsolationError(ConditionError):
    """Case-control isolation fails where a check or rewrite requires it."""


@dataclass(frozen=True)
class ConditionReport:
    condition: str
    holds: bool
    witness: dict = field(default_factory=dict)
    facts: tuple[dict, ...] = ()

    def to_json(self) -> dict:
        return {
            "condition": self.condition,
            "holds": self.holds,
            "witness": self.witness,
            "facts": list(self.facts),
        }


@dataclass(frozen=True)
class CIStatement:
    """A conditional-independence statement over (variable, label) pairs."""

    xs: tuple[tuple[str, frozenset[str]], ...]
    ys: tuple[tuple[str, frozenset[str]], ...]
    zs: tuple[tuple[str, frozenset[str]], ...] = ()

    def render(self) -> str:
        def side(atoms):
            return ", ".join(
                v + ("^{" + ",".join(sorted(l)) + "}" if l else "") for v, l in atoms
            )

        s = f"{side(self.xs)} _||_ {side(self.ys)}"
        if self.zs:
            s += f" | {side(self.zs)}"
        return s


def _dsep_fact(graph_name: str, xs, ys, zs, holds: bool, context=None) -> dict:
    fact = {
        "kind": "d-separation",
        "graph": graph_name,
        "x": sorted(xs),
        "y": sorted(ys),
        "z": sorted(zs),
        "holds": holds,
    }
    if context:
        fact["guard"] = {k: v for k, v in sorted(context.items())}
    return fact


def _path_fact(kind: str, path: Sequence[str]) -> dict:
    return {"kind": kind, "path": list(path)}


def _first_path_avoiding(
    g: Graph, src: str, dst: str, avoid: frozenset[str], context: Optional[GuardContext]
) -> Optional[tuple[str, ...]]:
    children: dict[str, list[str]] = {n: [] for n in g.node_names()}
    for e in g._active_edges(context) if g.has_guards() else g.edges:
        children[e.src].append(e.dst)
    for n in children:
        children[n].sort()
    stack: list[str] = []

    def dfs(v: str) -> Optional[tuple[str, ...]]:
        if v in avoid:
            return None
        stack.append(v)
        if v == dst:
            found = tuple(stack)
            stack.pop()
            return found
        for w in children[v]:
            if w not in stack:
                found = dfs(w)
                if found:
                    stack.pop()
                    return found
        stack.pop()
        return None

    return dfs(src)


def check_totality(
    g_ex: Graph, a: str, b: str, y: str, context: Optional[GuardContext] = None
) -> ConditionReport:
    """All causal paths from the exposure to the outcome pass through b."""
    for n in (a, b, y):
        g_ex.node(n)
    path = _first_path_avoiding(g_ex, a, y, frozenset({b}), context)
    holds = path is None
    witness = {} if holds else {"violating_path": list(path)}
    facts = (_path_fact("totality-violation", path),) if path else ()
    return ConditionReport("totality", holds, witness, facts)


def check_cohort_isolation(
    g_ex: Graph, b: str, s: str, context: Optional[GuardContext] = None
) -> ConditionReport:
    """No causal paths from b to the selection node."""
    g_ex.node(b)
    g_ex.node(s)
    path = _first_path_avoiding(g_ex, b, s, frozenset(), context)
    holds = path is None
    witness = {} if holds else {"violating_path": list(path)}
    facts = (_path_fact("causal-path", path),) if path else ()
    return ConditionReport("cohort-isolation", holds, witness, facts)


def check_case_control_isolation(
    g_ex: Graph, b: str, s: str, y: str, context: Optional[GuardContext] = None
) -> ConditionReport:
    """All causal paths from b to the selection node pass through the outcome."""
    for n in (b, s, y):
        g_ex.node(n)
    path = _first_path_avoiding(g_ex, b, s, frozenset({y}), context)
    holds = path is None
    witness = {} if holds else {"violating_path": list(path)}
    facts = (_path_fact("outcome-avoiding-path", path),) if path else ()
    return ConditionReport("case-control-isolation", holds, witness, facts)


def _outcome_fids(swig: Graph) -> tuple[str, ...]:
    if swig.outcome is None:
        raise GraphError("SWIG has no declared outcome")
    return tuple(sorted(swig.node(swig.outcome).label))


def _require_nondescendants(
    swig: Graph, k: Iterable[str], fids: Iterable[str], context: Optional[GuardContext]
) -> None:
    offenders = set()
    for fid in fids:
        desc = swig.descendants(fid, context) if not swig.has_guards() or context is not None \
            else _union_descendants(swig, fid)
        offenders |= set(k) & (desc - {fid})
    if offenders:
        raise PreconditionError("conditioning set contains descendants of the intervention", offenders)


def _union_descendants(g: Graph, name: str) -> frozenset[str]:
    seen = {name}
    stack = [name]
    while stack:
        v = stack.pop()
        for e in g.out_edges(v):
            if e.dst not in seen:
                seen.add(e.dst)
                stack.append(e.dst)
    return frozenset(seen)


def check_separable_cohort(
    swig: Graph,
    a: Union[str, Iterable[str]],
    y: str,
    s: str,
    k: Iterable[str] = (),
    context: Optional[GuardContext] = None,
) -> ConditionReport:
    """(A, S^b) independent of Y^b given K on the b-SWIG.

    ``a`` may be a set of exposure random parts for joint multi-exposure
    checks. ``k`` must not contain descendants of the intervention nodes.
    """
    a_nodes = (a,) if isinstance(a, str) else tuple(sorted(a))
    k = frozenset(k)
    fids = _outcome_fids(swig)
    _require_nondescendants(swig, k, fids, context)
    holds = swig.d_separated(set(a_nodes) | {s}, {y}, k, context)
    fact = _dsep_fact(f"swig:{swig.name}", set(a_nodes) | {s}, {y}, k, holds, context)
    witness = {"conditioning_set": sorted(k)} if holds else {"failed_query": fact}
    return ConditionReport("separable-cohort", holds, witness, (fact,))


def check_separable_case_control(
    swig: Graph,
    a: Union[str, Iterable[str]],
    y: str,
    s: str,
    k: Iterable[str] = (),
    context: Optional[GuardContext] = None,
) -> ConditionReport:
    """(Y^b, S^b) independent of A given K, after case-control isolation.

    Raises :class:`IsolationError` when case-control isolation fails, which
    is a distinct outcome from the independence simply not holding.
    """
    a_nodes = (a,) if isinstance(a, str) else tuple(sorted(a))
    k = frozenset(k)
    fids = _outcome_fids(swig)
    _require_nondescendants(swig, k, fids, context)
    iso_facts = []
    for fid in fids:
        iso = check_case_control_isolation(swig, fid, s, y, context)
        iso_facts.extend(iso.facts)
        if not iso.holds:
            raise IsolationError(
                f"case-control isolation fails for {fid!r}: causal path "
                + " -> ".join(iso.witness["violating_path"])
            )
    holds = swig.d_separated({y, s}, set(a_nodes), k, context)
    fact = _dsep_fact(f"swig:{swig.name}", {y, s}, set(a_nodes), k, holds, context)
    witness = {"conditioning_set": sorted(k)} if holds else {"failed_query": fact}
    return ConditionReport("separable-case-control", holds, witness, tuple(iso_facts) + (fact,))


def _sole_fixed(swig: Graph) -> str:
    fixed = [n.name for n in swig.nodes() if n.kind is NodeKind.FIXED]
    if len(fixed) != 1:
        raise GraphError(f"expected exactly one fixed node, found {fixed}")
    return fixed[0]


def check_analytic_cohort(
    a_swig: Graph,
    a: str,
    y: str,
    s: str,
    x: Iterable[str] = (),
    context: Optional[GuardContext] = None,
) -> ConditionReport:
    """Exchangeability and selection independence on the full-exposure SWIG:
    A independent of Y^a given X, and S^a independent of Y^a given (A, X)."""
    x = frozenset(x)
    fixed = _sole_fixed(a_swig)
    _require_nondescendants(a_swig, x, (fixed,), context)
    c1 = a_swig.d_separated({a}, {y}, x, context)
    c2 = a_swig.d_separated({s}, {y}, x | {a}, context)
    f1 = _dsep_fact(f"swig:{a_swig.name}", {a}, {y}, x, c1, context)
    f2 = _dsep_fact(f"swig:{a_swig.name}", {s}, {y}, x | {a}, c2, context)
    holds = c1 and c2
    witness = {"conditioning_set": sorted(x)} if holds else {
        "failed_query": f1 if not c1 else f2
    }
    return ConditionReport("analytic-cohort", holds, witness, (f1, f2))


def check_analytic_case_control(
    a_swig: Graph,
    y_swig: Graph,
    a: str,
    y: str,
    s: str,
    x: Iterable[str] = (),
    w: Iterable[str] = (),
    context: Optional[GuardContext] = None,
) -> ConditionReport:
    """Kenah-style case-control condition, evaluated on both SWIGs:
    A indep Y^a | X and W^a indep Y^a | (A, X) on the exposure SWIG, and
    S^y indep A | (Y, X, W) on the outcome SWIG."""
    x = frozenset(x)
    w = frozenset(w)
    fixed_a = _sole_fixed(a_swig)
    fixed_y = _sole_fixed(y_swig)
    _require_nondescendants(a_swig, x, (fixed_a,), context)
    _require_nondescendants(y_swig, w, (fixed_y,), context)
    c1 = a_swig.d_separated({a}, {y}, x, context)
    f1 = _dsep_fact(f"swig:{a_swig.name}", {a}, {y}, x, c1, context)
    if w:
        c2 = a_swig.d_separated(w, {y}, x | {a}, context)
    else:
        c2 = True
    f2 = _dsep_fact(f"swig:{a_swig.name}", w, {y}, x | {a}, c2, context)
    c3 = y_swig.d_separated({s}, {a}, {y} | x | w, context)
    f3 = _dsep_fact(f"swig:{y_swig.name}", {s}, {a}, {y} | x | w, c3, context)
    holds = c1 and c2 and c3
    if holds:
        witness = {"conditioning_sets": {"X": sorted(x), "W": sorted(w)}}
    else:
        witness = {"failed_query": f1 if not c1 else (f2 if not c2 else f3)}
    return ConditionReport("analytic-case-control", holds, witness, (f1, f2, f3))


def lemma1_rewrite(
    swig: Graph,
    stmt: CIStatement,
    context: Optional[GuardContext] = None,
) -> tuple[CIStatement, tuple[dict, ...]]:
    """Observable conditioning: erase the intervention labels from a
    statement of the shape S^b indep A | (Y^b, K), valid in both directions
    under case-control isolation with K free of descendants of b.

    Raises :class:`IsolationError` when isolation fails (the rewrite would
    be unsound) and :class:`PreconditionError` on a bad K.
    """
    fids = set()
    for side in (stmt.xs, stmt.ys, stmt.zs):
        for _v, label in side:
            fids |= label
    if len(fids) != 1:
        raise PreconditionError("statement must carry exactly one intervention label", sorted(fids))
    (fid,) = fids
    if swig.outcome is None:
        raise GraphError("SWIG has no declared outcome")
    y = swig.outcome
    labelled_sel = [
        v
        for v, label in stmt.xs + stmt.ys
        if fid in label and swig.node(v).kind is NodeKind.SELECTION
    ]
    if not labelled_sel:
        raise PreconditionError("no labelled selection variable in the statement")
    k = frozenset(v for v, label in stmt.zs if v != y)
    _require_nondescendants(swig, k, (fid,), context)
    facts: list[dict] = []
    for s in labelled_sel:
        iso = check_case_control_isolation(swig, fid, s, y, context)
        facts.extend(iso.facts)
        if not iso.holds:
            raise IsolationError(
                f"case-control isolation fails for {fid!r} and {s!r}; rewrite unsound"
            )
        facts.append({"kind": "case-control-isolation", "fixed": fid, "selection": s, "holds": True})

    def erase(side):
        return tuple((v, frozenset(l - {fid})) for v, l in side)

    return CIStatement(erase(stmt.xs), erase(stmt.ys), erase(stmt.zs)), tuple(facts)


def find_conditioning_set(
    swig: Graph,
    condition: str,
    a: Union[str, Iterable[str]],
    y: str,
    s: str,
    candidates: Iterable[str],
    context: Optional[GuardContext] = None,
    max_size: Optional[int] = None,
) -> Optional[tuple[frozenset[str], ConditionReport]]:
    """Smallest candidate subset (by cardinality, then lexicographic order)
    satisfying the named separable condition; None when none does."""
    checkers = {
        "separable-cohort": check_separable_cohort,
        "separable-case-control": check_separable_case_control,
    }
    if condition not in checkers:
        raise ValueError(f"unknown condition {condition!r}; expected one of {sorted(checkers)}")
    check = checkers[condition]
    pool = tuple(sorted(set(candidates)))
    fids = _outcome_fids(swig)
    _require_nondescendants(swig, pool, fids, context)
    limit = len(pool) if max_size is None else min(max_size, len(pool))
    for size in range(limit + 1):
        for combo in combinations(pool, size):
            report = check(swig, a, y, s, frozenset(combo), context)
            if report.holds:
                return frozenset(combo), report
    return None
