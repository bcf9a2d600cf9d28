"""Textual description language for graphs, samples, and queries.

The format is keyword-based and line-oriented but newline-insensitive::

    graph case_cohort {
      exposure A
      outcome Y
      selection S0 observes {}
      selection SAY observes { A, Y }
      edge A -> Y
      edge A -> S0
      subset SAY of S0
      missing A          # adds H_A and A_star missingness machinery
    }

    query causal_risk {
      estimand P[Y^{A=1}=1]
      in S0
    }

``#`` starts a comment. Guarded edges are written
``edge Y1 -> S2 when b = 1``, where ``b`` is the intervention identifier of
a declared exposure (``b`` for a single exposure, ``b<order>`` when several
exposures carry explicit ``order`` indices).

:func:`parse` returns either a validated spec or a list of diagnostics with
source positions; :func:`emit` produces the canonical form, and
``parse(emit(s))`` is structurally equal to ``s``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

from .exprs import Atom, Expect, Expr, Prob, Product, Quotient, Sum
from .graph import Edge, ExposureRole, Graph, GraphError, Node, NodeKind, Sample

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>\#[^\n]*)
  | (?P<arrow>->)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<int>\d+)
  | (?P<sym>[{}\[\]()|^=,*/+])
    """,
    re.VERBOSE,
)

_STMT_KEYWORDS = (
    "var",
    "exposure",
    "outcome",
    "latent",
    "selection",
    "edge",
    "subset",
    "missing",
)


@dataclass(frozen=True)
class Diagnostic:
    line: int
    col: int
    message: str

    def __str__(self) -> str:
        return f"{self.line}:{self.col}: {self.message}"


class ParseError(Exception):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(str(d) for d in diagnostics))


@dataclass(frozen=True)
class EdgeDecl:
    src: str
    dst: str
    guard: Optional[tuple[str, int]] = None  # surface form: intervention id


@dataclass(frozen=True)
class GraphSpec:
    name: str
    exposures: tuple[tuple[str, Optional[int]], ...] = ()
    outcome: Optional[str] = None
    variables: tuple[str, ...] = ()
    latents: tuple[str, ...] = ()
    selections: tuple[tuple[str, tuple[str, ...]], ...] = ()
    missing: tuple[str, ...] = ()
    edges: tuple[EdgeDecl, ...] = ()
    subsets: tuple[tuple[str, str], ...] = ()

    def declared_names(self) -> tuple[str, ...]:
        names = [n for n, _ in self.exposures]
        names += [self.outcome] if self.outcome else []
        names += list(self.variables) + list(self.latents)
        names += [n for n, _ in self.selections]
        return tuple(names)

    def generated_names(self) -> tuple[str, ...]:
        out = []
        for v in self.missing:
            out += [f"H_{v}", f"{v}_star"]
        return tuple(out)

    def intervention_ids(self) -> dict[str, str]:
        """Exposure name -> fixed-node identifier used by its split component."""
        if len(self.exposures) == 1:
            return {self.exposures[0][0]: "b"}
        return {name: f"b{order}" for name, order in self.exposures}


@dataclass(frozen=True)
class QuerySpec:
    name: str
    estimand: Expr
    scope: Optional[str] = None  # None = source population


@dataclass
class ParseResult:
    spec: Optional[GraphSpec]
    queries: tuple[QuerySpec, ...]
    diagnostics: list[Diagnostic]

    @property
    def ok(self) -> bool:
        return not self.diagnostics and self.spec is not None


@dataclass(frozen=True)
class _Token:
    kind: str  # ident | int | sym | arrow | eof
    text: str
    line: int
    col: int


def _tokenize(text: str) -> tuple[list[_Token], list[Diagnostic]]:
    tokens: list[_Token] = []
    diags: list[Diagnostic] = []
    line, col, pos = 1, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            diags.append(Diagnostic(line, col, f"unexpected character {text[pos]!r}"))
            return tokens, diags
        kind = m.lastgroup
        value = m.group()
        if kind not in ("ws", "comment"):
            tokens.append(_Token(kind, value, line, col))
        newlines = value.count("\n")
        if newlines:
            line += newlines
            col = len(value) - value.rfind("\n")
        else:
            col += len(value)
        pos = m.end()
    tokens.append(_Token("eof", "", line, col))
    return tokens, diags


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.i = 0
        self.diags: list[Diagnostic] = []

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def next(self) -> _Token:
        t = self.tokens[self.i]
        if t.kind != "eof":
            self.i += 1
        return t

    def error(self, tok: _Token, msg: str) -> None:
        self.diags.append(Diagnostic(tok.line, tok.col, msg))
        raise ParseError(self.diags)

    def expect_ident(self, what: str) -> _Token:
        t = self.next()
        if t.kind != "ident":
            self.error(t, f"expected {what}, found {t.text or 'end of input'!r}")
        return t

    def expect_sym(self, sym: str) -> _Token:
        t = self.next()
        if not (t.kind == "sym" and t.text == sym) and not (t.kind == "arrow" and sym == "->"):
            self.error(t, f"expected {sym!r}, found {t.text or 'end of input'!r}")
        return t

    def expect_int(self) -> int:
        t = self.next()
        if t.kind != "int":
            self.error(t, f"expected integer, found {t.text or 'end of input'!r}")
        return int(t.text)

    def at_keyword(self, *words: str) -> bool:
        t = self.peek()
        return t.kind == "ident" and t.text in words

    # -- expressions ----------------------------------------------------

    def parse_expr(self) -> Expr:
        return self._sum()

    def _sum(self) -> Expr:
        terms = [self._product()]
        while self.peek().kind == "sym" and self.peek().text == "+":
            self.next()
            terms.append(self._product())
        if len(terms) == 1:
            return terms[0]
        return Sum(tuple(terms))

    def _product(self) -> Expr:
        acc = self._unit()
        while self.peek().kind == "sym" and self.peek().text in ("*", "/"):
            op = self.next().text
            rhs = self._unit()
            if op == "*":
                if isinstance(acc, Product):
                    acc = Product(acc.factors + (rhs,))
                else:
                    acc = Product((acc, rhs))
            else:
                acc = Quotient(acc, rhs)
        return acc

    def _unit(self) -> Expr:
        t = self.peek()
        if t.kind == "sym" and t.text == "(":
            self.next()
            e = self.parse_expr()
            self.expect_sym(")")
            return e
        if t.kind == "ident" and t.text in ("P", "E"):
            return self._term()
        self.error(t, f"expected P[...], E[...] or '(', found {t.text or 'end of input'!r}")
        raise AssertionError

    def _term(self) -> Expr:
        head = self.next()
        self.expect_sym("[")
        targets = [self._atom()]
        while self.peek().kind == "sym" and self.peek().text == ",":
            self.next()
            targets.append(self._atom())
        given: list[Atom] = []
        if self.peek().kind == "sym" and self.peek().text == "|":
            self.next()
            given.append(self._atom())
            while self.peek().kind == "sym" and self.peek().text == ",":
                self.next()
                given.append(self._atom())
        close = self.expect_sym("]")
        if head.text == "E":
            if len(targets) != 1:
                self.error(close, "E[...] takes a single target")
            if targets[0].value is not None:
                self.error(close, "the target of E[...] must not carry a value")
            return Expect(targets[0], tuple(given))
        for a in targets:
            if a.value is None:
                # Distribution-level targets are allowed (recoverability);
                # valued ones are required by identification queries and are
                # validated later against their use.
                pass
        return Prob(tuple(targets), tuple(given))

    def _atom(self) -> Atom:
        name = self.expect_ident("a variable name")
        label: set[tuple[str, int]] = set()
        if self.peek().kind == "sym" and self.peek().text == "^":
            self.next()
            self.expect_sym("{")
            while True:
                fid = self.expect_ident("an intervention identifier")
                self.expect_sym("=")
                val = self.expect_int()
                label.add((fid.text, val))
                if self.peek().kind == "sym" and self.peek().text == ",":
                    self.next()
                    continue
                break
            self.expect_sym("}")
        value: Optional[int] = None
        if self.peek().kind == "sym" and self.peek().text == "=":
            self.next()
            value = self.expect_int()
        return Atom(name.text, frozenset(label), value)

    # -- statements -----------------------------------------------------

    def parse_spec(self) -> tuple[GraphSpec, tuple[QuerySpec, ...], dict]:
        positions: dict = {}
        t = self.next()
        if not (t.kind == "ident" and t.text == "graph"):
            self.error(t, "expected 'graph'")
        name = self.expect_ident("a graph name")
        self.expect_sym("{")
        exposures: list[tuple[str, Optional[int]]] = []
        outcome: Optional[str] = None
        variables: list[str] = []
        latents: list[str] = []
        selections: list[tuple[str, tuple[str, ...]]] = []
        missing: list[str] = []
        edges: list[EdgeDecl] = []
        subsets: list[tuple[str, str]] = []
        while True:
            t = self.peek()
            if t.kind == "sym" and t.text == "}":
                self.next()
                break
            if t.kind == "eof":
                self.error(t, "unterminated graph block: expected '}'")
            if t.kind != "ident" or t.text not in _STMT_KEYWORDS:
                self.error(t, f"expected a statement keyword, found {t.text or 'end of input'!r}")
            kw = self.next().text
            if kw in ("var", "exposure", "outcome", "latent"):
                ident = self.expect_ident("a variable name")
                order: Optional[int] = None
                if self.at_keyword("order"):
                    order_tok = self.next()
                    order = self.expect_int()
                    if kw != "exposure":
                        self.error(order_tok, "'order' is only valid on exposures")
                positions.setdefault(ident.text, (ident.line, ident.col))
                if kw == "var":
                    variables.append(ident.text)
                elif kw == "latent":
                    latents.append(ident.text)
                elif kw == "exposure":
                    exposures.append((ident.text, order))
                else:
                    if outcome is not None:
                        self.error(ident, f"duplicate outcome declaration {ident.text!r}")
                    outcome = ident.text
            elif kw == "selection":
                ident = self.expect_ident("a selection name")
                positions.setdefault(ident.text, (ident.line, ident.col))
                obs_kw = self.expect_ident("'observes'")
                if obs_kw.text != "observes":
                    self.error(obs_kw, f"expected 'observes', found {obs_kw.text!r}")
                self.expect_sym("{")
                observed: list[str] = []
                while not (self.peek().kind == "sym" and self.peek().text == "}"):
                    if self.peek().kind == "sym" and self.peek().text == ",":
                        self.next()
                        continue
                    ob = self.expect_ident("an observed variable name")
                    positions.setdefault(("observes", ident.text, ob.text), (ob.line, ob.col))
                    observed.append(ob.text)
                self.expect_sym("}")
                selections.append((ident.text, tuple(sorted(observed))))
            elif kw == "edge":
                src = self.expect_ident("an edge source")
                self.expect_sym("->")
                dst = self.expect_ident("an edge target")
                guard = None
                if self.at_keyword("when"):
                    self.next()
                    gid = self.expect_ident("a guard identifier")
                    self.expect_sym("=")
                    gval = self.expect_int()
                    guard = (gid.text, gval)
                    positions.setdefault(("guard", src.text, dst.text), (gid.line, gid.col))
                decl = EdgeDecl(src.text, dst.text, guard)
                positions.setdefault(("edge", src.text, dst.text), (src.line, src.col))
                edges.append(decl)
            elif kw == "subset":
                sub = self.expect_ident("a sample name")
                of_kw = self.expect_ident("'of'")
                if of_kw.text != "of":
                    self.error(of_kw, f"expected 'of', found {of_kw.text!r}")
                sup = self.expect_ident("a sample name")
                positions.setdefault(("subset", sub.text, sup.text), (sub.line, sub.col))
                subsets.append((sub.text, sup.text))
            elif kw == "missing":
                ident = self.expect_ident("a variable name")
                positions.setdefault(("missing", ident.text), (ident.line, ident.col))
                missing.append(ident.text)
        queries: list[QuerySpec] = []
        while self.at_keyword("query"):
            self.next()
            qname = self.expect_ident("a query name")
            self.expect_sym("{")
            est_kw = self.expect_ident("'estimand'")
            if est_kw.text != "estimand":
                self.error(est_kw, f"expected 'estimand', found {est_kw.text!r}")
            estimand = self.parse_expr()
            scope = None
            if self.at_keyword("in"):
                self.next()
                scope_tok = self.expect_ident("a sample name")
                scope = scope_tok.text
                positions.setdefault(("scope", qname.text), (scope_tok.line, scope_tok.col))
            self.expect_sym("}")
            positions.setdefault(("query", qname.text), (qname.line, qname.col))
            queries.append(QuerySpec(qname.text, estimand, scope))
        t = self.peek()
        if t.kind != "eof":
            self.error(t, f"unexpected trailing input {t.text!r}")
        spec = GraphSpec(
            name=name.text,
            exposures=tuple(sorted(exposures, key=lambda p: (p[1] if p[1] is not None else 0, p[0]))),
            outcome=outcome,
            variables=tuple(sorted(variables)),
            latents=tuple(sorted(latents)),
            selections=tuple(sorted(selections)),
            missing=tuple(sorted(missing)),
            edges=tuple(sorted(edges, key=lambda e: (e.src, e.dst, e.guard or ("", -1)))),
            subsets=tuple(sorted(subsets)),
        )
        return spec, tuple(sorted(queries, key=lambda q: q.name)), positions


def _pos(positions: dict, key, default=(1, 1)) -> tuple[int, int]:
    return positions.get(key, default)


def _validate(
    spec: GraphSpec, queries: tuple[QuerySpec, ...], positions: dict
) -> list[Diagnostic]:
    diags: list[Diagnostic] = []

    def add(key, msg: str) -> None:
        line, col = _pos(positions, key)
        diags.append(Diagnostic(line, col, msg))

    declared = spec.declared_names()
    seen: set[str] = set()
    for n in declared:
        if n in seen:
            add(n, f"duplicate declaration of {n!r}")
        seen.add(n)
    generated = spec.generated_names()
    for g in generated:
        if g in seen:
            add(g, f"declared name {g!r} collides with generated missingness node")
        seen.add(g)
    known = set(declared) | set(generated)

    selection_names = {n for n, _ in spec.selections}
    base_vars = set(declared) - selection_names
    if len(spec.exposures) > 1:
        orders = [o for _, o in spec.exposures]
        if any(o is None for o in orders):
            add(spec.exposures[0][0], "multiple exposures require explicit 'order' indices")
        elif len(set(orders)) != len(orders):
            add(spec.exposures[0][0], "exposure 'order' indices must be distinct")
    iv_ids = spec.intervention_ids() if (
        len(spec.exposures) <= 1 or all(o is not None for _, o in spec.exposures)
    ) else {}
    for fid in iv_ids.values():
        if fid in known:
            add(fid, f"intervention identifier {fid!r} collides with a declared node")

    for v in spec.missing:
        if v not in base_vars:
            add(("missing", v), f"missing declaration for unknown variable {v!r}")
        elif v in selection_names:
            add(("missing", v), f"selection indicator {v!r} cannot be declared missing")

    for sel, observed in spec.selections:
        for ob in observed:
            if ob not in known:
                add(("observes", sel, ob), f"observed variable {ob!r} is not declared")
            elif ob in selection_names:
                add(("observes", sel, ob), f"observes-list of {sel!r} may not contain selection node {ob!r}")
            elif ob in spec.latents:
                add(("observes", sel, ob), f"latent variable {ob!r} cannot be observed in a sample")

    edge_pairs: set[tuple[str, str]] = set()
    guard_targets: dict[tuple[str, str], tuple[str, int]] = {}
    for e in spec.edges:
        key = ("edge", e.src, e.dst)
        if e.src not in known:
            add(key, f"edge source {e.src!r} is not declared")
            continue
        if e.dst not in known:
            add(key, f"edge target {e.dst!r} is not declared")
            continue
        if e.src == e.dst:
            add(key, f"self-loop on {e.src!r}")
        if (e.src, e.dst) in edge_pairs:
            add(key, f"duplicate edge {e.src!r} -> {e.dst!r}")
        edge_pairs.add((e.src, e.dst))
        if e.guard is not None:
            gid, _ = e.guard
            holders = {fid: name for name, fid in iv_ids.items()}
            if gid not in holders:
                add(("guard", e.src, e.dst), f"guard {gid!r} does not name an exposure's intervention identifier")
            else:
                guard_targets[(e.src, e.dst)] = (holders[gid], e.guard[1])

    # The guard's exposure must also be an unguarded direct parent of the
    # guarded edge's target; the structural model keys the context-specific
    # constancy on that parent's value.
    for (src, dst), (holder, _val) in guard_targets.items():
        if not any(e.src == holder and e.dst == dst and e.guard is None for e in spec.edges):
            add(("guard", src, dst), f"guarded edge requires an unguarded edge {holder!r} -> {dst!r}")

    sample_set = {n for n, _ in spec.selections}
    for sub, sup in spec.subsets:
        key = ("subset", sub, sup)
        if sub not in sample_set:
            add(key, f"subset declares unknown sample {sub!r}")
            continue
        if sup not in sample_set:
            add(key, f"subset declares unknown sample {sup!r}")
            continue
        if (sup, sub) not in edge_pairs:
            add(key, f"subset {sub!r} of {sup!r} requires an edge {sup!r} -> {sub!r}")

    # Cycle check over the union of edges (sufficient for every guard context).
    if not diags:
        indeg = {n: 0 for n in known}
        children: dict[str, list[str]] = {n: [] for n in known}
        for a, b in edge_pairs:
            indeg[b] += 1
            children[a].append(b)
        queue = [n for n, d in indeg.items() if d == 0]
        count = 0
        while queue:
            v = queue.pop()
            count += 1
            for w in children[v]:
                indeg[w] -= 1
                if indeg[w] == 0:
                    queue.append(w)
        if count != len(known):
            stuck = sorted(n for n, d in indeg.items() if d > 0)
            on_cycle = [e for e in spec.edges if e.src in stuck and e.dst in stuck]
            key = ("edge", on_cycle[0].src, on_cycle[0].dst) if on_cycle else spec.name
            add(key, "edges form a cycle through " + ", ".join(stuck))

    # Subset relation cycles.
    if spec.subsets and not diags:
        sups: dict[str, list[str]] = {}
        for sub, sup in spec.subsets:
            sups.setdefault(sub, []).append(sup)
        state: dict[str, int] = {}

        def walk(v: str) -> bool:
            state[v] = 1
            for w in sups.get(v, ()):
                if state.get(w) == 1 or (state.get(w) is None and walk(w)):
                    return True
            state[v] = 2
            return False

        for s in sorted(sample_set):
            if state.get(s) is None and walk(s):
                add(("subset", spec.subsets[0][0], spec.subsets[0][1]), "subset relations form a cycle")
                break

    # Query validation.
    valid_fids = set(iv_ids.values()) | {name for name, _ in spec.exposures}
    qnames: set[str] = set()
    for q in queries:
        qkey = ("query", q.name)
        if q.name in qnames:
            add(qkey, f"duplicate query {q.name!r}")
        qnames.add(q.name)
        if q.scope is not None and q.scope not in sample_set:
            add(("scope", q.name), f"query scope {q.scope!r} is not a declared selection")
        from .exprs import atoms_of

        for a in atoms_of(q.estimand):
            if a.var not in known:
                add(qkey, f"estimand references undeclared variable {a.var!r}")
            for fid, _v in a.label:
                if fid not in valid_fids:
                    add(qkey, f"estimand label {fid!r} names no exposure or intervention identifier")
    return diags


def parse(text: str) -> ParseResult:
    tokens, diags = _tokenize(text)
    if diags:
        return ParseResult(None, (), diags)
    parser = _Parser(tokens)
    try:
        spec, queries, positions = parser.parse_spec()
    except ParseError as err:
        return ParseResult(None, (), err.diagnostics)
    diags = _validate(spec, queries, positions)
    if diags:
        return ParseResult(None, (), diags)
    return ParseResult(spec, queries, [])


def parse_strict(text: str) -> tuple[GraphSpec, tuple[QuerySpec, ...]]:
    result = parse(text)
    if not result.ok:
        raise ParseError(result.diagnostics)
    assert result.spec is not None
    return result.spec, result.queries


def parse_expr(text: str) -> Expr:
    tokens, diags = _tokenize(text)
    if diags:
        raise ParseError(diags)
    parser = _Parser(tokens)
    try:
        e = parser.parse_expr()
        t = parser.peek()
        if t.kind != "eof":
            parser.error(t, f"unexpected trailing input {t.text!r}")
    except ParseError as err:
        raise err
    return e


def emit(spec: GraphSpec, queries: tuple[QuerySpec, ...] = ()) -> str:
    """Canonical text form; ``parse(emit(s))`` is structurally equal to ``s``."""
    stmts: list[str] = []
    for name, order in spec.exposures:
        stmts.append(f"exposure {name}" + (f" order {order}" if order is not None else ""))
    if spec.outcome:
        stmts.append(f"outcome {spec.outcome}")
    for v in spec.variables:
        stmts.append(f"var {v}")
    for v in spec.latents:
        stmts.append(f"latent {v}")
    for sel, observed in spec.selections:
        inner = (" " + ", ".join(observed) + " ") if observed else ""
        stmts.append(f"selection {sel} observes {{{inner}}}")
    for v in spec.missing:
        stmts.append(f"missing {v}")
    for e in spec.edges:
        line = f"edge {e.src} -> {e.dst}"
        if e.guard is not None:
            line += f" when {e.guard[0]} = {e.guard[1]}"
        stmts.append(line)
    for sub, sup in spec.subsets:
        stmts.append(f"subset {sub} of {sup}")
    if stmts:
        body = "\n".join("  " + s for s in stmts)
        out = f"graph {spec.name} {{\n{body}\n}}\n"
    else:
        out = f"graph {spec.name} {{ }}\n"
    for q in sorted(queries, key=lambda q: q.name):
        out += f"\nquery {q.name} {{\n  estimand {q.estimand.render()}\n"
        if q.scope is not None:
            out += f"  in {q.scope}\n"
        out += "}\n"
    return out


def to_graph(spec: GraphSpec) -> Graph:
    """Materialize a validated spec as a Graph (missingness machinery included)."""
    iv_ids = spec.intervention_ids()
    nodes: list[Node] = []
    for name, _order in spec.exposures:
        nodes.append(Node(name, NodeKind.RANDOM))
    if spec.outcome:
        nodes.append(Node(spec.outcome, NodeKind.RANDOM))
    for v in spec.variables:
        nodes.append(Node(v, NodeKind.RANDOM))
    for v in spec.latents:
        nodes.append(Node(v, NodeKind.LATENT))
    for sel, _obs in spec.selections:
        nodes.append(Node(sel, NodeKind.SELECTION))
    for v in spec.missing:
        nodes.append(Node(f"H_{v}", NodeKind.INDICATOR))
        nodes.append(Node(f"{v}_star", NodeKind.PROXY))
    edges: list[Edge] = []
    holders = {fid: name for name, fid in iv_ids.items()}
    for e in spec.edges:
        guard = None
        if e.guard is not None:
            guard = (holders[e.guard[0]], e.guard[1])
        edges.append(Edge(e.src, e.dst, guard))
    for v in spec.missing:
        edges.append(Edge(v, f"{v}_star"))
        edges.append(Edge(f"H_{v}", f"{v}_star"))
    samples = [Sample(sel, frozenset(obs)) for sel, obs in spec.selections]
    exposures = [
        ExposureRole(name, iv_ids[name], order if order is not None else 0)
        for name, order in spec.exposures
    ]
    return Graph(
        nodes=nodes,
        edges=edges,
        samples=samples,
        subsets=spec.subsets,
        exposures=exposures,
        outcome=spec.outcome,
        name=spec.name,
    )


def load(text: str) -> tuple[Graph, tuple[QuerySpec, ...]]:
    spec, queries = parse_strict(text)
    return to_graph(spec), queries
