"""Probability-expression AST over possibly counterfactual variables.

An :class:`Atom` is a variable reference such as ``Y^{b=1}=1``: a variable
name, a counterfactual label (a set of ``fixed-node = value`` pairs, empty
for factual variables), and an optional value. Distribution-level
expressions (used by recoverability) leave values unset.

Sums over a finite variable are represented expanded, one addend per domain
value, so every expression is first-order: no bound value symbols. The
canonical :func:`normalize` form (sorted atoms, flattened sorted products
and sums) is what structural equality and search deduplication operate on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

Label = frozenset[tuple[str, int]]

EMPTY_LABEL: Label = frozenset()


def label_key(label: Label) -> tuple[tuple[str, int], ...]:
    return tuple(sorted(label))


@dataclass(frozen=True)
class Atom:
    """A (variable, counterfactual label, value) reference."""

    var: str
    label: Label = EMPTY_LABEL
    value: Optional[int] = None

    def sort_key(self) -> tuple:
        return (self.var, label_key(self.label), -1 if self.value is None else self.value)

    def with_label(self, label: Label) -> "Atom":
        return Atom(self.var, frozenset(label), self.value)

    def render(self) -> str:
        s = self.var
        if self.label:
            inner = ",".join(f"{f}={v}" for f, v in label_key(self.label))
            s += "^{" + inner + "}"
        if self.value is not None:
            s += f"={self.value}"
        return s


@dataclass(frozen=True)
class Prob:
    """P[targets | given]."""

    targets: tuple[Atom, ...]
    given: tuple[Atom, ...] = ()

    def render(self) -> str:
        t = ", ".join(a.render() for a in self.targets)
        if self.given:
            return f"P[{t} | {', '.join(a.render() for a in self.given)}]"
        return f"P[{t}]"


@dataclass(frozen=True)
class Expect:
    """E[target | given]; the target atom carries no value."""

    target: Atom
    given: tuple[Atom, ...] = ()

    def render(self) -> str:
        if self.given:
            return f"E[{self.target.render()} | {', '.join(a.render() for a in self.given)}]"
        return f"E[{self.target.render()}]"


@dataclass(frozen=True)
class Product:
    factors: tuple["Expr", ...]

    def render(self) -> str:
        return " * ".join(_render_child(f) for f in self.factors)


@dataclass(frozen=True)
class Sum:
    terms: tuple["Expr", ...]

    def render(self) -> str:
        return " + ".join(_render_child(t, in_sum=True) for t in self.terms)


@dataclass(frozen=True)
class Quotient:
    num: "Expr"
    den: "Expr"

    def render(self) -> str:
        return f"{_render_child(self.num)} / {_render_child(self.den)}"


Expr = Union[Prob, Expect, Product, Sum, Quotient]

Term = Union[Prob, Expect]


def _render_child(e: Expr, in_sum: bool = False) -> str:
    if isinstance(e, (Prob, Expect)):
        return e.render()
    if isinstance(e, Product) and in_sum:
        return e.render()
    return "(" + e.render() + ")"


def render(e: Expr) -> str:
    return e.render()


def normalize(e: Expr) -> Expr:
    """Canonical form: sorted atoms, flattened and sorted products/sums."""
    if isinstance(e, Prob):
        return Prob(
            tuple(sorted(e.targets, key=Atom.sort_key)),
            tuple(sorted(e.given, key=Atom.sort_key)),
        )
    if isinstance(e, Expect):
        return Expect(e.target, tuple(sorted(e.given, key=Atom.sort_key)))
    if isinstance(e, Product):
        factors: list[Expr] = []
        for f in e.factors:
            nf = normalize(f)
            if isinstance(nf, Product):
                factors.extend(nf.factors)
            else:
                factors.append(nf)
        if len(factors) == 1:
            return factors[0]
        return Product(tuple(sorted(factors, key=render)))
    if isinstance(e, Sum):
        terms: list[Expr] = []
        for t in e.terms:
            nt = normalize(t)
            if isinstance(nt, Sum):
                terms.extend(nt.terms)
            else:
                terms.append(nt)
        if len(terms) == 1:
            return terms[0]
        return Sum(tuple(sorted(terms, key=render)))
    if isinstance(e, Quotient):
        return Quotient(normalize(e.num), normalize(e.den))
    raise TypeError(f"not an expression: {e!r}")


def structurally_equal(a: Expr, b: Expr) -> bool:
    return render(normalize(a)) == render(normalize(b))


def leaves(e: Expr, path: tuple[int, ...] = ()) -> Iterator[tuple[tuple[int, ...], Term]]:
    """Yield (path, term) for every Prob/Expect leaf in left-to-right order."""
    if isinstance(e, (Prob, Expect)):
        yield path, e
    elif isinstance(e, Product):
        for i, f in enumerate(e.factors):
            yield from leaves(f, path + (i,))
    elif isinstance(e, Sum):
        for i, t in enumerate(e.terms):
            yield from leaves(t, path + (i,))
    elif isinstance(e, Quotient):
        yield from leaves(e.num, path + (0,))
        yield from leaves(e.den, path + (1,))
    else:
        raise TypeError(f"not an expression: {e!r}")


def subexpr_at(e: Expr, path: tuple[int, ...]) -> Expr:
    for i in path:
        if isinstance(e, Product):
            e = e.factors[i]
        elif isinstance(e, Sum):
            e = e.terms[i]
        elif isinstance(e, Quotient):
            e = e.num if i == 0 else e.den
        else:
            raise IndexError(f"path {path} escapes expression")
    return e


def replace_at(e: Expr, path: tuple[int, ...], new: Expr) -> Expr:
    if not path:
        return new
    i, rest = path[0], path[1:]
    if isinstance(e, Product):
        factors = list(e.factors)
        factors[i] = replace_at(factors[i], rest, new)
        return Product(tuple(factors))
    if isinstance(e, Sum):
        terms = list(e.terms)
        terms[i] = replace_at(terms[i], rest, new)
        return Sum(tuple(terms))
    if isinstance(e, Quotient):
        if i == 0:
            return Quotient(replace_at(e.num, rest, new), e.den)
        return Quotient(e.num, replace_at(e.den, rest, new))
    raise IndexError(f"path {path} escapes expression")


def term_atoms(t: Term) -> tuple[Atom, ...]:
    if isinstance(t, Prob):
        return t.targets + t.given
    return (t.target,) + t.given


def term_targets(t: Term) -> tuple[Atom, ...]:
    if isinstance(t, Prob):
        return t.targets
    return (t.target,)


def with_given(t: Term, given: tuple[Atom, ...]) -> Term:
    if isinstance(t, Prob):
        return Prob(t.targets, given)
    return Expect(t.target, given)


def map_atoms(t: Term, fn) -> Term:
    if isinstance(t, Prob):
        return Prob(tuple(fn(a) for a in t.targets), tuple(fn(a) for a in t.given))
    return Expect(fn(t.target), tuple(fn(a) for a in t.given))


def atoms_of(e: Expr) -> Iterator[Atom]:
    for _, term in leaves(e):
        yield from term_atoms(term)


def labels_of(e: Expr) -> Label:
    out: set[tuple[str, int]] = set()
    for a in atoms_of(e):
        out |= a.label
    return frozenset(out)
