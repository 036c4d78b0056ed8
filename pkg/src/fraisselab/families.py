"""Built-in amalgamation classes: membership tests and one-point extensions.

Every family exposes `is_member` and a deterministic `one_point_extensions`
stream (the new element is always labelled A.size).  Search code elsewhere
relies on that determinism: the first witness found is the first in the
documented enumeration order, independent of parallelism.
"""

from __future__ import annotations

import itertools

from . import boron as boron_mod
from .core import FiniteStructure, Signature, validate_structure, iso_class_representative

LO_SIG = Signature((("<", 2),), order_symbol="<")
GRAPH_SIG = Signature((("E", 2),))
ORDERED_GRAPH_SIG = Signature((("E", 2), ("<", 2)), order_symbol="<")
TOURNAMENT_SIG = Signature((("E", 2),))
ORDERED_TOURNAMENT_SIG = Signature((("E", 2), ("<", 2)), order_symbol="<")
POSET_SIG = Signature((("prec", 2),))
ORDERED_POSET_SIG = Signature((("prec", 2), ("<", 2)), order_symbol="<")


def _subsets(elems):
    """All subsets, smallest first, lexicographic within a size."""
    elems = sorted(elems)
    for r in range(len(elems) + 1):
        yield from itertools.combinations(elems, r)


class StructureFamily:
    """Base class; subclasses fill in the hereditary class specifics."""

    name: str
    signature: Signature
    has_sap = False
    has_free_amalgamation = False
    reduct_of: str | None = None        # name of the order reduct, if any
    full_order_expansion = False        # reduct members admit every order

    def empty(self) -> FiniteStructure:
        return FiniteStructure(self.signature, 0, {})

    def is_member(self, A: FiniteStructure) -> bool:
        raise NotImplementedError

    def one_point_extensions(self, A: FiniteStructure):
        raise NotImplementedError

    def _order_ok(self, A: FiniteStructure) -> bool:
        return A.signature == self.signature and not validate_structure(A)

    def _cross_relations(self, A, B):
        """Canonical cross tuples for the block join, or None if undefined."""
        return None

    def disjoint_join(self, A: FiniteStructure, B: FiniteStructure):
        """Canonical member on A followed by B (shifted by |A|), or None.

        Used as the fast joint-embedding path; the caller re-verifies.
        """
        cross = self._cross_relations(A, B)
        if cross is None:
            return None
        shift = A.size
        rels = {}
        for name, _ in self.signature.symbols:
            rels[name] = list(A.rel(name)) \
                + [tuple(x + shift for x in t) for t in B.rel(name)] \
                + list(cross.get(name, ()))
        J = FiniteStructure(self.signature, A.size + B.size, rels)
        return J if self.is_member(J) else None

    def __repr__(self):
        return "<family %s>" % self.name


def _irreflexive_symmetric(rel) -> bool:
    return all(x != y and (y, x) in rel for x, y in rel)


def _extend_with(A, new_rels):
    """A plus one point; new_rels maps symbol -> extra tuples."""
    rels = {name: list(A.rel(name)) + list(new_rels.get(name, ()))
            for name, _ in A.signature.symbols}
    return FiniteStructure(A.signature, A.size + 1, rels)


def _order_tuples(A, below):
    """Order tuples placing the new point above exactly `below`."""
    n = A.size
    below = set(below)
    return [(x, n) for x in below] + [(n, y) for y in A.universe if y not in below]


class LinearOrders(StructureFamily):
    name = "lo"
    signature = LO_SIG
    has_sap = True
    full_order_expansion = True

    def _cross_relations(self, A, B):
        s = A.size
        return {"<": [(a, b + s) for a in A.universe for b in B.universe]}

    def is_member(self, A):
        return self._order_ok(A)

    def one_point_extensions(self, A):
        order = A.sorted_universe()
        for k in range(A.size + 1):
            yield _extend_with(A, {"<": _order_tuples(A, order[:k])})


class Graphs(StructureFamily):
    name = "graph"
    signature = GRAPH_SIG
    has_sap = True
    has_free_amalgamation = True

    def _cross_relations(self, A, B):
        return {}

    def is_member(self, A):
        return A.signature == self.signature and _irreflexive_symmetric(A.rel("E"))

    def one_point_extensions(self, A):
        n = A.size
        for nbrs in _subsets(A.universe):
            edges = [(x, n) for x in nbrs] + [(n, x) for x in nbrs]
            yield _extend_with(A, {"E": edges})


class KFreeGraphs(Graphs):
    """Graphs with no clique on `k` vertices."""

    has_sap = True
    has_free_amalgamation = True

    def __init__(self, k: int):
        if k < 3:
            raise ValueError("clique bound must be at least 3")
        self.k = k
        self.name = "kfree:%d" % k

    def _clique_free(self, A):
        E = A.rel("E")
        for c in itertools.combinations(A.universe, self.k):
            if all((x, y) in E for x, y in itertools.combinations(c, 2)):
                return False
        return True

    def is_member(self, A):
        return super().is_member(A) and self._clique_free(A)

    def one_point_extensions(self, A):
        n = A.size
        E = A.rel("E")
        for nbrs in _subsets(A.universe):
            # a new clique must use the new point, so check its neighbourhood
            bad = any(all((x, y) in E for x, y in itertools.combinations(c, 2))
                      for c in itertools.combinations(nbrs, self.k - 1))
            if not bad:
                edges = [(x, n) for x in nbrs] + [(n, x) for x in nbrs]
                yield _extend_with(A, {"E": edges})


class Tournaments(StructureFamily):
    name = "tournament"
    signature = TOURNAMENT_SIG
    has_sap = True

    def _cross_relations(self, A, B):
        s = A.size
        return {"E": [(a, b + s) for a in A.universe for b in B.universe]}

    def is_member(self, A):
        if A.signature != self.signature:
            return False
        E = A.rel("E")
        return all(((x, y) in E) != ((y, x) in E)
                   for x in A.universe for y in A.universe if x < y) \
            and all(x != y for x, y in E)

    def one_point_extensions(self, A):
        n = A.size
        for outs in _subsets(A.universe):
            outs = set(outs)
            arrows = [(n, x) for x in sorted(outs)] + \
                     [(x, n) for x in A.universe if x not in outs]
            yield _extend_with(A, {"E": arrows})


class Posets(StructureFamily):
    name = "poset"
    signature = POSET_SIG
    has_sap = True

    def _cross_relations(self, A, B):
        return {}

    def is_member(self, A):
        if A.signature != self.signature:
            return False
        P = A.rel("prec")
        if any(x == y or (y, x) in P for x, y in P):
            return False
        succ = {}
        for x, y in P:
            succ.setdefault(x, set()).add(y)
        empty = set()
        return all(succ.get(y, empty) <= succ[x] for x, y in P)

    def _down_up_pairs(self, A):
        P = A.rel("prec")
        down_closed = [D for D in _subsets(A.universe)
                       if all(x in D for d in D for x, d2 in P if d2 == d)]
        up_closed = [U for U in _subsets(A.universe)
                     if all(y in U for u in U for u2, y in P if u2 == u)]
        for D in down_closed:
            for U in up_closed:
                if set(D) & set(U):
                    continue
                # transitivity through the new point
                if all((d, u) in P for d in D for u in U):
                    yield D, U

    def one_point_extensions(self, A):
        n = A.size
        for D, U in self._down_up_pairs(A):
            new = [(d, n) for d in D] + [(n, u) for u in U]
            yield _extend_with(A, {"prec": new})


class _OrderedVariant(StructureFamily):
    """Shared glue for the order expansions of a relational base family."""

    base: StructureFamily

    def is_member(self, A):
        if not self._order_ok(A):
            return False
        return self.base.is_member(self._reduct(A)) and self._compatible(A)

    def _reduct(self, A):
        rels = {name: A.rel(name) for name, _ in self.base.signature.symbols}
        return FiniteStructure.unchecked(self.base.signature, A.size, rels)

    def _compatible(self, A) -> bool:
        return True

    def _cross_relations(self, A, B):
        s = A.size
        cross = dict(self.base._cross_relations(self._reduct(A), self._reduct(B)))
        cross["<"] = [(a, b + s) for a in A.universe for b in B.universe]
        return cross

    def one_point_extensions(self, A):
        order = A.sorted_universe()
        red = self._reduct(A)
        for k in range(A.size + 1):
            lt = _order_tuples(A, order[:k])
            for ext in self.base.one_point_extensions(red):
                rels = {name: ext.rel(name) for name, _ in self.base.signature.symbols}
                rels["<"] = list(A.rel("<")) + lt
                cand = FiniteStructure(self.signature, A.size + 1, rels)
                if self._compatible(cand):
                    yield cand


class OrderedGraphs(_OrderedVariant):
    name = "ordered-graph"
    signature = ORDERED_GRAPH_SIG
    has_sap = True
    reduct_of = "graph"
    full_order_expansion = True
    base = Graphs()


class OrderedKFreeGraphs(_OrderedVariant):
    signature = ORDERED_GRAPH_SIG
    has_sap = True
    full_order_expansion = True

    def __init__(self, k: int):
        self.base = KFreeGraphs(k)
        self.k = k
        self.name = "ordered-kfree:%d" % k
        self.reduct_of = self.base.name


class OrderedTournaments(_OrderedVariant):
    name = "ordered-tournament"
    signature = ORDERED_TOURNAMENT_SIG
    has_sap = True
    reduct_of = "tournament"
    full_order_expansion = True
    base = Tournaments()


class OrderedPosets(_OrderedVariant):
    name = "ordered-poset"
    signature = ORDERED_POSET_SIG
    has_sap = True
    reduct_of = "poset"
    base = Posets()

    def _compatible(self, A):
        # the linear order must extend the partial order
        lt = A.rel("<")
        return all(t in lt for t in A.rel("prec"))


def _boron_join(A, B, ordered):
    """Trees joined under a new root: A's realization left, B's right."""
    get = boron_mod.tree_from_structure if ordered \
        else boron_mod.unordered_tree_from_structure
    if A.size == 0 or B.size == 0:
        big = B if A.size == 0 else A
        if big.size > 0 and get(big) is None:
            return None
        return big  # join with the empty structure is the structure itself
    ra, rb = get(A), get(B)
    if ra is None or rb is None:
        return None
    shift = A.size
    tree = (ra.tree, boron_mod.relabel_tree(rb.tree, {x: x + shift
                                                      for x in B.universe}))
    return boron_mod.BoronRealization(tree).to_structure(ordered=ordered)


class BoronTrees(StructureFamily):
    """Leaf sets of binary trees carrying the arc-disjointness quartet relation."""

    name = "boron"
    signature = boron_mod.BORON_SIG

    def is_member(self, A):
        if A.signature != self.signature:
            return False
        if A.size == 0:
            return True
        return boron_mod.unordered_tree_from_structure(A) is not None

    def disjoint_join(self, A, B):
        return _boron_join(A, B, ordered=False)

    def one_point_extensions(self, A):
        if A.size == 0:
            yield FiniteStructure(self.signature, 1, {"R": []})
            return
        real = boron_mod.unordered_tree_from_structure(A)
        if real is None:
            raise ValueError("not a tree leaf structure")
        seen = set()
        for tree in boron_mod.leaf_attachments(real.tree):
            ext = boron_mod.BoronRealization(tree).to_structure(ordered=False)
            if ext not in seen:
                seen.add(ext)
                yield ext


class OrderedBoronTrees(StructureFamily):
    name = "ordered-boron"
    signature = boron_mod.ORDERED_BORON_SIG
    reduct_of = "boron"

    def is_member(self, A):
        if A.signature != self.signature:
            return False
        if A.size == 0:
            return True
        return boron_mod.tree_from_structure(A) is not None

    def disjoint_join(self, A, B):
        return _boron_join(A, B, ordered=True)

    def one_point_extensions(self, A):
        if A.size == 0:
            yield FiniteStructure(self.signature, 1, {"R": [], "S": [], "<": []})
            return
        real = boron_mod.tree_from_structure(A)
        if real is None:
            raise ValueError("not an ordered tree leaf structure")
        seen = set()
        for tree in boron_mod.leaf_attachments(real.tree):
            ext = boron_mod.BoronRealization(tree).to_structure(ordered=True)
            if ext not in seen:
                seen.add(ext)
                yield ext


def _builtin_families():
    fams = [LinearOrders(), Graphs(), OrderedGraphs(), Tournaments(),
            OrderedTournaments(), Posets(), OrderedPosets(),
            BoronTrees(), OrderedBoronTrees()]
    return {f.name: f for f in fams}


_FAMILIES = _builtin_families()

FAMILY_NAMES = list(_FAMILIES) + ["kfree:<n>", "ordered-kfree:<n>"]


def get_family(name: str) -> StructureFamily:
    if name in _FAMILIES:
        return _FAMILIES[name]
    for prefix, cls in (("kfree:", KFreeGraphs), ("ordered-kfree:", OrderedKFreeGraphs)):
        if name.startswith(prefix):
            try:
                k = int(name[len(prefix):])
            except ValueError:
                raise KeyError("bad clique bound in %r" % name) from None
            return cls(k)
    raise KeyError("unknown family %r" % name)


def enumerate_members(fam: StructureFamily, max_size: int, up_to_iso: bool = True):
    """All members with at most max_size elements, by size then stream order."""
    level = [fam.empty()]
    yield level[0]
    for _ in range(max_size):
        nxt = []
        seen = set()
        for A in level:
            for B in fam.one_point_extensions(A):
                key = iso_class_representative(B) if up_to_iso else B
                if key not in seen:
                    seen.add(key)
                    nxt.append(B)
        yield from nxt
        level = nxt
