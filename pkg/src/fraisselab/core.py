"""Finite relational structures over a fixed signature.

Universes are initial segments {0, ..., n-1}.  A signature may single out
one binary symbol as a linear order; validation then enforces totality,
irreflexivity and transitivity for that symbol.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass


@dataclass(frozen=True)
class Signature:
    """Finite relational signature, optionally with a distinguished order symbol."""

    symbols: tuple[tuple[str, int], ...]
    order_symbol: str | None = None

    def __post_init__(self):
        names = [name for name, _ in self.symbols]
        if len(set(names)) != len(names):
            raise ValueError("duplicate symbol in signature")
        for name, arity in self.symbols:
            if arity < 1:
                raise ValueError("symbol %r has arity %d" % (name, arity))
        if self.order_symbol is not None:
            if dict(self.symbols).get(self.order_symbol) != 2:
                raise ValueError("order symbol must be a binary symbol of the signature")

    def arity(self, name: str) -> int:
        return dict(self.symbols)[name]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.symbols)


class FiniteStructure:
    """Immutable finite structure: a size and one tuple set per symbol."""

    __slots__ = ("signature", "size", "_rels", "_hash", "_order")

    def __init__(self, signature: Signature, size: int, relations=None):
        if size < 0:
            raise ValueError("negative size")
        relations = relations or {}
        rels = {}
        for name, arity in signature.symbols:
            tuples = frozenset(tuple(t) for t in relations.get(name, ()))
            for t in tuples:
                if len(t) != arity:
                    raise ValueError("tuple %r has wrong arity for %s" % (t, name))
                if any(not (0 <= x < size) for x in t):
                    raise ValueError("tuple %r out of universe" % (t,))
            rels[name] = tuples
        for name in relations:
            if name not in rels:
                raise ValueError("unknown symbol %r" % name)
        object.__setattr__(self, "signature", signature)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "_rels", rels)
        object.__setattr__(self, "_hash", None)
        object.__setattr__(self, "_order", None)

    @classmethod
    def unchecked(cls, signature: Signature, size: int, rels: dict):
        """Trusted constructor for internal rebuilds: `rels` must map every
        signature symbol to a frozenset of valid tuples."""
        self = cls.__new__(cls)
        object.__setattr__(self, "signature", signature)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "_rels", rels)
        object.__setattr__(self, "_hash", None)
        object.__setattr__(self, "_order", None)
        return self

    def __setattr__(self, *a):
        raise AttributeError("FiniteStructure is immutable")

    def rel(self, name: str) -> frozenset:
        return self._rels[name]

    def holds(self, name: str, tup) -> bool:
        return tuple(tup) in self._rels[name]

    @property
    def universe(self) -> range:
        return range(self.size)

    def __eq__(self, other):
        if not isinstance(other, FiniteStructure):
            return NotImplemented
        return (self.signature == other.signature and self.size == other.size
                and self._rels == other._rels)

    def __hash__(self):
        h = self._hash
        if h is None:
            h = hash((self.signature, self.size,
                      tuple(sorted((k, v) for k, v in self._rels.items()))))
            object.__setattr__(self, "_hash", h)
        return h

    def __repr__(self):
        rels = {k: sorted(v) for k, v in self._rels.items() if v}
        return "FiniteStructure(size=%d, %r)" % (self.size, rels)

    # -- order helpers ----------------------------------------------------

    def less(self, a: int, b: int) -> bool:
        sym = self.signature.order_symbol
        if sym is None:
            raise ValueError("signature has no order symbol")
        return (a, b) in self._rels[sym]

    def sorted_universe(self) -> list[int]:
        """Universe listed in increasing structure order (identity if unordered)."""
        if self._order is None:
            if self.signature.order_symbol is None:
                order = tuple(self.universe)
            else:
                below = {x: 0 for x in self.universe}
                for _, y in self._rels[self.signature.order_symbol]:
                    below[y] += 1
                order = tuple(sorted(self.universe, key=below.__getitem__))
            object.__setattr__(self, "_order", order)
        return list(self._order)

    # -- substructures and relabelling ------------------------------------

    def induced(self, points) -> "FiniteStructure":
        """Induced substructure on `points`, relabelled to 0..k-1 preserving numeric order."""
        pts = sorted(set(points))
        idx = {p: i for i, p in enumerate(pts)}
        rels = {}
        for name, _ in self.signature.symbols:
            rels[name] = [tuple(idx[x] for x in t) for t in self._rels[name]
                          if all(x in idx for x in t)]
        return FiniteStructure(self.signature, len(pts), rels)

    def relabel(self, perm) -> "FiniteStructure":
        """Image structure under the bijection x -> perm[x]."""
        rels = {name: [tuple(perm[x] for x in t) for t in self._rels[name]]
                for name, _ in self.signature.symbols}
        return FiniteStructure(self.signature, self.size, rels)

    # -- json wire format --------------------------------------------------

    def to_json(self) -> dict:
        return {
            "signature": [{"name": n, "arity": a} for n, a in self.signature.symbols],
            "order_symbol": self.signature.order_symbol,
            "size": self.size,
            "relations": {n: sorted(list(t) for t in self._rels[n])
                          for n, _ in self.signature.symbols},
        }

    @staticmethod
    def from_json(data: dict) -> "FiniteStructure":
        sig = Signature(tuple((s["name"], s["arity"]) for s in data["signature"]),
                        data.get("order_symbol"))
        return FiniteStructure(sig, data["size"], data.get("relations", {}))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=False)

    @staticmethod
    def loads(text: str) -> "FiniteStructure":
        return FiniteStructure.from_json(json.loads(text))


def validate_structure(A: FiniteStructure) -> list[str]:
    """Return a list of axiom violations (empty means valid).

    Only the order axioms are checked here; family-specific axioms live with
    the family definitions.
    """
    problems = []
    sym = A.signature.order_symbol
    if sym is not None:
        lt = A.rel(sym)
        for a in A.universe:
            if (a, a) in lt:
                problems.append("order not irreflexive at %d" % a)
        for a, b in itertools.combinations(A.universe, 2):
            if ((a, b) in lt) == ((b, a) in lt):
                problems.append("order not total/antisymmetric on (%d, %d)" % (a, b))
        out = {a: 0 for a in A.universe}
        for a, b in lt:
            if a in out:
                out[a] += 1
        # a tournament whose score sequence is 0..n-1 is transitive; only
        # fall back to the cubic scan for the messages
        if problems or sorted(out.values()) != list(range(A.size)):
            for (a, b) in lt:
                for c in A.universe:
                    if (b, c) in lt and (a, c) not in lt:
                        problems.append(
                            "order not transitive on (%d, %d, %d)" % (a, b, c))
    return problems


def linear_order_relation(order: list[int]) -> list[tuple[int, int]]:
    """Order tuples for the listing `order` (earlier = smaller)."""
    return [(order[i], order[j]) for i in range(len(order)) for j in range(i + 1, len(order))]


def is_embedding(A: FiniteStructure, B: FiniteStructure, phi) -> bool:
    """phi: map (dict or sequence) from A's universe into B's; checks strong preservation."""
    if A.signature != B.signature:
        return False
    try:
        img = [phi[x] for x in A.universe]
    except (KeyError, IndexError):
        return False
    if len(set(img)) != A.size or any(not (0 <= y < B.size) for y in img):
        return False
    for name, arity in A.signature.symbols:
        relA, relB = A.rel(name), B.rel(name)
        for t in itertools.product(A.universe, repeat=arity):
            if (t in relA) != (tuple(img[x] for x in t) in relB):
                return False
    return True


def enumerate_embeddings(A: FiniteStructure, B: FiniteStructure):
    """Yield all embeddings of A into B as tuples (phi[0], ..., phi[size-1]).

    Deterministic: lexicographic in the image tuple.
    """
    if A.signature != B.signature:
        return
    binary = [(name, A.rel(name), B.rel(name))
              for name, arity in A.signature.symbols if arity == 2]
    higher = [(name, arity) for name, arity in A.signature.symbols if arity != 2]

    def consistent(partial, x, y):
        for name, relA, relB in binary:
            for z, w in partial.items():
                if (((x, z) in relA) != ((y, w) in relB)
                        or ((z, x) in relA) != ((w, y) in relB)):
                    return False
            if ((x, x) in relA) != ((y, y) in relB):
                return False
        return True

    def full_check(img):
        for name, arity in higher:
            relA, relB = A.rel(name), B.rel(name)
            for t in itertools.product(A.universe, repeat=arity):
                if (t in relA) != (tuple(img[x] for x in t) in relB):
                    return False
        return True

    partial: dict[int, int] = {}
    used = set()

    def rec(x):
        if x == A.size:
            img = [partial[i] for i in range(A.size)]
            if full_check(img):
                yield tuple(img)
            return
        for y in range(B.size):
            if y in used:
                continue
            if consistent(partial, x, y):
                partial[x] = y
                used.add(y)
                yield from rec(x + 1)
                del partial[x]
                used.discard(y)

    yield from rec(0)


def count_embeddings(A: FiniteStructure, B: FiniteStructure) -> int:
    return sum(1 for _ in enumerate_embeddings(A, B))


def are_isomorphic(A: FiniteStructure, B: FiniteStructure) -> bool:
    if A.signature != B.signature or A.size != B.size:
        return False
    if any(len(A.rel(n)) != len(B.rel(n)) for n in A.signature.names):
        return False
    for phi in enumerate_embeddings(A, B):
        return True
    return False


def iso_class_representative(A: FiniteStructure) -> FiniteStructure:
    """Lexicographically least relabelling of A (canonical form for hashing)."""
    best = None
    for perm in itertools.permutations(range(A.size)):
        cand = A.relabel(list(perm))
        key = tuple(sorted((n, tuple(sorted(cand.rel(n)))) for n in A.signature.names))
        if best is None or key < best[0]:
            best = (key, cand)
    return best[1] if best else A


def qf_type(A: FiniteStructure, tup, base=()) -> tuple:
    """Hashable quantifier-free type token of `tup` over the pointwise-fixed set `base`.

    Two tuples get equal tokens iff the map fixing `base` and sending one tuple
    to the other componentwise preserves all relations (and equalities) both ways
    on base union tuple.
    """
    base = tuple(base)
    tup = tuple(tup)
    pts = sorted(set(base) | set(tup))
    roles = {}
    for x in pts:
        r = []
        if x in base:
            r.append(("b", x))
        for i, t in enumerate(tup):
            if t == x:
                r.append(("t", i))
        roles[x] = tuple(r)
    rel_part = []
    for name, arity in A.signature.symbols:
        rel = A.rel(name)
        entries = sorted(tuple(roles[x] for x in t)
                         for t in itertools.product(pts, repeat=arity) if t in rel)
        rel_part.append((name, tuple(entries)))
    return (tuple(sorted(roles.values())), tuple(rel_part))
