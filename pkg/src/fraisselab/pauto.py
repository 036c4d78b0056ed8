"""Partial automorphisms of finite structures, orbits, tuple systems, and words.

A partial automorphism is a partial injection p of the universe such that the
induced map dom(p) -> rng(p) is an isomorphism of induced substructures.  A
point x with p(x) = x is a genuine fixed point and is distinct from a point on
which p is undefined.
"""

from __future__ import annotations

import itertools
import json
import re
from dataclasses import dataclass

from .core import FiniteStructure, is_embedding


class PartialAuto:
    """Immutable partial injection on {0, ..., n-1}, given as a pair map."""

    __slots__ = ("_fwd", "_bwd", "_hash")

    def __init__(self, pairs=()):
        fwd, bwd = {}, {}
        for x, y in dict(pairs).items() if isinstance(pairs, dict) else pairs:
            if x in fwd or y in bwd:
                raise ValueError("not a partial injection at pair (%d, %d)" % (x, y))
            fwd[x] = y
            bwd[y] = x
        object.__setattr__(self, "_fwd", fwd)
        object.__setattr__(self, "_bwd", bwd)
        object.__setattr__(self, "_hash", hash(frozenset(fwd.items())))

    def __setattr__(self, *a):
        raise AttributeError("PartialAuto is immutable")

    # -- basic maps --------------------------------------------------------

    def __call__(self, x: int):
        return self._fwd.get(x)

    def inverse_at(self, y: int):
        return self._bwd.get(y)

    def apply_power(self, x: int, n: int):
        """p^n(x), or None where undefined along the way."""
        for _ in range(abs(n)):
            x = self._fwd.get(x) if n > 0 else self._bwd.get(x)
            if x is None:
                return None
        return x

    @property
    def dom(self) -> frozenset:
        return frozenset(self._fwd)

    @property
    def rng(self) -> frozenset:
        return frozenset(self._bwd)

    def zdef(self) -> frozenset:
        return self.dom | self.rng

    def supp(self) -> frozenset:
        """Points moved by the map (defined and not fixed)."""
        return frozenset(x for x, y in self._fwd.items() if x != y)

    def pairs(self) -> tuple:
        return tuple(sorted(self._fwd.items()))

    def inverse(self) -> "PartialAuto":
        return PartialAuto([(y, x) for x, y in self._fwd.items()])

    def union(self, other) -> "PartialAuto":
        """Union as pair sets; raises if the result is not a partial injection."""
        pairs = dict(self._fwd)
        other_pairs = other._fwd if isinstance(other, PartialAuto) else dict(other)
        for x, y in other_pairs.items():
            if pairs.get(x, y) != y:
                raise ValueError("conflicting images at %d" % x)
            pairs[x] = y
        return PartialAuto(pairs)

    def extend(self, x: int, y: int) -> "PartialAuto":
        if x in self._fwd or y in self._bwd:
            raise ValueError("pair (%d, %d) conflicts with existing map" % (x, y))
        pairs = dict(self._fwd)
        pairs[x] = y
        return PartialAuto(pairs)

    def restrict(self, points) -> "PartialAuto":
        pts = set(points)
        return PartialAuto([(x, y) for x, y in self._fwd.items() if x in pts and y in pts])

    def extends(self, other: "PartialAuto") -> bool:
        return all(self._fwd.get(x) == y for x, y in other._fwd.items())

    def conjugate(self, phi) -> "PartialAuto":
        """phi o p o phi^{-1} for an injective map phi given as dict/sequence."""
        return PartialAuto([(phi[x], phi[y]) for x, y in self._fwd.items()])

    def __eq__(self, other):
        if not isinstance(other, PartialAuto):
            return NotImplemented
        return self._fwd == other._fwd

    def __hash__(self):
        return self._hash

    def __len__(self):
        return len(self._fwd)

    def __repr__(self):
        return "PartialAuto(%r)" % (sorted(self._fwd.items()),)

    # -- orbits --------------------------------------------------------------

    def orbits(self) -> list[tuple[int, ...]]:
        """Maximal chains x, p(x), p(p(x)), ... listed from their start.

        A cycle is reported once, starting at its least element, without
        repeating the first element at the end.  Sorted by least element.
        """
        seen = set()
        out = []
        for x in sorted(self.zdef()):
            if x in seen:
                continue
            # forward walk detects a cycle through x (injectivity: the only
            # possible revisit is x itself)
            cur, fpath, is_cycle = x, [x], False
            while cur in self._fwd:
                cur = self._fwd[cur]
                if cur == x:
                    is_cycle = True
                    break
                fpath.append(cur)
            if is_cycle:
                i = fpath.index(min(fpath))
                chain = fpath[i:] + fpath[:i]
            else:
                start = x
                while start in self._bwd:
                    start = self._bwd[start]
                chain = [start]
                cur = start
                while cur in self._fwd:
                    cur = self._fwd[cur]
                    chain.append(cur)
            seen.update(chain)
            out.append(tuple(chain))
        return sorted(out)

    def orbit_of(self, x: int) -> tuple[int, ...]:
        for orb in self.orbits():
            if x in orb:
                return orb
        raise ValueError("%d not in zdef" % x)

    def is_cyclic_orbit(self, orbit) -> bool:
        orbit = tuple(orbit)
        return self._fwd.get(orbit[-1]) == orbit[0]

    # -- json ----------------------------------------------------------------

    def to_json(self) -> dict:
        return {"map": [list(p) for p in sorted(self._fwd.items())]}

    @staticmethod
    def from_json(data: dict) -> "PartialAuto":
        return PartialAuto([tuple(p) for p in data["map"]])


def is_partial_automorphism(A: FiniteStructure, p: PartialAuto) -> bool:
    """True iff p's graph lies in A's universe and p: dom -> rng is an isomorphism
    of induced substructures (relations preserved in both directions)."""
    if any(not (0 <= x < A.size) for x in p.zdef()):
        return False
    # preservation and reflection, scanning the relation tuples rather than
    # dom^arity: t in rel => p(t) in rel, and t in rel over rng => inv(t) in rel
    fwd = dict(p.pairs())
    bwd = {y: x for x, y in fwd.items()}
    for name, arity in A.signature.symbols:
        rel = A.rel(name)
        if arity == 2:
            fget, bget = fwd.get, bwd.get
            for x, y in rel:
                fx, fy = fget(x), fget(y)
                if fx is not None and fy is not None and (fx, fy) not in rel:
                    return False
                bx, by = bget(x), bget(y)
                if bx is not None and by is not None and (bx, by) not in rel:
                    return False
            continue
        for t in rel:
            if all(x in fwd for x in t) and \
                    tuple(fwd[x] for x in t) not in rel:
                return False
            if all(y in bwd for y in t) and \
                    tuple(bwd[y] for y in t) not in rel:
                return False
    return True


def violations(A: FiniteStructure, p: PartialAuto) -> list[tuple]:
    """Offending tuples (symbol, source tuple) witnessing failure of preservation."""
    out = []
    dom = sorted(p.dom)
    for name, arity in A.signature.symbols:
        rel = A.rel(name)
        for t in itertools.product(dom, repeat=arity):
            if (t in rel) != (tuple(p(x) for x in t) in rel):
                out.append((name, t))
    return out


# -- tuple systems ------------------------------------------------------------


class TupleSystem:
    """A structure together with an n-tuple of partial automorphisms."""

    __slots__ = ("structure", "maps")

    def __init__(self, structure: FiniteStructure, maps):
        maps = tuple(maps)
        object.__setattr__(self, "structure", structure)
        object.__setattr__(self, "maps", maps)

    def __setattr__(self, *a):
        raise AttributeError("TupleSystem is immutable")

    @property
    def n(self) -> int:
        return len(self.maps)

    def zdef(self) -> frozenset:
        out = frozenset()
        for p in self.maps:
            out |= p.zdef()
        return out

    def is_valid(self) -> bool:
        return all(is_partial_automorphism(self.structure, p) for p in self.maps)

    def __eq__(self, other):
        if not isinstance(other, TupleSystem):
            return NotImplemented
        return self.structure == other.structure and self.maps == other.maps

    def __hash__(self):
        return hash((self.structure, self.maps))

    def __repr__(self):
        return "TupleSystem(%r, %r)" % (self.structure, list(self.maps))

    def to_json(self) -> dict:
        return {"structure": self.structure.to_json(),
                "maps": [p.to_json() for p in self.maps]}

    @staticmethod
    def from_json(data: dict) -> "TupleSystem":
        return TupleSystem(FiniteStructure.from_json(data["structure"]),
                           [PartialAuto.from_json(m) for m in data["maps"]])


def is_system_embedding(src: TupleSystem, dst: TupleSystem, phi) -> bool:
    """Embedding of systems: structure embedding with phi o p_i = q_i o phi on dom(p_i)."""
    if src.n != dst.n:
        return False
    if not is_embedding(src.structure, dst.structure, phi):
        return False
    for p, q in zip(src.maps, dst.maps):
        for x in p.dom:
            if q(phi[x]) != phi[p(x)]:
                return False
    return True


def system_extends(big: TupleSystem, small: TupleSystem) -> bool:
    """True iff `small` sits inside `big` via the identity inclusion."""
    if small.n != big.n or small.structure.size > big.structure.size:
        return False
    ident = list(range(small.structure.size))
    return is_system_embedding(small, big, ident)


# -- free group words ----------------------------------------------------------

_LETTER_NAMES = "stuvwxyz"  # letter i of an n-tuple prints as _LETTER_NAMES[i]

_TOKEN_RE = re.compile(r"([a-z])(\^(-?\d+))?$")


@dataclass(frozen=True)
class GroupWord:
    """Reduced word in the free group on n letters.

    Stored as a tuple of (letter_index, exponent_sign) pairs compressed into
    (letter_index, exponent) runs; letters print as s, t, u, ... in order.
    """

    letters: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "letters", _reduce(self.letters))

    @staticmethod
    def identity() -> "GroupWord":
        return GroupWord(())

    @staticmethod
    def generator(i: int, power: int = 1) -> "GroupWord":
        return GroupWord(((i, power),))

    def __mul__(self, other: "GroupWord") -> "GroupWord":
        return GroupWord(self.letters + other.letters)

    def inverse(self) -> "GroupWord":
        return GroupWord(tuple((i, -e) for i, e in reversed(self.letters)))

    def __pow__(self, k: int) -> "GroupWord":
        if k == 0:
            return GroupWord(())
        base = self if k > 0 else self.inverse()
        out = GroupWord(())
        for _ in range(abs(k)):
            out = out * base
        return out

    @property
    def is_identity(self) -> bool:
        return not self.letters

    def length(self) -> int:
        return sum(abs(e) for _, e in self.letters)

    def __str__(self):
        if not self.letters:
            return "1"
        parts = []
        for i, e in self.letters:
            name = _LETTER_NAMES[i] if i < len(_LETTER_NAMES) else "g%d" % i
            parts.append(name if e == 1 else "%s^%d" % (name, e))
        return " ".join(parts)

    @staticmethod
    def parse(text: str, n: int = 2) -> "GroupWord":
        """Parse words like "s t^-1 s^2"; letter names follow s, t, u, ..."""
        text = text.strip()
        if text in ("", "1"):
            return GroupWord(())
        letters = []
        for tok in text.split():
            m = _TOKEN_RE.match(tok)
            if not m:
                raise ValueError("bad word token %r" % tok)
            name = m.group(1)
            if name not in _LETTER_NAMES[:max(n, 1)]:
                raise ValueError("unknown letter %r (expected one of %r)"
                                 % (name, _LETTER_NAMES[:n]))
            exp = int(m.group(3)) if m.group(3) else 1
            letters.append((_LETTER_NAMES.index(name), exp))
        return GroupWord(tuple(letters))


def _reduce(letters) -> tuple:
    out: list[list[int]] = []
    for i, e in letters:
        if e == 0:
            continue
        if out and out[-1][0] == i:
            out[-1][1] += e
            if out[-1][1] == 0:
                out.pop()
        else:
            out.append([i, e])
    return tuple((i, e) for i, e in out)


def evaluate_word(word: GroupWord, maps, x: int):
    """Apply the word to x, rightmost letter first; None where undefined."""
    for i, e in reversed(word.letters):
        p = maps[i]
        x = p.apply_power(x, e)
        if x is None:
            return None
    return x


def word_as_partial_map(word: GroupWord, maps, points) -> PartialAuto:
    pairs = []
    for x in points:
        y = evaluate_word(word, maps, x)
        if y is not None:
            pairs.append((x, y))
    return PartialAuto(pairs)
