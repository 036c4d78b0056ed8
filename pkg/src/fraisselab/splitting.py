"""Splitting engines: strong-split witnesses, orbit separation, WAP failure.

A split witness is normalized so that the relabelling bijection is the
identity: D2 lives on the same universe as D1, agrees with D1 on D and off C,
and differs somewhere (necessarily on a tuple meeting both C and D1 minus D).
The nonempty-C convention matters: with C empty no tuple is free, so nothing
would ever split.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from .amalg import (FAILS, HOLDS, INCONCLUSIVE, AmalgProblem, Verdict,
                    find_amalgam)
from .core import FiniteStructure, qf_type
from .families import StructureFamily, enumerate_members
from .pauto import PartialAuto, TupleSystem, is_partial_automorphism


@dataclass(frozen=True)
class SplitWitness:
    D1: FiniteStructure
    D2: FiniteStructure
    c_set: frozenset
    d_set: frozenset

    def conditions_hold(self, fam=None) -> bool:
        """Direct re-check of the three witness conditions (identity bijection)."""
        D1, D2 = self.D1, self.D2
        if D1.signature != D2.signature or D1.size != D2.size:
            return False
        if not (self.c_set and self.c_set <= self.d_set
                and self.d_set < set(D1.universe)):
            return False
        outside_c = set(D1.universe) - self.c_set
        for name, arity in D1.signature.symbols:
            r1, r2 = D1.rel(name), D2.rel(name)
            for t in itertools.permutations(D1.universe, arity):
                fixed = set(t) <= self.d_set or set(t) <= outside_c
                if fixed and ((t in r1) != (t in r2)):
                    return False
        if D1 == D2:
            return False
        return fam is None or fam.is_member(D2)

    def to_json(self):
        return {"D1": self.D1.to_json(), "D2": self.D2.to_json(),
                "C": sorted(self.c_set), "D": sorted(self.d_set)}


def _free_tuples(D1, c_set, d_set):
    free = []
    for name, arity in D1.signature.symbols:
        for t in itertools.permutations(D1.universe, arity):
            if set(t) & c_set and not set(t) <= d_set:
                free.append((name, t))
    return free


def split_witness_stream(fam: StructureFamily, D1: FiniteStructure,
                         c_set, d_set):
    """All witnesses for the triple, nearest to D1 first (fewest changed tuples)."""
    c_set, d_set = frozenset(c_set), frozenset(d_set)
    if not (c_set and c_set <= d_set and d_set < set(D1.universe)):
        raise ValueError("need nonempty C with C subset of D proper in D1")
    free = _free_tuples(D1, c_set, d_set)
    base = {name: set(D1.rel(name)) for name, _ in D1.signature.symbols}
    orig = 0
    for i, (name, t) in enumerate(free):
        if t in base[name]:
            orig |= 1 << i
    masks = sorted(range(1 << len(free)),
                   key=lambda m: (bin(m ^ orig).count("1"), m))
    for mask in masks:
        if mask == orig:
            continue
        rels = {name: set(ts) for name, ts in base.items()}
        for i, (name, t) in enumerate(free):
            if mask >> i & 1:
                rels[name].add(t)
            else:
                rels[name].discard(t)
        D2 = FiniteStructure(D1.signature, D1.size, rels)
        if fam.is_member(D2):
            w = SplitWitness(D1, D2, c_set, d_set)
            assert w.conditions_hold(fam)
            yield w


def strong_split_witness(fam, D1, c_set, d_set):
    """First witness that C strongly splits at (D, D1), or None."""
    for w in split_witness_stream(fam, D1, c_set, d_set):
        return w
    return None


def check_always_strong_split(fam: StructureFamily, size_bound: int) -> Verdict:
    """Sweep all triples C subset of D proper in D1 at |D1| <= size_bound."""
    bounds = {"size_bound": size_bound}
    count = 0
    for D1 in enumerate_members(fam, size_bound):
        if D1.size < 2:
            continue
        univ = list(D1.universe)
        for d_tuple in itertools.chain.from_iterable(
                itertools.combinations(univ, r) for r in range(1, D1.size)):
            d_set = frozenset(d_tuple)
            for r in range(1, len(d_tuple) + 1):
                for c_tuple in itertools.combinations(sorted(d_set), r):
                    count += 1
                    if strong_split_witness(fam, D1, frozenset(c_tuple),
                                            d_set) is None:
                        return Verdict(
                            FAILS, bounds,
                            witness={"D1": D1, "C": sorted(c_tuple),
                                     "D": sorted(d_set)},
                            detail="triple admits no second amalgam")
    return Verdict(HOLDS, bounds, detail="%d triples" % count)


# ---------------------------------------------------------------------------
# orbit separation (full order expansions with SAP)


def _orbit_rep_of(q: PartialAuto, reps):
    """Map q-orbit key -> original orbit representative it contains."""
    out = {}
    for rep in reps:
        out[frozenset(q.orbit_of(rep))] = rep
    return out


def _merging_steps(A, q, reps):
    """Valid one-step joins (x, y) merging two original orbits, lex order.

    x is the forward end of one orbit, y the backward end of another; the
    join q(x) = y is a partial automorphism of A.
    """
    by_orbit = _orbit_rep_of(q, reps)
    tails = sorted(x for x in q.rng - q.dom)
    heads = sorted(y for y in q.dom - q.rng)
    out = []
    for x in tails:
        ox = by_orbit.get(frozenset(q.orbit_of(x)))
        if ox is None:
            continue
        for y in heads:
            oy = by_orbit.get(frozenset(q.orbit_of(y)))
            if oy is None or oy == ox:
                continue
            cand = q.extend(x, y)
            if is_partial_automorphism(A, cand):
                out.append((x, y))
    return out


def separate_orbits_extension(fam: StructureFamily, A: FiniteStructure,
                              p: PartialAuto, max_rounds: int = None):
    """Extend p so that no one-step extension merges two p-orbits.

    Each merging join q(x)=y is blocked by instead sending x to a fresh point
    just beyond y with the same quantifier-free type over rng(q): order
    preservation then traps y strictly between x and q(x) forever.
    """
    if not (fam.full_order_expansion and fam.has_sap):
        raise ValueError("family must be a full order expansion with SAP")
    orbits = p.orbits()
    if any(p.is_cyclic_orbit(o) for o in orbits):
        raise ValueError("cyclic orbits cannot be separated")
    reps = sorted(min(o) for o in orbits)
    q, cur = p, A
    rounds = 0
    limit = max_rounds if max_rounds is not None else \
        len(reps) * len(reps) + len(reps) + 4
    while True:
        steps = _merging_steps(cur, q, reps)
        if not steps:
            return cur, q
        rounds += 1
        if rounds > limit:
            raise RuntimeError("orbit separation did not stabilize")
        x, y = steps[0]
        cur, q = _block_join(fam, cur, q, x, y)


def _block_join(fam, A, q, x, y):
    """Replace the join q(x)=y by q(x)=y' for a fresh same-type y' beyond y."""
    want_above = A.less(x, y)  # x < y: block with y' > y, else mirror
    ref = qf_type(A, (y,), sorted(q.rng))
    for B in fam.one_point_extensions(A):
        w = A.size
        if want_above != B.less(y, w):
            continue
        if qf_type(B, (w,), sorted(q.rng)) != ref:
            continue
        cand = q.extend(x, w)
        if is_partial_automorphism(B, cand):
            return B, cand
    raise RuntimeError("no blocking point available (SAP violated?)")


# ---------------------------------------------------------------------------
# WAP failure for one partial automorphism


@dataclass(frozen=True)
class WapFailurePair:
    base: TupleSystem            # (zdef(p), p)
    left: TupleSystem            # (D1, q0)
    right: TupleSystem           # (D2, q1): same map, relations changed at y
    split: SplitWitness
    fresh: int                   # the label of the added point

    def to_json(self):
        return {"base": self.base.to_json(), "left": self.left.to_json(),
                "right": self.right.to_json(), "split": self.split.to_json(),
                "fresh": self.fresh}


def canonical_hrushovski_base(fam: StructureFamily):
    """Single increasing 2-orbit on the least 2-point member: p = {0 -> 1}."""
    two = None
    for B in fam.one_point_extensions(next(iter(fam.one_point_extensions(
            fam.empty())))):
        p = PartialAuto([(0, 1)]) if B.less(0, 1) else PartialAuto([(1, 0)])
        if is_partial_automorphism(B, p):
            two = (B, p)
            break
    if two is None:
        raise RuntimeError("no 2-point member supports an increasing orbit")
    return two


def wap_failure_pair(fam: StructureFamily, A=None, p=None) -> WapFailurePair:
    """Non-amalgamable extension pair of (A, p), per the splitting argument.

    Requires a full order expansion with SAP that strongly splits.  The pair
    extends q = separate_orbits_extension(p) at the forward end of a
    non-cyclic orbit meeting dom(p): once by a fresh point y, once by the
    same point with its relations to C = dom(q) - rng(q) altered through a
    strong-split witness.  Both extensions are valid, their types over rng(q)
    agree and over zdef(q) differ, so no amalgam can identify the two images.
    """
    if A is None:
        A, p = canonical_hrushovski_base(fam)
    D, q = separate_orbits_extension(fam, A, p)
    if set(D.universe) != q.zdef():
        raise ValueError("carrier must equal zdef(q)")
    c_set = frozenset(q.dom - q.rng)
    if not c_set:
        raise ValueError("dom(q) minus rng(q) is empty")
    orbits = [o for o in q.orbits()
              if not q.is_cyclic_orbit(o) and set(o) & p.dom]
    if not orbits:
        raise RuntimeError("no non-cyclic orbit meets dom(p)")
    orbit = min(orbits, key=min)
    o_n = orbit[-1]

    for D1 in fam.one_point_extensions(D):
        y0 = D.size
        q0 = q.extend(o_n, y0)
        if not is_partial_automorphism(D1, q0):
            continue
        for w in split_witness_stream(fam, D1, c_set, frozenset(D.universe)):
            D2 = w.D2
            if not is_partial_automorphism(D2, q0):
                continue
            rng = sorted(q.rng)
            zd = sorted(q.zdef())
            if qf_type(D1, (y0,), rng) != qf_type(D2, (y0,), rng):
                continue
            if qf_type(D1, (y0,), zd) == qf_type(D2, (y0,), zd):
                continue
            base = TupleSystem(D.induced(sorted(p.zdef())), (p,))
            pair = WapFailurePair(base, TupleSystem(D1, (q0,)),
                                  TupleSystem(D2, (q0,)), w, y0)
            return pair
    raise RuntimeError("no splitting witness produced a valid pair")


def verify_wap_failure(fam, pair: WapFailurePair, extra_cap: int = 2):
    """Exhaustively confirm the pair admits no amalgam over the base."""
    prob = AmalgProblem(pair.base, pair.left, pair.right)
    cap = pair.left.structure.size + pair.right.structure.size + extra_cap
    return find_amalgam(fam, prob, cap) is None
